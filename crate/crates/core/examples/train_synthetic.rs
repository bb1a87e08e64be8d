//! Train on the bundled config, evaluate on the test split and save a checkpoint.

use std::path::Path;

use lemole::{checkpoint, eval, training};

fn main() -> lemole::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic.toml");
    let cfg = lemole::config::RunConfigFile::load(&path)?;
    let source = cfg.prepare()?;
    let provider = cfg.provider()?;
    let tc = cfg.train_config();

    let (outcome, ctx) = training::train(&tc, std::slice::from_ref(&source), provider.as_ref())?;
    for (e, (tr, va)) in outcome.history.train_mse.iter().zip(&outcome.history.val_mse).enumerate() {
        println!("epoch {e:>2} train {tr:.5} val {va:.5}");
    }
    let report = eval::evaluate(&outcome.model, &ctx, 0, &source, 1, true, &eval::config_hash(&tc))?;
    let persistence = eval::persistence_mse(std::slice::from_ref(&source), tc.model.lookback, tc.model.horizon, 1)?;
    println!("test mse {:.5} mae {:.5} over {} windows (persistence {persistence:.5})", report.mse, report.mae, report.n_windows);
    println!("{} parameters", outcome.model.count_params());

    let out = std::env::temp_dir().join("lemole-train-synthetic.json");
    checkpoint::save(&outcome.model, &out)?;
    assert_eq!(checkpoint::load(&out)?, outcome.model);
    println!("checkpoint written to {}", out.display());
    Ok(())
}

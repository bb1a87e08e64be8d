//! Parameter counts and per-step timings for one and three experts.

use lemole::eval::bench;
use lemole::prompts::{DatasetMeta, HashEncoder};
use lemole::training::{train, SeriesSource, TrainConfig};
use lemole::{synth, ConditioningMode, ExpertDomain, ModelSpec, SplitSpec};

fn main() -> lemole::Result<()> {
    let frame = synth::sinusoid_trend(&synth::SynthSpec::new(5000))?;
    let source = SeriesSource::prepare(&frame, DatasetMeta::generic("synthetic", &frame.channel_names), &SplitSpec::default(), 432, None)?;
    let provider = HashEncoder::new(64, 0);
    for windows in [vec![336], vec![336, 168, 84]] {
        let spec = ModelSpec {
            lookback: 336,
            horizon: 96,
            channels: 0,
            window_lengths: windows.clone(),
            domain: ExpertDomain::Time,
            d_llm: 0,
            static_tokens: 0,
            dynamic_tokens: 0,
            kernel_size: 3,
            mode: ConditioningMode::Aggregate,
            use_static: true,
            use_dynamic: true,
            freq_cutoff_bins: None,
            freq_init_noise: 1e-3,
        };
        let mut cfg = TrainConfig::new(spec);
        cfg.epochs = 0;
        let (outcome, ctx) = train(&cfg, std::slice::from_ref(&source), &provider)?;
        let ws = ctx.windows(0, &source.test, 8)?;
        let r = bench(&outcome.model, &ws, 16, 10)?;
        println!(
            "M={} params {} train {:.3} ms/step (batch {}) infer {:.3} ms/window",
            windows.len(),
            r.params,
            r.train_ms_per_step,
            r.batch,
            r.infer_ms_per_window
        );
    }
    Ok(())
}

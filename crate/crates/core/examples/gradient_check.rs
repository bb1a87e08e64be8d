//! Analytic gradients against central finite differences.

use lemole::training::{grad_check, CheckSample};
use lemole::{ConditioningMode, ExpertDomain, LemoleModel, Matrix, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lemole::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for mode in [ConditioningMode::Aggregate, ConditioningMode::PerExpert] {
        for domain in [ExpertDomain::Time, ExpertDomain::Frequency] {
            let spec = ModelSpec {
                lookback: 16,
                horizon: 4,
                channels: 2,
                window_lengths: vec![16, 8],
                domain,
                d_llm: 6,
                static_tokens: 3,
                dynamic_tokens: 4,
                kernel_size: 3,
                mode,
                use_static: true,
                use_dynamic: true,
                freq_cutoff_bins: None,
                freq_init_noise: 1e-3,
            };
            let model = LemoleModel::init(spec, rng.gen())?;
            let mut m = |r, c| Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
            let (x, y, zs, zd) = (m(16, 2), m(4, 2), m(3, 6), m(4, 6));
            let sample = CheckSample { lookback: &x, target: &y, static_z: &zs, dynamic_z: &zd };
            let r = grad_check(&model, &sample, 1e-5)?;
            println!(
                "{:<10} {:<9} checked {:>4} params, max rel error {:.2e} ({}[{}])",
                mode.to_string(),
                domain.to_string(),
                r.checked,
                r.max_rel_error, r.worst_tensor, r.worst_index
            );
        }
    }
    Ok(())
}

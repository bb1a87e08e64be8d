//! Full model against variants with the static, dynamic or both prompt branches removed.

use lemole::eval::{ablate, ablation_csv, AblationVariant};
use lemole::prompts::{DatasetMeta, HashEncoder};
use lemole::training::{SeriesSource, TrainConfig};
use lemole::{synth, ConditioningMode, ExpertDomain, ModelSpec, SplitSpec};

fn main() -> lemole::Result<()> {
    let mut s = synth::SynthSpec::new(1200);
    s.trend = 5e-4;
    s.seed = 3;
    let frame = synth::sinusoid_trend(&s)?;
    let source = SeriesSource::prepare(&frame, DatasetMeta::generic("synthetic", &frame.channel_names), &SplitSpec::default(), 60, None)?;
    let spec = ModelSpec {
        lookback: 48,
        horizon: 12,
        channels: 0,
        window_lengths: vec![48, 24],
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
    cfg.epochs = 8;
    let rows = ablate(&cfg, std::slice::from_ref(&source), &HashEncoder::new(16, 0), &AblationVariant::ALL)?;
    print!("{}", ablation_csv(&rows, 2));
    Ok(())
}

//! Test error and size as the number of experts grows.

use lemole::eval::{expert_sweep, sweep_csv};
use lemole::prompts::{DatasetMeta, HashEncoder};
use lemole::training::{SeriesSource, TrainConfig};
use lemole::{synth, ConditioningMode, ExpertDomain, ModelSpec, SplitSpec};

fn main() -> lemole::Result<()> {
    let mut s = synth::SynthSpec::new(1500);
    s.trend = 5e-4;
    s.seed = 5;
    let frame = synth::sinusoid_trend(&s)?;
    let source = SeriesSource::prepare(&frame, DatasetMeta::generic("synthetic", &frame.channel_names), &SplitSpec::default(), 120, None)?;
    let spec = ModelSpec {
        lookback: 96,
        horizon: 24,
        channels: 0,
        window_lengths: vec![96],
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
    cfg.epochs = 6;
    let rows = expert_sweep(&cfg, std::slice::from_ref(&source), &HashEncoder::new(16, 0), &[1, 2, 3, 4, 5])?;
    for r in &rows {
        println!("M={} windows {:?}", r.experts, r.window_lengths);
    }
    print!("{}", sweep_csv(&rows));
    Ok(())
}

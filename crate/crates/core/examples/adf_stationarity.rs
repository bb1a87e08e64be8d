//! Augmented Dickey-Fuller statistics of stationary and unit-root series.

use lemole::eval::{adf_statistic, schwert_lag};
use lemole::synth;

fn main() -> lemole::Result<()> {
    let n = 2000;
    println!("default lag for n={n}: {}", schwert_lag(n));
    let series = [
        ("white noise", synth::white_noise(n, 1.0, 1)?),
        ("ar(1) phi=0.9", synth::ar1(n, 0.9, 1.0, 2)?),
        ("random walk", synth::random_walk(n, 1.0, 3)?),
        ("noisy sinusoid", synth::sinusoid_trend(&synth::SynthSpec::new(n))?.values.column(0)),
    ];
    for (name, s) in &series {
        let r = adf_statistic(s, None)?;
        println!("{name:<14} stat {:>8.3} lag {:>2} nobs {} p {}", r.statistic, r.lag_order, r.nobs, r.p_bucket);
    }
    Ok(())
}

//! A spectral expert at identity init continues a sinusoid that fits its grid.

use lemole::experts::FreqExpert;
use lemole::params::Parameterized;
use lemole::Matrix;

fn main() -> lemole::Result<()> {
    let (w, h) = (48, 24);
    let period = 12.0;
    let wave = |t: usize| (2.0 * std::f64::consts::PI * t as f64 / period).sin();
    let lookback = Matrix::from_fn(w, 1, |i, _| wave(i));

    let expert = FreqExpert::identity(w, h, None);
    println!("bins in {} out {}, {} parameters", expert.k_in(), expert.k_out(), expert.num_params());
    let forecast = expert.forward(&lookback)?;
    let err = (0..h).map(|i| (forecast[(i, 0)] - wave(w + i)).abs()).fold(0.0, f64::max);
    println!("max continuation error {err:.2e}");

    let cut = FreqExpert::identity(w, h, Some(6));
    println!("with a 6-bin cutoff: bins in {} out {}, {} parameters", cut.k_in(), cut.k_out(), cut.num_params());
    let err = (0..h).map(|i| (cut.forward(&lookback).unwrap()[(i, 0)] - wave(w + i)).abs()).fold(0.0, f64::max);
    println!("low-pass continuation error {err:.2e}");
    Ok(())
}

//! Seeded synthetic series used by the bundled fixtures, examples and tests.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::SeriesFrame;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// 2016-07-01T00:00:00Z, the start of the ETT benchmark series.
pub const DEFAULT_START: i64 = 1_467_331_200;
pub const HOURLY: i64 = 3600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub rows: usize,
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(default = "period")]
    pub period: f64,
    #[serde(default = "one_f")]
    pub amplitude: f64,
    /// Slope per step.
    #[serde(default)]
    pub trend: f64,
    #[serde(default = "noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "start")]
    pub start: i64,
    #[serde(default = "freq")]
    pub freq_seconds: i64,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn period() -> f64 {
    24.0
}
fn noise() -> f64 {
    0.1
}
fn start() -> i64 {
    DEFAULT_START
}
fn freq() -> i64 {
    HOURLY
}

impl SynthSpec {
    pub fn new(rows: usize) -> Self {
        Self {
            rows,
            channels: 1,
            period: 24.0,
            amplitude: 1.0,
            trend: 0.0,
            noise_std: 0.1,
            seed: 0,
            start: DEFAULT_START,
            freq_seconds: HOURLY,
        }
    }
}

fn timestamps(rows: usize, start: i64, freq: i64) -> Vec<i64> {
    (0..rows as i64).map(|i| start + i * freq).collect()
}

fn names(channels: usize) -> Vec<String> {
    if channels == 1 {
        vec!["value".into()]
    } else {
        (0..channels).map(|j| format!("x{j}")).collect()
    }
}

fn normal(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::Config(format!("noise std {std}: {e}")))
}

/// `amplitude * sin(2 pi t / period + phase_c) + trend * t + noise`. Channel
/// `c` is phase shifted by `c * 2 pi / channels`.
pub fn sinusoid_trend(spec: &SynthSpec) -> Result<SeriesFrame> {
    if spec.rows == 0 || spec.channels == 0 || spec.period <= 0.0 {
        return Err(Error::Config("synthetic series needs rows, channels >= 1 and period > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dist = normal(spec.noise_std)?;
    let c = spec.channels;
    let mut values = Matrix::zeros(spec.rows, c);
    for t in 0..spec.rows {
        for j in 0..c {
            let phase = 2.0 * PI * j as f64 / c as f64;
            let clean = spec.amplitude * (2.0 * PI * t as f64 / spec.period + phase).sin() + spec.trend * t as f64;
            let eps = if spec.noise_std > 0.0 { dist.sample(&mut rng) } else { 0.0 };
            values[(t, j)] = clean + eps;
        }
    }
    SeriesFrame::new(timestamps(spec.rows, spec.start, spec.freq_seconds), values, names(c), spec.freq_seconds)
}

/// Noise-free `sin(2 pi t / period)`.
pub fn sinusoid(rows: usize, period: f64) -> Result<SeriesFrame> {
    sinusoid_trend(&SynthSpec { noise_std: 0.0, ..SynthSpec::new(rows) }.with_period(period))
}

impl SynthSpec {
    pub fn with_period(mut self, period: f64) -> Self {
        self.period = period;
        self
    }
}

pub fn white_noise(n: usize, std: f64, seed: u64) -> Result<Vec<f64>> {
    let dist = normal(std)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Cumulative sum of Gaussian steps starting at 0.
pub fn random_walk(n: usize, std: f64, seed: u64) -> Result<Vec<f64>> {
    let mut acc = 0.0;
    Ok(white_noise(n, std, seed)?
        .into_iter()
        .map(|e| {
            acc += e;
            acc
        })
        .collect())
}

/// `x_t = phi x_{t-1} + e_t`, `x_0 = e_0`.
pub fn ar1(n: usize, phi: f64, std: f64, seed: u64) -> Result<Vec<f64>> {
    let mut prev = 0.0;
    Ok(white_noise(n, std, seed)?
        .into_iter()
        .map(|e| {
            prev = phi * prev + e;
            prev
        })
        .collect())
}

/// Single-channel hourly frame named `value`.
pub fn frame_from_series(series: Vec<f64>, start: i64, freq_seconds: i64) -> Result<SeriesFrame> {
    let n = series.len();
    SeriesFrame::new(timestamps(n, start, freq_seconds), Matrix::from_vec(n, 1, series)?, names(1), freq_seconds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_shaped() {
        let mut s = SynthSpec::new(100);
        s.channels = 3;
        s.seed = 4;
        let a = sinusoid_trend(&s).unwrap();
        assert_eq!(a.values.shape(), (100, 3));
        assert_eq!(a, sinusoid_trend(&s).unwrap());
        s.seed = 5;
        assert_ne!(a, sinusoid_trend(&s).unwrap());
        assert_eq!(a.timestamps[1] - a.timestamps[0], 3600);
    }

    #[test]
    fn clean_sinusoid_values() {
        let f = sinusoid(48, 24.0).unwrap();
        assert!(f.values[(0, 0)].abs() < 1e-12);
        assert!((f.values[(6, 0)] - 1.0).abs() < 1e-12);
        assert!((f.values[(30, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recurrences() {
        let e = white_noise(5, 1.0, 9).unwrap();
        let w = random_walk(5, 1.0, 9).unwrap();
        assert!((w[4] - e.iter().sum::<f64>()).abs() < 1e-12);
        let a = ar1(5, 0.5, 1.0, 9).unwrap();
        assert!((a[1] - (0.5 * e[0] + e[1])).abs() < 1e-12);
    }
}

//! Linear forecasting experts.
//!
//! A time-domain expert is the affine map `Y = W X + b` applied to the most
//! recent `w` rows of the lookback, with `W` (H x w) shared across channels
//! and one bias column per channel. A frequency-domain expert transforms the
//! view with a real FFT, interpolates the half spectrum with one complex
//! linear layer, and maps back with a zero-padded inverse FFT of length
//! `w + H`; the last `H` samples are the forecast.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, Complex64};
use crate::matrix::Matrix;
use crate::params::{prefixed, prefixed_mut, Parameterized, Tensor, TensorMut};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertDomain {
    Time,
    Frequency,
}

impl std::fmt::Display for ExpertDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExpertDomain::Time => "time",
            ExpertDomain::Frequency => "frequency",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearExpert {
    /// H x w
    pub weight: Matrix,
    /// H x C
    pub bias: Matrix,
    pub window_length: usize,
}

impl LinearExpert {
    pub fn zeros(window_length: usize, horizon: usize, channels: usize) -> Self {
        Self {
            weight: Matrix::zeros(horizon, window_length),
            bias: Matrix::zeros(horizon, channels),
            window_length,
        }
    }

    /// Weights uniform in `+-1/sqrt(w)`, zero bias.
    pub fn init<R: Rng>(window_length: usize, horizon: usize, channels: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (window_length as f64).sqrt();
        let weight = Matrix::from_fn(horizon, window_length, |_, _| rng.gen_range(-bound..=bound));
        Self {
            weight,
            bias: Matrix::zeros(horizon, channels),
            window_length,
        }
    }

    pub fn horizon(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, view: &Matrix) -> Result<Matrix> {
        view.check_shape("LinearExpert::forward", self.window_length, self.bias.cols())?;
        let mut out = self.weight.matmul(view)?;
        out.add_assign(&self.bias);
        Ok(out)
    }

    /// Returns `(parameter gradients, dL/dview)`.
    pub fn backward(&self, view: &Matrix, upstream: &Matrix) -> Result<(LinearExpert, Matrix)> {
        view.check_shape("LinearExpert::backward view", self.window_length, self.bias.cols())?;
        upstream.check_shape("LinearExpert::backward upstream", self.horizon(), self.bias.cols())?;
        let d_weight = upstream.matmul(&view.transpose())?;
        let d_view = self.weight.transpose().matmul(upstream)?;
        Ok((
            LinearExpert {
                weight: d_weight,
                bias: upstream.clone(),
                window_length: self.window_length,
            },
            d_view,
        ))
    }
}

impl Parameterized for LinearExpert {
    fn tensors(&self) -> Vec<Tensor<'_>> {
        vec![
            Tensor {
                name: "weight".into(),
                shape: vec![self.weight.rows(), self.weight.cols()],
                data: self.weight.as_slice(),
            },
            Tensor {
                name: "bias".into(),
                shape: vec![self.bias.rows(), self.bias.cols()],
                data: self.bias.as_slice(),
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let ws = vec![self.weight.rows(), self.weight.cols()];
        let bs = vec![self.bias.rows(), self.bias.cols()];
        vec![
            TensorMut {
                name: "weight".into(),
                shape: ws,
                data: self.weight.as_mut_slice(),
            },
            TensorMut {
                name: "bias".into(),
                shape: bs,
                data: self.bias.as_mut_slice(),
            },
        ]
    }
}

/// Frequency-interpolating expert in real/imaginary block form.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqExpert {
    /// K_out x K_in
    pub weight_re: Matrix,
    pub weight_im: Matrix,
    /// K_out
    pub bias_re: Vec<f64>,
    pub bias_im: Vec<f64>,
    pub window_length: usize,
    pub horizon: usize,
}

/// `(K_in, K_out)` for a window, horizon and optional low-pass cutoff.
pub fn freq_bins(window_length: usize, horizon: usize, cutoff: Option<usize>) -> (usize, usize) {
    let full_in = fft::rfft_bins(window_length);
    let full_out = fft::rfft_bins(window_length + horizon);
    match cutoff {
        None => (full_in, full_out),
        Some(c) => {
            let k_in = c.clamp(1, full_in);
            let k_out = (k_in * (window_length + horizon) / window_length).clamp(1, full_out);
            (k_in, k_out)
        }
    }
}

impl FreqExpert {
    pub fn zeros(window_length: usize, horizon: usize, cutoff: Option<usize>) -> Self {
        let (k_in, k_out) = freq_bins(window_length, horizon, cutoff);
        Self {
            weight_re: Matrix::zeros(k_out, k_in),
            weight_im: Matrix::zeros(k_out, k_in),
            bias_re: vec![0.0; k_out],
            bias_im: vec![0.0; k_out],
            window_length,
            horizon,
        }
    }

    /// Maps every input bin whose frequency `k / w` is also on the output grid
    /// `k' / (w + H)` onto that output bin with unit gain.
    pub fn identity(window_length: usize, horizon: usize, cutoff: Option<usize>) -> Self {
        let mut e = Self::zeros(window_length, horizon, cutoff);
        let n_out = window_length + horizon;
        for k in 0..e.k_in() {
            if (k * n_out).is_multiple_of(window_length) {
                let k_out = k * n_out / window_length;
                if k_out < e.k_out() {
                    e.weight_re[(k_out, k)] = 1.0;
                }
            }
        }
        e
    }

    /// Shared-bin identity plus uniform noise of half-width `noise` on every
    /// weight; zero bias.
    pub fn init<R: Rng>(
        window_length: usize,
        horizon: usize,
        cutoff: Option<usize>,
        noise: f64,
        rng: &mut R,
    ) -> Self {
        let mut e = Self::identity(window_length, horizon, cutoff);
        if noise > 0.0 {
            for v in e.weight_re.as_mut_slice() {
                *v += rng.gen_range(-noise..=noise);
            }
            for v in e.weight_im.as_mut_slice() {
                *v += rng.gen_range(-noise..=noise);
            }
        }
        e
    }

    pub fn k_in(&self) -> usize {
        self.weight_re.cols()
    }

    pub fn k_out(&self) -> usize {
        self.weight_re.rows()
    }

    pub fn output_length(&self) -> usize {
        self.window_length + self.horizon
    }

    fn ratio(&self) -> f64 {
        self.output_length() as f64 / self.window_length as f64
    }

    fn interpolate(&self, s: &[Complex64]) -> Vec<Complex64> {
        let mut t = vec![Complex64::new(0.0, 0.0); fft::rfft_bins(self.output_length())];
        for (ko, tk) in t.iter_mut().enumerate().take(self.k_out()) {
            let (mut re, mut im) = (self.bias_re[ko], self.bias_im[ko]);
            for (ki, sv) in s.iter().enumerate().take(self.k_in()) {
                let (wr, wi) = (self.weight_re[(ko, ki)], self.weight_im[(ko, ki)]);
                re += wr * sv.re - wi * sv.im;
                im += wr * sv.im + wi * sv.re;
            }
            *tk = Complex64::new(re, im);
        }
        t
    }

    fn forward_channel(&self, x: &[f64]) -> Vec<f64> {
        let s = fft::rfft(x);
        let t = self.interpolate(&s);
        let y = fft::irfft(&t, self.output_length()).expect("bin count fixed by construction");
        let r = self.ratio();
        y[self.window_length..].iter().map(|v| v * r).collect()
    }

    /// Full `w + H` reconstruction of one channel (lookback fit plus forecast).
    pub fn reconstruct_channel(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.window_length {
            return Err(Error::shape("FreqExpert::reconstruct_channel", self.window_length, x.len()));
        }
        let t = self.interpolate(&fft::rfft(x));
        let r = self.ratio();
        Ok(fft::irfft(&t, self.output_length())?.into_iter().map(|v| v * r).collect())
    }

    pub fn forward(&self, view: &Matrix) -> Result<Matrix> {
        if view.rows() != self.window_length {
            return Err(Error::shape("FreqExpert::forward", self.window_length, view.rows()));
        }
        let mut out = Matrix::zeros(self.horizon, view.cols());
        for c in 0..view.cols() {
            out.set_column(c, &self.forward_channel(&view.column(c)));
        }
        Ok(out)
    }

    pub fn backward(&self, view: &Matrix, upstream: &Matrix) -> Result<(FreqExpert, Matrix)> {
        if view.rows() != self.window_length {
            return Err(Error::shape("FreqExpert::backward view", self.window_length, view.rows()));
        }
        upstream.check_shape("FreqExpert::backward upstream", self.horizon, view.cols())?;
        let mut grads = self.zeros_like();
        let mut d_view = Matrix::zeros(self.window_length, view.cols());
        let n_out = self.output_length();
        let r = self.ratio();
        for c in 0..view.cols() {
            let s = fft::rfft(&view.column(c));
            let mut gy = vec![0.0; n_out];
            for h in 0..self.horizon {
                gy[self.window_length + h] = upstream[(h, c)] * r;
            }
            let gt = fft::irfft_adjoint(&gy);
            let mut gs = vec![Complex64::new(0.0, 0.0); s.len()];
            for ko in 0..self.k_out() {
                let g = gt[ko];
                grads.bias_re[ko] += g.re;
                grads.bias_im[ko] += g.im;
                for ki in 0..self.k_in() {
                    let sv = s[ki];
                    let (wr, wi) = (self.weight_re[(ko, ki)], self.weight_im[(ko, ki)]);
                    grads.weight_re[(ko, ki)] += g.re * sv.re + g.im * sv.im;
                    grads.weight_im[(ko, ki)] += -g.re * sv.im + g.im * sv.re;
                    gs[ki].re += wr * g.re + wi * g.im;
                    gs[ki].im += -wi * g.re + wr * g.im;
                }
            }
            d_view.set_column(c, &fft::rfft_adjoint(&gs, self.window_length));
        }
        Ok((grads, d_view))
    }
}

impl Parameterized for FreqExpert {
    fn tensors(&self) -> Vec<Tensor<'_>> {
        let ws = vec![self.k_out(), self.k_in()];
        vec![
            Tensor { name: "weight_re".into(), shape: ws.clone(), data: self.weight_re.as_slice() },
            Tensor { name: "weight_im".into(), shape: ws, data: self.weight_im.as_slice() },
            Tensor { name: "bias_re".into(), shape: vec![self.bias_re.len()], data: &self.bias_re },
            Tensor { name: "bias_im".into(), shape: vec![self.bias_im.len()], data: &self.bias_im },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let ws = vec![self.weight_re.rows(), self.weight_re.cols()];
        let k = self.bias_re.len();
        vec![
            TensorMut { name: "weight_re".into(), shape: ws.clone(), data: self.weight_re.as_mut_slice() },
            TensorMut { name: "weight_im".into(), shape: ws, data: self.weight_im.as_mut_slice() },
            TensorMut { name: "bias_re".into(), shape: vec![k], data: &mut self.bias_re },
            TensorMut { name: "bias_im".into(), shape: vec![k], data: &mut self.bias_im },
        ]
    }
}

/// Homogeneous set of `M >= 1` experts with non-increasing window lengths.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpertBank {
    Time(Vec<LinearExpert>),
    Frequency(Vec<FreqExpert>),
}

impl ExpertBank {
    pub fn new_time(experts: Vec<LinearExpert>) -> Result<Self> {
        let bank = ExpertBank::Time(experts);
        bank.validate()?;
        Ok(bank)
    }

    pub fn new_frequency(experts: Vec<FreqExpert>) -> Result<Self> {
        let bank = ExpertBank::Frequency(experts);
        bank.validate()?;
        Ok(bank)
    }

    fn validate(&self) -> Result<()> {
        let lengths = self.window_lengths();
        if lengths.is_empty() || lengths.contains(&0) || lengths.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::NonDescendingWindows(lengths));
        }
        let h = self.horizon();
        let same_h = match self {
            ExpertBank::Time(es) => es.iter().all(|e| e.horizon() == h),
            ExpertBank::Frequency(es) => es.iter().all(|e| e.horizon == h),
        };
        if !same_h {
            return Err(Error::shape("ExpertBank", format!("horizon {h} for every expert"), "mixed"));
        }
        Ok(())
    }

    pub fn domain(&self) -> ExpertDomain {
        match self {
            ExpertBank::Time(_) => ExpertDomain::Time,
            ExpertBank::Frequency(_) => ExpertDomain::Frequency,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ExpertBank::Time(es) => es.len(),
            ExpertBank::Frequency(es) => es.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window_lengths(&self) -> Vec<usize> {
        match self {
            ExpertBank::Time(es) => es.iter().map(|e| e.window_length).collect(),
            ExpertBank::Frequency(es) => es.iter().map(|e| e.window_length).collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            ExpertBank::Time(es) => es.first().map_or(0, LinearExpert::horizon),
            ExpertBank::Frequency(es) => es.first().map_or(0, |e| e.horizon),
        }
    }

    fn check_views(&self, views: &[Matrix]) -> Result<()> {
        if views.len() != self.len() {
            return Err(Error::shape("ExpertBank views", self.len(), views.len()));
        }
        Ok(())
    }

    pub fn forward(&self, views: &[Matrix]) -> Result<Vec<Matrix>> {
        self.check_views(views)?;
        match self {
            ExpertBank::Time(es) => es.iter().zip(views).map(|(e, v)| e.forward(v)).collect(),
            ExpertBank::Frequency(es) => es.iter().zip(views).map(|(e, v)| e.forward(v)).collect(),
        }
    }

    /// Gradients for every expert plus `dL/dview` for every view.
    pub fn backward(&self, views: &[Matrix], upstream: &[Matrix]) -> Result<(ExpertBank, Vec<Matrix>)> {
        self.check_views(views)?;
        self.check_views(upstream)?;
        match self {
            ExpertBank::Time(es) => {
                let mut grads = Vec::with_capacity(es.len());
                let mut dv = Vec::with_capacity(es.len());
                for ((e, v), g) in es.iter().zip(views).zip(upstream) {
                    let (pg, vg) = e.backward(v, g)?;
                    grads.push(pg);
                    dv.push(vg);
                }
                Ok((ExpertBank::Time(grads), dv))
            }
            ExpertBank::Frequency(es) => {
                let mut grads = Vec::with_capacity(es.len());
                let mut dv = Vec::with_capacity(es.len());
                for ((e, v), g) in es.iter().zip(views).zip(upstream) {
                    let (pg, vg) = e.backward(v, g)?;
                    grads.push(pg);
                    dv.push(vg);
                }
                Ok((ExpertBank::Frequency(grads), dv))
            }
        }
    }
}

impl Parameterized for ExpertBank {
    fn tensors(&self) -> Vec<Tensor<'_>> {
        match self {
            ExpertBank::Time(es) => es
                .iter()
                .enumerate()
                .flat_map(|(m, e)| prefixed(&format!("expert{m}"), e.tensors()))
                .collect(),
            ExpertBank::Frequency(es) => es
                .iter()
                .enumerate()
                .flat_map(|(m, e)| prefixed(&format!("expert{m}"), e.tensors()))
                .collect(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        match self {
            ExpertBank::Time(es) => es
                .iter_mut()
                .enumerate()
                .flat_map(|(m, e)| prefixed_mut(&format!("expert{m}"), e.tensors_mut()))
                .collect(),
            ExpertBank::Frequency(es) => es
                .iter_mut()
                .enumerate()
                .flat_map(|(m, e)| prefixed_mut(&format!("expert{m}"), e.tensors_mut()))
                .collect(),
        }
    }
}

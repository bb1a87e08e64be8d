//! FiLM conditioning, 1-D convolutions and the full model.
//!
//! In the default `aggregate` mode the expert outputs are stacked as input
//! channels of a convolution producing `Y`; each prompt branch modulates `Y`
//! as `gamma * Y + beta`, and a final convolution fuses `[Y; Y_S; Y_D]`.
//! The `per_expert` mode instead modulates every expert output by the static
//! and then the dynamic branch and fuses the `M` results directly.
//!
//! Convolutions run along the forecast-time axis independently per variate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{expert_views, validate_window_lengths};
use crate::error::{Error, Result};
use crate::experts::{freq_bins, ExpertBank, ExpertDomain, FreqExpert, LinearExpert};
use crate::matrix::Matrix;
use crate::params::{prefixed, prefixed_mut, Parameterized, Tensor, TensorMut};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    #[default]
    Aggregate,
    PerExpert,
}

impl std::fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConditioningMode::Aggregate => "aggregate",
            ConditioningMode::PerExpert => "per_expert",
        })
    }
}

/// `Linear^t . Linear^c`: maps an `L x d_llm` embedding to `H x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmGenerator {
    /// d_llm x C
    pub channel_map: Matrix,
    /// C
    pub channel_bias: Vec<f64>,
    /// L x H
    pub time_map: Matrix,
    /// H
    pub time_bias: Vec<f64>,
}

impl FilmGenerator {
    pub fn zeros(tokens: usize, d_llm: usize, horizon: usize, channels: usize) -> Self {
        Self {
            channel_map: Matrix::zeros(d_llm, channels),
            channel_bias: vec![0.0; channels],
            time_map: Matrix::zeros(tokens, horizon),
            time_bias: vec![0.0; horizon],
        }
    }

    /// Maps uniform in `+-scale`, zero channel bias, time bias `offset`.
    pub fn init<R: Rng>(
        tokens: usize,
        d_llm: usize,
        horizon: usize,
        channels: usize,
        scale: f64,
        offset: f64,
        rng: &mut R,
    ) -> Self {
        let channel_map = Matrix::from_fn(d_llm, channels, |_, _| rng.gen_range(-scale..=scale));
        let time_map = Matrix::from_fn(tokens, horizon, |_, _| rng.gen_range(-scale..=scale));
        Self {
            channel_map,
            channel_bias: vec![0.0; channels],
            time_map,
            time_bias: vec![offset; horizon],
        }
    }

    pub fn tokens(&self) -> usize {
        self.time_map.rows()
    }

    pub fn d_llm(&self) -> usize {
        self.channel_map.rows()
    }

    pub fn horizon(&self) -> usize {
        self.time_map.cols()
    }

    pub fn channels(&self) -> usize {
        self.channel_map.cols()
    }

    /// Returns the channel-mapped intermediate `L x C` and the output `H x C`.
    pub fn forward(&self, z: &Matrix) -> Result<(Matrix, Matrix)> {
        z.check_shape("FilmGenerator embedding", self.tokens(), self.d_llm())?;
        let mut a = z.matmul(&self.channel_map)?;
        for l in 0..a.rows() {
            for c in 0..a.cols() {
                a[(l, c)] += self.channel_bias[c];
            }
        }
        let mut out = self.time_map.transpose().matmul(&a)?;
        for h in 0..out.rows() {
            for c in 0..out.cols() {
                out[(h, c)] += self.time_bias[h];
            }
        }
        Ok((a, out))
    }

    /// Parameter gradients given `dL/dout`. The embedding receives none.
    pub fn backward(&self, z: &Matrix, a: &Matrix, upstream: &Matrix) -> Result<FilmGenerator> {
        upstream.check_shape("FilmGenerator upstream", self.horizon(), self.channels())?;
        let time_bias = (0..upstream.rows()).map(|h| upstream.row(h).iter().sum()).collect();
        let time_map = a.matmul(&upstream.transpose())?;
        let ga = self.time_map.matmul(upstream)?;
        let channel_bias = (0..ga.cols()).map(|c| (0..ga.rows()).map(|l| ga[(l, c)]).sum()).collect();
        let channel_map = z.transpose().matmul(&ga)?;
        Ok(FilmGenerator {
            channel_map,
            channel_bias,
            time_map,
            time_bias,
        })
    }
}

impl Parameterized for FilmGenerator {
    fn tensors(&self) -> Vec<Tensor<'_>> {
        vec![
            Tensor {
                name: "channel_map".into(),
                shape: vec![self.channel_map.rows(), self.channel_map.cols()],
                data: self.channel_map.as_slice(),
            },
            Tensor { name: "channel_bias".into(), shape: vec![self.channel_bias.len()], data: &self.channel_bias },
            Tensor {
                name: "time_map".into(),
                shape: vec![self.time_map.rows(), self.time_map.cols()],
                data: self.time_map.as_slice(),
            },
            Tensor { name: "time_bias".into(), shape: vec![self.time_bias.len()], data: &self.time_bias },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let cs = vec![self.channel_map.rows(), self.channel_map.cols()];
        let ts = vec![self.time_map.rows(), self.time_map.cols()];
        let (nc, nh) = (self.channel_bias.len(), self.time_bias.len());
        vec![
            TensorMut { name: "channel_map".into(), shape: cs, data: self.channel_map.as_mut_slice() },
            TensorMut { name: "channel_bias".into(), shape: vec![nc], data: &mut self.channel_bias },
            TensorMut { name: "time_map".into(), shape: ts, data: self.time_map.as_mut_slice() },
            TensorMut { name: "time_bias".into(), shape: vec![nh], data: &mut self.time_bias },
        ]
    }
}

/// `gamma * y + beta`, elementwise.
pub fn film_apply(gamma: &Matrix, beta: &Matrix, y: &Matrix) -> Result<Matrix> {
    y.same_shape(gamma, "film_apply gamma")?;
    y.same_shape(beta, "film_apply beta")?;
    let mut out = gamma.zip_map(y, |g, v| g * v);
    out.add_assign(beta);
    Ok(out)
}

/// Generates `(gamma, beta)` from one embedding.
pub fn film_params(gamma_gen: &FilmGenerator, beta_gen: &FilmGenerator, z: &Matrix) -> Result<(Matrix, Matrix)> {
    let (_, g) = gamma_gen.forward(z)?;
    let (_, b) = beta_gen.forward(z)?;
    Ok((g, b))
}

/// Gamma and beta generators for one prompt branch.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmPair {
    pub gamma: FilmGenerator,
    pub beta: FilmGenerator,
}

impl FilmPair {
    /// Near-identity conditioning: gamma starts at 1 and beta at 0 up to the
    /// small random maps.
    pub fn init<R: Rng>(tokens: usize, d_llm: usize, horizon: usize, channels: usize, rng: &mut R) -> Self {
        let gamma = FilmGenerator::init(tokens, d_llm, horizon, channels, 1e-2, 1.0, rng);
        let beta = FilmGenerator::init(tokens, d_llm, horizon, channels, 1e-2, 0.0, rng);
        Self { gamma, beta }
    }

    /// All-zero maps with gamma bias 1, i.e. exactly `gamma = 1, beta = 0`.
    pub fn identity(tokens: usize, d_llm: usize, horizon: usize, channels: usize) -> Self {
        let mut gamma = FilmGenerator::zeros(tokens, d_llm, horizon, channels);
        gamma.time_bias.fill(1.0);
        Self {
            gamma,
            beta: FilmGenerator::zeros(tokens, d_llm, horizon, channels),
        }
    }
}

impl Parameterized for FilmPair {
    fn tensors(&self) -> Vec<Tensor<'_>> {
        prefixed("gamma", self.gamma.tensors())
            .chain(prefixed("beta", self.beta.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let Self { gamma, beta } = self;
        prefixed_mut("gamma", gamma.tensors_mut())
            .chain(prefixed_mut("beta", beta.tensors_mut()))
            .collect()
    }
}

/// Same-length 1-D convolution (cross-correlation) with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    /// out x in x k, row-major
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel_size: usize) -> Result<Self> {
        if kernel_size.is_multiple_of(2) || kernel_size == 0 {
            return Err(Error::Config(format!("kernel size must be odd, got {kernel_size}")));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Config("convolution needs at least one input and output channel".into()));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            weight: vec![0.0; out_channels * in_channels * kernel_size],
            bias: vec![0.0; out_channels],
        })
    }

    /// Centre tap `1/in` for every input, plus uniform noise in `+-noise`.
    pub fn init_averaging<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        noise: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut c = Self::zeros(in_channels, out_channels, kernel_size)?;
        let centre = kernel_size / 2;
        for o in 0..out_channels {
            for i in 0..in_channels {
                for j in 0..kernel_size {
                    let base = if j == centre { 1.0 / in_channels as f64 } else { 0.0 };
                    *c.w_mut(o, i, j) = base + rng.gen_range(-noise..=noise);
                }
            }
        }
        Ok(c)
    }

    /// Noise-free [`Conv1d::init_averaging`].
    pub fn averaging(in_channels: usize, out_channels: usize, kernel_size: usize) -> Result<Self> {
        let mut c = Self::zeros(in_channels, out_channels, kernel_size)?;
        let centre = kernel_size / 2;
        for o in 0..out_channels {
            for i in 0..in_channels {
                *c.w_mut(o, i, centre) = 1.0 / in_channels as f64;
            }
        }
        Ok(c)
    }

    #[inline]
    pub fn w(&self, o: usize, i: usize, j: usize) -> f64 {
        self.weight[(o * self.in_channels + i) * self.kernel_size + j]
    }

    #[inline]
    pub fn w_mut(&mut self, o: usize, i: usize, j: usize) -> &mut f64 {
        &mut self.weight[(o * self.in_channels + i) * self.kernel_size + j]
    }

    fn pad(&self) -> isize {
        (self.kernel_size / 2) as isize
    }

    fn check_inputs(&self, inputs: &[Matrix]) -> Result<(usize, usize)> {
        if inputs.len() != self.in_channels {
            return Err(Error::shape("Conv1d inputs", self.in_channels, inputs.len()));
        }
        let (h, c) = inputs[0].shape();
        for m in inputs {
            m.check_shape("Conv1d input channel", h, c)?;
        }
        Ok((h, c))
    }

    /// Each input is one `H x C` channel; returns `out_channels` of `H x C`.
    pub fn forward(&self, inputs: &[Matrix]) -> Result<Vec<Matrix>> {
        let (h, c) = self.check_inputs(inputs)?;
        let pad = self.pad();
        let mut outs = Vec::with_capacity(self.out_channels);
        for o in 0..self.out_channels {
            let mut out = Matrix::filled(h, c, self.bias[o]);
            for (i, inp) in inputs.iter().enumerate() {
                for j in 0..self.kernel_size {
                    let w = self.w(o, i, j);
                    let shift = j as isize - pad;
                    for t in 0..h {
                        let src = t as isize + shift;
                        if src < 0 || src >= h as isize {
                            continue;
                        }
                        let src = src as usize;
                        for ch in 0..c {
                            out[(t, ch)] += w * inp[(src, ch)];
                        }
                    }
                }
            }
            outs.push(out);
        }
        Ok(outs)
    }

    /// Returns `(parameter gradients, dL/dinputs)`.
    pub fn backward(&self, inputs: &[Matrix], upstream: &[Matrix]) -> Result<(Conv1d, Vec<Matrix>)> {
        let (h, c) = self.check_inputs(inputs)?;
        if upstream.len() != self.out_channels {
            return Err(Error::shape("Conv1d upstream", self.out_channels, upstream.len()));
        }
        let pad = self.pad();
        let mut grads = self.zeros_like();
        let mut gin = vec![Matrix::zeros(h, c); self.in_channels];
        for (o, g) in upstream.iter().enumerate() {
            g.check_shape("Conv1d upstream channel", h, c)?;
            grads.bias[o] = g.as_slice().iter().sum();
            for (i, inp) in inputs.iter().enumerate() {
                for j in 0..self.kernel_size {
                    let w = self.w(o, i, j);
                    let shift = j as isize - pad;
                    let mut acc = 0.0;
                    for t in 0..h {
                        let src = t as isize + shift;
                        if src < 0 || src >= h as isize {
                            continue;
                        }
                        let src = src as usize;
                        for ch in 0..c {
                            acc += g[(t, ch)] * inp[(src, ch)];
                            gin[i][(src, ch)] += w * g[(t, ch)];
                        }
                    }
                    *grads.w_mut(o, i, j) += acc;
                }
            }
        }
        Ok((grads, gin))
    }

    pub fn param_count(in_channels: usize, out_channels: usize, kernel_size: usize) -> usize {
        out_channels * in_channels * kernel_size + out_channels
    }
}

impl Parameterized for Conv1d {
    fn tensors(&self) -> Vec<Tensor<'_>> {
        vec![
            Tensor {
                name: "weight".into(),
                shape: vec![self.out_channels, self.in_channels, self.kernel_size],
                data: &self.weight,
            },
            Tensor { name: "bias".into(), shape: vec![self.out_channels], data: &self.bias },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let ws = vec![self.out_channels, self.in_channels, self.kernel_size];
        let o = self.out_channels;
        vec![
            TensorMut { name: "weight".into(), shape: ws, data: &mut self.weight },
            TensorMut { name: "bias".into(), shape: vec![o], data: &mut self.bias },
        ]
    }
}

/// Architecture hyper-parameters; everything needed to rebuild a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub window_lengths: Vec<usize>,
    pub domain: ExpertDomain,
    pub d_llm: usize,
    pub static_tokens: usize,
    pub dynamic_tokens: usize,
    pub kernel_size: usize,
    pub mode: ConditioningMode,
    pub use_static: bool,
    pub use_dynamic: bool,
    pub freq_cutoff_bins: Option<usize>,
    pub freq_init_noise: f64,
}

impl ModelSpec {
    pub fn experts(&self) -> usize {
        self.window_lengths.len()
    }

    /// Number of branches entering the final fusion convolution.
    pub fn fusion_inputs(&self) -> usize {
        match self.mode {
            ConditioningMode::Aggregate => 1 + usize::from(self.use_static) + usize::from(self.use_dynamic),
            ConditioningMode::PerExpert => self.experts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_window_lengths(self.lookback, &self.window_lengths)?;
        if self.horizon == 0 || self.channels == 0 || self.d_llm == 0 {
            return Err(Error::Config("horizon, channels and d_llm must be >= 1".into()));
        }
        if (self.use_static && self.static_tokens == 0) || (self.use_dynamic && self.dynamic_tokens == 0) {
            return Err(Error::Config("prompt token counts must be >= 1".into()));
        }
        if self.kernel_size.is_multiple_of(2) || self.kernel_size > 9 {
            return Err(Error::Config(format!("kernel size must be odd and <= 9, got {}", self.kernel_size)));
        }
        Ok(())
    }

    /// Closed-form parameter count from the tensor shapes.
    pub fn param_count(&self) -> usize {
        let (h, c, d, k) = (self.horizon, self.channels, self.d_llm, self.kernel_size);
        let experts: usize = self
            .window_lengths
            .iter()
            .map(|&w| match self.domain {
                ExpertDomain::Time => h * w + h * c,
                ExpertDomain::Frequency => {
                    let (ki, ko) = freq_bins(w, h, self.freq_cutoff_bins);
                    2 * ko * ki + 2 * ko
                }
            })
            .sum();
        let generator = |l: usize| d * c + c + l * h + h;
        let agg = match self.mode {
            ConditioningMode::Aggregate => Conv1d::param_count(self.experts(), 1, k),
            ConditioningMode::PerExpert => 0,
        };
        let stat = if self.use_static { 2 * generator(self.static_tokens) } else { 0 };
        let dynm = if self.use_dynamic { 2 * generator(self.dynamic_tokens) } else { 0 };
        experts + agg + stat + dynm + Conv1d::param_count(self.fusion_inputs(), 1, k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemoleModel {
    pub spec: ModelSpec,
    pub bank: ExpertBank,
    /// Present in aggregate mode only.
    pub agg_conv: Option<Conv1d>,
    pub static_film: Option<FilmPair>,
    pub dynamic_film: Option<FilmPair>,
    pub final_conv: Conv1d,
}

struct FilmTrace {
    gamma_a: Matrix,
    beta_a: Matrix,
    gamma: Matrix,
    beta: Matrix,
}

/// Intermediates of one forward pass, consumed by [`LemoleModel::backward`].
pub struct ForwardTrace<'z> {
    pub views: Vec<Matrix>,
    pub expert_outputs: Vec<Matrix>,
    /// Aggregated `Y` (aggregate mode).
    pub aggregated: Option<Matrix>,
    /// Per-expert outputs after static modulation (per-expert mode).
    pub after_static: Vec<Matrix>,
    pub fusion_inputs: Vec<Matrix>,
    pub output: Matrix,
    static_z: &'z Matrix,
    dynamic_z: &'z Matrix,
    static_film: Option<FilmTrace>,
    dynamic_film: Option<FilmTrace>,
}

impl ForwardTrace<'_> {
    pub fn static_gamma(&self) -> Option<&Matrix> {
        self.static_film.as_ref().map(|f| &f.gamma)
    }

    pub fn dynamic_gamma(&self) -> Option<&Matrix> {
        self.dynamic_film.as_ref().map(|f| &f.gamma)
    }
}

fn run_film(pair: &FilmPair, z: &Matrix) -> Result<FilmTrace> {
    let (gamma_a, gamma) = pair.gamma.forward(z)?;
    let (beta_a, beta) = pair.beta.forward(z)?;
    Ok(FilmTrace { gamma_a, beta_a, gamma, beta })
}

fn film_backward(pair: &FilmPair, z: &Matrix, tr: &FilmTrace, g_gamma: &Matrix, g_beta: &Matrix) -> Result<FilmPair> {
    Ok(FilmPair {
        gamma: pair.gamma.backward(z, &tr.gamma_a, g_gamma)?,
        beta: pair.beta.backward(z, &tr.beta_a, g_beta)?,
    })
}

impl LemoleModel {
    /// Seeded initialization following the spec's shapes.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, c, d) = (spec.horizon, spec.channels, spec.d_llm);
        let bank = match spec.domain {
            ExpertDomain::Time => {
                ExpertBank::new_time(spec.window_lengths.iter().map(|&w| LinearExpert::init(w, h, c, &mut rng)).collect())?
            }
            ExpertDomain::Frequency => ExpertBank::new_frequency(
                spec.window_lengths
                    .iter()
                    .map(|&w| FreqExpert::init(w, h, spec.freq_cutoff_bins, spec.freq_init_noise, &mut rng))
                    .collect(),
            )?,
        };
        let agg_conv = match spec.mode {
            ConditioningMode::Aggregate => {
                Some(Conv1d::init_averaging(spec.experts(), 1, spec.kernel_size, 1e-2, &mut rng)?)
            }
            ConditioningMode::PerExpert => None,
        };
        let static_film = spec.use_static.then(|| FilmPair::init(spec.static_tokens, d, h, c, &mut rng));
        let dynamic_film = spec.use_dynamic.then(|| FilmPair::init(spec.dynamic_tokens, d, h, c, &mut rng));
        let final_conv = Conv1d::init_averaging(spec.fusion_inputs(), 1, spec.kernel_size, 1e-2, &mut rng)?;
        Ok(Self { spec, bank, agg_conv, static_film, dynamic_film, final_conv })
    }

    /// Assembles a model from explicit parts, checking every shape.
    pub fn from_parts(
        spec: ModelSpec,
        bank: ExpertBank,
        agg_conv: Option<Conv1d>,
        static_film: Option<FilmPair>,
        dynamic_film: Option<FilmPair>,
        final_conv: Conv1d,
    ) -> Result<Self> {
        spec.validate()?;
        let m = Self { spec, bank, agg_conv, static_film, dynamic_film, final_conv };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let s = &self.spec;
        if self.bank.window_lengths() != s.window_lengths || self.bank.domain() != s.domain {
            return Err(Error::shape("LemoleModel bank", format!("{:?}", s.window_lengths), format!("{:?}", self.bank.window_lengths())));
        }
        if self.bank.horizon() != s.horizon {
            return Err(Error::shape("LemoleModel horizon", s.horizon, self.bank.horizon()));
        }
        match (s.mode, &self.agg_conv) {
            (ConditioningMode::Aggregate, Some(c)) if c.in_channels == s.experts() && c.out_channels == 1 => {}
            (ConditioningMode::PerExpert, None) => {}
            _ => return Err(Error::shape("LemoleModel agg_conv", format!("{} mode", s.mode), "mismatched")),
        }
        let check_pair = |p: &Option<FilmPair>, enabled: bool, tokens: usize| -> Result<()> {
            match (p, enabled) {
                (None, false) => Ok(()),
                (Some(p), true) => {
                    for g in [&p.gamma, &p.beta] {
                        if (g.tokens(), g.d_llm(), g.horizon(), g.channels()) != (tokens, s.d_llm, s.horizon, s.channels) {
                            return Err(Error::shape("FilmGenerator", format!("{tokens}x{}->{}x{}", s.d_llm, s.horizon, s.channels), "mismatched"));
                        }
                    }
                    Ok(())
                }
                _ => Err(Error::shape("LemoleModel film", enabled, p.is_some())),
            }
        };
        check_pair(&self.static_film, s.use_static, s.static_tokens)?;
        check_pair(&self.dynamic_film, s.use_dynamic, s.dynamic_tokens)?;
        if self.final_conv.in_channels != s.fusion_inputs() || self.final_conv.out_channels != 1 {
            return Err(Error::shape("LemoleModel final_conv", s.fusion_inputs(), self.final_conv.in_channels));
        }
        Ok(())
    }

    pub fn count_params(&self) -> usize {
        self.num_params()
    }

    /// Forecast only.
    pub fn predict(&self, lookback: &Matrix, static_z: &Matrix, dynamic_z: &Matrix) -> Result<Matrix> {
        Ok(self.forward(lookback, static_z, dynamic_z)?.0)
    }

    /// Forward pass; embeddings of disabled branches are ignored.
    pub fn forward<'z>(
        &self,
        lookback: &Matrix,
        static_z: &'z Matrix,
        dynamic_z: &'z Matrix,
    ) -> Result<(Matrix, ForwardTrace<'z>)> {
        let s = &self.spec;
        lookback.check_shape("model lookback", s.lookback, s.channels)?;
        let views = expert_views(lookback, &s.window_lengths)?;
        let expert_outputs = self.bank.forward(&views)?;
        let static_film = self.static_film.as_ref().map(|p| run_film(p, static_z)).transpose()?;
        let dynamic_film = self.dynamic_film.as_ref().map(|p| run_film(p, dynamic_z)).transpose()?;

        let mut aggregated = None;
        let mut after_static = Vec::new();
        let mut fusion_inputs = Vec::with_capacity(s.fusion_inputs());
        match s.mode {
            ConditioningMode::Aggregate => {
                let agg = self.agg_conv.as_ref().expect("validated");
                let y = agg.forward(&expert_outputs)?.remove(0);
                fusion_inputs.push(y.clone());
                for f in [&static_film, &dynamic_film].into_iter().flatten() {
                    fusion_inputs.push(film_apply(&f.gamma, &f.beta, &y)?);
                }
                aggregated = Some(y);
            }
            ConditioningMode::PerExpert => {
                for y in &expert_outputs {
                    let mut cur = y.clone();
                    if let Some(f) = &static_film {
                        cur = film_apply(&f.gamma, &f.beta, &cur)?;
                    }
                    after_static.push(cur.clone());
                    if let Some(f) = &dynamic_film {
                        cur = film_apply(&f.gamma, &f.beta, &cur)?;
                    }
                    fusion_inputs.push(cur);
                }
            }
        }
        let output = self.final_conv.forward(&fusion_inputs)?.remove(0);
        let trace = ForwardTrace {
            views,
            expert_outputs,
            aggregated,
            after_static,
            fusion_inputs,
            output: output.clone(),
            static_z,
            dynamic_z,
            static_film,
            dynamic_film,
        };
        Ok((output, trace))
    }

    /// Gradients of every parameter given `dL/dforecast`. Returned as a
    /// model-shaped value whose tensors line up with `self.tensors()`.
    pub fn backward(&self, trace: &ForwardTrace<'_>, upstream: &Matrix) -> Result<LemoleModel> {
        let s = &self.spec;
        upstream.check_shape("model upstream", s.horizon, s.channels)?;
        let (final_grad, g_fusion) = self.final_conv.backward(&trace.fusion_inputs, std::slice::from_ref(upstream))?;
        let zero = Matrix::zeros(s.horizon, s.channels);
        let mut g_sg = zero.clone();
        let mut g_sb = zero.clone();
        let mut g_dg = zero.clone();
        let mut g_db = zero.clone();

        let (g_experts, agg_grad) = match s.mode {
            ConditioningMode::Aggregate => {
                let y = trace.aggregated.as_ref().expect("aggregate trace");
                let mut g_y = g_fusion[0].clone();
                let mut idx = 1;
                if let Some(f) = &trace.static_film {
                    let g = &g_fusion[idx];
                    g_sg = g.zip_map(y, |a, b| a * b);
                    g_sb = g.clone();
                    g_y.add_assign(&g.zip_map(&f.gamma, |a, b| a * b));
                    idx += 1;
                }
                if let Some(f) = &trace.dynamic_film {
                    let g = &g_fusion[idx];
                    g_dg = g.zip_map(y, |a, b| a * b);
                    g_db = g.clone();
                    g_y.add_assign(&g.zip_map(&f.gamma, |a, b| a * b));
                }
                let agg = self.agg_conv.as_ref().expect("validated");
                let (agg_grad, g_exp) = agg.backward(&trace.expert_outputs, std::slice::from_ref(&g_y))?;
                (g_exp, Some(agg_grad))
            }
            ConditioningMode::PerExpert => {
                let mut g_exp = Vec::with_capacity(s.experts());
                for (m, g_out) in g_fusion.iter().enumerate() {
                    let mut g = g_out.clone();
                    if let Some(f) = &trace.dynamic_film {
                        g_dg.add_assign(&g.zip_map(&trace.after_static[m], |a, b| a * b));
                        g_db.add_assign(&g);
                        g = g.zip_map(&f.gamma, |a, b| a * b);
                    }
                    if let Some(f) = &trace.static_film {
                        g_sg.add_assign(&g.zip_map(&trace.expert_outputs[m], |a, b| a * b));
                        g_sb.add_assign(&g);
                        g = g.zip_map(&f.gamma, |a, b| a * b);
                    }
                    g_exp.push(g);
                }
                (g_exp, None)
            }
        };

        let static_grad = match (&self.static_film, &trace.static_film) {
            (Some(p), Some(tr)) => Some(film_backward(p, trace.static_z, tr, &g_sg, &g_sb)?),
            _ => None,
        };
        let dynamic_grad = match (&self.dynamic_film, &trace.dynamic_film) {
            (Some(p), Some(tr)) => Some(film_backward(p, trace.dynamic_z, tr, &g_dg, &g_db)?),
            _ => None,
        };
        let (bank_grad, _) = self.bank.backward(&trace.views, &g_experts)?;
        Ok(LemoleModel {
            spec: self.spec.clone(),
            bank: bank_grad,
            agg_conv: agg_grad,
            static_film: static_grad,
            dynamic_film: dynamic_grad,
            final_conv: final_grad,
        })
    }
}

impl Parameterized for LemoleModel {
    fn tensors(&self) -> Vec<Tensor<'_>> {
        let mut out: Vec<Tensor<'_>> = prefixed("bank", self.bank.tensors()).collect();
        if let Some(c) = &self.agg_conv {
            out.extend(prefixed("agg_conv", c.tensors()));
        }
        if let Some(p) = &self.static_film {
            out.extend(prefixed("static_film", p.tensors()));
        }
        if let Some(p) = &self.dynamic_film {
            out.extend(prefixed("dynamic_film", p.tensors()));
        }
        out.extend(prefixed("final_conv", self.final_conv.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let Self { bank, agg_conv, static_film, dynamic_film, final_conv, .. } = self;
        let mut out: Vec<TensorMut<'_>> = prefixed_mut("bank", bank.tensors_mut()).collect();
        if let Some(c) = agg_conv {
            out.extend(prefixed_mut("agg_conv", c.tensors_mut()));
        }
        if let Some(p) = static_film {
            out.extend(prefixed_mut("static_film", p.tensors_mut()));
        }
        if let Some(p) = dynamic_film {
            out.extend(prefixed_mut("dynamic_film", p.tensors_mut()));
        }
        out.extend(prefixed_mut("final_conv", final_conv.tensors_mut()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_from(kernel: &[f64]) -> Conv1d {
        let mut c = Conv1d::zeros(1, 1, kernel.len()).unwrap();
        c.weight.copy_from_slice(kernel);
        c
    }

    #[test]
    fn conv_identities_and_hand_value() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]);
        assert_eq!(conv_from(&[1.0]).forward(std::slice::from_ref(&x)).unwrap()[0], x);
        assert_eq!(conv_from(&[0.0, 1.0, 0.0]).forward(std::slice::from_ref(&x)).unwrap()[0], x);
        let y = conv_from(&[1.0, 1.0, 1.0]).forward(&[x]).unwrap();
        assert_eq!(y[0], Matrix::from_rows(&[[3.0], [6.0], [5.0]]));
        assert!(Conv1d::zeros(1, 1, 4).is_err());
    }

    #[test]
    fn conv_preserves_length() {
        for k in [1, 3, 5, 7, 9] {
            let c = Conv1d::averaging(2, 1, k).unwrap();
            let x = Matrix::from_fn(4, 3, |i, j| (i + j) as f64);
            let y = c.forward(&[x.clone(), x]).unwrap();
            assert_eq!(y[0].shape(), (4, 3));
        }
    }

    #[test]
    fn film_apply_cases() {
        let y = Matrix::from_rows(&[[3.0, -1.0]]);
        let one = Matrix::filled(1, 2, 1.0);
        let zero = Matrix::zeros(1, 2);
        assert_eq!(film_apply(&one, &zero, &y).unwrap(), y);
        let b = Matrix::from_rows(&[[0.5, 0.25]]);
        assert_eq!(film_apply(&zero, &b, &y).unwrap(), b);
        let s = film_apply(&Matrix::from_rows(&[[2.0]]), &Matrix::from_rows(&[[-1.0]]), &Matrix::from_rows(&[[3.0]])).unwrap();
        assert_eq!(s[(0, 0)], 5.0);
        assert!(film_apply(&one, &zero, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn film_params_cases() {
        let z = Matrix::zeros(3, 4);
        let g = FilmGenerator::zeros(3, 4, 2, 1);
        let (gm, bt) = film_params(&g, &g, &z).unwrap();
        assert!(gm.as_slice().iter().chain(bt.as_slice()).all(|&v| v == 0.0));

        // L = H, d = C, both maps identity -> gamma = Z
        let z = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let mut id = FilmGenerator::zeros(2, 2, 2, 2);
        id.channel_map = Matrix::identity(2);
        id.time_map = Matrix::identity(2);
        assert_eq!(id.forward(&z).unwrap().1, z);

        // L=2, d=2, C=1, H=1: A = Z [1, -1]^T = [-1, -1]^T ; gamma = [2, 0.5] . A + 0.1 = -2.4
        let mut g = FilmGenerator::zeros(2, 2, 1, 1);
        g.channel_map = Matrix::from_rows(&[[1.0], [-1.0]]);
        g.time_map = Matrix::from_rows(&[[2.0], [0.5]]);
        g.time_bias = vec![0.1];
        let (_, out) = g.forward(&z).unwrap();
        assert!((out[(0, 0)] + 2.4).abs() < 1e-12);
    }

    #[test]
    fn count_matches_formula() {
        let spec = ModelSpec {
            lookback: 4,
            horizon: 2,
            channels: 1,
            window_lengths: vec![4],
            domain: ExpertDomain::Time,
            d_llm: 4,
            static_tokens: 2,
            dynamic_tokens: 2,
            kernel_size: 3,
            mode: ConditioningMode::Aggregate,
            use_static: true,
            use_dynamic: true,
            freq_cutoff_bins: None,
            freq_init_noise: 1e-3,
        };
        // expert 2*4 + 2*1 = 10; agg 1*3 + 1 = 4; 4 generators of 4+1+4+2 = 11; final 3*3 + 1 = 10
        assert_eq!(spec.param_count(), 68);
        let m = LemoleModel::init(spec.clone(), 0).unwrap();
        assert_eq!(m.count_params(), 68);

        let mut two = spec;
        two.window_lengths = vec![4, 4];
        // one more expert (10) and one more agg input channel (3)
        assert_eq!(two.param_count(), 68 + 10 + 3);
        assert_eq!(LemoleModel::init(two, 0).unwrap().count_params(), 81);
    }
}

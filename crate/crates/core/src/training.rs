//! Loss, Adam, the training loop and finite-difference gradient checking.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioning::{LemoleModel, ModelSpec};
use crate::data::{chrono_split, few_shot_subset, fit_stats, window_at, window_starts, ChannelStats, SeriesFrame, SplitSpec, WindowSample};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::Parameterized;
use crate::prompts::{fit_token_rows, render_dynamic_prompt, render_static_prompt, DatasetMeta, EmbeddingCache, EmbeddingProvider};

/// Mean squared error over all entries and its gradient `2 (pred - target) / n`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    pred.same_shape(target, "mse_loss")?;
    let n = pred.as_slice().len() as f64;
    let diff = pred.zip_map(target, |a, b| a - b);
    let loss = diff.as_slice().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.map(|d| 2.0 * d / n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    /// One bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &AdamConfig) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], cfg: &AdamConfig) {
    state.step(params, grads, cfg);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Architecture. `channels`, `d_llm`, `static_tokens` and
    /// `dynamic_tokens` set to 0 are filled in from the data and prompts.
    pub model: ModelSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub patience: usize,
    pub seed: u64,
    pub train_stride: usize,
    pub eval_stride: usize,
}

impl TrainConfig {
    pub fn new(model: ModelSpec) -> Self {
        Self {
            model,
            epochs: 20,
            batch_size: 32,
            adam: AdamConfig::default(),
            patience: 5,
            seed: 2024,
            train_stride: 1,
            eval_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(a.eps > 0.0) {
            return Err(Error::Config("adam_eps must be > 0".into()));
        }
        if self.batch_size == 0 || self.patience == 0 || self.train_stride == 0 || self.eval_stride == 0 {
            return Err(Error::Config("batch_size, patience and strides must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch losses and timings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub epoch_ms: Vec<f64>,
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_mse.len()
    }

    /// CSV with header `epoch,train_mse,val_mse[,ms]`. Losses are printed in
    /// shortest round-trip form.
    pub fn to_csv(&self, with_timings: bool) -> String {
        let mut s = String::from(if with_timings { "epoch,train_mse,val_mse,ms\n" } else { "epoch,train_mse,val_mse\n" });
        for e in 0..self.epochs() {
            s.push_str(&format!("{},{:?},{:?}", e, self.train_mse[e], self.val_mse[e]));
            if with_timings {
                s.push_str(&format!(",{:.3}", self.epoch_ms[e]));
            }
            s.push('\n');
        }
        s
    }
}

/// One dataset prepared for training: standardized chronological splits and
/// the metadata behind its static prompt.
#[derive(Debug, Clone)]
pub struct SeriesSource {
    pub meta: DatasetMeta,
    pub train: SeriesFrame,
    pub val: SeriesFrame,
    pub test: SeriesFrame,
    pub stats: ChannelStats,
}

impl SeriesSource {
    /// Splits, optionally keeps a few-shot head of the training segment, and
    /// standardizes everything with statistics of the (possibly reduced)
    /// training segment.
    pub fn prepare(frame: &SeriesFrame, meta: DatasetMeta, split: &SplitSpec, min_rows: usize, few_shot: Option<f64>) -> Result<Self> {
        let (train, val, test) = chrono_split(frame, split, min_rows)?;
        let train = match few_shot {
            Some(f) => few_shot_subset(&train, f, min_rows)?,
            None => train,
        };
        let stats = fit_stats(&train)?;
        Ok(Self {
            meta,
            train: stats.standardize(&train)?,
            val: stats.standardize(&val)?,
            test: stats.standardize(&test)?,
            stats,
        })
    }
}

/// A window paired with the frozen embeddings that condition it.
#[derive(Debug, Clone)]
pub struct PromptedWindow {
    pub source: usize,
    pub sample: WindowSample,
    pub static_z: Arc<Matrix>,
    pub dynamic_z: Arc<Matrix>,
}

/// Renders and embeds prompts for a set of sources, memoizing dynamic
/// embeddings by prompt text.
pub struct PromptContext<'p> {
    cache: EmbeddingCache<'p>,
    static_raw: Vec<Arc<Matrix>>,
    static_fitted: Vec<Arc<Matrix>>,
    spec: ModelSpec,
}

impl<'p> PromptContext<'p> {
    /// Embeds every source's static prompt and resolves the derived fields
    /// of `spec` (channels, d_llm, token counts).
    pub fn new(provider: &'p dyn EmbeddingProvider, metas: &[&DatasetMeta], channels: usize, freq_seconds: i64, mut spec: ModelSpec) -> Result<Self> {
        let cache = EmbeddingCache::new(provider);
        let mut static_raw = Vec::with_capacity(metas.len());
        for meta in metas {
            static_raw.push(cache.get(&render_static_prompt(meta)?)?);
        }
        let d = static_raw.first().map_or(0, |z| z.cols());
        if static_raw.iter().any(|z| z.cols() != d) {
            return Err(Error::EmbeddingShapeInvalid("static embeddings disagree on d_llm".into()));
        }
        if spec.channels == 0 {
            spec.channels = channels;
        } else if spec.channels != channels {
            return Err(Error::shape("channels", spec.channels, channels));
        }
        if spec.d_llm == 0 {
            spec.d_llm = d;
        } else if spec.d_llm != d {
            return Err(Error::shape("d_llm", spec.d_llm, d));
        }
        if spec.static_tokens == 0 {
            spec.static_tokens = static_raw.iter().map(|z| z.rows()).max().unwrap_or(1);
        }
        if spec.dynamic_tokens == 0 {
            // Token count is fixed by the template; probe with a reference span.
            let w1 = spec.window_lengths.first().copied().unwrap_or(1);
            let probe: Vec<i64> = (0..w1 as i64).map(|i| 1_467_331_200 + i * freq_seconds).collect();
            let z = cache.get(&render_dynamic_prompt(&probe, freq_seconds)?)?;
            if z.cols() != spec.d_llm {
                return Err(Error::shape("dynamic d_llm", spec.d_llm, z.cols()));
            }
            spec.dynamic_tokens = z.rows();
        }
        let static_fitted = static_raw.iter().map(|z| Arc::new(fit_token_rows(z, spec.static_tokens))).collect();
        Ok(Self { cache, static_raw, static_fitted, spec })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn static_embedding(&self, source: usize) -> &Arc<Matrix> {
        &self.static_fitted[source]
    }

    /// Raw (unfitted) static embeddings, for frozen-content checks.
    pub fn static_raw(&self) -> &[Arc<Matrix>] {
        &self.static_raw
    }

    pub fn distinct_prompts(&self) -> usize {
        self.cache.len()
    }

    /// Dynamic embedding for a lookback span: the prompt covers the last
    /// `w_1` timestamps.
    pub fn dynamic_embedding(&self, lookback_timestamps: &[i64], freq_seconds: i64) -> Result<Arc<Matrix>> {
        let w1 = self.spec.window_lengths[0].min(lookback_timestamps.len());
        let span = &lookback_timestamps[lookback_timestamps.len() - w1..];
        let z = self.cache.get(&render_dynamic_prompt(span, freq_seconds)?)?;
        if z.rows() == self.spec.dynamic_tokens {
            Ok(z)
        } else {
            Ok(Arc::new(fit_token_rows(&z, self.spec.dynamic_tokens)))
        }
    }

    /// Windows of `frame` at `stride`, each with its embeddings.
    pub fn windows(&self, source: usize, frame: &SeriesFrame, stride: usize) -> Result<Vec<PromptedWindow>> {
        let (t, h) = (self.spec.lookback, self.spec.horizon);
        let starts = window_starts(frame, t, h, stride)?;
        let static_z = Arc::clone(&self.static_fitted[source]);
        starts
            .into_iter()
            .map(|s| {
                let sample = window_at(frame, s, t, h);
                let dynamic_z = self.dynamic_embedding(&sample.lookback_timestamps, frame.freq_seconds)?;
                Ok(PromptedWindow { source, sample, static_z: Arc::clone(&static_z), dynamic_z })
            })
            .collect()
    }
}

/// Loss and gradient for one window.
pub fn sample_gradient(model: &LemoleModel, w: &PromptedWindow) -> Result<(f64, LemoleModel)> {
    let (pred, trace) = model.forward(&w.sample.lookback, &w.static_z, &w.dynamic_z)?;
    let (loss, g) = mse_loss(&pred, &w.sample.target)?;
    Ok((loss, model.backward(&trace, &g)?))
}

/// Mean loss and mean gradient over a batch. Per-sample work fans out across
/// threads; the reduction runs in batch order so results do not depend on
/// scheduling.
pub fn batch_gradient(model: &LemoleModel, batch: &[&PromptedWindow]) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|w| sample_gradient(model, w).map(|(l, g)| (l, g.flat())))
        .collect::<Result<_>>()?;
    let n = model.num_params();
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}

/// Mean window MSE of a model over prompted windows.
pub fn mean_window_mse(model: &LemoleModel, windows: &[PromptedWindow]) -> Result<f64> {
    let losses: Vec<f64> = windows
        .par_iter()
        .map(|w| {
            let pred = model.predict(&w.sample.lookback, &w.static_z, &w.dynamic_z)?;
            Ok(mse_loss(&pred, &w.sample.target)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: LemoleModel,
    pub history: TrainHistory,
}

/// Mini-batch Adam with per-epoch validation and patience-based early
/// stopping over already prepared windows.
pub fn train_windows(config: &TrainConfig, spec: ModelSpec, train: &[PromptedWindow], val: &[PromptedWindow]) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = LemoleModel::init(spec, config.seed)?;
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok(TrainOutcome { model, history });
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::FrameTooShort { rows: 0, needed: config.model.lookback + config.model.horizon });
    }
    let mut params = model.flat();
    let mut adam = AdamState::new(params.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut best = (f64::INFINITY, params.clone());
    let mut stale = 0;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PromptedWindow> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = batch_gradient(&model, &batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::DivergenceDetected { epoch, loss });
            }
            loss_sum += loss * batch.len() as f64;
            adam.step(&mut params, &grad, &config.adam);
            model.set_flat(&params);
        }
        let train_mse = loss_sum / train.len() as f64;
        let val_mse = mean_window_mse(&model, val)?;
        if !val_mse.is_finite() {
            return Err(Error::DivergenceDetected { epoch, loss: val_mse });
        }
        history.train_mse.push(train_mse);
        history.val_mse.push(val_mse);
        history.epoch_ms.push(started.elapsed().as_secs_f64() * 1e3);
        if val_mse < best.0 {
            best = (val_mse, params.clone());
            history.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    model.set_flat(&best.1);
    Ok(TrainOutcome { model, history })
}

/// Full pipeline: prompts, windows, training. Returns the trained model and
/// the prompt context (reusable for evaluation).
pub fn train<'p>(config: &TrainConfig, sources: &[SeriesSource], provider: &'p dyn EmbeddingProvider) -> Result<(TrainOutcome, PromptContext<'p>)> {
    config.validate()?;
    let first = sources.first().ok_or_else(|| Error::Config("no training sources".into()))?;
    let metas: Vec<&DatasetMeta> = sources.iter().map(|s| &s.meta).collect();
    let ctx = PromptContext::new(provider, &metas, first.train.channels(), first.train.freq_seconds, config.model.clone())?;
    let mut train_w = Vec::new();
    let mut val_w = Vec::new();
    for (i, s) in sources.iter().enumerate() {
        train_w.extend(ctx.windows(i, &s.train, config.train_stride)?);
        val_w.extend(ctx.windows(i, &s.val, config.eval_stride)?);
    }
    let outcome = train_windows(config, ctx.spec().clone(), &train_w, &val_w)?;
    Ok((outcome, ctx))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// One lookback/target pair with its embeddings, for gradient checking.
pub struct CheckSample<'a> {
    pub lookback: &'a Matrix,
    pub target: &'a Matrix,
    pub static_z: &'a Matrix,
    pub dynamic_z: &'a Matrix,
}

/// Compares the analytic MSE gradient with central differences for every
/// parameter. Relative error is `|a - fd| / (|a| + 1e-8)`.
pub fn grad_check(model: &LemoleModel, sample: &CheckSample<'_>, eps: f64) -> Result<GradCheckReport> {
    grad_check_with(model, sample, eps, |m, s| {
        let (pred, trace) = m.forward(s.lookback, s.static_z, s.dynamic_z)?;
        let (_, g) = mse_loss(&pred, s.target)?;
        m.backward(&trace, &g)
    })
}

/// [`grad_check`] against an arbitrary analytic gradient routine.
pub fn grad_check_with<F>(model: &LemoleModel, sample: &CheckSample<'_>, eps: f64, analytic: F) -> Result<GradCheckReport>
where
    F: Fn(&LemoleModel, &CheckSample<'_>) -> Result<LemoleModel>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let grads = analytic(model, sample)?.flat();
    let names: Vec<(String, usize)> = model.tensors().iter().map(|t| (t.name.clone(), t.data.len())).collect();
    let base = model.flat();
    let loss_at = |params: &[f64]| -> Result<f64> {
        let mut m = model.clone();
        m.set_flat(params);
        let pred = m.predict(sample.lookback, sample.static_z, sample.dynamic_z)?;
        Ok(mse_loss(&pred, sample.target)?.0)
    };
    let fd: Vec<f64> = (0..base.len())
        .into_par_iter()
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + eps;
            let up = loss_at(&p)?;
            p[i] = base[i] - eps;
            let down = loss_at(&p)?;
            Ok((up - down) / (2.0 * eps))
        })
        .collect::<Result<_>>()?;
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_tensor: String::new(), worst_index: 0, checked: base.len() };
    let mut offset = 0;
    for (name, len) in names {
        for k in 0..len {
            let i = offset + k;
            let rel = (grads[i] - fd[i]).abs() / (grads[i].abs() + 1e-8);
            if rel > report.max_rel_error || report.worst_tensor.is_empty() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst_tensor = name.clone();
                report.worst_index = k;
            }
        }
        offset += len;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_cases() {
        let a = Matrix::from_rows(&[[1.0, 2.0]]);
        assert_eq!(mse_loss(&a, &a).unwrap().0, 0.0);
        let (l, g) = mse_loss(&Matrix::from_rows(&[[1.0]]), &Matrix::from_rows(&[[0.0]])).unwrap();
        assert_eq!((l, g[(0, 0)]), (1.0, 2.0));
        let (l, g) = mse_loss(&Matrix::filled(2, 2, 1.0), &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(l, 1.0);
        assert!(g.as_slice().iter().all(|&x| x == 0.5));
        assert!(mse_loss(&a, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        for _ in 0..5 {
            s.step(&mut p, &[0.0, 0.0], &AdamConfig::default());
        }
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let cfg = AdamConfig { learning_rate: 0.1, ..Default::default() };
        s.step(&mut p, &[1.0], &cfg);
        // m_hat = 1, v_hat = 1 -> step = 0.1 / (1 + 1e-8)
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        s.step(&mut p, &[1.0], &cfg);
        assert!((p[0] + 2.0 * 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let spec = crate::conditioning::ModelSpec {
            lookback: 4,
            horizon: 2,
            channels: 1,
            window_lengths: vec![4],
            domain: crate::experts::ExpertDomain::Time,
            d_llm: 2,
            static_tokens: 1,
            dynamic_tokens: 1,
            kernel_size: 3,
            mode: Default::default(),
            use_static: true,
            use_dynamic: true,
            freq_cutoff_bins: None,
            freq_init_noise: 0.0,
        };
        let mut c = TrainConfig::new(spec);
        assert!(c.validate().is_ok());
        c.adam.learning_rate = 0.0;
        assert!(c.validate().is_err());
        c.adam.learning_rate = 1e-3;
        c.adam.beta1 = 1.0;
        assert!(c.validate().is_err());
        c.adam.beta1 = 0.9;
        c.patience = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainHistory { train_mse: vec![0.5, 0.25], val_mse: vec![0.75, 0.125], epoch_ms: vec![1.0, 2.0], best_epoch: Some(1) };
        assert_eq!(h.to_csv(false), "epoch,train_mse,val_mse\n0,0.5,0.75\n1,0.25,0.125\n");
        assert!(h.to_csv(true).starts_with("epoch,train_mse,val_mse,ms\n0,0.5,0.75,1.000\n"));
    }
}

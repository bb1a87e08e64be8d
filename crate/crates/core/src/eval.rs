//! Metrics, evaluation protocols, the ADF statistic and efficiency
//! measurement.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioning::LemoleModel;
use crate::data::{halving_schedule, window_at, window_starts, ChannelStats, SeriesFrame, WindowSample};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::Parameterized;
use crate::prompts::{fnv1a64, EmbeddingProvider};
use crate::training::{batch_gradient, mse_loss, train, AdamState, PromptContext, PromptedWindow, SeriesSource, TrainConfig};

pub fn mae(pred: &Matrix, target: &Matrix) -> Result<f64> {
    pred.same_shape(target, "mae")?;
    let n = pred.as_slice().len() as f64;
    Ok(pred.as_slice().iter().zip(target.as_slice()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

pub fn mse(pred: &Matrix, target: &Matrix) -> Result<f64> {
    Ok(mse_loss(pred, target)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub horizon: usize,
    /// On the standardized scale.
    pub mse: f64,
    pub mae: f64,
    pub n_windows: usize,
    pub config_hash: String,
    /// On the original scale, when requested.
    pub raw_mse: Option<f64>,
    pub raw_mae: Option<f64>,
}

/// Persistence baseline: repeat the last observed row for every step.
pub fn persistence_forecast(sample: &WindowSample) -> Matrix {
    let last = sample.lookback.row(sample.lookback.rows() - 1).to_vec();
    Matrix::from_fn(sample.target.rows(), sample.target.cols(), |_, j| last[j])
}

struct Accum {
    se: f64,
    ae: f64,
    raw_se: f64,
    raw_ae: f64,
    entries: usize,
}

/// Runs `predict` on every window of a standardized frame and averages the
/// errors over all entries. Raw-scale metrics destandardize both sides with
/// `stats`.
pub fn evaluate_with<F>(
    predict: F,
    frame: &SeriesFrame,
    stats: &ChannelStats,
    lookback: usize,
    horizon: usize,
    stride: usize,
    raw: bool,
) -> Result<(f64, f64, Option<(f64, f64)>, usize)>
where
    F: Fn(&WindowSample) -> Result<Matrix> + Sync,
{
    let starts = window_starts(frame, lookback, horizon, stride)?;
    let parts: Vec<Accum> = starts
        .par_iter()
        .map(|&s| {
            let w = window_at(frame, s, lookback, horizon);
            let pred = predict(&w)?;
            pred.same_shape(&w.target, "evaluate prediction")?;
            let n = pred.as_slice().len();
            let mut acc = Accum {
                se: mse(&pred, &w.target)? * n as f64,
                ae: mae(&pred, &w.target)? * n as f64,
                raw_se: 0.0,
                raw_ae: 0.0,
                entries: n,
            };
            if raw {
                let p = stats.destandardize(&pred)?;
                let t = stats.destandardize(&w.target)?;
                acc.raw_se = mse(&p, &t)? * n as f64;
                acc.raw_ae = mae(&p, &t)? * n as f64;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    // Sequential reduction in window order.
    let mut tot = Accum { se: 0.0, ae: 0.0, raw_se: 0.0, raw_ae: 0.0, entries: 0 };
    for p in &parts {
        tot.se += p.se;
        tot.ae += p.ae;
        tot.raw_se += p.raw_se;
        tot.raw_ae += p.raw_ae;
        tot.entries += p.entries;
    }
    let n = tot.entries as f64;
    let raw_metrics = raw.then(|| (tot.raw_se / n, tot.raw_ae / n));
    Ok((tot.se / n, tot.ae / n, raw_metrics, parts.len()))
}

/// Evaluates a trained model on one source's test segment.
pub fn evaluate(
    model: &LemoleModel,
    ctx: &PromptContext<'_>,
    source_index: usize,
    source: &SeriesSource,
    stride: usize,
    raw: bool,
    config_hash: &str,
) -> Result<MetricReport> {
    let frame = &source.test;
    let static_z = ctx.static_embedding(source_index);
    let (mse_v, mae_v, raw_m, n) = evaluate_with(
        |w| {
            let dz = ctx.dynamic_embedding(&w.lookback_timestamps, frame.freq_seconds)?;
            model.predict(&w.lookback, static_z, &dz)
        },
        frame,
        &source.stats,
        model.spec.lookback,
        model.spec.horizon,
        stride,
        raw,
    )?;
    Ok(MetricReport {
        dataset: source.meta.name.clone(),
        horizon: model.spec.horizon,
        mse: mse_v,
        mae: mae_v,
        n_windows: n,
        config_hash: config_hash.to_string(),
        raw_mse: raw_m.map(|m| m.0),
        raw_mae: raw_m.map(|m| m.1),
    })
}

/// Window-weighted average over every source's test segment.
pub fn evaluate_sources(
    model: &LemoleModel,
    ctx: &PromptContext<'_>,
    sources: &[SeriesSource],
    stride: usize,
    raw: bool,
    config_hash: &str,
) -> Result<MetricReport> {
    let reports: Vec<MetricReport> = sources
        .iter()
        .enumerate()
        .map(|(i, s)| evaluate(model, ctx, i, s, stride, raw, config_hash))
        .collect::<Result<_>>()?;
    if reports.len() == 1 {
        return Ok(reports.into_iter().next().expect("one report"));
    }
    let n: usize = reports.iter().map(|r| r.n_windows).sum();
    let wavg = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(|r| f(r) * r.n_windows as f64).sum::<f64>() / n as f64;
    let raw_mse = raw.then(|| wavg(&|r| r.raw_mse.unwrap_or(0.0)));
    let raw_mae = raw.then(|| wavg(&|r| r.raw_mae.unwrap_or(0.0)));
    Ok(MetricReport {
        dataset: reports.iter().map(|r| r.dataset.as_str()).collect::<Vec<_>>().join("+"),
        horizon: model.spec.horizon,
        mse: wavg(&|r| r.mse),
        mae: wavg(&|r| r.mae),
        n_windows: n,
        config_hash: config_hash.to_string(),
        raw_mse,
        raw_mae,
    })
}

/// Persistence-baseline metrics on every source's test segment.
pub fn persistence_mse(sources: &[SeriesSource], lookback: usize, horizon: usize, stride: usize) -> Result<f64> {
    let mut se = 0.0;
    let mut n = 0usize;
    for s in sources {
        let (m, _, _, count) = evaluate_with(|w| Ok(persistence_forecast(w)), &s.test, &s.stats, lookback, horizon, stride, false)?;
        se += m * count as f64;
        n += count;
    }
    Ok(se / n as f64)
}

/// Stable short hash of a training configuration.
pub fn config_hash(config: &TrainConfig) -> String {
    let s = serde_json::to_string(config).unwrap_or_default();
    format!("{:016x}", fnv1a64(s.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PBucket {
    #[serde(rename = "<0.01")]
    Below1,
    #[serde(rename = "<0.05")]
    Below5,
    #[serde(rename = "<0.10")]
    Below10,
    #[serde(rename = ">=0.10")]
    AtLeast10,
}

impl std::fmt::Display for PBucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PBucket::Below1 => "<0.01",
            PBucket::Below5 => "<0.05",
            PBucket::Below10 => "<0.10",
            PBucket::AtLeast10 => ">=0.10",
        })
    }
}

/// MacKinnon asymptotic critical values, constant and no trend.
pub const ADF_CRITICAL: [(f64, PBucket); 3] = [(-3.43, PBucket::Below1), (-2.86, PBucket::Below5), (-2.57, PBucket::Below10)];

pub fn p_bucket(statistic: f64) -> PBucket {
    ADF_CRITICAL
        .iter()
        .find(|(cv, _)| statistic < *cv)
        .map_or(PBucket::AtLeast10, |(_, b)| *b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub lag_order: usize,
    pub nobs: usize,
    pub p_bucket: PBucket,
}

/// Ordinary least-squares fit behind the ADF statistic.
#[derive(Debug, Clone)]
pub struct OlsFit {
    /// Columns: constant, lagged level, lagged differences.
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub std_errors: DVector<f64>,
}

/// `floor(12 (n/100)^(1/4))`.
pub fn schwert_lag(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

/// Regresses `dx_t` on `[1, x_{t-1}, dx_{t-1}, ..., dx_{t-p}]`.
pub fn adf_regression(series: &[f64], lag: usize) -> Result<OlsFit> {
    let n = series.len();
    let diffs: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let k = lag + 2;
    if diffs.len() <= lag + k {
        return Err(Error::SeriesTooShort { n, needed: 2 * lag + 4 });
    }
    let rows = diffs.len() - lag;
    let mut design = DMatrix::zeros(rows, k);
    let mut response = DVector::zeros(rows);
    for r in 0..rows {
        let t = r + lag; // index into diffs; dx_t = x_{t+1} - x_t
        response[r] = diffs[t];
        design[(r, 0)] = 1.0;
        design[(r, 1)] = series[t];
        for i in 1..=lag {
            design[(r, 1 + i)] = diffs[t - i];
        }
    }
    let xtx = design.transpose() * &design;
    let chol = xtx.clone().cholesky().ok_or(Error::SingularRegression)?;
    let xty = design.transpose() * &response;
    let coefficients = chol.solve(&xty);
    let residuals = &response - &design * &coefficients;
    let dof = (rows - k) as f64;
    let s2 = residuals.dot(&residuals) / dof;
    let inv = chol.inverse();
    let std_errors = DVector::from_iterator(k, (0..k).map(|j| (s2 * inv[(j, j)]).sqrt()));
    if !std_errors.iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(Error::SingularRegression);
    }
    Ok(OlsFit { design, response, coefficients, residuals, std_errors })
}

/// Augmented Dickey-Fuller t-statistic on the lagged level (constant, no
/// trend). Lag order defaults to the Schwert rule.
pub fn adf_statistic(series: &[f64], max_lag: Option<usize>) -> Result<AdfResult> {
    if series.len() < 20 {
        return Err(Error::SeriesTooShort { n: series.len(), needed: 20 });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("series contains NaN or Inf".into()));
    }
    let lag = max_lag.unwrap_or_else(|| schwert_lag(series.len()));
    let fit = adf_regression(series, lag)?;
    let statistic = fit.coefficients[1] / fit.std_errors[1];
    Ok(AdfResult { statistic, lag_order: lag, nobs: fit.response.len(), p_bucket: p_bucket(statistic) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoStatic,
    NoDynamic,
    NoBoth,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [Self::Full, Self::NoStatic, Self::NoDynamic, Self::NoBoth];

    pub fn branches(self) -> (bool, bool) {
        match self {
            Self::Full => (true, true),
            Self::NoStatic => (false, true),
            Self::NoDynamic => (true, false),
            Self::NoBoth => (false, false),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoStatic => "w/o static",
            Self::NoDynamic => "w/o dynamic",
            Self::NoBoth => "w/o both",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub report: MetricReport,
    pub params: usize,
    /// `(mse_variant - mse_full) / mse_full * 100`.
    pub degradation_pct: f64,
}

pub fn degradation_pct(mse_variant: f64, mse_full: f64) -> f64 {
    (mse_variant - mse_full) / mse_full * 100.0
}

/// Trains one model with the given branch switches and evaluates it.
pub fn train_and_evaluate(config: &TrainConfig, sources: &[SeriesSource], provider: &dyn EmbeddingProvider, raw: bool) -> Result<(LemoleModel, MetricReport)> {
    let (outcome, ctx) = train(config, sources, provider)?;
    let report = evaluate_sources(&outcome.model, &ctx, sources, config.eval_stride, raw, &config_hash(config))?;
    Ok((outcome.model, report))
}

/// Trains the full model and the requested prompt-ablated variants with a
/// shared seed. Removing a branch removes its generators and its fusion
/// input channel.
pub fn ablate(config: &TrainConfig, sources: &[SeriesSource], provider: &dyn EmbeddingProvider, variants: &[AblationVariant]) -> Result<Vec<AblationRow>> {
    let mut rows: Vec<AblationRow> = Vec::with_capacity(variants.len() + 1);
    let mut wanted = vec![AblationVariant::Full];
    wanted.extend(variants.iter().copied().filter(|v| *v != AblationVariant::Full));
    for v in wanted {
        let mut cfg = config.clone();
        (cfg.model.use_static, cfg.model.use_dynamic) = v.branches();
        let (model, report) = train_and_evaluate(&cfg, sources, provider, false)?;
        rows.push(AblationRow { variant: v, params: model.count_params(), degradation_pct: 0.0, report });
    }
    let full = rows[0].report.mse;
    for r in &mut rows {
        r.degradation_pct = degradation_pct(r.report.mse, full);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub experts: usize,
    pub window_lengths: Vec<usize>,
    pub report: MetricReport,
    pub params: usize,
}

/// One model per expert count, windows from the halving schedule of the
/// lookback.
pub fn expert_sweep(config: &TrainConfig, sources: &[SeriesSource], provider: &dyn EmbeddingProvider, expert_counts: &[usize]) -> Result<Vec<SweepRow>> {
    expert_counts
        .iter()
        .map(|&m| {
            if m == 0 {
                return Err(Error::Config("expert count must be >= 1".into()));
            }
            let mut cfg = config.clone();
            cfg.model.window_lengths = halving_schedule(cfg.model.lookback, m);
            let (model, report) = train_and_evaluate(&cfg, sources, provider, false)?;
            Ok(SweepRow { experts: m, window_lengths: cfg.model.window_lengths, params: model.count_params(), report })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub params: usize,
    pub batch: usize,
    pub reps: usize,
    pub train_ms_per_step: f64,
    pub infer_ms_per_window: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median timings over `reps` repetitions after 3 warm-up iterations. A
/// training step is forward, backward and one Adam update on `batch`
/// windows; inference time is per window.
pub fn bench(model: &LemoleModel, windows: &[PromptedWindow], batch: usize, reps: usize) -> Result<BenchReport> {
    if reps < 10 {
        return Err(Error::Config(format!("bench needs at least 10 repetitions, got {reps}")));
    }
    if windows.is_empty() || batch == 0 {
        return Err(Error::Config("bench needs at least one window and batch >= 1".into()));
    }
    let batch_w: Vec<&PromptedWindow> = windows.iter().cycle().take(batch).collect();
    let mut m = model.clone();
    let mut params = m.flat();
    let mut adam = AdamState::new(params.len());
    let cfg = crate::training::AdamConfig::default();
    let mut train_times = Vec::with_capacity(reps);
    for i in 0..reps + 3 {
        let t0 = Instant::now();
        let (_, g) = batch_gradient(&m, &batch_w)?;
        adam.step(&mut params, &g, &cfg);
        m.set_flat(&params);
        if i >= 3 {
            train_times.push(t0.elapsed().as_secs_f64() * 1e3);
        }
    }
    let mut infer_times = Vec::with_capacity(reps);
    for i in 0..reps + 3 {
        let w = &windows[i % windows.len()];
        let t0 = Instant::now();
        let y = model.predict(&w.sample.lookback, &w.static_z, &w.dynamic_z)?;
        std::hint::black_box(&y);
        if i >= 3 {
            infer_times.push(t0.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(BenchReport {
        params: model.count_params(),
        batch,
        reps,
        train_ms_per_step: median(train_times),
        infer_ms_per_window: median(infer_times),
    })
}

/// Plot-ready CSV: `variant,M,horizon,mse,mae`.
pub fn metrics_csv(rows: &[(String, usize, &MetricReport)]) -> String {
    let mut s = String::from("variant,M,horizon,mse,mae\n");
    for (variant, m, r) in rows {
        s.push_str(&format!("{variant},{m},{},{:?},{:?}\n", r.horizon, r.mse, r.mae));
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow], experts: usize) -> String {
    let mut s = String::from("variant,M,horizon,mse,mae,params,degradation_pct\n");
    for r in rows {
        s.push_str(&format!(
            "{},{experts},{},{:?},{:?},{},{:.4}\n",
            r.variant.label(),
            r.report.horizon,
            r.report.mse,
            r.report.mae,
            r.params,
            r.degradation_pct
        ));
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("M,mse,mae,params\n");
    for r in rows {
        s.push_str(&format!("{},{:?},{:?},{}\n", r.experts, r.report.mse, r.report.mae, r.params));
    }
    s
}

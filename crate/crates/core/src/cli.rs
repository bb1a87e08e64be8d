//! The `lemole` command line. Exit codes: 0 success, 1 usage or
//! configuration error, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfigFile;
use crate::data::load_csv;
use crate::error::{Error, Result};
use crate::eval::{self, ablation_csv, config_hash, metrics_csv, sweep_csv};
use crate::synth::{self, SynthSpec};
use crate::training::{train, PromptContext};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lemole", version, about = "Mixture of linear experts with prompt-conditioned FiLM fusion")]
pub struct Cli {
    /// Overrides `[train] seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `[output] dir`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Caps worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    #[arg(long, short)]
    pub config: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and write checkpoint, history and the resolved config.
    Train(ConfigArg),
    /// Test-split metrics of a checkpoint.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Full model against prompt-ablated variants.
    Ablate(ConfigArg),
    /// One model per expert count.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated expert counts; overrides `[eval] expert_counts`.
        #[arg(long, value_delimiter = ',')]
        experts: Option<Vec<usize>>,
    },
    /// Augmented Dickey-Fuller statistic of one CSV column.
    Adf {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        column: String,
        #[arg(long, default_value = "date")]
        timestamp_column: String,
        #[arg(long, default_value_t = 3600)]
        freq_seconds: i64,
        #[arg(long)]
        max_lag: Option<usize>,
    },
    /// Parameter count and timings of a checkpoint.
    Bench {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Write a seeded synthetic series as CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2400)]
        rows: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 24.0)]
        period: f64,
        #[arg(long, default_value_t = 0.0)]
        trend: f64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Emit a Gaussian random walk instead of the sinusoid.
        #[arg(long)]
        random_walk: bool,
    },
}

struct Ctx {
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn config(&self, path: &Path) -> Result<RunConfigFile> {
        let mut cfg = RunConfigFile::load(path)?;
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.output.dir = d.clone();
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: Option<&RunConfigFile>) -> Result<PathBuf> {
        let dir = match (&self.out_dir, cfg) {
            (Some(d), _) => d.clone(),
            (None, Some(c)) => c.output.dir.clone(),
            (None, None) => PathBuf::from("."),
        };
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    write(dir, name, &serde_json::to_string_pretty(value)?)
}

fn snapshot(dir: &Path, cfg: &RunConfigFile) -> Result<PathBuf> {
    write(dir, "resolved_config.toml", &cfg.to_toml()?)
}

/// Exit code for an error: configuration and missing inputs are usage
/// errors, everything else is a runtime failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::MissingArtifact(_) | Error::InvalidSplit(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `std::env::args` and runs.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return EXIT_USAGE;
        }
        // Fails only if a pool already exists (repeated in-process calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx { seed: cli.seed, out_dir: cli.out_dir, quiet: cli.quiet };
    match dispatch(&ctx, cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(ctx: &Ctx, command: Command) -> Result<()> {
    match command {
        Command::Train(c) => cmd_train(ctx, &c.config),
        Command::Evaluate { config, checkpoint } => cmd_evaluate(ctx, &config.config, &checkpoint),
        Command::Ablate(c) => cmd_ablate(ctx, &c.config),
        Command::Sweep { config, experts } => cmd_sweep(ctx, &config.config, experts),
        Command::Adf { csv, column, timestamp_column, freq_seconds, max_lag } => {
            cmd_adf(ctx, &csv, &column, &timestamp_column, freq_seconds, max_lag)
        }
        Command::Bench { config, checkpoint, reps, batch } => cmd_bench(ctx, &config.config, &checkpoint, reps, batch),
        Command::Synth { out, rows, channels, period, trend, noise, random_walk } => {
            let seed = ctx.seed.unwrap_or(0);
            let frame = if random_walk {
                synth::frame_from_series(synth::random_walk(rows, 1.0, seed)?, synth::DEFAULT_START, synth::HOURLY)?
            } else {
                synth::sinusoid_trend(&SynthSpec { rows, channels, period, trend, noise_std: noise, seed, ..SynthSpec::new(rows) })?
            };
            frame.write_csv(&out, "date")?;
            ctx.say(format!("wrote {} rows to {}", frame.rows(), out.display()));
            Ok(())
        }
    }
}

fn cmd_train(ctx: &Ctx, config: &Path) -> Result<()> {
    let cfg = ctx.config(config)?;
    let dir = ctx.out_dir(Some(&cfg))?;
    let source = cfg.prepare()?;
    let provider = cfg.provider()?;
    let tc = cfg.train_config();
    let sources = [source];
    let (outcome, ctx_p) = train(&tc, &sources, provider.as_ref())?;
    let ck = dir.join("checkpoint.json");
    checkpoint::save(&outcome.model, &ck)?;
    write(&dir, "history.csv", &outcome.history.to_csv(false))?;
    write(&dir, "timings.csv", &outcome.history.to_csv(true))?;
    snapshot(&dir, &cfg)?;
    let report = eval::evaluate_sources(&outcome.model, &ctx_p, &sources, tc.eval_stride, cfg.eval.raw_metrics, &config_hash(&tc))?;
    write_json(&dir, "train_metrics.json", &report)?;
    ctx.say(format!(
        "trained {} epochs (best {:?}), {} params; test mse {:.6} mae {:.6}; artifacts in {}",
        outcome.history.epochs(),
        outcome.history.best_epoch,
        outcome.model.count_params(),
        report.mse,
        report.mae,
        dir.display()
    ));
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx, config: &Path, ck: &Path) -> Result<()> {
    let cfg = ctx.config(config)?;
    let dir = ctx.out_dir(Some(&cfg))?;
    let model = checkpoint::load(ck)?;
    let source = cfg.prepare()?;
    let provider = cfg.provider()?;
    let pc = PromptContext::new(provider.as_ref(), &[&source.meta], source.train.channels(), source.train.freq_seconds, model.spec.clone())?;
    let tc = cfg.train_config();
    let report = eval::evaluate(&model, &pc, 0, &source, cfg.eval.stride, cfg.eval.raw_metrics, &config_hash(&tc))?;
    write(&dir, "evaluate.csv", &metrics_csv(&[("full".into(), model.spec.experts(), &report)]))?;
    write_json(&dir, "evaluate.json", &report)?;
    snapshot(&dir, &cfg)?;
    ctx.say(format!("H={} windows={} mse {:.6} mae {:.6}", report.horizon, report.n_windows, report.mse, report.mae));
    Ok(())
}

fn cmd_ablate(ctx: &Ctx, config: &Path) -> Result<()> {
    let cfg = ctx.config(config)?;
    let dir = ctx.out_dir(Some(&cfg))?;
    let sources = [cfg.prepare()?];
    let provider = cfg.provider()?;
    let tc = cfg.train_config();
    let rows = eval::ablate(&tc, &sources, provider.as_ref(), &cfg.eval.ablate)?;
    write(&dir, "ablation.csv", &ablation_csv(&rows, tc.model.experts()))?;
    write_json(&dir, "ablation.json", &rows)?;
    snapshot(&dir, &cfg)?;
    for r in &rows {
        ctx.say(format!("{:<12} mse {:.6} mae {:.6} params {:>8} {:+.2}%", r.variant.label(), r.report.mse, r.report.mae, r.params, r.degradation_pct));
    }
    Ok(())
}

fn cmd_sweep(ctx: &Ctx, config: &Path, experts: Option<Vec<usize>>) -> Result<()> {
    let mut cfg = ctx.config(config)?;
    if let Some(e) = experts {
        cfg.eval.expert_counts = e;
    }
    let dir = ctx.out_dir(Some(&cfg))?;
    let sources = [cfg.prepare()?];
    let provider = cfg.provider()?;
    let rows = eval::expert_sweep(&cfg.train_config(), &sources, provider.as_ref(), &cfg.eval.expert_counts)?;
    write(&dir, "sweep.csv", &sweep_csv(&rows))?;
    write_json(&dir, "sweep.json", &rows)?;
    snapshot(&dir, &cfg)?;
    for r in &rows {
        ctx.say(format!("M={} windows={:?} mse {:.6} mae {:.6} params {}", r.experts, r.window_lengths, r.report.mse, r.report.mae, r.params));
    }
    Ok(())
}

#[derive(Serialize)]
struct AdfReport<'a> {
    csv: &'a Path,
    column: &'a str,
    #[serde(flatten)]
    result: eval::AdfResult,
}

fn cmd_adf(ctx: &Ctx, csv: &Path, column: &str, ts_col: &str, freq: i64, max_lag: Option<usize>) -> Result<()> {
    if !csv.exists() {
        return Err(Error::MissingArtifact(csv.to_path_buf()));
    }
    let frame = load_csv(csv, ts_col, freq)?;
    let c = frame
        .channel_names
        .iter()
        .position(|n| n == column)
        .ok_or_else(|| Error::MissingColumn(column.to_string()))?;
    let r = eval::adf_statistic(&frame.values.column(c), max_lag)?;
    let dir = ctx.out_dir(None)?;
    write(
        &dir,
        "adf.csv",
        &format!("column,statistic,lag_order,nobs,p_bucket\n{column},{:?},{},{},{}\n", r.statistic, r.lag_order, r.nobs, r.p_bucket),
    )?;
    write_json(&dir, "adf.json", &AdfReport { csv, column, result: r })?;
    // Printed even with --quiet: this is the command's result.
    println!("adf statistic {:.4} lag {} p {}", r.statistic, r.lag_order, r.p_bucket);
    Ok(())
}

fn cmd_bench(ctx: &Ctx, config: &Path, ck: &Path, reps: Option<usize>, batch: Option<usize>) -> Result<()> {
    let cfg = ctx.config(config)?;
    let dir = ctx.out_dir(Some(&cfg))?;
    let model = checkpoint::load(ck)?;
    let source = cfg.prepare()?;
    let provider = cfg.provider()?;
    let pc = PromptContext::new(provider.as_ref(), &[&source.meta], source.train.channels(), source.train.freq_seconds, model.spec.clone())?;
    let windows = pc.windows(0, &source.test, cfg.eval.stride.max(1))?;
    let report = eval::bench(&model, &windows, batch.unwrap_or(cfg.eval.bench_batch), reps.unwrap_or(cfg.eval.bench_reps))?;
    write(
        &dir,
        "bench.csv",
        &format!(
            "params,batch,reps,train_ms_per_step,infer_ms_per_window\n{},{},{},{:.6},{:.6}\n",
            report.params, report.batch, report.reps, report.train_ms_per_step, report.infer_ms_per_window
        ),
    )?;
    write_json(&dir, "bench.json", &report)?;
    snapshot(&dir, &cfg)?;
    ctx.say(format!(
        "params {} | train {:.3} ms/step (batch {}) | infer {:.4} ms/window",
        report.params, report.train_ms_per_step, report.batch, report.infer_ms_per_window
    ));
    Ok(())
}

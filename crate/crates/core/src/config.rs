//! Run-configuration file (TOML). Unknown keys are rejected; relative paths
//! resolve against the file's directory.
//!
//! ```toml
//! [data]
//! path = "series.csv"            # or: synthetic = { rows = 2400, period = 24.0 }
//! timestamp_column = "date"
//! freq_seconds = 3600
//! channels = "last"              # "all", "last" or a list of column names
//! split = { train = 0.7, val = 0.1, test = 0.2 }
//!
//! [model]
//! lookback = 96
//! horizon = 24
//! experts = 3                    # or window_lengths = [96, 48, 24]
//! domain = "time"
//!
//! [train]
//! epochs = 20
//! seed = 2024
//!
//! [provider]
//! kind = "hash"                  # hash | file | remote
//! d_llm = 768
//!
//! [output]
//! dir = "runs/demo"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditioningMode, ModelSpec};
use crate::data::{halving_schedule, load_csv, SeriesFrame, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::AblationVariant;
use crate::experts::ExpertDomain;
use crate::prompts::{DatasetMeta, EmbeddingProvider, FileProvider, HashEncoder, RemoteProvider, ENDPOINT_ENV};
use crate::synth::{sinusoid_trend, SynthSpec};
use crate::training::{AdamConfig, SeriesSource, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub provider: ProviderSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelSelection {
    Keyword(String),
    Named(Vec<String>),
}

impl Default for ChannelSelection {
    fn default() -> Self {
        Self::Keyword("last".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let d = SplitSpec::default();
        Self { train: d.train_fraction, val: d.val_fraction, test: d.test_fraction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSection {
    pub name: String,
    pub description: String,
    /// `[["OT", "oil temperature"], ...]`; defaults to placeholder meanings.
    #[serde(default)]
    pub variables: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthSpec>,
    #[serde(default = "default_ts_col")]
    pub timestamp_column: String,
    #[serde(default = "default_freq")]
    pub freq_seconds: i64,
    #[serde(default)]
    pub channels: ChannelSelection,
    #[serde(default)]
    pub split: SplitSection,
    /// Keep only this leading fraction of the training segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub few_shot: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<MetaSection>,
}

fn default_ts_col() -> String {
    "date".into()
}
fn default_freq() -> i64 {
    3600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lookback: usize,
    pub horizon: usize,
    /// Expert count for the halving schedule; ignored when
    /// `window_lengths` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_lengths: Option<Vec<usize>>,
    #[serde(default = "default_domain")]
    pub domain: ExpertDomain,
    #[serde(default)]
    pub conditioning_mode: ConditioningMode,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    #[serde(default = "yes")]
    pub use_static: bool,
    #[serde(default = "yes")]
    pub use_dynamic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_cutoff_bins: Option<usize>,
    #[serde(default = "default_noise")]
    pub freq_init_noise: f64,
}

fn default_domain() -> ExpertDomain {
    ExpertDomain::Time
}
fn default_kernel() -> usize {
    3
}
fn yes() -> bool {
    true
}
fn default_noise() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub patience: usize,
    pub seed: u64,
    pub train_stride: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            adam_eps: a.eps,
            patience: 5,
            seed: 2024,
            train_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hash,
    File,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    #[serde(default = "default_d")]
    pub d_llm: usize,
    #[serde(default)]
    pub seed: u64,
    /// Embedding store directory (file provider).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

fn default_d() -> usize {
    768
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self { kind: ProviderKind::Hash, d_llm: 768, seed: 0, path: None, endpoint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub stride: usize,
    pub raw_metrics: bool,
    pub expert_counts: Vec<usize>,
    pub ablate: Vec<AblationVariant>,
    pub bench_reps: usize,
    pub bench_batch: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            stride: 1,
            raw_metrics: false,
            expert_counts: vec![1, 2, 3, 4, 5],
            ablate: AblationVariant::ALL.to_vec(),
            bench_reps: 10,
            bench_batch: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

impl RunConfigFile {
    /// Parses and validates; toml reports the offending line and key.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &self.data.path {
            self.data.path = Some(resolve(base, p));
        }
        if let Some(p) = &self.provider.path {
            self.provider.path = Some(resolve(base, p));
        }
        self.output.dir = resolve(base, &self.output.dir);
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.path, &self.data.synthetic) {
            (Some(p), None) if !p.exists() => return Err(Error::MissingArtifact(p.clone())),
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::Config("[data] needs exactly one of `path` or `synthetic`".into())),
        }
        if let ChannelSelection::Keyword(k) = &self.data.channels {
            if k != "all" && k != "last" {
                return Err(Error::Config(format!("[data] channels must be \"all\", \"last\" or a list, got {k:?}")));
            }
        }
        self.split().validate()?;
        match self.provider.kind {
            ProviderKind::File => match &self.provider.path {
                Some(p) if p.exists() => {}
                Some(p) => return Err(Error::MissingArtifact(p.clone())),
                None => return Err(Error::Config("[provider] kind = \"file\" needs `path`".into())),
            },
            ProviderKind::Remote if self.endpoint().is_none() => {
                return Err(Error::Config(format!("[provider] kind = \"remote\" needs `endpoint` or {ENDPOINT_ENV}")))
            }
            _ => {}
        }
        if self.provider.d_llm == 0 {
            return Err(Error::Config("[provider] d_llm must be >= 1".into()));
        }
        if self.model.window_lengths.is_none() && self.model.experts == Some(0) {
            return Err(Error::Config("[model] experts must be >= 1".into()));
        }
        self.train_config().validate()
    }

    pub fn split(&self) -> SplitSpec {
        let s = self.data.split;
        SplitSpec { train_fraction: s.train, val_fraction: s.val, test_fraction: s.test }
    }

    /// Environment variable first, then the file.
    pub fn endpoint(&self) -> Option<String> {
        std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()).or_else(|| self.provider.endpoint.clone())
    }

    pub fn window_lengths(&self) -> Vec<usize> {
        self.model
            .window_lengths
            .clone()
            .unwrap_or_else(|| halving_schedule(self.model.lookback, self.model.experts.unwrap_or(3)))
    }

    /// Spec with data-dependent sizes left at 0 (resolved from the prompts).
    pub fn model_spec(&self) -> ModelSpec {
        let m = &self.model;
        ModelSpec {
            lookback: m.lookback,
            horizon: m.horizon,
            channels: 0,
            window_lengths: self.window_lengths(),
            domain: m.domain,
            d_llm: if self.provider.kind == ProviderKind::Hash { self.provider.d_llm } else { 0 },
            static_tokens: 0,
            dynamic_tokens: 0,
            kernel_size: m.kernel_size,
            mode: m.conditioning_mode,
            use_static: m.use_static,
            use_dynamic: m.use_dynamic,
            freq_cutoff_bins: m.freq_cutoff_bins,
            freq_init_noise: m.freq_init_noise,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let mut c = TrainConfig::new(self.model_spec());
        c.epochs = t.epochs;
        c.batch_size = t.batch_size;
        c.adam = AdamConfig { learning_rate: t.learning_rate, beta1: t.beta1, beta2: t.beta2, eps: t.adam_eps };
        c.patience = t.patience;
        c.seed = t.seed;
        c.train_stride = t.train_stride;
        c.eval_stride = self.eval.stride;
        c
    }

    /// Loads (or generates) the series and applies the channel selection.
    pub fn load_frame(&self) -> Result<SeriesFrame> {
        let frame = match (&self.data.path, &self.data.synthetic) {
            (Some(p), _) => load_csv(p, &self.data.timestamp_column, self.data.freq_seconds)?,
            (None, Some(s)) => sinusoid_trend(s)?,
            (None, None) => return Err(Error::Config("[data] has no source".into())),
        };
        let idx: Vec<usize> = match &self.data.channels {
            ChannelSelection::Keyword(k) if k == "all" => (0..frame.channels()).collect(),
            ChannelSelection::Keyword(_) => vec![frame.channels() - 1],
            ChannelSelection::Named(names) => names
                .iter()
                .map(|n| {
                    frame
                        .channel_names
                        .iter()
                        .position(|c| c == n)
                        .ok_or_else(|| Error::MissingColumn(n.clone()))
                })
                .collect::<Result<_>>()?,
        };
        frame.select_channels(&idx)
    }

    pub fn meta(&self, frame: &SeriesFrame) -> DatasetMeta {
        match &self.data.meta {
            Some(m) => {
                let channels = if m.variables.is_empty() {
                    DatasetMeta::generic(&m.name, &frame.channel_names).channels
                } else {
                    m.variables.clone()
                };
                DatasetMeta { name: m.name.clone(), description: m.description.clone(), channels }
            }
            None => {
                let name = match &self.data.path {
                    Some(p) => p.file_stem().map_or("series".into(), |s| s.to_string_lossy().into_owned()),
                    None => "synthetic".into(),
                };
                DatasetMeta::generic(&name, &frame.channel_names)
            }
        }
    }

    /// The prepared (split, standardized) source.
    pub fn prepare(&self) -> Result<SeriesSource> {
        let frame = self.load_frame()?;
        let meta = self.meta(&frame);
        SeriesSource::prepare(&frame, meta, &self.split(), self.model.lookback + self.model.horizon, self.data.few_shot)
    }

    pub fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self.provider.kind {
            ProviderKind::Hash => Box::new(HashEncoder::new(self.provider.d_llm, self.provider.seed)),
            ProviderKind::File => {
                let p = self.provider.path.as_ref().ok_or_else(|| Error::Config("file provider needs path".into()))?;
                Box::new(FileProvider::load(p)?)
            }
            ProviderKind::Remote => {
                let ep = self.endpoint().ok_or_else(|| Error::Config("remote provider needs endpoint".into()))?;
                Box::new(RemoteProvider::new(ep))
            }
        })
    }

    /// TOML snapshot with every default written out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

//! Mixture of linear forecasting experts fused by feature-wise linear
//! modulation (FiLM) on frozen text-prompt embeddings.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: CSV ingestion, chronological splits, z-scoring, sliding windows
//!   and the per-expert lookback views.
//! - [`fft`] and [`experts`]: time-domain linear experts and frequency-domain
//!   interpolating experts, with hand-written backward passes.
//! - [`prompts`]: static/dynamic prompt rendering and embedding providers
//!   (offline hash encoder, on-disk store, HTTP service).
//! - [`conditioning`]: FiLM generators, the light 1-D convolutions and the
//!   full model forward/backward.
//! - [`training`]: loss, Adam, the training loop and gradient checking.
//! - [`eval`]: metrics, protocol runners (ablation, expert sweep), the ADF
//!   statistic and efficiency measurement.
//! - [`config`] and [`cli`]: the run-configuration file and the `lemole`
//!   command line.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod checkpoint;
pub mod cli;
pub mod conditioning;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experts;
pub mod fft;
pub mod matrix;
pub mod params;
pub mod prompts;
pub mod synth;
pub mod training;

pub use conditioning::{ConditioningMode, LemoleModel, ModelSpec};
pub use data::{SeriesFrame, SplitSpec, WindowSample};
pub use error::{Error, Result};
pub use experts::{ExpertBank, ExpertDomain};
pub use matrix::Matrix;

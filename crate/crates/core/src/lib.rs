//! Dementia-level classification of brain MRI slices.
//!
//! The crate is organized as a batch pipeline:
//!
//! ```text
//! load_dataset -> resize_area (32x32) -> [watershed_features] -> flatten
//!     -> stratified_split -> {random forest | polynomial SVM | CNN} -> eval
//! ```
//!
//! Every stage is deterministic given its seed. Data-parallel loops (per
//! image, per tree, per class pair, per sample in a CNN batch) run on rayon
//! when the `parallel` feature is enabled and fall back to plain iterators
//! otherwise; see [`exec`].

pub mod cnn;
pub mod dataset;
pub mod eval;
pub mod exec;
pub mod pipeline;
pub mod rf;
pub mod rng;
pub mod svm;
pub mod watershed;

pub use dataset::{Dataset, DatasetError, Image, SplitPartition, CLASS_NAMES, NUM_CLASSES};
pub use eval::{ConfusionMatrix, ScoreCard};
pub use pipeline::{ExperimentConfig, Model, ModelKind, PipelineError, RunReport};

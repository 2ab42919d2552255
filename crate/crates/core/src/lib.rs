//! Classification under label shift: synthetic minority rebalancing,
//! undersampling and plug-in correction, with the geometry and divergence
//! tools used to analyse them.

pub mod diagnostics;
pub mod distributions;
pub mod divergence;
pub mod erm;
pub mod error;
pub mod experiment;
pub mod generators;
pub mod knn;
pub mod model;
pub mod pipelines;
pub mod rng;
pub mod stats;

pub use distributions::{Dataset, LabeledSample, MixtureSpec, TargetSpec};
pub use erm::{OptimizerSettings, RiskReport, WeightedSample};
pub use error::{Error, Result};
pub use generators::GeneratorSpec;
pub use model::LogisticModel;
pub use pipelines::{Method, PipelineConfig};

//! Hybrid flow-based network intrusion detection.
//!
//! Flows are grouped per source address and time window into 69-feature
//! samples. A random forest flags known attack patterns; a variational
//! autoencoder scores whatever the forest passes as background, and scores
//! above a threshold derived from the training losses are reported as
//! anomalies.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`, which the command-line tool uses.

pub mod classifier;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};
pub use flow::{ClassLabel, FlowRecord};
pub use scalar::Scalar;

pub type Sample = features::AggregatedSample<f64>;
pub type Normalizer = features::Normalizer<f64>;
pub type Forest = classifier::ForestModel<f64>;
pub type Vae = vae::VaeModel<f64>;
pub type VaeF32 = vae::VaeModel<f32>;
pub type FilterArtifact = pipeline::FilterArtifact<f64>;
pub type VaeArtifact = pipeline::VaeArtifact<f64>;
pub type Pipeline = pipeline::Pipeline<f64>;
pub type ExperimentContext = eval::ExperimentContext<f64>;

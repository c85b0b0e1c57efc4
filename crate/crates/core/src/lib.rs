//! Mobile/cloud fall detection on tri-axial accelerometer data.
//!
//! The pipeline has three stages. A cheap RMS threshold on the device
//! ([`gate`]) decides whether a stretch of samples looks like a fall.
//! Suspected falls are shipped to a server that turns the window into a
//! fixed feature vector ([`features`]) and scores it with a regularized
//! boosted tree ensemble ([`fedt`]). [`eval`] holds the k-fold harness,
//! metrics, the PCA ablation and cross-device evaluation; [`signal`] holds
//! the data model, ingestion and segmentation.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix it to `f64`, which is what the file
//! formats, the evaluation kit and the service use.

pub mod codec;
pub mod eval;
pub mod features;
pub mod fedt;
pub mod gate;
mod scalar;
pub mod signal;

pub use scalar::Scalar;

pub use eval::{ConfusionCounts, MetricsReport, PcaProjection};
pub use features::{FeatureRegistry, Fingerprint};
pub use fedt::Hyperparameters as GenericHyperparameters;
pub use gate::{GateDecision, Threshold as GenericThreshold};
pub use signal::{ActivityClass, DatasetConfig, RecordingMeta};

pub type Sample = signal::TriaxialSample<f64>;
pub type Recording = signal::TriaxialRecording<f64>;
pub type Window = signal::Window<f64>;
pub type FeatureVector = features::FeatureVector<f64>;
pub type Threshold = gate::Threshold<f64>;
pub type Hyperparameters = fedt::Hyperparameters<f64>;
pub type RegressionTree = fedt::RegressionTree<f64>;
pub type FedtModel = fedt::FedtModel<f64>;
pub type TrainingSet = fedt::TrainingSet<f64>;

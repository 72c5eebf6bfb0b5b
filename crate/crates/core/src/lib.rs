//! Unsupervised fault detection for terminal HVAC units.
//!
//! Telemetry is reduced to a dense single-mode operating subset,
//! standardized, optionally projected onto its principal components, and
//! clustered with OPTICS. An analyst cuts the reachability plot at a
//! threshold; the largest cluster is called normal operation and every
//! other cluster plus noise is flagged as a fault. A k-means run with two
//! clusters serves as the baseline, and both are scored against ground
//! truth when it is available.
//!
//! The numeric kernels are generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix them to `f64`; [`single`] has `f32`
//! counterparts.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod kmeans;
pub mod linalg;
pub mod optics;
pub mod pca;
pub mod pipeline;
pub mod preprocessing;
pub mod scalar;
pub mod store;
pub mod synthetic;
pub mod time;

pub use dataset::{ChannelKind, ChannelSchema, FaultFlag, FaultInterval, TimeSeriesFrame};
pub use error::{Error, Result};
pub use evaluation::{ConfusionCounts, MetricsRow};
pub use optics::{ClusterLabels, NOISE};
pub use pipeline::{RunConfig, RunRecord};
pub use scalar::Scalar;

pub type FeatureMatrix = features::FeatureMatrix<f64>;
pub type DenseMatrix = linalg::DenseMatrix<f64>;
pub type StandardScaler = preprocessing::StandardScaler<f64>;
pub type PcaModel = pca::PcaModel<f64>;
pub type OpticsParams = optics::OpticsParams<f64>;
pub type OpticsResult = optics::OpticsResult<f64>;
pub type KmeansResult = kmeans::KmeansResult<f64>;

/// Single-precision aliases.
pub mod single {
    pub type FeatureMatrix = crate::features::FeatureMatrix<f32>;
    pub type DenseMatrix = crate::linalg::DenseMatrix<f32>;
    pub type StandardScaler = crate::preprocessing::StandardScaler<f32>;
    pub type PcaModel = crate::pca::PcaModel<f32>;
    pub type OpticsParams = crate::optics::OpticsParams<f32>;
    pub type OpticsResult = crate::optics::OpticsResult<f32>;
    pub type KmeansResult = crate::kmeans::KmeansResult<f32>;
}

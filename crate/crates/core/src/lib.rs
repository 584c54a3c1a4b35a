//! Empirical Dynamic Modeling: simplex projection, all-to-all Convergent
//! Cross Mapping with per-library kNN table reuse, and a self-scheduling
//! master-worker distribution layer.

pub mod bench;
pub mod ccm;
pub mod error;
pub mod io;
pub mod knn;
pub mod metrics;
pub mod scheduler;
pub mod simplex;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    pearson_rho, CausalMap, EmbeddedView, EmbeddingSpec, KnnTable, OptimalEmbedding,
    TimeSeriesSet,
};

//! Graph-regularized embedding learning at desk scale.
//!
//! Trains a feed-forward embedding network with a sampled-softmax,
//! label-smoothed classification objective plus a graph regularizer that
//! pulls the embeddings of interaction-linked examples together. The
//! similarity graph is built from (simulated) click logs; embeddings are
//! scored with brute-force kNN top-k accuracy and triplet recall-vs-margin
//! curves.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`); all
//! file formats, the CLI and the acceptance tolerances pin `f64` (the
//! aliases below).

pub mod dataio;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Vector64 = numerics::DenseVector<f64>;
pub type Matrix64 = numerics::DenseMatrix<f64>;
pub type Params64 = model::ModelParams<f64>;
pub type Dataset64 = dataio::Dataset<f64>;
pub type Example64 = dataio::Example<f64>;
pub type LabelDistribution64 = losses::LabelDistribution<f64>;
pub type LossBreakdown64 = losses::LossBreakdown<f64>;
pub type EmbeddedExample64 = eval::EmbeddedExample<f64>;

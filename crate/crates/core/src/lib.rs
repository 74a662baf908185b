//! Collaborative attributed-graph clustering over vertically partitioned
//! features.
//!
//! Participants share one graph and hold disjoint feature columns of the same
//! nodes. The crate provides the building blocks and the protocols that run
//! on top of them:
//!
//! * [`graph`]: normalized Laplacian and Laplacian-smoothing filters.
//! * [`kmeans`]: projection, seeding, the 1/9 proximity round and weighted
//!   Lloyd iterations.
//! * [`secagg`]: pairwise-mask secure aggregation with fixed-point encoding.
//! * [`transport`]: simulated and TCP message transports with a traffic ledger.
//! * [`federation`]: basic and optimized collaborative protocols, tree
//!   composition and prediction.
//! * [`theory`]: proximity and separation condition checkers.
//! * [`metrics`]: ACC / NMI / macro-F1 and nearest-neighbour privacy measures.
//! * [`data`]: dataset IO, vertical splits and planted generators.

// Distance kernels take a slice of column blocks; one block is the common case.
#![allow(clippy::single_range_in_vec_init)]
// Index loops mirror the matrix formulas in the numeric kernels.
#![allow(clippy::needless_range_loop)]
// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod federation;
pub mod graph;
pub mod kmeans;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod parallel;
pub mod secagg;
pub mod theory;
pub mod transport;
pub mod wire;

pub use error::{Error, Result};
pub use matrix::FeatureMatrix;

//! A desk-scale laboratory for studying whether weight-space orthogonality
//! of Mixture-of-Experts expert weights carries over to activation space.
//!
//! The crate trains a small byte-level MoE transformer with an optional
//! orthogonality penalty on the expert up-projections, measures mean
//! squared overlap (MSO) of both the flattened weights and the selected
//! experts' outputs, and runs λ-sweep / multi-seed / correlation analyses
//! over the results.

pub mod data;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod train;

//! Synthesis of verified adversarial regions for ReLU networks.
//!
//! Given a point, a target label and an L∞ radius, the library collects
//! concrete attacks, takes their bounding box as a candidate region and
//! repeatedly cuts it with fitted half-spaces until a convex relaxation of
//! the network proves that every input in the region is classified as the
//! target. Every component is generic over the scalar type; the aliases
//! below fix it to `f64`.

// `!(a > b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod classifier;
pub mod error;
pub mod geometry;
pub mod lp;
pub mod network;
pub mod region;
pub mod relaxation;
mod rng;
pub mod sampling;
pub mod scalar;
pub mod synthesis;
pub mod theory;
pub mod work;

pub use error::{Error, Result};
pub use relaxation::RelaxationKind;
pub use scalar::Scalar;

pub type Network = network::Network<f64>;
pub type Layer = network::Layer<f64>;
pub type LabeledQuery = network::LabeledQuery<f64>;
pub type Polyhedron = geometry::Polyhedron<f64>;
pub type BoxApprox = geometry::BoxApprox<f64>;
pub type LinearProgram = lp::LinearProgram<f64>;
pub type RelaxationState = relaxation::RelaxationState<f64>;
pub type SolveRecord = relaxation::SolveRecord<f64>;
pub type Verification = relaxation::Verification<f64>;
pub type LinearSeparator = classifier::LinearSeparator<f64>;
pub type CounterexampleBatch = sampling::CounterexampleBatch<f64>;
pub type HistorySet = sampling::HistorySet<f64>;
pub type RegionReport = synthesis::RegionReport<f64>;

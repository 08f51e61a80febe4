//! Synthetic multi-source personal-memory QA: data generation, deterministic
//! labels, source atoms, fusion resolvers with calibrated abstention, and the
//! evaluation drivers built on top of them.

pub mod atoms;
pub mod dgp;
pub mod error;
pub mod eval;
pub mod ground_truth;
pub mod nl_render;
pub mod num;
pub mod pipeline;
pub mod resolvers;
pub mod rng;
pub mod schema;
pub mod selective;

pub use error::{Error, Result};
pub use num::Scalar;
pub use schema::{DifficultyClass, QuestionSpec, Registry, SourceId, Split};

/// Resolver types at double precision, as used by the pipeline.
pub type Prediction = resolvers::Prediction<f64>;
pub type Model = resolvers::Model<f64>;
pub type ConfusionModel = resolvers::ConfusionModel<f64>;
pub type DsnbfModel = resolvers::DsnbfModel<f64>;
pub type AbfModel = resolvers::AbfModel<f64>;
pub type KernelParams = resolvers::KernelParams<f64>;

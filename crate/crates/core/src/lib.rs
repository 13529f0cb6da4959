//! Test-time scaling for soft-label and perspectivist prediction.
//!
//! Sample several LLM predictions per item, score their reasoning steps with a
//! judge model, then pick or aggregate, and measure the result against human
//! label distributions.

pub mod analysis;
pub mod data;
pub mod descriptor;
pub mod inference;
pub mod judge;
pub mod metrics;
pub mod runner;
pub mod scaling;
pub mod simlab;
pub mod types;

pub use descriptor::{DatasetDescriptor, PerspMetric, SoftMetric, Splits};
pub use scaling::MethodId;
pub use types::{
    category_key, validate_soft_label, Compliance, LabelError, LabelSpace, PerspectivistPrediction,
    Prediction, Problem, RatingLabel, Reduction, Sample, ScoredSample, SoftLabel, SoftPrediction,
    SpaceKind, StepRating, Task, TokenCounts, ValidatedSoftLabel,
};

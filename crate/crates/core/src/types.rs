//! Domain types shared across the harness.
//!
//! Everything here is immutable once constructed. Constructors validate the
//! invariants, and deserialization goes through the same constructors so a
//! record read back from disk is held to the same rules as one built in memory.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the sum of a constructed [`SoftLabel`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Near-miss band: sums inside `1 ± RENORMALIZE_BAND` are rescaled, anything
/// further out is rejected.
pub const RENORMALIZE_BAND: f64 = 1e-3;

/// Tolerance used when matching a reported label against a label position.
const POSITION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelError {
    #[error("expected {expected} weights, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weight {index} is not finite")]
    NonFinite { index: usize },
    #[error("weights sum to {sum}, outside the accepted band around 1")]
    SumOutOfBand { sum: f64 },
    #[error("invalid label space: {0}")]
    InvalidSpace(String),
    #[error("label {value} is not a position of the label space")]
    UnknownLabel { value: f64 },
    #[error("annotator `{0}` is not in the roster")]
    UnknownAnnotator(String),
    #[error("expected {expected} per-category soft labels, got {actual}")]
    PartCount { expected: usize, actual: usize },
    #[error("step ratings ({ratings}) do not align with steps ({steps})")]
    RatingCount { ratings: usize, steps: usize },
    #[error("prediction score {declared} does not match recomputed {recomputed}")]
    ScoreMismatch { declared: f64, recomputed: f64 },
    #[error("sample invariant violated: {0}")]
    Sample(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceKind {
    OrderedScale,
    Binary,
    MultiCategory,
}

/// Ordered, finite label space.
///
/// For [`SpaceKind::MultiCategory`] the positions describe the binary
/// sub-space each category carries (always `[0, 1]`), and `category_names`
/// lists the categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSpace")]
pub struct LabelSpace {
    kind: SpaceKind,
    positions: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    category_names: Vec<String>,
}

#[derive(Deserialize)]
struct RawLabelSpace {
    kind: SpaceKind,
    positions: Vec<f64>,
    #[serde(default)]
    category_names: Vec<String>,
}

impl TryFrom<RawLabelSpace> for LabelSpace {
    type Error = LabelError;

    fn try_from(raw: RawLabelSpace) -> Result<Self, Self::Error> {
        LabelSpace::new(raw.kind, raw.positions, raw.category_names)
    }
}

impl LabelSpace {
    pub fn new(
        kind: SpaceKind,
        positions: Vec<f64>,
        category_names: Vec<String>,
    ) -> Result<Self, LabelError> {
        if positions.len() < 2 {
            return Err(LabelError::InvalidSpace(
                "at least two positions are required".into(),
            ));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(LabelError::InvalidSpace("positions must be finite".into()));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LabelError::InvalidSpace(
                "positions must be strictly increasing".into(),
            ));
        }
        match kind {
            SpaceKind::Binary | SpaceKind::MultiCategory if positions.len() != 2 => {
                return Err(LabelError::InvalidSpace(
                    "binary spaces have exactly two positions".into(),
                ));
            }
            SpaceKind::MultiCategory if category_names.is_empty() => {
                return Err(LabelError::InvalidSpace(
                    "multi-category spaces need category names".into(),
                ));
            }
            SpaceKind::OrderedScale | SpaceKind::Binary if !category_names.is_empty() => {
                return Err(LabelError::InvalidSpace(
                    "only multi-category spaces carry category names".into(),
                ));
            }
            _ => {}
        }
        let mut seen = std::collections::BTreeSet::new();
        if !category_names.iter().all(|c| seen.insert(c.as_str())) {
            return Err(LabelError::InvalidSpace("duplicate category name".into()));
        }
        Ok(Self {
            kind,
            positions,
            category_names,
        })
    }

    /// Integer Likert scale `low..=high`.
    pub fn likert(low: i32, high: i32) -> Self {
        Self::new(
            SpaceKind::OrderedScale,
            (low..=high).map(f64::from).collect(),
            Vec::new(),
        )
        .expect("likert bounds must span at least two points")
    }

    pub fn binary() -> Self {
        Self::new(SpaceKind::Binary, vec![0.0, 1.0], Vec::new()).expect("static space")
    }

    pub fn multi_category<S: Into<String>>(
        names: impl IntoIterator<Item = S>,
    ) -> Result<Self, LabelError> {
        Self::new(
            SpaceKind::MultiCategory,
            vec![0.0, 1.0],
            names.into_iter().map(Into::into).collect(),
        )
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    /// Number of positions in one (sub-)space.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of independent soft labels a prediction carries: one per
    /// category for multi-category spaces, otherwise one.
    pub fn parts(&self) -> usize {
        match self.kind {
            SpaceKind::MultiCategory => self.category_names.len(),
            _ => 1,
        }
    }

    pub fn range(&self) -> f64 {
        self.positions[self.positions.len() - 1] - self.positions[0]
    }

    pub fn index_of(&self, value: f64) -> Option<usize> {
        self.positions
            .iter()
            .position(|p| (p - value).abs() <= POSITION_TOLERANCE)
    }

    pub fn contains(&self, value: f64) -> bool {
        self.index_of(value).is_some()
    }
}

/// Probability vector aligned index-for-index with a label space's positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SoftLabel {
    weights: Vec<f64>,
}

impl TryFrom<Vec<f64>> for SoftLabel {
    type Error = LabelError;

    fn try_from(weights: Vec<f64>) -> Result<Self, Self::Error> {
        SoftLabel::new(weights)
    }
}

impl From<SoftLabel> for Vec<f64> {
    fn from(label: SoftLabel) -> Self {
        label.weights
    }
}

impl SoftLabel {
    /// Strict constructor: weights must already sum to 1 within
    /// [`SUM_TOLERANCE`].
    pub fn new(weights: Vec<f64>) -> Result<Self, LabelError> {
        check_entries(&weights)?;
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(LabelError::SumOutOfBand { sum });
        }
        Ok(Self { weights })
    }

    /// Empirical distribution of `counts`.
    pub fn from_counts(counts: &[u64]) -> Result<Self, LabelError> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(LabelError::SumOutOfBand { sum: 0.0 });
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            weights: vec![1.0 / len as f64; len],
        }
    }

    /// Point mass on position index `index`.
    pub fn delta(len: usize, index: usize) -> Self {
        let mut weights = vec![0.0; len];
        weights[index] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Rescales arbitrary nonnegative weights with a positive sum.
    pub(crate) fn normalized(weights: Vec<f64>) -> Result<Self, LabelError> {
        check_entries(&weights)?;
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(LabelError::SumOutOfBand { sum });
        }
        Ok(Self {
            weights: weights.into_iter().map(|w| w / sum).collect(),
        })
    }
}

fn check_entries(weights: &[f64]) -> Result<(), LabelError> {
    for (index, &value) in weights.iter().enumerate() {
        if !value.is_finite() {
            return Err(LabelError::NonFinite { index });
        }
        if value < 0.0 {
            return Err(LabelError::NegativeWeight { index, value });
        }
    }
    Ok(())
}

/// Result of [`validate_soft_label`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSoftLabel {
    pub label: SoftLabel,
    /// True when the raw sum was off by more than [`SUM_TOLERANCE`] and the
    /// weights were rescaled.
    pub renormalized: bool,
}

/// Validates raw model weights against `space`, salvaging near-miss sums.
pub fn validate_soft_label(
    weights: &[f64],
    space: &LabelSpace,
) -> Result<ValidatedSoftLabel, LabelError> {
    if weights.len() != space.len() {
        return Err(LabelError::LengthMismatch {
            expected: space.len(),
            actual: weights.len(),
        });
    }
    check_entries(weights)?;
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > RENORMALIZE_BAND + 1e-12 {
        return Err(LabelError::SumOutOfBand { sum });
    }
    let renormalized = (sum - 1.0).abs() > SUM_TOLERANCE;
    let label = SoftLabel {
        weights: if renormalized {
            weights.iter().map(|w| w / sum).collect()
        } else {
            weights.to_vec()
        },
    };
    Ok(ValidatedSoftLabel {
        label,
        renormalized,
    })
}

/// Soft-label prediction for a whole item: one [`SoftLabel`] per category
/// for multi-category spaces, a single one otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SoftPrediction {
    parts: Vec<SoftLabel>,
}

impl SoftPrediction {
    pub fn single(label: SoftLabel) -> Self {
        Self { parts: vec![label] }
    }

    pub fn from_parts(parts: Vec<SoftLabel>) -> Self {
        Self { parts }
    }

    pub fn parts(&self) -> &[SoftLabel] {
        &self.parts
    }

    pub fn check(&self, space: &LabelSpace) -> Result<(), LabelError> {
        if self.parts.len() != space.parts() {
            return Err(LabelError::PartCount {
                expected: space.parts(),
                actual: self.parts.len(),
            });
        }
        for part in &self.parts {
            if part.len() != space.len() {
                return Err(LabelError::LengthMismatch {
                    expected: space.len(),
                    actual: part.len(),
                });
            }
        }
        Ok(())
    }
}

impl From<SoftLabel> for SoftPrediction {
    fn from(label: SoftLabel) -> Self {
        Self::single(label)
    }
}

/// One label per annotator.
///
/// For multi-category spaces the keys are `annotator.category` and the
/// values are 0/1 membership flags.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PerspectivistPrediction {
    labels: BTreeMap<String, f64>,
}

impl PerspectivistPrediction {
    pub fn new(
        labels: BTreeMap<String, f64>,
        space: &LabelSpace,
        roster: &[String],
    ) -> Result<Self, LabelError> {
        for (annotator, &value) in &labels {
            if !space.contains(value) {
                return Err(LabelError::UnknownLabel { value });
            }
            if !roster.is_empty() && !roster.iter().any(|r| r == annotator) {
                return Err(LabelError::UnknownAnnotator(annotator.clone()));
            }
        }
        Ok(Self { labels })
    }

    /// Builds without roster or space checks; callers guarantee validity.
    pub(crate) fn from_trusted(labels: BTreeMap<String, f64>) -> Self {
        Self { labels }
    }

    pub fn labels(&self) -> &BTreeMap<String, f64> {
        &self.labels
    }

    pub fn get(&self, annotator: &str) -> Option<f64> {
        self.labels.get(annotator).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Key used for one annotator/category pair on multi-category spaces.
pub fn category_key(annotator: &str, category: &str) -> String {
    format!("{annotator}.{category}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    SoftLabel,
    Perspectivist,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::SoftLabel => "soft-label",
            Task::Perspectivist => "perspectivist",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "soft-label" | "soft" => Ok(Task::SoftLabel),
            "perspectivist" | "persp" => Ok(Task::Perspectivist),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", content = "value", rename_all = "kebab-case")]
pub enum Prediction {
    SoftLabel(SoftPrediction),
    Perspectivist(PerspectivistPrediction),
}

impl Prediction {
    pub fn task(&self) -> Task {
        match self {
            Prediction::SoftLabel(_) => Task::SoftLabel,
            Prediction::Perspectivist(_) => Task::Perspectivist,
        }
    }

    pub fn as_soft(&self) -> Option<&SoftPrediction> {
        match self {
            Prediction::SoftLabel(p) => Some(p),
            Prediction::Perspectivist(_) => None,
        }
    }

    pub fn as_perspectivist(&self) -> Option<&PerspectivistPrediction> {
        match self {
            Prediction::Perspectivist(p) => Some(p),
            Prediction::SoftLabel(_) => None,
        }
    }
}

/// A single item to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub dataset: String,
    pub payload: BTreeMap<String, String>,
    /// Annotators whose labels a perspectivist prediction must cover.
    #[serde(default)]
    pub annotators: Vec<String>,
    #[serde(default)]
    pub human_soft: Option<SoftPrediction>,
    #[serde(default)]
    pub human_persp: Option<PerspectivistPrediction>,
}

impl Problem {
    pub fn is_labeled(&self) -> bool {
        self.human_soft.is_some() || self.human_persp.is_some()
    }

    pub fn truth(&self, task: Task) -> Option<Prediction> {
        match task {
            Task::SoftLabel => self.human_soft.clone().map(Prediction::SoftLabel),
            Task::Perspectivist => self.human_persp.clone().map(Prediction::Perspectivist),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compliance {
    Compliant,
    Renormalized,
    NonCompliant,
}

impl Compliance {
    pub fn is_usable(self) -> bool {
        self != Compliance::NonCompliant
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
    pub reasoning: u64,
    /// Set when any count is a whitespace estimate rather than the
    /// endpoint's own usage report.
    #[serde(default)]
    pub approximate: bool,
}

/// One generation for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub problem_id: String,
    pub index: usize,
    pub prediction: Option<Prediction>,
    pub steps: Vec<String>,
    pub raw_text: String,
    pub raw_reasoning: String,
    pub token_counts: TokenCounts,
    pub compliance: Compliance,
}

impl Sample {
    /// Placeholder for a generation that could not be obtained or parsed.
    pub fn non_compliant(problem_id: impl Into<String>, index: usize, raw_text: String) -> Self {
        Self {
            problem_id: problem_id.into(),
            index,
            prediction: None,
            steps: Vec::new(),
            raw_text,
            raw_reasoning: String::new(),
            token_counts: TokenCounts::default(),
            compliance: Compliance::NonCompliant,
        }
    }

    pub fn is_compliant(&self) -> bool {
        self.compliance.is_usable()
    }

    pub fn check(&self) -> Result<(), LabelError> {
        match (self.compliance.is_usable(), &self.prediction) {
            (true, None) => Err(LabelError::Sample(
                "compliant sample without a prediction".into(),
            )),
            (false, Some(_)) => Err(LabelError::Sample(
                "non-compliant sample carries a prediction".into(),
            )),
            (true, Some(_)) if self.steps.is_empty() => {
                Err(LabelError::Sample("compliant sample without steps".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn soft(&self) -> Option<&SoftPrediction> {
        self.prediction.as_ref().and_then(Prediction::as_soft)
    }

    pub fn perspectivist(&self) -> Option<&PerspectivistPrediction> {
        self.prediction
            .as_ref()
            .and_then(Prediction::as_perspectivist)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatingLabel {
    Good,
    Okay,
    Bad,
}

impl RatingLabel {
    pub fn numeric(self) -> f64 {
        match self {
            RatingLabel::Good => 1.0,
            RatingLabel::Okay | RatingLabel::Bad => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRating {
    pub label: RatingLabel,
    /// The judge's answer did not contain a recognised rating word.
    #[serde(default)]
    pub flagged: bool,
}

impl StepRating {
    pub fn new(label: RatingLabel) -> Self {
        Self {
            label,
            flagged: false,
        }
    }

    pub fn numeric(&self) -> f64 {
        self.label.numeric()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    #[default]
    Mean,
    Product,
}

impl Reduction {
    pub fn apply(self, ratings: &[StepRating]) -> f64 {
        match self {
            Reduction::Mean if ratings.is_empty() => 0.0,
            Reduction::Mean => {
                ratings.iter().map(StepRating::numeric).sum::<f64>() / ratings.len() as f64
            }
            Reduction::Product => ratings.iter().map(StepRating::numeric).product(),
        }
    }
}

impl FromStr for Reduction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Reduction::Mean),
            "product" => Ok(Reduction::Product),
            other => Err(format!("unknown reduction `{other}`")),
        }
    }
}

/// A sample with its per-step judge ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScoredSample")]
pub struct ScoredSample {
    sample: Sample,
    step_ratings: Vec<StepRating>,
    prediction_score: f64,
    reduction: Reduction,
}

#[derive(Deserialize)]
struct RawScoredSample {
    sample: Sample,
    step_ratings: Vec<StepRating>,
    prediction_score: f64,
    reduction: Reduction,
}

impl TryFrom<RawScoredSample> for ScoredSample {
    type Error = LabelError;

    fn try_from(raw: RawScoredSample) -> Result<Self, Self::Error> {
        ScoredSample::with_score(
            raw.sample,
            raw.step_ratings,
            raw.reduction,
            raw.prediction_score,
        )
    }
}

impl ScoredSample {
    pub fn new(
        sample: Sample,
        step_ratings: Vec<StepRating>,
        reduction: Reduction,
    ) -> Result<Self, LabelError> {
        let score = reduction.apply(&step_ratings);
        Self::with_score(sample, step_ratings, reduction, score)
    }

    /// Rejects a declared score that disagrees with the ratings by more than
    /// 1e-12.
    pub fn with_score(
        sample: Sample,
        step_ratings: Vec<StepRating>,
        reduction: Reduction,
        prediction_score: f64,
    ) -> Result<Self, LabelError> {
        if step_ratings.len() != sample.steps.len() {
            return Err(LabelError::RatingCount {
                ratings: step_ratings.len(),
                steps: sample.steps.len(),
            });
        }
        let recomputed = reduction.apply(&step_ratings);
        if (recomputed - prediction_score).abs() > 1e-12 {
            return Err(LabelError::ScoreMismatch {
                declared: prediction_score,
                recomputed,
            });
        }
        Ok(Self {
            sample,
            step_ratings,
            prediction_score,
            reduction,
        })
    }

    pub fn sample(&self) -> &Sample {
        &self.sample
    }

    pub fn step_ratings(&self) -> &[StepRating] {
        &self.step_ratings
    }

    pub fn prediction_score(&self) -> f64 {
        self.prediction_score
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn flagged_ratings(&self) -> usize {
        self.step_ratings.iter().filter(|r| r.flagged).count()
    }
}

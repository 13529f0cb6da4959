//! Baselines, aggregation benchmarks, best-of-N selection and the BoN oracle.
//!
//! Every tie breaks toward the lowest sample index or the smallest label
//! position.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    LabelError, LabelSpace, PerspectivistPrediction, Problem, Sample, ScoredSample, SoftLabel,
    SoftPrediction,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalingError {
    #[error("no training problems with {0} targets")]
    EmptyTrain(&'static str),
    #[error("no compliant samples")]
    NoCompliant,
    #[error("nothing to aggregate")]
    Empty,
    #[error("inputs disagree in shape")]
    ShapeMismatch,
    #[error(transparent)]
    Label(#[from] LabelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodId {
    MostFrequent,
    Simple,
    ModelAveraging,
    MajorityVoting,
    BonSws,
    BonOracle,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::MostFrequent,
        MethodId::Simple,
        MethodId::ModelAveraging,
        MethodId::MajorityVoting,
        MethodId::BonSws,
        MethodId::BonOracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::MostFrequent => "most-frequent",
            MethodId::Simple => "simple",
            MethodId::ModelAveraging => "model-averaging",
            MethodId::MajorityVoting => "majority-voting",
            MethodId::BonSws => "bon-sws",
            MethodId::BonOracle => "bon-oracle",
        }
    }

    /// Whether the method's output is always one of the N sampled predictions.
    pub fn selects_a_sample(self) -> bool {
        matches!(
            self,
            MethodId::Simple | MethodId::BonSws | MethodId::BonOracle
        )
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Component-wise mean of the training soft labels, renormalized.
pub fn most_frequent_soft(
    train: &[Problem],
    space: &LabelSpace,
) -> Result<SoftPrediction, ScalingError> {
    let targets: Vec<&SoftPrediction> =
        train.iter().filter_map(|p| p.human_soft.as_ref()).collect();
    if targets.is_empty() {
        return Err(ScalingError::EmptyTrain("soft-label"));
    }
    let mut sums = vec![vec![0.0; space.len()]; space.parts()];
    for target in &targets {
        target.check(space)?;
        for (acc, part) in sums.iter_mut().zip(target.parts()) {
            for (a, w) in acc.iter_mut().zip(part.weights()) {
                *a += w;
            }
        }
    }
    let parts = sums
        .into_iter()
        .map(|acc| {
            SoftLabel::normalized(acc.into_iter().map(|s| s / targets.len() as f64).collect())
        })
        .collect::<Result<_, _>>()?;
    Ok(SoftPrediction::from_parts(parts))
}

/// Mode with ties broken toward the smaller label.
fn mode<'a>(labels: impl IntoIterator<Item = &'a f64>) -> Option<f64> {
    let mut counts: Vec<(f64, usize)> = Vec::new();
    for &label in labels {
        match counts.iter_mut().find(|(l, _)| (*l - label).abs() <= 1e-9) {
            Some((_, c)) => *c += 1,
            None => counts.push((label, 1)),
        }
    }
    counts
        .into_iter()
        .max_by(|(la, ca), (lb, cb)| ca.cmp(cb).then_with(|| lb.total_cmp(la)))
        .map(|(label, _)| label)
}

fn per_annotator_mode<'a>(
    preds: impl IntoIterator<Item = &'a PerspectivistPrediction>,
) -> PerspectivistPrediction {
    let mut by_annotator: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for pred in preds {
        for (annotator, label) in pred.labels() {
            by_annotator.entry(annotator).or_default().push(*label);
        }
    }
    PerspectivistPrediction::from_trusted(
        by_annotator
            .into_iter()
            .filter_map(|(a, labels)| mode(&labels).map(|m| (a.to_string(), m)))
            .collect(),
    )
}

/// Per-annotator most frequent training label. Annotators without training
/// labels are absent from the result.
pub fn most_frequent_persp(train: &[Problem]) -> Result<PerspectivistPrediction, ScalingError> {
    let preds: Vec<_> = train
        .iter()
        .filter_map(|p| p.human_persp.as_ref())
        .collect();
    if preds.is_empty() {
        return Err(ScalingError::EmptyTrain("perspectivist"));
    }
    Ok(per_annotator_mode(preds))
}

/// The compliant sample with the lowest index.
pub fn simple_sampling(samples: &[Sample]) -> Result<&Sample, ScalingError> {
    samples
        .iter()
        .filter(|s| s.is_compliant())
        .min_by_key(|s| s.index)
        .ok_or(ScalingError::NoCompliant)
}

/// Component-wise mean of `labels`.
pub fn model_averaging(labels: &[SoftLabel]) -> Result<SoftLabel, ScalingError> {
    let first = labels.first().ok_or(ScalingError::Empty)?;
    if labels.iter().any(|l| l.len() != first.len()) {
        return Err(ScalingError::ShapeMismatch);
    }
    let n = labels.len() as f64;
    let mean: Vec<f64> = (0..first.len())
        .map(|i| labels.iter().map(|l| l.weights()[i]).sum::<f64>() / n)
        .collect();
    // The mean of distributions sums to 1 up to rounding; rescale so the
    // constructor's tolerance always holds.
    Ok(SoftLabel::normalized(mean)?)
}

/// Model averaging applied per category part.
pub fn average_predictions(preds: &[&SoftPrediction]) -> Result<SoftPrediction, ScalingError> {
    let first = preds.first().ok_or(ScalingError::Empty)?;
    let parts = first.parts().len();
    if preds.iter().any(|p| p.parts().len() != parts) {
        return Err(ScalingError::ShapeMismatch);
    }
    let averaged = (0..parts)
        .map(|k| {
            let column: Vec<SoftLabel> = preds.iter().map(|p| p.parts()[k].clone()).collect();
            model_averaging(&column)
        })
        .collect::<Result<_, _>>()?;
    Ok(SoftPrediction::from_parts(averaged))
}

/// Per-annotator mode across the N predictions.
pub fn majority_voting(
    preds: &[&PerspectivistPrediction],
) -> Result<PerspectivistPrediction, ScalingError> {
    if preds.is_empty() {
        return Err(ScalingError::Empty);
    }
    Ok(per_annotator_mode(preds.iter().copied()))
}

/// Index of the prediction closest to `truth` under `distance`; ties go to
/// the earliest entry.
pub fn bon_oracle<T, E>(
    preds: &[T],
    truth: &T,
    mut distance: impl FnMut(&T, &T) -> Result<f64, E>,
) -> Result<Option<usize>, E> {
    let mut best: Option<(usize, f64)> = None;
    for (i, pred) in preds.iter().enumerate() {
        let d = distance(pred, truth)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    Ok(best.map(|(i, _)| i))
}

/// Highest prediction-level score among compliant samples; ties go to the
/// lowest sample index.
pub fn bon_select(scored: &[ScoredSample]) -> Result<&ScoredSample, ScalingError> {
    scored
        .iter()
        .filter(|s| s.sample().is_compliant())
        .min_by(|a, b| {
            b.prediction_score()
                .total_cmp(&a.prediction_score())
                .then(a.sample().index.cmp(&b.sample().index))
        })
        .ok_or(ScalingError::NoCompliant)
}

/// Average of `p` with the uniform distribution.
pub fn smooth_uniform(p: &SoftLabel) -> SoftLabel {
    let u = 1.0 / p.len() as f64;
    SoftLabel::normalized(p.weights().iter().map(|w| (w + u) / 2.0).collect())
        .expect("smoothing keeps weights positive")
}

pub fn smooth_prediction(p: &SoftPrediction) -> SoftPrediction {
    SoftPrediction::from_parts(p.parts().iter().map(smooth_uniform).collect())
}

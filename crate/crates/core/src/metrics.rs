//! Distances, entropy, prediction diversity and resampling statistics.
//!
//! All functions are pure. Soft-label distances operate on one
//! [`SoftLabel`]; the `*_prediction` variants sum over the per-category parts
//! of a [`SoftPrediction`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{DatasetDescriptor, PerspMetric, SoftMetric};
use crate::types::{LabelSpace, PerspectivistPrediction, Prediction, SoftLabel, SoftPrediction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("label vectors have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("soft label of length {label} does not fit a space of {space} positions")]
    SpaceMismatch { label: usize, space: usize },
    #[error("predictions share no annotators")]
    NoSharedAnnotators,
    #[error("metric needs an ordered scale")]
    NotOrdered,
    #[error("need at least {needed} items, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("prediction kinds differ")]
    TaskMismatch,
}

/// A computed metric with its name; always finite and nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub metric_name: String,
}

impl MetricValue {
    pub fn new(value: f64, metric_name: impl Into<String>) -> Result<Self, MetricError> {
        if !value.is_finite() || value < 0.0 {
            return Err(MetricError::InvalidArgument(format!(
                "metric value {value} is not a finite nonnegative number"
            )));
        }
        Ok(Self {
            value,
            metric_name: metric_name.into(),
        })
    }
}

/// 1-D discrete Wasserstein-1 distance over the space's label positions.
///
/// Sums `|CDF_p(k) - CDF_q(k)| * (x[k+1] - x[k])` over consecutive positions.
pub fn wasserstein(p: &SoftLabel, q: &SoftLabel, space: &LabelSpace) -> Result<f64, MetricError> {
    for label in [p, q] {
        if label.len() != space.len() {
            return Err(MetricError::SpaceMismatch {
                label: label.len(),
                space: space.len(),
            });
        }
    }
    let positions = space.positions();
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for k in 0..positions.len() - 1 {
        cdf_gap += p.weights()[k] - q.weights()[k];
        total += cdf_gap.abs() * (positions[k + 1] - positions[k]);
    }
    Ok(total)
}

/// Sum of absolute differences.
///
/// With two labels both terms are the same moved mass, so the first is
/// counted twice; this keeps `manhattan == 2 * wasserstein` bit-exact on
/// binary spaces, where `1 - p` rounding would otherwise leave an ulp apart.
pub fn manhattan(p: &SoftLabel, q: &SoftLabel) -> Result<f64, MetricError> {
    if p.len() != q.len() {
        return Err(MetricError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    if p.len() == 2 {
        return Ok(2.0 * (p.weights()[0] - q.weights()[0]).abs());
    }
    Ok(p.weights()
        .iter()
        .zip(q.weights())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

fn shared_pairs<'a>(
    pred: &'a PerspectivistPrediction,
    truth: &'a PerspectivistPrediction,
) -> Result<Vec<(f64, f64)>, MetricError> {
    let pairs: Vec<_> = truth
        .labels()
        .iter()
        .filter_map(|(k, &t)| pred.get(k).map(|p| (p, t)))
        .collect();
    if pairs.is_empty() {
        return Err(MetricError::NoSharedAnnotators);
    }
    Ok(pairs)
}

/// Fraction of shared annotators whose labels differ.
pub fn error_rate(
    pred: &PerspectivistPrediction,
    truth: &PerspectivistPrediction,
) -> Result<f64, MetricError> {
    let pairs = shared_pairs(pred, truth)?;
    let wrong = pairs.iter().filter(|(p, t)| (p - t).abs() > 1e-9).count();
    Ok(wrong as f64 / pairs.len() as f64)
}

/// Mean absolute label difference over shared annotators, divided by the
/// scale's range.
pub fn abs_distance(
    pred: &PerspectivistPrediction,
    truth: &PerspectivistPrediction,
    space: &LabelSpace,
) -> Result<f64, MetricError> {
    let pairs = shared_pairs(pred, truth)?;
    let mean = pairs.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / pairs.len() as f64;
    Ok(mean / space.range())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &SoftLabel) -> f64 {
    -p.weights()
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * w.ln())
        .sum::<f64>()
}

/// Entropy summed over the per-category parts.
pub fn prediction_entropy(p: &SoftPrediction) -> f64 {
    p.parts().iter().map(entropy).sum()
}

/// Average pairwise Wasserstein distance among `labels`, excluding
/// self-pairs: `1/(N(N-1)) * sum_{i != j} W(p_i, p_j)`.
pub fn prediction_diversity(labels: &[SoftLabel], space: &LabelSpace) -> Result<f64, MetricError> {
    let n = labels.len();
    if n < 2 {
        return Err(MetricError::TooFew { needed: 2, got: n });
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += wasserstein(&labels[i], &labels[j], space)?;
        }
    }
    // Wasserstein is symmetric, so each unordered pair stands for two terms.
    Ok(2.0 * total / (n * (n - 1)) as f64)
}

/// Diversity for whole predictions: per-category diversities summed.
pub fn soft_prediction_diversity(
    predictions: &[&SoftPrediction],
    space: &LabelSpace,
) -> Result<f64, MetricError> {
    let parts = space.parts();
    let mut total = 0.0;
    for part in 0..parts {
        let column: Vec<SoftLabel> = predictions
            .iter()
            .map(|p| {
                p.parts()
                    .get(part)
                    .cloned()
                    .ok_or(MetricError::LengthMismatch {
                        left: p.parts().len(),
                        right: parts,
                    })
            })
            .collect::<Result<_, _>>()?;
        total += prediction_diversity(&column, space)?;
    }
    Ok(total)
}

/// Soft-label distance under `metric`, summed over per-category parts.
pub fn soft_distance(
    metric: SoftMetric,
    a: &SoftPrediction,
    b: &SoftPrediction,
    space: &LabelSpace,
) -> Result<f64, MetricError> {
    if a.parts().len() != b.parts().len() {
        return Err(MetricError::LengthMismatch {
            left: a.parts().len(),
            right: b.parts().len(),
        });
    }
    a.parts()
        .iter()
        .zip(b.parts())
        .map(|(p, q)| match metric {
            SoftMetric::Wasserstein => wasserstein(p, q, space),
            SoftMetric::Manhattan => manhattan(p, q),
        })
        .sum()
}

pub fn persp_distance(
    metric: PerspMetric,
    pred: &PerspectivistPrediction,
    truth: &PerspectivistPrediction,
    space: &LabelSpace,
) -> Result<f64, MetricError> {
    match metric {
        PerspMetric::ErrorRate => error_rate(pred, truth),
        PerspMetric::AbsDistance => {
            if space.kind() != crate::types::SpaceKind::OrderedScale {
                return Err(MetricError::NotOrdered);
            }
            abs_distance(pred, truth, space)
        }
    }
}

/// Distance between a prediction and the truth under the descriptor's
/// metric for the prediction's task.
pub fn task_distance(
    descriptor: &DatasetDescriptor,
    pred: &Prediction,
    truth: &Prediction,
) -> Result<MetricValue, MetricError> {
    let value = match (pred, truth) {
        (Prediction::SoftLabel(p), Prediction::SoftLabel(t)) => {
            soft_distance(descriptor.soft_metric, p, t, &descriptor.label_space)?
        }
        (Prediction::Perspectivist(p), Prediction::Perspectivist(t)) => {
            persp_distance(descriptor.persp_metric, p, t, &descriptor.label_space)?
        }
        _ => return Err(MetricError::TaskMismatch),
    };
    let name = match pred {
        Prediction::SoftLabel(_) => match descriptor.soft_metric {
            SoftMetric::Wasserstein => "wasserstein",
            SoftMetric::Manhattan => "manhattan",
        },
        Prediction::Perspectivist(_) => match descriptor.persp_metric {
            PerspMetric::ErrorRate => "error-rate",
            PerspMetric::AbsDistance => "abs-distance",
        },
    };
    MetricValue::new(value, name)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Empirical quantile of sorted data with linear interpolation between
/// order statistics (`h = (n - 1) q`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for the mean.
///
/// Resamples `values` with replacement `resamples` times and returns the
/// `(1 - level)/2` and `(1 + level)/2` quantiles of the resampled means.
/// Deterministic for a fixed `seed`.
pub fn bootstrap_ci(
    values: &[f64],
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64), MetricError> {
    if values.is_empty() {
        return Err(MetricError::TooFew { needed: 1, got: 0 });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricError::InvalidArgument(format!(
            "confidence level {level} is not in (0, 1)"
        )));
    }
    if resamples == 0 {
        return Err(MetricError::InvalidArgument(
            "at least one resample is required".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let sum: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
            sum / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&means, (1.0 - level) / 2.0),
        quantile_sorted(&means, (1.0 + level) / 2.0),
    ))
}

/// Assigns each value to one of `k` equal-population bins by rank.
///
/// Values are ranked by a stable sort (input order breaks ties); rank `r`
/// of `n` lands in bin `floor(r k / n)`. Equal values always share the bin
/// of the first of them, so a run of ties never straddles a bin edge.
pub fn quantile_bins(values: &[f64], k: usize) -> Result<Vec<usize>, MetricError> {
    if k < 2 {
        return Err(MetricError::InvalidArgument(
            "need at least two bins".into(),
        ));
    }
    if values.is_empty() || k > values.len() {
        return Err(MetricError::TooFew {
            needed: k,
            got: values.len(),
        });
    }
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut bins = vec![0; n];
    let mut run_bin = 0;
    for (rank, &idx) in order.iter().enumerate() {
        let tied = rank > 0 && values[order[rank - 1]] == values[idx];
        if !tied {
            run_bin = rank * k / n;
        }
        bins[idx] = run_bin;
    }
    Ok(bins)
}

/// Average ranks (1-based), ties sharing the mean of their rank span.
fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(MetricError::TooFew {
            needed: 2,
            got: x.len(),
        });
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::InvalidArgument(
            "correlation undefined for constant input".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

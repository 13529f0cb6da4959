//! Dataset-level evaluation, diversity-binned analysis, entropy comparison,
//! token budgets and report files.

mod emit;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emit::{emit_report, format_sig, load_per_problem_csv, load_report, ReportExtras};

use crate::descriptor::DatasetDescriptor;
use crate::metrics::{
    bootstrap_ci, mean, prediction_entropy, quantile_bins, quantile_sorted,
    soft_prediction_diversity, task_distance, MetricError,
};
use crate::scaling::{
    average_predictions, bon_oracle, bon_select, majority_voting, smooth_prediction, MethodId,
    ScalingError,
};
use crate::types::{Prediction, Problem, Sample, ScoredSample, Task};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no samples for problem `{0}`")]
    MissingSamples(String),
    #[error("no judge scores for problem `{0}`")]
    MissingScores(String),
    #[error("problem `{0}` has no human labels; the oracle and distances need a labeled split")]
    Unlabeled(String),
    #[error("method {method} does not apply to the {task} task")]
    NotApplicable { method: MethodId, task: Task },
    #[error("most-frequent baseline requested but none was supplied")]
    NoBaseline,
    #[error("problem `{0}` has no compliant sample and no baseline to fall back on")]
    NoFallback(String),
    #[error("need at least {needed} problems, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("invalid gain-fraction triple: {0}")]
    InvalidTriple(String),
    #[error("analysis needs the {0} task")]
    WrongTask(Task),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub ci_level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ci_level: 0.95,
            resamples: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mean_distance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_problems: usize,
    /// Problems where the method fell back to the most-frequent baseline
    /// because no sample was compliant.
    pub fallback_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub problem_id: String,
    /// Mean pairwise Wasserstein distance among compliant soft-label
    /// samples; absent for the perspectivist task or fewer than two samples.
    pub diversity: Option<f64>,
    pub distances: BTreeMap<MethodId, f64>,
    /// Sample index chosen by each selection method.
    pub selected: BTreeMap<MethodId, usize>,
    /// Largest distance of any compliant sample.
    pub worst_sample_distance: Option<f64>,
    pub n_samples: usize,
    pub compliance: f64,
    pub fallback: bool,
    pub mean_reasoning_tokens: f64,
    pub mean_completion_tokens: f64,
    pub tokens_approximate: bool,
    pub flagged_ratings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub task: Task,
    pub metric: String,
    pub per_method: BTreeMap<MethodId, MethodSummary>,
    pub per_problem: Vec<ProblemRecord>,
}

/// What each problem contributes to an evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ProblemInput<'a> {
    pub problem: &'a Problem,
    pub samples: &'a [Sample],
    /// Judge scores for the compliant samples, if judged.
    pub scored: Option<&'a [ScoredSample]>,
}

fn check_applicable(method: MethodId, task: Task) -> Result<(), AnalysisError> {
    let ok = match method {
        MethodId::ModelAveraging => task == Task::SoftLabel,
        MethodId::MajorityVoting => task == Task::Perspectivist,
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(AnalysisError::NotApplicable { method, task })
    }
}

/// Predictions of each method for one problem, with the selected sample
/// index for selection methods.
struct Choices {
    predictions: BTreeMap<MethodId, (Prediction, Option<usize>)>,
    fallback: bool,
}

fn choose(
    input: &ProblemInput<'_>,
    methods: &[MethodId],
    descriptor: &DatasetDescriptor,
    baseline: Option<&Prediction>,
    truth: Option<&Prediction>,
) -> Result<Choices, AnalysisError> {
    let problem = input.problem;
    let compliant: Vec<&Sample> = input
        .samples
        .iter()
        .filter(|s| s.is_compliant() && s.prediction.is_some())
        .collect();
    let mut predictions = BTreeMap::new();
    let fallback = compliant.is_empty();
    for &method in methods {
        if method == MethodId::MostFrequent {
            let b = baseline.ok_or(AnalysisError::NoBaseline)?;
            predictions.insert(method, (b.clone(), None));
            continue;
        }
        if fallback {
            let b = baseline.ok_or_else(|| AnalysisError::NoFallback(problem.id.clone()))?;
            predictions.insert(method, (b.clone(), None));
            continue;
        }
        let pick = |s: &Sample| (s.prediction.clone().expect("compliant"), Some(s.index));
        let entry = match method {
            MethodId::MostFrequent => unreachable!(),
            MethodId::Simple => pick(compliant[0]),
            MethodId::ModelAveraging => {
                let preds: Vec<_> = compliant.iter().filter_map(|s| s.soft()).collect();
                (Prediction::SoftLabel(average_predictions(&preds)?), None)
            }
            MethodId::MajorityVoting => {
                let preds: Vec<_> = compliant.iter().filter_map(|s| s.perspectivist()).collect();
                (Prediction::Perspectivist(majority_voting(&preds)?), None)
            }
            MethodId::BonSws => {
                let scored = input
                    .scored
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| AnalysisError::MissingScores(problem.id.clone()))?;
                pick(bon_select(scored)?.sample())
            }
            MethodId::BonOracle => {
                let truth = truth.ok_or_else(|| AnalysisError::Unlabeled(problem.id.clone()))?;
                let preds: Vec<&Prediction> = compliant
                    .iter()
                    .filter_map(|s| s.prediction.as_ref())
                    .collect();
                let best = bon_oracle(&preds, &truth, |p, t| {
                    task_distance(descriptor, p, t).map(|m| m.value)
                })?
                .expect("non-empty");
                pick(compliant[best])
            }
        };
        predictions.insert(method, entry);
    }
    Ok(Choices {
        predictions,
        fallback,
    })
}

fn token_means(samples: &[Sample]) -> (f64, f64, bool) {
    let answered: Vec<&Sample> = samples
        .iter()
        .filter(|s| s.token_counts.completion > 0 || s.token_counts.reasoning > 0)
        .collect();
    if answered.is_empty() {
        return (0.0, 0.0, true);
    }
    let n = answered.len() as f64;
    (
        answered
            .iter()
            .map(|s| s.token_counts.reasoning as f64)
            .sum::<f64>()
            / n,
        answered
            .iter()
            .map(|s| s.token_counts.completion as f64)
            .sum::<f64>()
            / n,
        answered.iter().any(|s| s.token_counts.approximate),
    )
}

/// Scores every requested method on every problem under the descriptor's
/// metric. Problems must be labeled.
pub fn evaluate(
    inputs: &[ProblemInput<'_>],
    methods: &[MethodId],
    descriptor: &DatasetDescriptor,
    baseline: Option<&Prediction>,
    opts: &EvalOptions,
) -> Result<EvaluationReport, AnalysisError> {
    let task = descriptor.task;
    for &m in methods {
        check_applicable(m, task)?;
    }
    let mut per_problem = Vec::with_capacity(inputs.len());
    for input in inputs {
        let problem = input.problem;
        if input.samples.is_empty() {
            return Err(AnalysisError::MissingSamples(problem.id.clone()));
        }
        let truth = problem
            .truth(task)
            .ok_or_else(|| AnalysisError::Unlabeled(problem.id.clone()))?;
        let choices = choose(input, methods, descriptor, baseline, Some(&truth))?;
        let mut distances = BTreeMap::new();
        let mut selected = BTreeMap::new();
        for (&m, (pred, idx)) in &choices.predictions {
            distances.insert(m, task_distance(descriptor, pred, &truth)?.value);
            if let Some(i) = idx {
                selected.insert(m, *i);
            }
        }
        let compliant: Vec<&Sample> = input.samples.iter().filter(|s| s.is_compliant()).collect();
        let worst = compliant
            .iter()
            .filter_map(|s| s.prediction.as_ref())
            .map(|p| task_distance(descriptor, p, &truth).map(|m| m.value))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .reduce(f64::max);
        let diversity = if task == Task::SoftLabel && compliant.len() >= 2 {
            let preds: Vec<_> = compliant.iter().filter_map(|s| s.soft()).collect();
            Some(soft_prediction_diversity(&preds, &descriptor.label_space)?)
        } else {
            None
        };
        let (reasoning, completion, approximate) = token_means(input.samples);
        per_problem.push(ProblemRecord {
            problem_id: problem.id.clone(),
            diversity,
            distances,
            selected,
            worst_sample_distance: worst,
            n_samples: input.samples.len(),
            compliance: compliant.len() as f64 / input.samples.len() as f64,
            fallback: choices.fallback,
            mean_reasoning_tokens: reasoning,
            mean_completion_tokens: completion,
            tokens_approximate: approximate,
            flagged_ratings: input
                .scored
                .map(|s| s.iter().map(ScoredSample::flagged_ratings).sum())
                .unwrap_or(0),
        });
    }
    let mut per_method = BTreeMap::new();
    for &m in methods {
        let values: Vec<f64> = per_problem.iter().map(|r| r.distances[&m]).collect();
        if values.is_empty() {
            continue;
        }
        let (ci_low, ci_high) = bootstrap_ci(&values, opts.ci_level, opts.resamples, opts.seed)?;
        let fallback_count = if m == MethodId::MostFrequent {
            0
        } else {
            per_problem.iter().filter(|r| r.fallback).count()
        };
        per_method.insert(
            m,
            MethodSummary {
                mean_distance: mean(&values),
                ci_low,
                ci_high,
                n_problems: values.len(),
                fallback_count,
            },
        );
    }
    Ok(EvaluationReport {
        dataset: descriptor.name.clone(),
        task,
        metric: descriptor.metric_name().to_string(),
        per_method,
        per_problem,
    })
}

/// Per-problem predictions without scoring, for unlabeled splits.
pub fn predict(
    inputs: &[ProblemInput<'_>],
    methods: &[MethodId],
    descriptor: &DatasetDescriptor,
    baseline: Option<&Prediction>,
) -> Result<BTreeMap<MethodId, Vec<(String, Prediction)>>, AnalysisError> {
    let mut out: BTreeMap<MethodId, Vec<(String, Prediction)>> = BTreeMap::new();
    for &m in methods {
        check_applicable(m, descriptor.task)?;
        if m == MethodId::BonOracle {
            let id = inputs
                .first()
                .map(|i| i.problem.id.clone())
                .unwrap_or_default();
            return Err(AnalysisError::Unlabeled(id));
        }
    }
    for input in inputs {
        if input.samples.is_empty() {
            return Err(AnalysisError::MissingSamples(input.problem.id.clone()));
        }
        let choices = choose(input, methods, descriptor, baseline, None)?;
        for (m, (pred, _)) in choices.predictions {
            out.entry(m)
                .or_default()
                .push((input.problem.id.clone(), pred));
        }
    }
    Ok(out)
}

/// Share of the oracle's improvement over simple sampling that `method`
/// recovers. `None` when simple and oracle coincide.
pub fn oracle_gain_fraction(
    simple: f64,
    method: f64,
    oracle: f64,
) -> Result<Option<f64>, AnalysisError> {
    if ![simple, method, oracle].iter().all(|x| x.is_finite()) {
        return Err(AnalysisError::InvalidTriple("non-finite input".into()));
    }
    if simple < oracle {
        return Err(AnalysisError::InvalidTriple(format!(
            "simple {simple} is below oracle {oracle}"
        )));
    }
    if simple - oracle <= 1e-12 * simple.abs().max(1.0) {
        return Ok(None);
    }
    Ok(Some((simple - method) / (simple - oracle)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityBin {
    pub bin: usize,
    pub n_problems: usize,
    pub diversity_min: f64,
    pub diversity_max: f64,
    pub mean_distance: BTreeMap<MethodId, f64>,
    /// Mean distance of simple sampling minus that of the method.
    pub improvement_over_simple: BTreeMap<MethodId, f64>,
    pub gain_fraction: BTreeMap<MethodId, Option<f64>>,
}

/// Splits problems into `k` diversity quantiles and summarizes each.
pub fn diversity_analysis(
    report: &EvaluationReport,
    k: usize,
) -> Result<Vec<DiversityBin>, AnalysisError> {
    let rows: Vec<&ProblemRecord> = report
        .per_problem
        .iter()
        .filter(|r| r.diversity.is_some())
        .collect();
    if rows.len() < k {
        return Err(AnalysisError::TooFew {
            needed: k,
            got: rows.len(),
        });
    }
    let values: Vec<f64> = rows.iter().map(|r| r.diversity.unwrap()).collect();
    let bins = quantile_bins(&values, k)?;
    let methods: Vec<MethodId> = report.per_method.keys().copied().collect();
    let mut out = Vec::with_capacity(k);
    for b in 0..k {
        let members: Vec<&ProblemRecord> = rows
            .iter()
            .zip(&bins)
            .filter(|(_, &bin)| bin == b)
            .map(|(r, _)| *r)
            .collect();
        if members.is_empty() {
            continue;
        }
        let div: Vec<f64> = members.iter().map(|r| r.diversity.unwrap()).collect();
        let mean_distance: BTreeMap<MethodId, f64> = methods
            .iter()
            .map(|&m| {
                let d: Vec<f64> = members.iter().map(|r| r.distances[&m]).collect();
                (m, mean(&d))
            })
            .collect();
        let mut improvement = BTreeMap::new();
        let mut gain = BTreeMap::new();
        if let Some(&simple) = mean_distance.get(&MethodId::Simple) {
            for (&m, &d) in &mean_distance {
                improvement.insert(m, simple - d);
            }
            if let Some(&oracle) = mean_distance.get(&MethodId::BonOracle) {
                for (&m, &d) in &mean_distance {
                    gain.insert(m, oracle_gain_fraction(simple, d, oracle)?);
                }
            }
        }
        out.push(DiversityBin {
            bin: b,
            n_problems: members.len(),
            diversity_min: div.iter().copied().fold(f64::INFINITY, f64::min),
            diversity_max: div.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_distance,
            improvement_over_simple: improvement,
            gain_fraction: gain,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRecord {
    pub problem_id: String,
    pub truth_entropy: f64,
    pub simple_entropy: f64,
    pub mean_sample_entropy: f64,
    pub averaged_entropy: f64,
    pub smoothed_entropy: f64,
    pub simple_distance: f64,
    pub averaged_distance: f64,
    pub smoothed_distance: f64,
}

/// Entropy of simple, averaged and smoothed predictions next to their
/// distances. Problems without compliant samples are skipped.
pub fn entropy_comparison(
    inputs: &[ProblemInput<'_>],
    descriptor: &DatasetDescriptor,
) -> Result<Vec<EntropyRecord>, AnalysisError> {
    if descriptor.task != Task::SoftLabel {
        return Err(AnalysisError::WrongTask(Task::SoftLabel));
    }
    let mut out = Vec::new();
    for input in inputs {
        let problem = input.problem;
        let truth = problem
            .human_soft
            .clone()
            .ok_or_else(|| AnalysisError::Unlabeled(problem.id.clone()))?;
        let preds: Vec<_> = input
            .samples
            .iter()
            .filter(|s| s.is_compliant())
            .filter_map(|s| s.soft())
            .collect();
        let Some(&simple) = preds.first() else {
            continue;
        };
        let averaged = average_predictions(&preds)?;
        let smoothed = smooth_prediction(simple);
        let truth_p = Prediction::SoftLabel(truth.clone());
        let dist = |p: &crate::types::SoftPrediction| {
            task_distance(descriptor, &Prediction::SoftLabel(p.clone()), &truth_p).map(|m| m.value)
        };
        out.push(EntropyRecord {
            problem_id: problem.id.clone(),
            truth_entropy: prediction_entropy(&truth),
            simple_entropy: prediction_entropy(simple),
            mean_sample_entropy: mean(
                &preds
                    .iter()
                    .map(|p| prediction_entropy(p))
                    .collect::<Vec<_>>(),
            ),
            averaged_entropy: prediction_entropy(&averaged),
            smoothed_entropy: prediction_entropy(&smoothed),
            simple_distance: dist(simple)?,
            averaged_distance: dist(&averaged)?,
            smoothed_distance: dist(&smoothed)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl Quartiles {
    /// Linear-interpolation quartiles; `None` for an empty input.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            q25: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q75: quantile_sorted(&sorted, 0.75),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetStats {
    pub n_samples: usize,
    pub reasoning: Option<Quartiles>,
    pub completion: Option<Quartiles>,
    /// Reasoning counts are estimates, or no reasoning channel was seen.
    pub reasoning_approximate: bool,
}

/// Token-count quartiles over samples that received a response.
pub fn budget_stats(samples: &[Sample]) -> BudgetStats {
    let answered: Vec<&Sample> = samples
        .iter()
        .filter(|s| s.token_counts.completion > 0 || s.token_counts.reasoning > 0)
        .collect();
    let reasoning: Vec<f64> = answered
        .iter()
        .map(|s| s.token_counts.reasoning as f64)
        .collect();
    let completion: Vec<f64> = answered
        .iter()
        .map(|s| s.token_counts.completion as f64)
        .collect();
    BudgetStats {
        n_samples: answered.len(),
        reasoning_approximate: answered.iter().any(|s| s.token_counts.approximate)
            || answered.iter().all(|s| s.raw_reasoning.is_empty()),
        reasoning: Quartiles::of(&reasoning),
        completion: Quartiles::of(&completion),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Compliance, SoftLabel, SoftPrediction, TokenCounts};

    fn soft_sample(index: usize, w: &[f64]) -> Sample {
        Sample {
            problem_id: "p".into(),
            index,
            prediction: Some(Prediction::SoftLabel(SoftPrediction::single(
                SoftLabel::new(w.to_vec()).unwrap(),
            ))),
            steps: vec!["s".into()],
            raw_text: String::new(),
            raw_reasoning: String::new(),
            token_counts: TokenCounts::default(),
            compliance: Compliance::Compliant,
        }
    }

    fn problem(id: &str, truth: &[f64]) -> Problem {
        Problem {
            id: id.into(),
            dataset: "MP".into(),
            payload: BTreeMap::new(),
            annotators: vec![],
            human_soft: Some(SoftPrediction::single(
                SoftLabel::new(truth.to_vec()).unwrap(),
            )),
            human_persp: None,
        }
    }

    fn mp() -> DatasetDescriptor {
        DatasetDescriptor::builtin("MP", Task::SoftLabel).unwrap()
    }

    #[test]
    fn gain_fraction_examples() {
        assert!((oracle_gain_fraction(1.0, 0.9, 0.5).unwrap().unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(oracle_gain_fraction(1.0, 0.5, 0.5).unwrap(), Some(1.0));
        assert_eq!(oracle_gain_fraction(1.0, 1.0, 0.5).unwrap(), Some(0.0));
        assert_eq!(oracle_gain_fraction(0.5, 0.4, 0.5).unwrap(), None);
        assert!(oracle_gain_fraction(0.4, 0.4, 0.5).is_err());
    }

    #[test]
    fn oracle_beats_simple_on_one_problem() {
        let p = problem("p", &[0.2, 0.8]);
        let samples = vec![soft_sample(0, &[1.0, 0.0]), soft_sample(1, &[0.3, 0.7])];
        let inputs = [ProblemInput {
            problem: &p,
            samples: &samples,
            scored: None,
        }];
        let methods = [
            MethodId::Simple,
            MethodId::ModelAveraging,
            MethodId::BonOracle,
        ];
        let r = evaluate(&inputs, &methods, &mp(), None, &EvalOptions::default()).unwrap();
        let row = &r.per_problem[0];
        assert!(row.distances[&MethodId::BonOracle] <= row.distances[&MethodId::Simple]);
        assert_eq!(row.selected[&MethodId::BonOracle], 1);
        assert_eq!(r.per_method.len(), 3);
        assert!((row.distances[&MethodId::ModelAveraging] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn most_frequent_reused_and_fallback_counted() {
        let a = problem("a", &[0.5, 0.5]);
        let b = problem("b", &[0.0, 1.0]);
        let sa = vec![soft_sample(0, &[0.5, 0.5])];
        let sb = vec![Sample::non_compliant("b", 0, "junk".into())];
        let inputs = [
            ProblemInput {
                problem: &a,
                samples: &sa,
                scored: None,
            },
            ProblemInput {
                problem: &b,
                samples: &sb,
                scored: None,
            },
        ];
        let base = Prediction::SoftLabel(SoftPrediction::single(
            SoftLabel::new(vec![0.25, 0.75]).unwrap(),
        ));
        let methods = [MethodId::MostFrequent, MethodId::Simple];
        let r = evaluate(
            &inputs,
            &methods,
            &mp(),
            Some(&base),
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(r.per_method[&MethodId::Simple].fallback_count, 1);
        assert_eq!(r.per_method[&MethodId::MostFrequent].fallback_count, 0);
        assert_eq!(
            r.per_problem[1].distances[&MethodId::Simple],
            r.per_problem[1].distances[&MethodId::MostFrequent]
        );
        let err = evaluate(
            &inputs,
            &[MethodId::Simple],
            &mp(),
            None,
            &EvalOptions::default(),
        );
        assert!(matches!(err, Err(AnalysisError::NoFallback(_))));
    }

    #[test]
    fn per_method_means_recompute() {
        let ps: Vec<Problem> = (0..20)
            .map(|i| problem(&format!("p{i}"), &[i as f64 / 20.0, 1.0 - i as f64 / 20.0]))
            .collect();
        let ss: Vec<Vec<Sample>> = (0..20)
            .map(|i| {
                let x = (i * 7 % 20) as f64 / 20.0;
                vec![soft_sample(0, &[x, 1.0 - x]), soft_sample(1, &[0.5, 0.5])]
            })
            .collect();
        let inputs: Vec<_> = ps
            .iter()
            .zip(&ss)
            .map(|(p, s)| ProblemInput {
                problem: p,
                samples: s,
                scored: None,
            })
            .collect();
        let methods = [
            MethodId::Simple,
            MethodId::ModelAveraging,
            MethodId::BonOracle,
        ];
        let r = evaluate(&inputs, &methods, &mp(), None, &EvalOptions::default()).unwrap();
        for m in methods {
            let sum: f64 = r.per_problem.iter().map(|p| p.distances[&m]).sum();
            assert!((sum / 20.0 - r.per_method[&m].mean_distance).abs() < 1e-9);
            let s = &r.per_method[&m];
            assert!(s.ci_low <= s.mean_distance && s.mean_distance <= s.ci_high);
        }
        let bins = diversity_analysis(&r, 5).unwrap();
        assert_eq!(bins.iter().map(|b| b.n_problems).sum::<usize>(), 20);
    }

    #[test]
    fn oracle_on_unlabeled_split_is_an_error() {
        let mut p = problem("u", &[0.5, 0.5]);
        p.human_soft = None;
        let s = vec![soft_sample(0, &[0.5, 0.5])];
        let inputs = [ProblemInput {
            problem: &p,
            samples: &s,
            scored: None,
        }];
        assert!(matches!(
            evaluate(
                &inputs,
                &[MethodId::BonOracle],
                &mp(),
                None,
                &EvalOptions::default()
            ),
            Err(AnalysisError::Unlabeled(_))
        ));
        assert!(predict(&inputs, &[MethodId::BonOracle], &mp(), None).is_err());
        let preds = predict(&inputs, &[MethodId::Simple], &mp(), None).unwrap();
        assert_eq!(preds[&MethodId::Simple].len(), 1);
    }

    #[test]
    fn method_task_mismatch() {
        let p = problem("p", &[0.5, 0.5]);
        let s = vec![soft_sample(0, &[0.5, 0.5])];
        let inputs = [ProblemInput {
            problem: &p,
            samples: &s,
            scored: None,
        }];
        assert!(matches!(
            evaluate(
                &inputs,
                &[MethodId::MajorityVoting],
                &mp(),
                None,
                &EvalOptions::default()
            ),
            Err(AnalysisError::NotApplicable { .. })
        ));
    }

    #[test]
    fn budget_quartiles() {
        let samples: Vec<Sample> = (100..110)
            .map(|c| {
                let mut s = soft_sample(0, &[0.5, 0.5]);
                s.token_counts.completion = c;
                s.token_counts.reasoning = c;
                s
            })
            .collect();
        let b = budget_stats(&samples);
        let c = b.completion.unwrap();
        assert_eq!((c.median, c.q25, c.q75), (104.5, 102.25, 106.75));
        assert!(b.reasoning_approximate);
        let constant: Vec<Sample> = (0..5)
            .map(|_| {
                let mut s = soft_sample(0, &[0.5, 0.5]);
                s.token_counts.completion = 7;
                s
            })
            .collect();
        let q = budget_stats(&constant).completion.unwrap();
        assert_eq!((q.q25, q.median, q.q75), (7.0, 7.0, 7.0));
        assert!(budget_stats(&[]).reasoning.is_none());
    }

    #[test]
    fn entropy_relations() {
        let p = problem("p", &[0.5, 0.5]);
        let s = vec![soft_sample(0, &[0.9, 0.1]), soft_sample(1, &[0.2, 0.8])];
        let inputs = [ProblemInput {
            problem: &p,
            samples: &s,
            scored: None,
        }];
        let r = &entropy_comparison(&inputs, &mp()).unwrap()[0];
        assert!(r.averaged_entropy >= r.mean_sample_entropy);
        assert!(r.smoothed_entropy >= r.simple_entropy);
        let same = vec![soft_sample(0, &[0.9, 0.1]), soft_sample(1, &[0.9, 0.1])];
        let inputs = [ProblemInput {
            problem: &p,
            samples: &same,
            scored: None,
        }];
        let r = &entropy_comparison(&inputs, &mp()).unwrap()[0];
        assert!((r.averaged_entropy - r.simple_entropy).abs() < 1e-12);
    }
}

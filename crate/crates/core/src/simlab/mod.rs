//! Synthetic world with known ground truth: problem generator, simulated
//! sampler and simulated judge, plus a loopback server that speaks the
//! chat-completions protocol.

mod server;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use server::{FaultPlan, SimServer, JUDGE_MODEL, SAMPLER_MODEL};

use crate::descriptor::{DatasetDescriptor, PerspMetric, SoftMetric, Splits};
use crate::inference::{format_label, parse_sample};
use crate::metrics::soft_distance;
use crate::types::{
    LabelError, LabelSpace, Problem, RatingLabel, Reduction, Sample, ScoredSample, SoftLabel,
    SoftPrediction, SpaceKind, StepRating, Task, TokenCounts,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("no simulation marker found: {0}")]
    Marker(String),
    #[error(transparent)]
    Label(#[from] LabelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub n_problems: usize,
    pub label_space: LabelSpace,
    /// Per-problem noise scale is drawn log-uniformly from this range
    /// (uniformly when the lower end is 0).
    pub noise_scale_range: (f64, f64),
    pub judge_accuracy: f64,
    /// Samples per problem.
    pub n_samples: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            n_problems: 500,
            label_space: LabelSpace::likert(1, 6),
            noise_scale_range: (0.02, 0.3),
            judge_accuracy: 0.8,
            n_samples: 10,
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<(), SimError> {
        let (lo, hi) = self.noise_scale_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(SimError::Config(format!("bad noise range ({lo}, {hi})")));
        }
        if !(0.0..=1.0).contains(&self.judge_accuracy) {
            return Err(SimError::Config("judge accuracy must lie in [0, 1]".into()));
        }
        if self.label_space.kind() == SpaceKind::MultiCategory {
            return Err(SimError::Config(
                "multi-category spaces are not simulated".into(),
            ));
        }
        if self.n_samples == 0 || self.n_samples > 1 << 15 {
            return Err(SimError::Config("n_samples must be in 1..=32768".into()));
        }
        if self.n_problems > 9999 {
            return Err(SimError::Config("at most 9999 problems".into()));
        }
        Ok(())
    }
}

const TAG_PROBLEM: u64 = 1;
const TAG_SAMPLE: u64 = 2;
const TAG_QUALITY: u64 = 3;
const TAG_JUDGE: u64 = 4;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    let seed = parts.iter().fold(0u64, |h, &p| splitmix(h ^ p));
    ChaCha8Rng::seed_from_u64(seed)
}

/// One simulated generation before it is rendered as text.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDraw {
    pub prediction: SoftLabel,
    /// Hidden per-step quality: `true` is a good step.
    pub quality: Vec<bool>,
}

/// Location of one step, as carried by the marker in its text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepMarker {
    pub problem: usize,
    pub batch: u64,
    pub index: usize,
    pub step: usize,
}

impl StepMarker {
    fn render(&self) -> String {
        format!(
            "[sim:p={}:b={:x}:i={}:s={}]",
            self.problem, self.batch, self.index, self.step
        )
    }

    /// The last marker in `text`.
    pub fn find_last(text: &str) -> Option<Self> {
        let start = text.rfind("[sim:")?;
        let body = &text[start + 5..];
        let body = &body[..body.find(']')?];
        let mut fields = body.split(':');
        let mut next = |key: &str| fields.next()?.strip_prefix(key).map(str::to_string);
        Some(Self {
            problem: next("p=")?.parse().ok()?,
            batch: u64::from_str_radix(&next("b=")?, 16).ok()?,
            index: next("i=")?.parse().ok()?,
            step: next("s=")?.parse().ok()?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    cfg: SimConfig,
    descriptor: DatasetDescriptor,
    problems: Vec<Problem>,
    sigmas: Vec<f64>,
    truths: Vec<SoftLabel>,
}

pub fn problem_id(index: usize) -> String {
    format!("sim-{index:04}")
}

/// Descriptor used for simulated data.
pub fn sim_descriptor(space: &LabelSpace) -> DatasetDescriptor {
    let ordered = space.kind() == SpaceKind::OrderedScale;
    DatasetDescriptor {
        name: "SIM".into(),
        label_space: space.clone(),
        task: Task::SoftLabel,
        soft_metric: if ordered {
            SoftMetric::Wasserstein
        } else {
            SoftMetric::Manhattan
        },
        persp_metric: if ordered {
            PerspMetric::AbsDistance
        } else {
            PerspMetric::ErrorRate
        },
        annotator_ids: Vec::new(),
        splits: Splits::default(),
        input_fields: vec!["text".into()],
        task_description: "Synthetic annotation task. Predict how annotators labelled the item."
            .into(),
        definition: None,
    }
}

/// Problems of the world described by `cfg`.
pub fn gen_problems(cfg: &SimConfig) -> Result<Vec<Problem>, SimError> {
    Ok(SimWorld::new(cfg.clone())?.problems)
}

impl SimWorld {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.check()?;
        let space = &cfg.label_space;
        let positions = space.positions();
        let (lo, hi) = (positions[0], positions[positions.len() - 1]);
        let mut problems = Vec::with_capacity(cfg.n_problems);
        let mut sigmas = Vec::with_capacity(cfg.n_problems);
        let mut truths = Vec::with_capacity(cfg.n_problems);
        for i in 0..cfg.n_problems {
            let mut rng = rng_for(&[cfg.seed, TAG_PROBLEM, i as u64]);
            let center = rng.random_range(lo..=hi);
            let width = rng.random_range(0.3..1.5) * (hi - lo).max(1.0) / 5.0;
            let bump = SoftLabel::normalized(
                positions
                    .iter()
                    .map(|x| (-(x - center).powi(2) / (2.0 * width * width)).exp())
                    .collect(),
            )?;
            let floor = 1.0 / positions.len() as f64;
            let truth = SoftLabel::normalized(
                bump.weights()
                    .iter()
                    .map(|w| 0.5 * w + 0.5 * floor)
                    .collect(),
            )?;
            let (s_lo, s_hi) = cfg.noise_scale_range;
            let sigma = if s_hi > s_lo && s_lo > 0.0 {
                (rng.random_range(s_lo.ln()..s_hi.ln())).exp()
            } else if s_hi > s_lo {
                rng.random_range(s_lo..s_hi)
            } else {
                s_lo
            };
            let id = problem_id(i);
            problems.push(Problem {
                id: id.clone(),
                dataset: "SIM".into(),
                payload: [
                    ("text".to_string(), format!("Synthetic item {id}.")),
                    ("sigma".to_string(), format!("{sigma:?}")),
                ]
                .into_iter()
                .collect(),
                annotators: Vec::new(),
                human_soft: Some(SoftPrediction::single(truth.clone())),
                human_persp: None,
            });
            sigmas.push(sigma);
            truths.push(truth);
        }
        Ok(Self {
            descriptor: sim_descriptor(space),
            cfg,
            problems,
            sigmas,
            truths,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn descriptor(&self) -> &DatasetDescriptor {
        &self.descriptor
    }

    pub fn problems(&self) -> &[Problem] {
        &self.problems
    }

    /// Injected noise scale of each problem, in problem order.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Index of the first simulated problem id mentioned in `text`.
    pub fn problem_in(&self, text: &str) -> Option<usize> {
        let mut rest = text;
        while let Some(pos) = rest.find("sim-") {
            let digits: String = rest[pos + 4..]
                .chars()
                .take_while(char::is_ascii_digit)
                .collect();
            if let Ok(i) = digits.parse::<usize>() {
                if digits.len() >= 4 && i < self.problems.len() {
                    return Some(i);
                }
            }
            rest = &rest[pos + 4..];
        }
        None
    }

    fn noisy(&self, problem: usize, batch: u64, index: usize) -> (SoftLabel, usize) {
        let mut rng = rng_for(&[
            self.cfg.seed,
            TAG_SAMPLE,
            problem as u64,
            batch,
            index as u64,
        ]);
        let sigma = self.sigmas[problem];
        let truth = &self.truths[problem];
        let raw: Vec<f64> = truth
            .weights()
            .iter()
            .map(|&t| {
                let z: f64 = rng.sample(StandardNormal);
                (t + sigma * z).max(0.0)
            })
            .collect();
        let steps = rng.random_range(3..=6);
        let label = SoftLabel::new(raw.clone())
            .or_else(|_| SoftLabel::normalized(raw))
            .unwrap_or_else(|_| truth.clone());
        (label, steps)
    }

    /// The first `n` draws of a batch. Quality bits depend on each draw's
    /// rank among its siblings: the draw closest to the truth has only good
    /// steps; a draw of rank `r > 0` has each step good with probability
    /// `1 - r/n` and at least one bad step.
    pub fn batch(&self, problem: usize, batch: u64, n: usize) -> Vec<SimDraw> {
        let truth = SoftPrediction::single(self.truths[problem].clone());
        let space = &self.cfg.label_space;
        let draws: Vec<(SoftLabel, usize)> =
            (0..n).map(|j| self.noisy(problem, batch, j)).collect();
        let dist: Vec<f64> = draws
            .iter()
            .map(|(p, _)| {
                soft_distance(
                    self.descriptor.soft_metric,
                    &SoftPrediction::single(p.clone()),
                    &truth,
                    space,
                )
                .expect("same space")
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        let mut rank = vec![0; n];
        for (r, &j) in order.iter().enumerate() {
            rank[j] = r;
        }
        draws
            .into_iter()
            .enumerate()
            .map(|(j, (prediction, steps))| {
                let mut rng =
                    rng_for(&[self.cfg.seed, TAG_QUALITY, problem as u64, batch, j as u64]);
                let quality = if rank[j] == 0 {
                    vec![true; steps]
                } else {
                    let p_good = 1.0 - rank[j] as f64 / n as f64;
                    let mut q: Vec<bool> = (0..steps).map(|_| rng.random_bool(p_good)).collect();
                    if q.iter().all(|&g| g) {
                        let k = rng.random_range(0..steps);
                        q[k] = false;
                    }
                    q
                };
                SimDraw {
                    prediction,
                    quality,
                }
            })
            .collect()
    }

    fn batch_size(&self, index: usize) -> usize {
        self.cfg.n_samples.max(index + 1)
    }

    /// Answer and reasoning text of sample `index` of a batch.
    pub fn answer_text(&self, problem: usize, batch: u64, index: usize) -> (String, String) {
        let draw = self
            .batch(problem, batch, self.batch_size(index))
            .swap_remove(index);
        let id = problem_id(problem);
        let steps: Vec<String> = (0..draw.quality.len())
            .map(|step| {
                let marker = StepMarker {
                    problem,
                    batch,
                    index,
                    step,
                };
                format!("Weighing cue {} of {id}. {}", step + 1, marker.render())
            })
            .collect();
        let mut prediction = serde_json::Map::new();
        for (pos, w) in self
            .cfg
            .label_space
            .positions()
            .iter()
            .zip(draw.prediction.weights())
        {
            prediction.insert(format_label(*pos), json!(w));
        }
        let content = json!({"steps": steps, "prediction": Value::Object(prediction)}).to_string();
        let mut reasoning = String::new();
        for step in 0..draw.quality.len() {
            let _ = write!(
                reasoning,
                "Looking at {id} from another angle, consideration {}. ",
                step + 1
            );
        }
        (content, reasoning.trim_end().to_string())
    }

    /// `n` samples for `problem`, produced through the same text path as
    /// the loopback server.
    pub fn sim_sampler(&self, problem: &Problem, n: usize, seed: u64) -> Vec<Sample> {
        let Some(p) = self.problem_in(&problem.id) else {
            return (0..n)
                .map(|i| Sample::non_compliant(&problem.id, i, String::new()))
                .collect();
        };
        (0..n)
            .map(|index| {
                let (content, reasoning) = self.answer_text(p, seed, index);
                let mut s = parse_sample(&problem.id, index, &content, &[], &self.descriptor);
                s.token_counts = TokenCounts {
                    prompt: 0,
                    completion: crate::inference::approx_tokens(&content)
                        + crate::inference::approx_tokens(&reasoning),
                    reasoning: crate::inference::approx_tokens(&reasoning),
                    approximate: true,
                };
                s.raw_reasoning = reasoning;
                s
            })
            .collect()
    }

    /// Hidden quality of the step identified by `marker`.
    pub fn step_quality(&self, marker: &StepMarker) -> Result<bool, SimError> {
        if marker.problem >= self.problems.len() {
            return Err(SimError::Marker(format!(
                "unknown problem {}",
                marker.problem
            )));
        }
        let draw = self
            .batch(marker.problem, marker.batch, self.batch_size(marker.index))
            .swap_remove(marker.index);
        draw.quality
            .get(marker.step)
            .copied()
            .ok_or_else(|| SimError::Marker(format!("step {} out of range", marker.step)))
    }

    /// Simulated rating of one step: correct with probability `accuracy`,
    /// flipped otherwise.
    pub fn rate_step(
        &self,
        marker: &StepMarker,
        accuracy: f64,
        seed: u64,
    ) -> Result<RatingLabel, SimError> {
        let good = self.step_quality(marker)?;
        let mut rng = rng_for(&[
            seed,
            TAG_JUDGE,
            marker.problem as u64,
            marker.batch,
            marker.index as u64,
            marker.step as u64,
        ]);
        let correct = rng.random::<f64>() < accuracy;
        Ok(if good == correct {
            RatingLabel::Good
        } else {
            RatingLabel::Bad
        })
    }

    /// Judge reply text for a judge prompt, rating the last marked step.
    pub fn judge_reply(&self, prompt: &str, accuracy: f64, seed: u64) -> Result<String, SimError> {
        let marker = StepMarker::find_last(prompt)
            .ok_or_else(|| SimError::Marker("judge prompt carries no step marker".into()))?;
        let word = match self.rate_step(&marker, accuracy, seed)? {
            RatingLabel::Good => "great",
            RatingLabel::Okay => "okay",
            RatingLabel::Bad => "bad",
        };
        Ok(format!(
            "I checked the step against the item. Verdict: {word}"
        ))
    }

    /// In-process judge over all steps of `sample` with mean reduction.
    pub fn sim_judge(
        &self,
        sample: &Sample,
        accuracy: f64,
        seed: u64,
    ) -> Result<ScoredSample, SimError> {
        let mut ratings = Vec::with_capacity(sample.steps.len());
        for step in &sample.steps {
            let marker = StepMarker::find_last(step)
                .ok_or_else(|| SimError::Marker(format!("step `{step}` has no marker")))?;
            ratings.push(StepRating::new(self.rate_step(&marker, accuracy, seed)?));
        }
        Ok(ScoredSample::new(sample.clone(), ratings, Reduction::Mean)?)
    }

    /// The world as a canonical dataset file body.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (p, truth) in self.problems.iter().zip(&self.truths) {
            let line = json!({
                "id": p.id,
                "payload": p.payload,
                "soft_label": truth.weights(),
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

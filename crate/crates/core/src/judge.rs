//! Step-level scoring with an LLM judge.

use std::collections::BTreeMap;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::DatasetDescriptor;
use crate::inference::{
    render_template, ChatClient, EndpointConfig, InferenceError, SamplingParams, Templates,
};
use crate::types::{LabelError, Problem, RatingLabel, Reduction, Sample, ScoredSample, StepRating};

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("step index {index} out of range for {count} step(s)")]
    StepOutOfRange { index: usize, count: usize },
    #[error("sample {index} of problem `{problem}` is not compliant")]
    NonCompliant { problem: String, index: usize },
    #[error("sample {index} of problem `{problem}` has no steps")]
    NoSteps { problem: String, index: usize },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Label(#[from] LabelError),
}

pub fn default_vocabulary() -> BTreeMap<String, RatingLabel> {
    BTreeMap::from([
        ("great".to_string(), RatingLabel::Good),
        ("good".to_string(), RatingLabel::Good),
        ("okay".to_string(), RatingLabel::Okay),
        ("bad".to_string(), RatingLabel::Bad),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub endpoint: EndpointConfig,
    #[serde(default)]
    pub reduction: Reduction,
    /// Lower-case words mapped to ratings.
    #[serde(default = "default_vocabulary")]
    pub rating_vocabulary: BTreeMap<String, RatingLabel>,
    #[serde(default = "judge_params")]
    pub params: SamplingParams,
}

/// Decoding parameters for judge calls: greedy-ish, one completion each.
pub fn judge_params() -> SamplingParams {
    SamplingParams {
        top_k: None,
        top_p: 1.0,
        temperature: 0.0,
        presence_penalty: 0.0,
        max_tokens: 2048,
        n: 1,
    }
}

impl JudgeConfig {
    pub fn new(endpoint: EndpointConfig) -> Self {
        Self {
            endpoint,
            reduction: Reduction::Mean,
            rating_vocabulary: default_vocabulary(),
            params: judge_params(),
        }
    }
}

/// Prompt asking for a rating of `all_steps[step_index]`. The judge sees the
/// item and the steps, never the gold labels.
pub fn build_judge_prompt(
    problem: &Problem,
    descriptor: &DatasetDescriptor,
    step_index: usize,
    all_steps: &[String],
    templates: &Templates,
) -> Result<String, JudgeError> {
    let target = all_steps
        .get(step_index)
        .ok_or(JudgeError::StepOutOfRange {
            index: step_index,
            count: all_steps.len(),
        })?;
    let steps = all_steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("Step {}: {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let values = BTreeMap::from([
        ("task_description", descriptor.task_description.clone()),
        (
            "input",
            crate::inference::render_input(problem, descriptor)?,
        ),
        ("steps", steps),
        ("step_number", (step_index + 1).to_string()),
        ("step_count", all_steps.len().to_string()),
        ("target_step", target.clone()),
    ]);
    Ok(render_template(&templates.judge, &values)?)
}

/// Last vocabulary word in `raw`, matched case-insensitively on word
/// boundaries. Without a match the rating is okay and flagged.
pub fn parse_rating(raw: &str, vocab: &BTreeMap<String, RatingLabel>) -> StepRating {
    let lower = raw.to_lowercase();
    lower
        .split(|c: char| !c.is_alphanumeric())
        .rev()
        .find_map(|word| vocab.get(word))
        .map(|&label| StepRating::new(label))
        .unwrap_or(StepRating {
            label: RatingLabel::Okay,
            flagged: true,
        })
}

/// Leading alphabetic run of the model name after any organisation prefix,
/// e.g. `qwen` for `Qwen/Qwen3-8B`.
pub fn model_family(model_name: &str) -> String {
    let base = model_name.rsplit('/').next().unwrap_or(model_name);
    base.chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_lowercase()
}

/// Logs a warning when sampler and judge look like the same model family.
pub fn warn_if_same_family(sampler_model: &str, judge_model: &str) -> bool {
    let a = model_family(sampler_model);
    let same = !a.is_empty() && a == model_family(judge_model);
    if same {
        tracing::warn!(
            sampler = sampler_model,
            judge = judge_model,
            "judge and sampler appear to share a model family"
        );
    }
    same
}

/// Rates every step of `sample`, one request per step.
pub async fn score_sample(
    client: &ChatClient,
    problem: &Problem,
    descriptor: &DatasetDescriptor,
    sample: &Sample,
    cfg: &JudgeConfig,
    templates: &Templates,
) -> Result<ScoredSample, JudgeError> {
    if !sample.is_compliant() {
        return Err(JudgeError::NonCompliant {
            problem: sample.problem_id.clone(),
            index: sample.index,
        });
    }
    if sample.steps.is_empty() {
        return Err(JudgeError::NoSteps {
            problem: sample.problem_id.clone(),
            index: sample.index,
        });
    }
    let prompts = (0..sample.steps.len())
        .map(|i| build_judge_prompt(problem, descriptor, i, &sample.steps, templates))
        .collect::<Result<Vec<_>, _>>()?;
    let calls = prompts
        .iter()
        .map(|prompt| client.complete(prompt, &cfg.params, None));
    let mut ratings = Vec::with_capacity(prompts.len());
    for outcome in join_all(calls).await {
        let response = outcome?;
        ratings.push(parse_rating(&response.content, &cfg.rating_vocabulary));
    }
    Ok(ScoredSample::new(sample.clone(), ratings, cfg.reduction)?)
}

/// Scores the compliant samples of one problem concurrently. Entries for
/// non-compliant samples are `None`; order follows `samples`.
pub async fn score_samples(
    client: &ChatClient,
    problem: &Problem,
    descriptor: &DatasetDescriptor,
    samples: &[Sample],
    cfg: &JudgeConfig,
    templates: &Templates,
) -> Vec<Option<Result<ScoredSample, JudgeError>>> {
    let jobs = samples.iter().map(|s| async move {
        if s.is_compliant() && !s.steps.is_empty() {
            Some(score_sample(client, problem, descriptor, s, cfg, templates).await)
        } else {
            None
        }
    });
    join_all(jobs).await
}

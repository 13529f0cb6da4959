//! Prompt construction, N-sample generation against an OpenAI-compatible
//! chat endpoint, structured-output parsing and compliance accounting.

mod client;
mod parse;
mod prompt;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{ChatClient, ChatResponse, Usage};
pub use parse::{extract_json_object, parse_answer, parse_sample, ParsedAnswer};
pub(crate) use prompt::render_input;
pub use prompt::{build_prompt, format_label, render_template, Templates};

use crate::descriptor::DatasetDescriptor;
use crate::types::{Problem, Sample, TokenCounts};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("problem `{problem}` has no payload field `{field}`")]
    MissingField { problem: String, field: String },
    #[error("dataset {0} has no definition section")]
    DefinitionUnavailable(String),
    #[error("template references unknown placeholder `{0}`")]
    UnknownPlaceholder(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("api key variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("request failed after {attempts} attempt(s): {message}")]
    Request { attempts: u32, message: String },
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("no samples to rate")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decoding parameters sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    /// Not part of the OpenAI schema; vLLM-style servers accept it. Set to
    /// `null` for endpoints that reject unknown fields.
    pub top_k: Option<u32>,
    pub top_p: f64,
    pub temperature: f64,
    pub presence_penalty: f64,
    pub max_tokens: u32,
    pub n: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            top_k: Some(20),
            top_p: 0.8,
            temperature: 0.7,
            presence_penalty: 1.5,
            max_tokens: 8192,
            n: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub include_definition: bool,
    pub include_perspectives: bool,
    pub template_id: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            include_definition: false,
            include_perspectives: true,
            template_id: prompt::BUILTIN_TEMPLATE_ID.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the API key; empty for keyless servers.
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_retries")]
    pub retry_limit: u32,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: u64,
    /// First retry delay; doubles per attempt.
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
}

fn default_parallel() -> usize {
    8
}
fn default_retries() -> u32 {
    3
}
fn default_timeout() -> u64 {
    600
}
fn default_backoff() -> u64 {
    250
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: String::new(),
            max_parallel: default_parallel(),
            retry_limit: default_retries(),
            timeout_seconds: default_timeout(),
            retry_backoff_ms: default_backoff(),
        }
    }

    pub fn check(&self) -> Result<(), InferenceError> {
        if self.max_parallel == 0 {
            return Err(InferenceError::Config(
                "max_parallel must be at least 1".into(),
            ));
        }
        if self.base_url.is_empty() || self.model_name.is_empty() {
            return Err(InferenceError::Config(
                "base_url and model_name are required".into(),
            ));
        }
        Ok(())
    }
}

/// Per-request seed: the run seed in the high bits, the sample index in
/// the low 16.
pub fn request_seed(base_seed: u64, index: usize) -> u64 {
    debug_assert!(index < 1 << 16);
    (base_seed << 16) | (index as u64 & 0xFFFF)
}

/// Inverse of [`request_seed`] (modulo the high bits shifted out).
pub fn split_request_seed(seed: u64) -> (u64, usize) {
    (seed >> 16, (seed & 0xFFFF) as usize)
}

/// Whitespace token estimate.
pub fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Samples for one problem, in index order. Requests that failed after all
/// retries appear as non-compliant placeholders and are listed in `failed`.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub samples: Vec<Sample>,
    pub failed: Vec<(usize, String)>,
}

/// Builds a sample from an endpoint response.
pub fn sample_from_response(
    problem: &Problem,
    index: usize,
    prompt: &str,
    response: &ChatResponse,
    descriptor: &DatasetDescriptor,
) -> Sample {
    let mut sample = parse_sample(
        &problem.id,
        index,
        &response.content,
        &problem.annotators,
        descriptor,
    );
    sample.raw_reasoning = response.reasoning.clone();
    sample.token_counts = match &response.usage {
        Some(usage) => {
            let (reasoning, approximate) = match usage.reasoning_tokens {
                Some(r) => (r, false),
                None => (approx_tokens(&response.reasoning), true),
            };
            TokenCounts {
                prompt: usage.prompt_tokens,
                completion: usage.completion_tokens,
                reasoning,
                approximate,
            }
        }
        None => TokenCounts {
            prompt: approx_tokens(prompt),
            completion: approx_tokens(&response.content) + approx_tokens(&response.reasoning),
            reasoning: approx_tokens(&response.reasoning),
            approximate: true,
        },
    };
    sample
}

/// Requests the given sample indices for `problem`.
#[allow(clippy::too_many_arguments)]
pub async fn sample_indices(
    client: &ChatClient,
    problem: &Problem,
    descriptor: &DatasetDescriptor,
    prompt_cfg: &PromptConfig,
    templates: &Templates,
    params: &SamplingParams,
    base_seed: u64,
    indices: &[usize],
) -> Result<SampleBatch, InferenceError> {
    let prompt = build_prompt(problem, descriptor, prompt_cfg, templates)?;
    let requests = indices.iter().map(|&index| {
        let prompt = prompt.as_str();
        async move {
            let outcome = client
                .complete(prompt, params, Some(request_seed(base_seed, index)))
                .await;
            (index, outcome)
        }
    });
    let mut samples = Vec::with_capacity(indices.len());
    let mut failed = Vec::new();
    for (index, outcome) in join_all(requests).await {
        match outcome {
            Ok(response) => samples.push(sample_from_response(
                problem, index, &prompt, &response, descriptor,
            )),
            Err(err) => {
                tracing::warn!(problem = %problem.id, index, error = %err, "sample request failed");
                samples.push(Sample::non_compliant(&problem.id, index, String::new()));
                failed.push((index, err.to_string()));
            }
        }
    }
    samples.sort_by_key(|s| s.index);
    Ok(SampleBatch { samples, failed })
}

/// Requests `params.n` samples with indices `0..n`.
pub async fn sample_n(
    client: &ChatClient,
    problem: &Problem,
    descriptor: &DatasetDescriptor,
    prompt_cfg: &PromptConfig,
    templates: &Templates,
    params: &SamplingParams,
    base_seed: u64,
) -> Result<SampleBatch, InferenceError> {
    let indices: Vec<usize> = (0..params.n).collect();
    sample_indices(
        client, problem, descriptor, prompt_cfg, templates, params, base_seed, &indices,
    )
    .await
}

/// Fraction of samples whose output parsed (renormalized counts as
/// compliant). `None` for an empty input.
pub fn compliance_rate(samples: &[Sample]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let ok = samples.iter().filter(|s| s.is_compliant()).count();
    Some(ok as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Compliance;

    #[test]
    fn sampling_defaults() {
        let p = SamplingParams::default();
        assert_eq!(p.top_k, Some(20));
        assert_eq!(p.top_p, 0.8);
        assert_eq!(p.temperature, 0.7);
        assert_eq!(p.presence_penalty, 1.5);
        assert_eq!(p.n, 10);
    }

    #[test]
    fn request_seed_round_trip() {
        for (base, index) in [(0, 0), (7, 9), (123_456, 65_535)] {
            assert_eq!(split_request_seed(request_seed(base, index)), (base, index));
        }
    }

    #[test]
    fn compliance_rate_examples() {
        let ok = |i| {
            let mut s = Sample::non_compliant("p", i, String::new());
            s.compliance = Compliance::Compliant;
            s
        };
        let all: Vec<_> = (0..10).map(ok).collect();
        assert_eq!(compliance_rate(&all), Some(1.0));
        let mut mixed: Vec<_> = (0..862).map(ok).collect();
        mixed.extend((862..1000).map(|i| Sample::non_compliant("p", i, String::new())));
        assert_eq!(compliance_rate(&mixed), Some(0.862));
        let none: Vec<_> = (0..5)
            .map(|i| Sample::non_compliant("p", i, String::new()))
            .collect();
        assert_eq!(compliance_rate(&none), Some(0.0));
        assert_eq!(compliance_rate(&[]), None);
    }

    #[test]
    fn endpoint_validation() {
        let mut e = EndpointConfig::new("http://localhost:8000", "m");
        assert!(e.check().is_ok());
        e.max_parallel = 0;
        assert!(e.check().is_err());
    }
}

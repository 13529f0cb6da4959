//! Batch commands over a [`RunManifest`]: sampling, judging, evaluation,
//! analysis and the offline simulation run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    budget_stats, diversity_analysis, emit_report, entropy_comparison, evaluate, format_sig,
    predict, AnalysisError, EvalOptions, EvaluationReport, ProblemInput, ReportExtras,
};
use crate::data::{
    load_dataset, params_digest, Cache, CacheKey, CachePayload, DataError, PayloadKind,
};
use crate::descriptor::DatasetDescriptor;
use crate::inference::{
    build_prompt, sample_indices, ChatClient, EndpointConfig, InferenceError, PromptConfig,
    SamplingParams, Templates,
};
use crate::judge::{score_sample, warn_if_same_family, JudgeConfig, JudgeError};
use crate::metrics::{bootstrap_ci, mean, spearman, task_distance, MetricError};
use crate::scaling::{bon_select, most_frequent_persp, most_frequent_soft, MethodId};
use crate::simlab::{FaultPlan, SimConfig, SimError, SimServer, SimWorld};
use crate::types::{Prediction, Problem, Reduction, Sample, ScoredSample, Task};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("missing cache entries ({} total), first: {}", .0.len(), .0.iter().take(5).cloned().collect::<Vec<_>>().join(", "))]
    MissingCache(Vec<String>),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RunError {
    /// Process exit code: 3 for configuration and precondition problems.
    pub fn exit_code(&self) -> i32 {
        3
    }
}

/// Either a path to a JSON file or the value itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Inline(T),
    Path(PathBuf),
}

impl<T: serde::de::DeserializeOwned + Clone> Source<T> {
    pub fn resolve(&self) -> Result<T, RunError> {
        match self {
            Source::Inline(v) => Ok(v.clone()),
            Source::Path(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| RunError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| RunError::Config(format!("{}: {e}", p.display())))
            }
        }
    }
}

/// A built-in dataset name, a descriptor file, or an inline descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DescriptorRef {
    Inline(Box<DatasetDescriptor>),
    Name(String),
}

impl DescriptorRef {
    pub fn resolve(&self, task: Task) -> Result<DatasetDescriptor, RunError> {
        let d = match self {
            DescriptorRef::Inline(d) => (**d).clone(),
            DescriptorRef::Name(name) => match DatasetDescriptor::builtin(name, task) {
                Some(d) => d,
                None => Source::<DatasetDescriptor>::Path(PathBuf::from(name)).resolve()?,
            },
        };
        let d = d.with_task(task);
        d.check().map_err(|e| RunError::Config(e.to_string()))?;
        Ok(d)
    }
}

fn yes() -> bool {
    true
}

/// Everything that determines a run. Written as `manifest.json` into the
/// output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: PathBuf,
    /// Labeled data for the most-frequent baseline; defaults to the labeled
    /// problems of `dataset`.
    #[serde(default)]
    pub train_dataset: Option<PathBuf>,
    pub descriptor: DescriptorRef,
    #[serde(default = "default_task")]
    pub task: Task,
    pub endpoint: Source<EndpointConfig>,
    #[serde(default)]
    pub judge_endpoint: Option<Source<EndpointConfig>>,
    #[serde(default)]
    pub judge_reduction: Reduction,
    #[serde(default)]
    pub params: SamplingParams,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    pub methods: Vec<MethodId>,
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub resume: bool,
    /// Write predictions only, without scoring.
    #[serde(default)]
    pub submission: bool,
    /// Cache file; defaults to `<out>/cache.jsonl`.
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

fn default_task() -> Task {
    Task::SoftLabel
}

impl RunManifest {
    pub fn cache_path(&self) -> PathBuf {
        self.cache
            .clone()
            .unwrap_or_else(|| self.out.join("cache.jsonl"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        Source::<RunManifest>::Path(path.to_path_buf()).resolve()
    }

    fn write(&self) -> Result<(), RunError> {
        std::fs::create_dir_all(&self.out)?;
        std::fs::write(
            self.out.join("manifest.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }

    fn check(&self) -> Result<(), RunError> {
        if self.params.n == 0 || self.params.n > 1 << 16 {
            return Err(RunError::Config("n must be in 1..=65536".into()));
        }
        if self.seed >= 1 << 48 {
            return Err(RunError::Config("seed must be below 2^48".into()));
        }
        if self.methods.is_empty() {
            return Err(RunError::Config("no methods requested".into()));
        }
        Ok(())
    }
}

/// Counts reported by `cmd_sample` and `cmd_judge`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandSummary {
    pub requested: usize,
    pub reused: usize,
    pub written: usize,
    pub failures: Vec<String>,
}

impl CommandSummary {
    /// 0 on success, 2 when some requests failed.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

struct RunContext {
    descriptor: DatasetDescriptor,
    problems: Vec<Problem>,
    templates: Templates,
}

impl RunContext {
    fn load(m: &RunManifest) -> Result<Self, RunError> {
        m.check()?;
        let descriptor = m.descriptor.resolve(m.task)?;
        let problems = load_dataset(&m.dataset, &descriptor)?;
        let templates = match &m.templates_dir {
            Some(dir) => Templates::load_dir(dir)?,
            None => Templates::builtin(),
        };
        Ok(Self {
            descriptor,
            problems,
            templates,
        })
    }

    fn prompt(&self, m: &RunManifest, p: &Problem) -> Result<String, RunError> {
        Ok(build_prompt(
            p,
            &self.descriptor,
            &m.prompt,
            &self.templates,
        )?)
    }
}

fn sample_key(m: &RunManifest, model: &str, problem: &str, digest: &str, index: usize) -> CacheKey {
    CacheKey {
        kind: PayloadKind::Sample,
        problem_id: problem.to_string(),
        model_name: model.to_string(),
        params_digest: digest.to_string(),
        template_id: m.prompt.template_id.clone(),
        index,
    }
}

fn judge_config(m: &RunManifest) -> Result<JudgeConfig, RunError> {
    let endpoint = m
        .judge_endpoint
        .as_ref()
        .ok_or_else(|| RunError::Config("no judge endpoint configured".into()))?
        .resolve()?;
    let mut cfg = JudgeConfig::new(endpoint);
    cfg.reduction = m.judge_reduction;
    Ok(cfg)
}

fn judge_key(
    m: &RunManifest,
    cfg: &JudgeConfig,
    templates: &Templates,
    sample_key: &CacheKey,
) -> CacheKey {
    let digest = params_digest(
        &(
            &cfg.params,
            cfg.reduction,
            &cfg.rating_vocabulary,
            &sample_key.model_name,
            &sample_key.params_digest,
        ),
        &templates.judge,
    );
    CacheKey {
        kind: PayloadKind::Scored,
        problem_id: sample_key.problem_id.clone(),
        model_name: cfg.endpoint.model_name.clone(),
        params_digest: digest,
        template_id: m.prompt.template_id.clone(),
        index: sample_key.index,
    }
}

fn open_cache(m: &RunManifest) -> Result<Cache, RunError> {
    let path = m.cache_path();
    if !m.resume && path.exists() {
        let backup = path.with_extension("jsonl.prev");
        tracing::info!(from = %path.display(), to = %backup.display(), "starting a fresh cache");
        std::fs::rename(&path, backup)?;
    }
    Ok(Cache::open(&path)?)
}

/// Requests the samples not yet cached and stores them. Transport failures
/// are not cached, so a rerun retries them.
pub async fn cmd_sample(m: &RunManifest) -> Result<CommandSummary, RunError> {
    let ctx = RunContext::load(m)?;
    let endpoint = m.endpoint.resolve()?;
    let client = ChatClient::new(endpoint.clone())?;
    m.write()?;
    let mut cache = open_cache(m)?;
    let mut summary = CommandSummary::default();
    let mut jobs = Vec::new();
    for p in &ctx.problems {
        let prompt = ctx.prompt(m, p)?;
        let digest = params_digest(&m.params, &prompt);
        let missing: Vec<usize> = (0..m.params.n)
            .filter(|&i| !cache.contains(&sample_key(m, &endpoint.model_name, &p.id, &digest, i)))
            .collect();
        summary.requested += m.params.n;
        summary.reused += m.params.n - missing.len();
        if !missing.is_empty() {
            jobs.push((p, digest, missing));
        }
    }
    let descriptor = &ctx.descriptor;
    let templates = &ctx.templates;
    let client = &client;
    let mut results = stream::iter(jobs.into_iter().map(|(p, digest, missing)| async move {
        let batch = sample_indices(
            client, p, descriptor, &m.prompt, templates, &m.params, m.seed, &missing,
        )
        .await;
        (p, digest, batch)
    }))
    .buffered(endpoint.max_parallel.max(1));
    while let Some((p, digest, batch)) = results.next().await {
        let batch = batch?;
        let failed: BTreeMap<usize, String> = batch.failed.into_iter().collect();
        for s in batch.samples {
            if let Some(reason) = failed.get(&s.index) {
                summary
                    .failures
                    .push(format!("{}#{}: {reason}", p.id, s.index));
                continue;
            }
            let key = sample_key(m, &endpoint.model_name, &p.id, &digest, s.index);
            if cache.put(key, CachePayload::Sample(s))? {
                summary.written += 1;
            }
        }
    }
    cache.sync()?;
    Ok(summary)
}

type CachedSamples = Vec<(Vec<CacheKey>, Vec<Sample>)>;

/// Cached samples of every problem, in problem order. Missing keys are
/// collected into the error.
fn cached_samples(
    m: &RunManifest,
    ctx: &RunContext,
    cache: &Cache,
) -> Result<CachedSamples, RunError> {
    let model = m.endpoint.resolve()?.model_name;
    let mut out = Vec::with_capacity(ctx.problems.len());
    let mut missing = Vec::new();
    for p in &ctx.problems {
        let digest = params_digest(&m.params, &ctx.prompt(m, p)?);
        let mut keys = Vec::with_capacity(m.params.n);
        let mut samples = Vec::with_capacity(m.params.n);
        for i in 0..m.params.n {
            let key = sample_key(m, &model, &p.id, &digest, i);
            match cache.get_sample(&key) {
                Some(s) => samples.push(s.clone()),
                None => missing.push(key.to_string()),
            }
            keys.push(key);
        }
        out.push((keys, samples));
    }
    if !missing.is_empty() {
        return Err(RunError::MissingCache(missing));
    }
    Ok(out)
}

/// Scores every cached compliant sample that has no cached score yet.
pub async fn cmd_judge(m: &RunManifest) -> Result<CommandSummary, RunError> {
    let ctx = RunContext::load(m)?;
    let cfg = judge_config(m)?;
    let sampler_model = m.endpoint.resolve()?.model_name;
    warn_if_same_family(&sampler_model, &cfg.endpoint.model_name);
    let client = ChatClient::new(cfg.endpoint.clone())?;
    m.write()?;
    let mut cache = open_cache(m)?;
    let all = cached_samples(m, &ctx, &cache)?;
    let mut summary = CommandSummary::default();
    let mut jobs = Vec::new();
    for (p, (keys, samples)) in ctx.problems.iter().zip(all) {
        for (key, s) in keys.iter().zip(samples) {
            if !s.is_compliant() || s.steps.is_empty() {
                continue;
            }
            summary.requested += 1;
            let jkey = judge_key(m, &cfg, &ctx.templates, key);
            if cache.contains(&jkey) {
                summary.reused += 1;
            } else {
                jobs.push((p, s, jkey));
            }
        }
    }
    let descriptor = &ctx.descriptor;
    let templates = &ctx.templates;
    let (client, cfg) = (&client, &cfg);
    let mut results = stream::iter(jobs.into_iter().map(|(p, s, jkey)| async move {
        let scored = score_sample(client, p, descriptor, &s, cfg, templates).await;
        (jkey, scored)
    }))
    .buffered(cfg.endpoint.max_parallel.max(1));
    while let Some((jkey, scored)) = results.next().await {
        match scored {
            Ok(scored) => {
                if cache.put(jkey, CachePayload::Scored(scored))? {
                    summary.written += 1;
                }
            }
            Err(JudgeError::Inference(e)) => {
                summary
                    .failures
                    .push(format!("{}#{}: {e}", jkey.problem_id, jkey.index));
            }
            Err(e) => return Err(e.into()),
        }
    }
    cache.sync()?;
    Ok(summary)
}

struct RunData {
    ctx: RunContext,
    samples: Vec<Vec<Sample>>,
    scored: Vec<Option<Vec<ScoredSample>>>,
    baseline: Option<Prediction>,
}

impl RunData {
    fn inputs(&self) -> Vec<ProblemInput<'_>> {
        self.ctx
            .problems
            .iter()
            .zip(&self.samples)
            .zip(&self.scored)
            .map(|((problem, samples), scored)| ProblemInput {
                problem,
                samples,
                scored: scored.as_deref(),
            })
            .collect()
    }
}

fn baseline(m: &RunManifest, ctx: &RunContext) -> Result<Option<Prediction>, RunError> {
    let train: Vec<Problem> = match &m.train_dataset {
        Some(path) => load_dataset(path, &ctx.descriptor)?,
        None => ctx.problems.clone(),
    };
    let train: Vec<Problem> = train.into_iter().filter(Problem::is_labeled).collect();
    if train.is_empty() {
        return Ok(None);
    }
    Ok(Some(match ctx.descriptor.task {
        Task::SoftLabel => Prediction::SoftLabel(
            most_frequent_soft(&train, &ctx.descriptor.label_space).map_err(AnalysisError::from)?,
        ),
        Task::Perspectivist => {
            Prediction::Perspectivist(most_frequent_persp(&train).map_err(AnalysisError::from)?)
        }
    }))
}

fn load_run(m: &RunManifest) -> Result<RunData, RunError> {
    let ctx = RunContext::load(m)?;
    let cache = Cache::open(&m.cache_path())?;
    let all = cached_samples(m, &ctx, &cache)?;
    let wants_scores = m.methods.contains(&MethodId::BonSws);
    let judge = if wants_scores {
        Some(judge_config(m)?)
    } else {
        None
    };
    let mut samples = Vec::with_capacity(all.len());
    let mut scored = Vec::with_capacity(all.len());
    let mut missing = Vec::new();
    for (keys, ss) in all {
        if let Some(cfg) = &judge {
            let mut judged = Vec::new();
            for (key, s) in keys.iter().zip(&ss) {
                if !s.is_compliant() || s.steps.is_empty() {
                    continue;
                }
                let jkey = judge_key(m, cfg, &ctx.templates, key);
                match cache.get_scored(&jkey) {
                    Some(x) => judged.push(x.clone()),
                    None => missing.push(jkey.to_string()),
                }
            }
            scored.push(Some(judged));
        } else {
            scored.push(None);
        }
        samples.push(ss);
    }
    if !missing.is_empty() {
        return Err(RunError::MissingCache(missing));
    }
    let baseline = baseline(m, &ctx)?;
    Ok(RunData {
        ctx,
        samples,
        scored,
        baseline,
    })
}

/// What `cmd_evaluate` produced.
#[derive(Debug, Clone, PartialEq)]
pub enum EvaluateOutput {
    Report(Box<EvaluationReport>, Vec<PathBuf>),
    Predictions(Vec<PathBuf>),
}

fn write_predictions(m: &RunManifest, data: &RunData) -> Result<Vec<PathBuf>, RunError> {
    let preds = predict(
        &data.inputs(),
        &m.methods,
        &data.ctx.descriptor,
        data.baseline.as_ref(),
    )?;
    let dir = m.out.join("predictions");
    std::fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for (method, rows) in preds {
        let path = dir.join(format!("{}.{method}.jsonl", data.ctx.descriptor.task));
        let mut body = String::new();
        for (id, pred) in rows {
            let value = match pred {
                Prediction::SoftLabel(p) => serde_json::to_value(p)?,
                Prediction::Perspectivist(p) => serde_json::to_value(p)?,
            };
            body.push_str(&serde_json::json!({"id": id, "prediction": value}).to_string());
            body.push('\n');
        }
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

fn run_evaluation(
    m: &RunManifest,
    data: &RunData,
    with_extras: bool,
) -> Result<EvaluateOutput, RunError> {
    m.write()?;
    if m.submission {
        return Ok(EvaluateOutput::Predictions(write_predictions(m, data)?));
    }
    if let Some(p) = data.ctx.problems.iter().find(|p| p.truth(m.task).is_none()) {
        return Err(RunError::Precondition(
            if m.methods.contains(&MethodId::BonOracle) {
                format!(
                    "problem `{}` is unlabeled, so the oracle cannot be computed",
                    p.id
                )
            } else {
                format!("problem `{}` is unlabeled; use submission mode", p.id)
            },
        ));
    }
    let opts = EvalOptions {
        seed: m.seed,
        ..EvalOptions::default()
    };
    let inputs = data.inputs();
    let report = evaluate(
        &inputs,
        &m.methods,
        &data.ctx.descriptor,
        data.baseline.as_ref(),
        &opts,
    )?;
    let mut extras = ReportExtras::default();
    if with_extras {
        extras.budget = Some(budget_stats(&data.samples.concat()));
        if m.task == Task::SoftLabel {
            extras.entropy = Some(entropy_comparison(&inputs, &data.ctx.descriptor)?);
            match diversity_analysis(&report, 5) {
                Ok(bins) => extras.diversity_bins = Some(bins),
                Err(AnalysisError::TooFew { needed, got }) => {
                    tracing::warn!(needed, got, "too few problems for diversity bins");
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    let files = emit_report(&report, &extras, &m.report_dir())?;
    Ok(EvaluateOutput::Report(Box::new(report), files))
}

/// Scores the requested methods and writes the report tables.
pub fn cmd_evaluate(m: &RunManifest) -> Result<EvaluateOutput, RunError> {
    let data = load_run(m)?;
    run_evaluation(m, &data, false)
}

/// As [`cmd_evaluate`], plus diversity bins, entropy and budget series.
pub fn cmd_analyze(m: &RunManifest) -> Result<EvaluateOutput, RunError> {
    let data = load_run(m)?;
    run_evaluation(m, &data, true)
}

/// One simulation property check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub checks: Vec<Check>,
    pub report: EvaluationReport,
    pub report_dir: PathBuf,
    pub oracle_agreement: f64,
    pub accuracy_grid: Vec<GridPoint>,
}

/// Best-of-N with a simulated judge of one accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub accuracy: f64,
    pub mean_distance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Share of problems where the pick equals the oracle's.
    pub oracle_agreement: f64,
}

impl SimOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub accuracy_grid: Vec<f64>,
    pub faults: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            accuracy_grid: vec![0.5, 0.7, 0.9, 1.0],
            faults: false,
        }
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

/// Runs the whole pipeline against a loopback simulation server and checks
/// the simulation properties. Report files under `<out>/run/report` depend
/// only on `cfg`.
pub async fn cmd_simulate(
    cfg: &SimConfig,
    out: &Path,
    opts: &SimOptions,
) -> Result<SimOutcome, RunError> {
    let world = Arc::new(SimWorld::new(cfg.clone())?);
    std::fs::create_dir_all(out)?;
    let dataset = out.join("dataset.jsonl");
    std::fs::write(&dataset, world.to_jsonl())?;
    let mut faults = FaultPlan::default();
    if opts.faults {
        faults.fail_first.insert(3, 1);
    }
    let server = SimServer::start(world.clone(), faults).await?;
    let manifest = RunManifest {
        dataset,
        train_dataset: None,
        descriptor: DescriptorRef::Inline(Box::new(world.descriptor().clone())),
        task: Task::SoftLabel,
        endpoint: Source::Inline(server.sampler_endpoint()),
        judge_endpoint: Some(Source::Inline(server.judge_endpoint(None))),
        judge_reduction: Reduction::Mean,
        params: SamplingParams {
            n: cfg.n_samples,
            ..SamplingParams::default()
        },
        prompt: PromptConfig::default(),
        templates_dir: None,
        methods: vec![
            MethodId::Simple,
            MethodId::ModelAveraging,
            MethodId::BonSws,
            MethodId::BonOracle,
        ],
        out: out.join("run"),
        seed: cfg.seed,
        resume: true,
        submission: false,
        cache: None,
    };
    let sampled = cmd_sample(&manifest).await?;
    if !sampled.failures.is_empty() {
        return Err(RunError::Precondition(format!(
            "{} simulated sample request(s) failed",
            sampled.failures.len()
        )));
    }
    let judged = cmd_judge(&manifest).await?;
    if !judged.failures.is_empty() {
        return Err(RunError::Precondition(format!(
            "{} simulated judge request(s) failed",
            judged.failures.len()
        )));
    }
    server.stop().await;
    let data = load_run(&manifest)?;
    let EvaluateOutput::Report(report, _) = run_evaluation(&manifest, &data, true)? else {
        unreachable!("simulation runs are never submissions");
    };
    let report = *report;
    let descriptor = &data.ctx.descriptor;
    let mut checks = Vec::new();

    let tol = 1e-12;
    let mut violations = 0;
    for r in &report.per_problem {
        let o = r.distances[&MethodId::BonOracle];
        let s = r.distances[&MethodId::Simple];
        let b = r.distances[&MethodId::BonSws];
        let w = r.worst_sample_distance.unwrap_or(f64::INFINITY);
        if o > s + tol || o > b + tol || b > w + tol {
            violations += 1;
        }
    }
    checks.push(check(
        "oracle-optimality",
        violations == 0,
        format!(
            "{violations} violation(s) over {} problems",
            report.per_problem.len()
        ),
    ));

    let diffs: Vec<f64> = report
        .per_problem
        .iter()
        .map(|r| r.distances[&MethodId::Simple] - r.distances[&MethodId::ModelAveraging])
        .collect();
    let (lo, hi) = bootstrap_ci(&diffs, 0.95, 1000, cfg.seed)?;
    checks.push(check(
        "averaging-beats-simple",
        lo > 0.0,
        format!(
            "simple {} vs averaging {}; paired difference CI [{}, {}]",
            format_sig(report.per_method[&MethodId::Simple].mean_distance),
            format_sig(report.per_method[&MethodId::ModelAveraging].mean_distance),
            format_sig(lo),
            format_sig(hi)
        ),
    ));

    let (sig, div): (Vec<f64>, Vec<f64>) = report
        .per_problem
        .iter()
        .zip(world.sigmas())
        .filter_map(|(r, &s)| r.diversity.map(|d| (s, d)))
        .unzip();
    let rho = spearman(&sig, &div)?;
    checks.push(check(
        "diversity-tracks-noise",
        rho > 0.9,
        format!("spearman {} over {} problems", format_sig(rho), sig.len()),
    ));

    let agree = report
        .per_problem
        .iter()
        .filter(|r| r.selected.get(&MethodId::BonSws) == r.selected.get(&MethodId::BonOracle))
        .count() as f64
        / report.per_problem.len().max(1) as f64;
    checks.push(check(
        "oracle-judge-agreement",
        cfg.judge_accuracy < 1.0 || agree == 1.0,
        format!(
            "bon-sws picked the oracle sample on {}% of problems at accuracy {}",
            format_sig(100.0 * agree),
            cfg.judge_accuracy
        ),
    ));

    let mut grid = Vec::new();
    for &acc in &opts.accuracy_grid {
        let mut dist = Vec::with_capacity(data.samples.len());
        let mut hits = 0usize;
        for ((p, samples), r) in data
            .ctx
            .problems
            .iter()
            .zip(&data.samples)
            .zip(&report.per_problem)
        {
            let scored: Vec<ScoredSample> = samples
                .iter()
                .filter(|s| s.is_compliant())
                .map(|s| world.sim_judge(s, acc, cfg.seed ^ 0x5eed))
                .collect::<Result<_, _>>()?;
            let pick = bon_select(&scored).map_err(AnalysisError::from)?;
            if r.selected.get(&MethodId::BonOracle) == Some(&pick.sample().index) {
                hits += 1;
            }
            let truth = p
                .truth(Task::SoftLabel)
                .expect("simulated problems are labeled");
            let pred = pick.sample().prediction.as_ref().expect("compliant");
            dist.push(task_distance(descriptor, pred, &truth)?.value);
        }
        let (lo, hi) = bootstrap_ci(&dist, 0.95, 1000, cfg.seed)?;
        grid.push(GridPoint {
            accuracy: acc,
            mean_distance: mean(&dist),
            ci_low: lo,
            ci_high: hi,
            oracle_agreement: hits as f64 / dist.len().max(1) as f64,
        });
    }
    if let (Some(first), Some(last)) = (grid.first(), grid.last()) {
        let adjacent_ok = grid.windows(2).all(|w| w[1].mean_distance <= w[0].ci_high);
        checks.push(check(
            "judge-accuracy-monotone",
            last.mean_distance < first.mean_distance && adjacent_ok,
            grid.iter()
                .map(|g| format!("{}:{}", g.accuracy, format_sig(g.mean_distance)))
                .collect::<Vec<_>>()
                .join(" "),
        ));
    }
    if let Some(perfect) = grid.iter().find(|g| g.accuracy == 1.0) {
        checks.push(check(
            "perfect-judge-is-oracle",
            perfect.oracle_agreement == 1.0,
            format!(
                "bon-sws picked the oracle sample on {}% of problems at accuracy 1",
                format_sig(100.0 * perfect.oracle_agreement)
            ),
        ));
    }
    if let Some(half) = grid.iter().find(|g| g.accuracy == 0.5) {
        let s = &report.per_method[&MethodId::Simple];
        checks.push(check(
            "uninformative-judge",
            s.ci_low <= half.mean_distance && half.mean_distance <= s.ci_high,
            format!(
                "bon-sws at accuracy 0.5: {}; simple CI [{}, {}]",
                format_sig(half.mean_distance),
                format_sig(s.ci_low),
                format_sig(s.ci_high)
            ),
        ));
    }

    let series = manifest.report_dir().join("series/judge_accuracy.tsv");
    let mut body = String::from("accuracy\tmean_distance\tci_low\tci_high\toracle_agreement\n");
    for g in &grid {
        body.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            format_sig(g.accuracy),
            format_sig(g.mean_distance),
            format_sig(g.ci_low),
            format_sig(g.ci_high),
            format_sig(g.oracle_agreement)
        ));
    }
    std::fs::write(series, body)?;
    let mut body = String::from("check\tpassed\tdetail\n");
    for c in &checks {
        body.push_str(&format!("{}\t{}\t{}\n", c.name, c.passed, c.detail));
    }
    std::fs::write(manifest.report_dir().join("simulation_checks.tsv"), body)?;

    Ok(SimOutcome {
        checks,
        report,
        report_dir: manifest.report_dir(),
        oracle_agreement: agree,
        accuracy_grid: grid,
    })
}

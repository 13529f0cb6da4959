use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use softscale::data::Cache;
use softscale::inference::{
    sample_n, ChatClient, EndpointConfig, PromptConfig, SamplingParams, Templates,
};
use softscale::runner::*;
use softscale::simlab::{FaultPlan, SimConfig, SimServer, SimWorld};
use softscale::*;

fn world(n_problems: usize) -> Arc<SimWorld> {
    Arc::new(
        SimWorld::new(SimConfig {
            n_problems,
            ..SimConfig::default()
        })
        .unwrap(),
    )
}

fn manifest(world: &SimWorld, server: &SimServer, dir: &Path) -> RunManifest {
    let dataset = dir.join("dataset.jsonl");
    if !dataset.exists() {
        std::fs::write(&dataset, world.to_jsonl()).unwrap();
    }
    RunManifest {
        dataset,
        train_dataset: None,
        descriptor: DescriptorRef::Inline(Box::new(world.descriptor().clone())),
        task: Task::SoftLabel,
        endpoint: Source::Inline(server.sampler_endpoint()),
        judge_endpoint: Some(Source::Inline(server.judge_endpoint(Some(1.0)))),
        judge_reduction: Reduction::Mean,
        params: SamplingParams::default(),
        prompt: PromptConfig::default(),
        templates_dir: None,
        methods: vec![
            MethodId::MostFrequent,
            MethodId::Simple,
            MethodId::ModelAveraging,
            MethodId::BonSws,
            MethodId::BonOracle,
        ],
        out: dir.join("run"),
        seed: 5,
        resume: true,
        submission: false,
        cache: None,
    }
}

fn dead_endpoint() -> EndpointConfig {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let mut e = EndpointConfig::new(format!("http://{addr}"), "simlab-sampler");
    e.retry_limit = 2;
    e.retry_backoff_ms = 1;
    e.timeout_seconds = 5;
    e
}

async fn batch_with(faults: FaultPlan) -> (softscale::inference::SampleBatch, u64) {
    let w = world(1);
    let server = SimServer::start(w.clone(), faults).await.unwrap();
    let client = ChatClient::new(server.sampler_endpoint()).unwrap();
    let batch = sample_n(
        &client,
        &w.problems()[0],
        w.descriptor(),
        &PromptConfig::default(),
        &Templates::builtin(),
        &SamplingParams::default(),
        9,
    )
    .await
    .unwrap();
    (batch, server.sampler_request_count())
}

#[tokio::test]
async fn ten_samples_have_dense_indices() {
    let (batch, requests) = batch_with(FaultPlan::default()).await;
    let idx: Vec<usize> = batch.samples.iter().map(|s| s.index).collect();
    assert_eq!(idx, (0..10).collect::<Vec<_>>());
    assert!(batch.failed.is_empty());
    assert!(batch.samples.iter().all(Sample::is_compliant));
    assert!(batch
        .samples
        .iter()
        .all(|s| s.token_counts.completion > 0 && !s.token_counts.approximate));
    assert_eq!(requests, 10);
}

#[tokio::test]
async fn transient_failure_is_retried() {
    let mut faults = FaultPlan::default();
    faults.fail_first.insert(3, 1);
    let (batch, requests) = batch_with(faults).await;
    assert!(batch.failed.is_empty());
    assert!(batch.samples[3].is_compliant());
    assert_eq!(requests, 11);
    let (clean, _) = batch_with(FaultPlan::default()).await;
    assert_eq!(batch.samples, clean.samples);
}

#[tokio::test]
async fn permanent_failure_yields_placeholders() {
    let faults = FaultPlan {
        always_fail: true,
        ..FaultPlan::default()
    };
    let (batch, _) = batch_with(faults).await;
    assert_eq!(batch.samples.len(), 10);
    assert!(batch
        .samples
        .iter()
        .all(|s| !s.is_compliant() && s.prediction.is_none()));
    assert_eq!(batch.failed.len(), 10);
    assert!(batch.failed[0].1.contains("500"), "{}", batch.failed[0].1);
}

#[tokio::test]
async fn rerun_after_completion_makes_no_requests() {
    let dir = tempfile::tempdir().unwrap();
    let w = world(6);
    let server = SimServer::start(w.clone(), FaultPlan::default())
        .await
        .unwrap();
    let m = manifest(&w, &server, dir.path());
    let first = cmd_sample(&m).await.unwrap();
    assert_eq!((first.requested, first.written, first.reused), (60, 60, 0));
    let judged = cmd_judge(&m).await.unwrap();
    assert_eq!(judged.written, judged.requested);
    let before = server.request_count();
    let bytes = std::fs::read(m.cache_path()).unwrap();

    let again = cmd_sample(&m).await.unwrap();
    assert_eq!((again.written, again.reused), (0, 60));
    let rejudged = cmd_judge(&m).await.unwrap();
    assert_eq!((rejudged.written, rejudged.reused), (0, judged.requested));
    assert_eq!(server.request_count(), before);
    assert_eq!(std::fs::read(m.cache_path()).unwrap(), bytes);
    assert!(m.out.join("manifest.json").exists());
}

#[tokio::test(flavor = "multi_thread")]
async fn interrupted_run_resumes_remaining_work() {
    let dir = tempfile::tempdir().unwrap();
    let w = world(40);
    let server = SimServer::start(w.clone(), FaultPlan::default())
        .await
        .unwrap();
    let mut m = manifest(&w, &server, dir.path());
    if let Source::Inline(e) = &mut m.endpoint {
        e.max_parallel = 2;
    }
    let mut cut = Duration::from_millis(30);
    for attempt in 0.. {
        assert!(attempt < 40, "could not interrupt the run midway");
        let run = tokio::time::timeout(cut, cmd_sample(&m)).await;
        let cached = Cache::open(&m.cache_path()).unwrap().len();
        if run.is_err() && cached > 0 && cached < 400 {
            break;
        }
        assert!(run.is_err() || cached == 400, "run ended early");
        std::fs::remove_dir_all(&m.out).unwrap();
        cut = if run.is_err() { cut * 2 } else { cut / 2 };
    }
    // A torn final line, as left by a kill mid-write.
    let mut text = std::fs::read_to_string(m.cache_path()).unwrap();
    text.push_str("{\"key\":{\"kind\":\"sam");
    std::fs::write(m.cache_path(), text).unwrap();

    let cached = Cache::open(&m.cache_path()).unwrap().len();
    let before = server.sampler_request_count();
    let resumed = cmd_sample(&m).await.unwrap();
    assert_eq!(resumed.reused, cached);
    assert_eq!(resumed.written, 400 - cached);
    assert_eq!(
        server.sampler_request_count() - before,
        (400 - cached) as u64
    );

    let fresh_dir = tempfile::tempdir().unwrap();
    let fresh = manifest(&w, &server, fresh_dir.path());
    cmd_sample(&fresh).await.unwrap();
    let a = Cache::open(&m.cache_path()).unwrap();
    let b = Cache::open(&fresh.cache_path()).unwrap();
    assert_eq!(a.len(), b.len());
    cmd_judge(&m).await.unwrap();
    cmd_judge(&fresh).await.unwrap();
    let ra = cmd_evaluate(&m).unwrap();
    let rb = cmd_evaluate(&fresh).unwrap();
    let (EvaluateOutput::Report(ra, _), EvaluateOutput::Report(rb, _)) = (ra, rb) else {
        panic!("expected reports");
    };
    assert_eq!(ra, rb);
}

#[tokio::test]
async fn bad_endpoint_reports_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let w = world(3);
    let server = SimServer::start(w.clone(), FaultPlan::default())
        .await
        .unwrap();
    let mut m = manifest(&w, &server, dir.path());
    cmd_sample(&m).await.unwrap();
    let bytes = std::fs::read(m.cache_path()).unwrap();

    let bigger = world(5);
    std::fs::write(&m.dataset, bigger.to_jsonl()).unwrap();
    m.endpoint = Source::Inline(dead_endpoint());
    let summary = cmd_sample(&m).await.unwrap();
    assert_eq!(summary.exit_code(), 2);
    assert_eq!((summary.reused, summary.failures.len()), (30, 20));
    assert_eq!(summary.written, 0);
    assert_eq!(std::fs::read(m.cache_path()).unwrap(), bytes);
}

#[tokio::test]
async fn evaluate_reports_requested_methods() {
    let dir = tempfile::tempdir().unwrap();
    let w = world(8);
    let server = SimServer::start(w.clone(), FaultPlan::default())
        .await
        .unwrap();
    let mut m = manifest(&w, &server, dir.path());
    m.methods = vec![
        MethodId::Simple,
        MethodId::ModelAveraging,
        MethodId::BonOracle,
    ];
    cmd_sample(&m).await.unwrap();
    let EvaluateOutput::Report(report, files) = cmd_evaluate(&m).unwrap() else {
        panic!("expected a report");
    };
    assert_eq!(report.per_method.len(), 3);
    assert_eq!(report.per_problem.len(), 8);
    for (method, summary) in &report.per_method {
        let mean = report
            .per_problem
            .iter()
            .map(|r| r.distances[method])
            .sum::<f64>()
            / 8.0;
        assert!((mean - summary.mean_distance).abs() <= 1e-9);
        assert!(
            summary.ci_low <= summary.mean_distance && summary.mean_distance <= summary.ci_high
        );
    }
    let csv = std::fs::read_to_string(m.report_dir().join("per_method.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(files.iter().all(|f| f.exists()));
}

#[tokio::test]
async fn evaluate_names_missing_cache_keys() {
    let dir = tempfile::tempdir().unwrap();
    let w = world(2);
    let server = SimServer::start(w.clone(), FaultPlan::default())
        .await
        .unwrap();
    let m = manifest(&w, &server, dir.path());
    match cmd_evaluate(&m) {
        Err(RunError::MissingCache(keys)) => {
            assert_eq!(keys.len(), 20);
            assert!(keys[0].contains("sim-0000"), "{}", keys[0]);
        }
        other => panic!("expected missing cache, got {other:?}"),
    }
    cmd_sample(&m).await.unwrap();
    match cmd_evaluate(&m) {
        Err(err @ RunError::MissingCache(_)) => assert_eq!(err.exit_code(), 3),
        other => panic!("expected missing judge scores, got {other:?}"),
    }
}

fn strip_labels(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut out = String::new();
    for line in text.lines() {
        let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = v.as_object_mut().unwrap();
        obj.remove("soft_label");
        obj.insert("annotations".into(), serde_json::json!({}));
        out.push_str(&v.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

#[tokio::test]
async fn unlabeled_split_rejects_oracle_but_allows_submission() {
    let dir = tempfile::tempdir().unwrap();
    let w = world(4);
    let server = SimServer::start(w.clone(), FaultPlan::default())
        .await
        .unwrap();
    let train = dir.path().join("train.jsonl");
    std::fs::write(&train, w.to_jsonl()).unwrap();
    let mut m = manifest(&w, &server, dir.path());
    strip_labels(&m.dataset);
    m.train_dataset = Some(train);
    m.methods = vec![MethodId::Simple, MethodId::BonOracle];
    cmd_sample(&m).await.unwrap();
    match cmd_evaluate(&m) {
        Err(RunError::Precondition(msg)) => assert!(msg.contains("oracle"), "{msg}"),
        other => panic!("expected a precondition error, got {other:?}"),
    }

    m.submission = true;
    m.methods = vec![
        MethodId::MostFrequent,
        MethodId::Simple,
        MethodId::ModelAveraging,
    ];
    let EvaluateOutput::Predictions(files) = cmd_evaluate(&m).unwrap() else {
        panic!("expected prediction files");
    };
    assert_eq!(files.len(), 3);
    for f in &files {
        let name = f.file_name().unwrap().to_string_lossy().to_string();
        assert!(name.starts_with("soft-label."), "{name}");
        let text = std::fs::read_to_string(f).unwrap();
        assert_eq!(text.lines().count(), 4);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["prediction"].is_array());
            assert!(v.get("distance").is_none());
        }
    }
    assert!(!m.report_dir().join("per_method.csv").exists());
}

#[tokio::test]
async fn no_resume_starts_a_fresh_cache() {
    let dir = tempfile::tempdir().unwrap();
    let w = world(2);
    let server = SimServer::start(w.clone(), FaultPlan::default())
        .await
        .unwrap();
    let mut m = manifest(&w, &server, dir.path());
    cmd_sample(&m).await.unwrap();
    m.resume = false;
    let again = cmd_sample(&m).await.unwrap();
    assert_eq!((again.reused, again.written), (0, 20));
    assert!(m.out.join("cache.jsonl.prev").exists());
}

#[test]
fn perspectivist_submission_reads_only_the_cache() {
    use softscale::data::{params_digest, CacheKey, CachePayload, PayloadKind};
    use softscale::inference::{build_prompt, parse_sample};

    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("test.jsonl");
    std::fs::write(
        &dataset,
        concat!(
            r#"{"id":"q1","payload":{"question1":"a?","question2":"b?"},"annotators":["x","y"]}"#,
            "\n",
            r#"{"id":"q2","payload":{"question1":"c?","question2":"d?"},"annotators":["x","y"]}"#,
            "\n",
        ),
    )
    .unwrap();
    let train = dir.path().join("train.jsonl");
    std::fs::write(
        &train,
        r#"{"id":"t1","payload":{"question1":"e?","question2":"f?"},"annotations":{"x":2,"y":-3}}"#
            .to_string()
            + "\n",
    )
    .unwrap();
    let m = RunManifest {
        dataset,
        train_dataset: Some(train),
        descriptor: DescriptorRef::Name("PAR".into()),
        task: Task::Perspectivist,
        endpoint: Source::Inline(EndpointConfig::new("http://127.0.0.1:9", "offline")),
        judge_endpoint: None,
        judge_reduction: Reduction::Mean,
        params: SamplingParams {
            n: 3,
            ..SamplingParams::default()
        },
        prompt: PromptConfig::default(),
        templates_dir: None,
        methods: vec![
            MethodId::MostFrequent,
            MethodId::Simple,
            MethodId::MajorityVoting,
        ],
        out: dir.path().join("run"),
        seed: 1,
        resume: true,
        submission: true,
        cache: None,
    };
    let d = DatasetDescriptor::builtin("PAR", Task::Perspectivist).unwrap();
    let problems = softscale::data::load_dataset(&m.dataset, &d).unwrap();
    let mut cache = Cache::open(&m.cache_path()).unwrap();
    let votes = [[5, -1], [4, -1], [5, 0]];
    for p in &problems {
        let prompt = build_prompt(p, &d, &m.prompt, &Templates::builtin()).unwrap();
        let digest = params_digest(&m.params, &prompt);
        for (i, [x, y]) in votes.iter().enumerate() {
            let raw = format!(r#"{{"steps":["s"],"prediction":{{"x":{x},"y":{y}}}}}"#);
            let s = parse_sample(&p.id, i, &raw, &p.annotators, &d);
            assert!(s.is_compliant());
            let key = CacheKey {
                kind: PayloadKind::Sample,
                problem_id: p.id.clone(),
                model_name: "offline".into(),
                params_digest: digest.clone(),
                template_id: m.prompt.template_id.clone(),
                index: i,
            };
            cache.put(key, CachePayload::Sample(s)).unwrap();
        }
    }
    cache.sync().unwrap();
    drop(cache);

    let EvaluateOutput::Predictions(files) = cmd_evaluate(&m).unwrap() else {
        panic!("expected prediction files");
    };
    let read = |method: &str| -> Vec<serde_json::Value> {
        let path = m
            .out
            .join(format!("predictions/perspectivist.{method}.jsonl"));
        assert!(files.contains(&path));
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    };
    let mv = read("majority-voting");
    assert_eq!(mv[0]["id"], "q1");
    assert_eq!(
        mv[0]["prediction"],
        serde_json::json!({"x": 5.0, "y": -1.0})
    );
    assert_eq!(
        read("simple")[1]["prediction"],
        serde_json::json!({"x": 5.0, "y": -1.0})
    );
    assert_eq!(
        read("most-frequent")[0]["prediction"],
        serde_json::json!({"x": 2.0, "y": -3.0})
    );
}

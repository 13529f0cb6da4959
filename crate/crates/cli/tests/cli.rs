use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use softscale::simlab::{FaultPlan, SimConfig, SimServer, SimWorld};

fn softscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softscale"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_json(path: &Path, value: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

#[test]
fn simulate_default_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = softscale(&["simulate", "--out", out.to_str().unwrap()]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert_eq!(text.matches("[PASS]").count(), 7, "{text}");
    assert!(!text.contains("[FAIL]"));
    assert!(text.contains("bon-sws picked the oracle sample on 100% of problems at accuracy 1"));
    assert!(out.join("run/report/simulation_checks.tsv").exists());
}

#[test]
fn simulate_property_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = softscale(&[
        "simulate",
        "--out",
        dir.path().to_str().unwrap(),
        "--problems",
        "60",
        "--accuracy-grid",
        "1.0,0.5",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("[FAIL] judge-accuracy-monotone"));
}

#[test]
fn missing_required_flags_exit_three() {
    let o = softscale(&["sample", "--dataset", "x.jsonl"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--descriptor"));
    let o = softscale(&["evaluate", "--manifest", "/nonexistent/manifest.json"]);
    assert_eq!(o.status.code(), Some(3));
}

#[tokio::test(flavor = "multi_thread")]
async fn flags_drive_the_full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let world = Arc::new(
        SimWorld::new(SimConfig {
            n_problems: 12,
            ..SimConfig::default()
        })
        .unwrap(),
    );
    let server = SimServer::start(world.clone(), FaultPlan::default())
        .await
        .unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    std::fs::write(p("data.jsonl"), world.to_jsonl()).unwrap();
    write_json(&dir.path().join("descriptor.json"), world.descriptor());
    write_json(&dir.path().join("sampler.json"), &server.sampler_endpoint());
    write_json(
        &dir.path().join("judge.json"),
        &server.judge_endpoint(Some(1.0)),
    );
    let (data, desc, sampler, judge, out) = (
        p("data.jsonl"),
        p("descriptor.json"),
        p("sampler.json"),
        p("judge.json"),
        p("run"),
    );
    let common = [
        "--dataset",
        data.as_str(),
        "--descriptor",
        desc.as_str(),
        "--endpoint",
        sampler.as_str(),
        "--judge-endpoint",
        judge.as_str(),
        "--out",
        out.as_str(),
        "--seed",
        "3",
        "--n",
        "10",
        "--methods",
        "simple,model-averaging,bon-sws,bon-oracle",
    ];
    let run = |cmd: &str| {
        let mut args = vec![cmd];
        args.extend(common);
        tokio::task::block_in_place(|| softscale(&args))
    };

    let o = run("sample");
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("120 requested, 0 reused, 120 written, 0 failed"));
    let o = run("judge");
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let requests = server.request_count();
    assert!(stdout(&run("sample")).contains("120 reused, 0 written"));
    assert!(stdout(&run("judge")).contains("0 written, 0 failed"));
    assert_eq!(server.request_count(), requests);

    let o = run("evaluate");
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = stdout(&o);
    for m in ["simple", "model-averaging", "bon-sws", "bon-oracle"] {
        assert!(text.contains(m), "{text}");
    }
    let report = std::fs::read(dir.path().join("run/report/report.json")).unwrap();

    let manifest = dir.path().join("run/manifest.json");
    let o = tokio::task::block_in_place(|| {
        softscale(&["analyze", "--manifest", manifest.to_str().unwrap()])
    });
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(
        std::fs::read(dir.path().join("run/report/report.json")).unwrap(),
        report
    );
    assert!(dir.path().join("run/report/series/budget.tsv").exists());
    server.stop().await;
}

#[test]
fn unreachable_endpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let world = SimWorld::new(SimConfig {
        n_problems: 2,
        ..SimConfig::default()
    })
    .unwrap();
    let data = dir.path().join("data.jsonl");
    std::fs::write(&data, world.to_jsonl()).unwrap();
    write_json(&dir.path().join("descriptor.json"), world.descriptor());
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let endpoint = dir.path().join("endpoint.json");
    std::fs::write(
        &endpoint,
        format!(
            r#"{{"base_url": "http://127.0.0.1:{port}", "model_name": "simlab-sampler", "retry_limit": 1, "retry_backoff_ms": 1}}"#
        ),
    )
    .unwrap();
    let o = softscale(&[
        "sample",
        "--dataset",
        data.to_str().unwrap(),
        "--descriptor",
        dir.path().join("descriptor.json").to_str().unwrap(),
        "--endpoint",
        endpoint.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("20 failed"));
    assert!(dir.path().join("run/cache.jsonl").exists());
}

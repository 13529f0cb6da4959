use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::SimWorld;
use crate::inference::{approx_tokens, split_request_seed, EndpointConfig};

pub const SAMPLER_MODEL: &str = "simlab-sampler";
/// Judge model name; `simlab-judge:0.9` overrides the world's accuracy.
pub const JUDGE_MODEL: &str = "simlab-judge";

/// Failures to inject into sampler requests.
#[derive(Debug, Clone, Default)]
pub struct FaultPlan {
    /// Sample index to the number of initial attempts answered with 503.
    pub fail_first: BTreeMap<usize, u32>,
    /// Answer every sampler request with 500.
    pub always_fail: bool,
}

struct ServerState {
    world: Arc<SimWorld>,
    faults: FaultPlan,
    attempts: Mutex<HashMap<(usize, u64, usize), u32>>,
    requests: AtomicU64,
    sampler_requests: AtomicU64,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": {"message": message.into()}}))).into_response()
}

fn completion(model: &str, content: String, reasoning: String, prompt: &str) -> Response {
    let completion_tokens = approx_tokens(&content) + approx_tokens(&reasoning);
    Json(json!({
        "id": "simlab",
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content, "reasoning_content": reasoning},
            "finish_reason": "stop",
        }],
        "usage": {
            "prompt_tokens": approx_tokens(prompt),
            "completion_tokens": completion_tokens,
            "completion_tokens_details": {"reasoning_tokens": approx_tokens(&reasoning)},
        },
    }))
    .into_response()
}

async fn chat(State(state): State<Arc<ServerState>>, Json(body): Json<Value>) -> Response {
    state.requests.fetch_add(1, Ordering::Relaxed);
    let model = body["model"].as_str().unwrap_or_default().to_string();
    let prompt = body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default()
        .to_string();
    let world = &state.world;
    if model == SAMPLER_MODEL {
        state.sampler_requests.fetch_add(1, Ordering::Relaxed);
        let Some(problem) = world.problem_in(&prompt) else {
            return error(StatusCode::BAD_REQUEST, "prompt names no simulated problem");
        };
        let (batch, index) = split_request_seed(body["seed"].as_u64().unwrap_or(0));
        if state.faults.always_fail {
            return error(StatusCode::INTERNAL_SERVER_ERROR, "injected failure");
        }
        if let Some(&k) = state.faults.fail_first.get(&index) {
            let mut attempts = state.attempts.lock().expect("attempt map");
            let seen = attempts.entry((problem, batch, index)).or_insert(0);
            *seen += 1;
            if *seen <= k {
                return error(
                    StatusCode::SERVICE_UNAVAILABLE,
                    "injected transient failure",
                );
            }
        }
        let (content, reasoning) = world.answer_text(problem, batch, index);
        return completion(&model, content, reasoning, &prompt);
    }
    if let Some(rest) = model.strip_prefix(JUDGE_MODEL) {
        let accuracy = match rest.strip_prefix(':') {
            Some(a) => match a.parse::<f64>() {
                Ok(a) if (0.0..=1.0).contains(&a) => a,
                _ => return error(StatusCode::BAD_REQUEST, format!("bad accuracy `{a}`")),
            },
            None if rest.is_empty() => world.config().judge_accuracy,
            None => return error(StatusCode::NOT_FOUND, format!("unknown model `{model}`")),
        };
        return match world.judge_reply(&prompt, accuracy, world.config().seed) {
            Ok(reply) => completion(&model, reply, String::new(), &prompt),
            Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
        };
    }
    error(StatusCode::NOT_FOUND, format!("unknown model `{model}`"))
}

/// Loopback chat-completions server backed by a [`SimWorld`]. Stops when
/// dropped.
pub struct SimServer {
    addr: SocketAddr,
    state: Arc<ServerState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl SimServer {
    pub async fn start(world: Arc<SimWorld>, faults: FaultPlan) -> std::io::Result<Self> {
        let state = Arc::new(ServerState {
            world,
            faults,
            attempts: Mutex::new(HashMap::new()),
            requests: AtomicU64::new(0),
            sampler_requests: AtomicU64::new(0),
        });
        let app = Router::new()
            .route("/v1/chat/completions", post(chat))
            .with_state(state.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
            task: Some(task),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far, of any kind.
    pub fn request_count(&self) -> u64 {
        self.state.requests.load(Ordering::Relaxed)
    }

    pub fn sampler_request_count(&self) -> u64 {
        self.state.sampler_requests.load(Ordering::Relaxed)
    }

    pub fn sampler_endpoint(&self) -> EndpointConfig {
        let mut e = EndpointConfig::new(self.base_url(), SAMPLER_MODEL);
        e.max_parallel = 32;
        e.retry_backoff_ms = 5;
        e.timeout_seconds = 30;
        e
    }

    pub fn judge_endpoint(&self, accuracy: Option<f64>) -> EndpointConfig {
        let model = match accuracy {
            Some(a) => format!("{JUDGE_MODEL}:{a}"),
            None => JUDGE_MODEL.to_string(),
        };
        let mut e = EndpointConfig::new(self.base_url(), model);
        e.max_parallel = 32;
        e.retry_backoff_ms = 5;
        e.timeout_seconds = 30;
        e
    }

    /// Stops accepting requests and waits for the server task.
    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for SimServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

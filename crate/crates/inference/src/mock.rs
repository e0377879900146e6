//! Scripted chat-completion server for tests and offline runs.
//!
//! Each request is answered from a [`TokenSchedule`]: a list of delays and
//! tokens. Delays are measured from the moment the request is handled, so
//! timer jitter does not accumulate across tokens.

use std::convert::Infallible;
use std::net::{SocketAddr, TcpListener as StdListener};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::State;
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::serve::ListenerExt;
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use tokio::sync::oneshot;
use tokio::time::Instant;

use crate::config::whitespace_tokens;
use crate::error::InferenceError;
use crate::wire::{
    ChatChunk, ChatMessage, ChatRequest, ChatResponse, Choice, ChunkChoice, Delta, Usage, DONE,
};

/// Tokens with the delay before each one, relative to the previous token.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenSchedule {
    pub steps: Vec<(Duration, String)>,
    /// Reported prompt size; the whitespace count of the prompt when unset.
    pub prompt_tokens: Option<u64>,
}

impl TokenSchedule {
    pub fn new(steps: Vec<(Duration, String)>) -> Self {
        Self {
            steps,
            prompt_tokens: None,
        }
    }

    /// `first` before the first token, `gap` before each later one.
    pub fn paced(first: Duration, gap: Duration, tokens: &[&str]) -> Self {
        Self::new(
            tokens
                .iter()
                .enumerate()
                .map(|(i, t)| (if i == 0 { first } else { gap }, t.to_string()))
                .collect(),
        )
    }

    /// The whole reply as one token without delay.
    pub fn instant(text: &str) -> Self {
        Self::new(vec![(Duration::ZERO, text.to_string())])
    }

    pub fn with_prompt_tokens(mut self, n: u64) -> Self {
        self.prompt_tokens = Some(n);
        self
    }

    pub fn text(&self) -> String {
        self.steps.iter().map(|(_, t)| t.as_str()).collect()
    }

    /// Offsets of each token from the start of the reply.
    fn deadlines(&self) -> Vec<Duration> {
        self.steps
            .iter()
            .scan(Duration::ZERO, |acc, (d, _)| {
                *acc += *d;
                Some(*acc)
            })
            .collect()
    }
}

/// Chooses the schedule for a request from its prompt.
pub type Responder = Arc<dyn Fn(&str) -> TokenSchedule + Send + Sync>;

#[derive(Clone)]
struct AppState {
    responder: Responder,
    served: Arc<AtomicUsize>,
}

/// A running mock server. Stops when dropped.
pub struct MockBackend {
    addr: SocketAddr,
    served: Arc<AtomicUsize>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockBackend {
    /// Serves `schedule` for every request on an ephemeral local port.
    pub fn start(schedule: TokenSchedule) -> Result<Self, InferenceError> {
        Self::with_responder(Arc::new(move |_| schedule.clone()))
    }

    pub fn with_responder(responder: Responder) -> Result<Self, InferenceError> {
        Self::bind("127.0.0.1:0".parse().expect("valid address"), responder)
    }

    /// Binds `addr` and serves on a dedicated thread with its own runtime,
    /// so the server never competes with the client's executor.
    pub fn bind(addr: SocketAddr, responder: Responder) -> Result<Self, InferenceError> {
        let listener = StdListener::bind(addr).map_err(InferenceError::PortUnavailable)?;
        listener
            .set_nonblocking(true)
            .map_err(InferenceError::PortUnavailable)?;
        let addr = listener
            .local_addr()
            .map_err(InferenceError::PortUnavailable)?;
        let runtime = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .map_err(InferenceError::PortUnavailable)?;
        let served = Arc::new(AtomicUsize::new(0));
        let state = AppState {
            responder,
            served: served.clone(),
        };
        let (tx, rx) = oneshot::channel();
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)
                    .expect("listener registers with runtime")
                    .tap_io(|tcp| {
                        let _ = tcp.set_nodelay(true);
                    });
                let app = Router::new()
                    .route("/v1/chat/completions", post(completions))
                    .with_state(state);
                // Stopping drops the runtime, which cancels in-flight replies.
                tokio::select! {
                    _ = axum::serve(listener, app) => {}
                    _ = rx => {}
                }
            });
        });
        Ok(Self {
            addr,
            served,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Number of completion requests received so far.
    pub fn requests_served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }
}

impl Drop for MockBackend {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

const ID: &str = "mock-0";

fn chunk(delta: Delta, finish_reason: Option<&str>, usage: Option<Usage>) -> ChatChunk {
    ChatChunk {
        id: ID.into(),
        object: "chat.completion.chunk".into(),
        choices: vec![ChunkChoice {
            index: 0,
            delta,
            finish_reason: finish_reason.map(str::to_string),
        }],
        usage,
    }
}

fn event(c: &ChatChunk) -> Result<Event, Infallible> {
    Ok(Event::default().data(serde_json::to_string(c).expect("chunk serializes")))
}

fn token_stream(
    schedule: TokenSchedule,
    usage: Usage,
) -> impl Stream<Item = Result<Event, Infallible>> {
    let start = Instant::now();
    let deadlines = schedule.deadlines();
    let role = stream::once(async {
        event(&chunk(
            Delta {
                role: Some("assistant".into()),
                content: Some(String::new()),
            },
            None,
            None,
        ))
    });
    let tokens = stream::iter(schedule.steps.into_iter().zip(deadlines)).then(
        move |((_, token), at)| async move {
            tokio::time::sleep_until(start + at).await;
            event(&chunk(
                Delta {
                    role: None,
                    content: Some(token),
                },
                None,
                None,
            ))
        },
    );
    let tail = stream::iter([
        event(&chunk(Delta::default(), Some("stop"), Some(usage))),
        Ok(Event::default().data(DONE)),
    ]);
    role.chain(tokens).chain(tail)
}

async fn completions(State(state): State<AppState>, Json(req): Json<ChatRequest>) -> Response {
    state.served.fetch_add(1, Ordering::SeqCst);
    let prompt = req.prompt();
    let schedule = (state.responder)(&prompt);
    let usage = Usage {
        prompt_tokens: schedule
            .prompt_tokens
            .unwrap_or(whitespace_tokens(&prompt) as u64),
        completion_tokens: schedule.steps.len() as u64,
    };
    if req.stream {
        return Sse::new(token_stream(schedule, usage)).into_response();
    }
    if let Some(&total) = schedule.deadlines().last() {
        tokio::time::sleep(total).await;
    }
    Json(ChatResponse {
        id: ID.into(),
        object: "chat.completion".into(),
        choices: vec![Choice {
            index: 0,
            message: ChatMessage {
                role: "assistant".into(),
                content: schedule.text(),
            },
            finish_reason: Some("stop".into()),
        }],
        usage: Some(usage),
    })
    .into_response()
}

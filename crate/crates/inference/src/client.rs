use std::time::Instant;

use eventsource_stream::Eventsource;
use futures::{StreamExt, TryStreamExt};
use mhc_core::TaskId;

use crate::config::{whitespace_tokens, BackendConfig};
use crate::error::InferenceError;
use crate::parse::{parse_label, ParsedLabel};
use crate::wire::{ChatChunk, ChatMessage, ChatRequest, ChatResponse, StreamOptions, Usage, DONE};

/// Full text of a completion and the usage the server reported, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
}

/// A streamed completion with client-side timestamps.
#[derive(Debug, Clone)]
pub struct TimedCompletion {
    pub completion: Completion,
    /// Taken immediately before the request is sent.
    pub sent: Instant,
    /// Arrival of the first and the last non-empty content delta.
    pub first_token: Option<Instant>,
    pub last_token: Option<Instant>,
    /// End of the event stream.
    pub finished: Instant,
    /// Number of non-empty content deltas.
    pub content_chunks: usize,
}

/// Cheap to clone; clones share the connection pool.
#[derive(Debug, Clone)]
pub struct InferenceClient {
    http: reqwest::Client,
    config: BackendConfig,
}

impl InferenceClient {
    pub fn new(config: BackendConfig) -> Result<Self, InferenceError> {
        config.validate()?;
        let http = reqwest::Client::builder()
            .timeout(config.timeout())
            .tcp_nodelay(true)
            .build()
            .map_err(|e| InferenceError::InvalidConfig(e.to_string()))?;
        Ok(Self { http, config })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// Rejects prompts over the context limit; returns the token estimate.
    pub fn check_context(&self, prompt: &str) -> Result<usize, InferenceError> {
        let tokens = whitespace_tokens(prompt);
        if tokens > self.config.context_limit {
            return Err(InferenceError::ContextOverflow {
                tokens,
                limit: self.config.context_limit,
            });
        }
        Ok(tokens)
    }

    fn request(&self, prompt: &str, stream: bool) -> ChatRequest {
        ChatRequest {
            model: self.config.model.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            stream,
            stream_options: stream.then_some(StreamOptions {
                include_usage: true,
            }),
        }
    }

    async fn send(&self, body: &ChatRequest) -> Result<reqwest::Response, InferenceError> {
        let resp = self
            .http
            .post(self.config.endpoint())
            .json(body)
            .send()
            .await
            .map_err(InferenceError::from_request)?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(InferenceError::BackendStatus {
                status: status.as_u16(),
                body,
            });
        }
        Ok(resp)
    }

    /// One completion, streamed or not as configured.
    pub async fn complete(&self, prompt: &str) -> Result<Completion, InferenceError> {
        if self.config.stream {
            return Ok(self.complete_streaming(prompt).await?.completion);
        }
        self.check_context(prompt)?;
        let resp = self.send(&self.request(prompt, false)).await?;
        let body: ChatResponse = resp.json().await.map_err(|e| {
            if e.is_decode() {
                InferenceError::MalformedResponse(e.to_string())
            } else {
                InferenceError::from_body(e)
            }
        })?;
        let text = body
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| InferenceError::MalformedResponse("no choices".into()))?;
        Ok(Completion {
            text,
            usage: body.usage,
        })
    }

    /// Streams one completion and timestamps its content deltas.
    pub async fn complete_streaming(
        &self,
        prompt: &str,
    ) -> Result<TimedCompletion, InferenceError> {
        self.check_context(prompt)?;
        let body = self.request(prompt, true);
        let sent = Instant::now();
        let resp = self.send(&body).await?;
        let mut events = resp
            .bytes_stream()
            .map_err(InferenceError::from_body)
            .eventsource();

        let mut text = String::new();
        let mut usage = None;
        let (mut first_token, mut last_token) = (None, None);
        let mut content_chunks = 0;
        let mut closed = false;
        while let Some(event) = events.next().await {
            let event = event.map_err(|e| match e {
                eventsource_stream::EventStreamError::Transport(inner) => inner,
                other => InferenceError::StreamInterrupted(other.to_string()),
            })?;
            let now = Instant::now();
            if event.data.trim() == DONE {
                closed = true;
                break;
            }
            let chunk: ChatChunk = serde_json::from_str(&event.data)
                .map_err(|e| InferenceError::MalformedResponse(format!("{e}: {}", event.data)))?;
            for choice in &chunk.choices {
                if let Some(content) = choice.delta.content.as_deref().filter(|c| !c.is_empty()) {
                    first_token.get_or_insert(now);
                    last_token = Some(now);
                    content_chunks += 1;
                    text.push_str(content);
                }
                closed |= choice.finish_reason.is_some();
            }
            if chunk.usage.is_some() {
                usage = chunk.usage;
            }
        }
        if !closed {
            return Err(InferenceError::StreamInterrupted(
                "stream ended without a finish marker".into(),
            ));
        }
        Ok(TimedCompletion {
            completion: Completion { text, usage },
            sent,
            first_token,
            last_token,
            finished: Instant::now(),
            content_chunks,
        })
    }

    /// Sends `prompt` and reads a label of `task` from the reply.
    pub async fn classify(
        &self,
        prompt: &str,
        task: TaskId,
    ) -> Result<ParsedLabel, InferenceError> {
        let completion = self.complete(prompt).await?;
        Ok(ParsedLabel {
            label: parse_label(&completion.text, task.spec()),
            raw_text: completion.text,
        })
    }

    /// Classifies `prompts` with at most `workers` requests in flight.
    /// Results keep the input order.
    pub async fn classify_all(
        &self,
        prompts: &[String],
        task: TaskId,
        workers: usize,
    ) -> Vec<Result<ParsedLabel, InferenceError>> {
        futures::stream::iter(prompts.iter().map(|p| self.classify(p, task)))
            .buffered(workers.max(1))
            .collect()
            .await
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("prompt has {tokens} tokens, context limit is {limit}")]
    ContextOverflow { tokens: usize, limit: usize },
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("stream interrupted: {0}")]
    StreamInterrupted(String),
    #[error("backend returned HTTP {status}: {body}")]
    BackendStatus { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("cannot bind mock backend: {0}")]
    PortUnavailable(#[source] std::io::Error),
    #[error("sample count {requested} outside 1..={available}")]
    InvalidSampleCount { requested: usize, available: usize },
    #[error("all {n} benchmark requests failed; first error: {first}")]
    AllFailed { n: usize, first: String },
}

impl InferenceError {
    pub(crate) fn from_request(e: reqwest::Error) -> Self {
        if e.is_timeout() {
            Self::Timeout
        } else {
            Self::Connection(e.to_string())
        }
    }

    pub(crate) fn from_body(e: reqwest::Error) -> Self {
        if e.is_timeout() {
            Self::Timeout
        } else {
            Self::StreamInterrupted(e.to_string())
        }
    }
}

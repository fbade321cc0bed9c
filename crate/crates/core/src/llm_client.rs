//! Generation/scoring client: the HTTP wire protocol, bounded-concurrency
//! batching, and deterministic mocks.
//!
//! Protocol (JSON over HTTP POST):
//!
//! * `/generate`: `{prompt, max_new_tokens, decoding: "greedy", stop}` ->
//!   `{completion, prompt_tokens, completion_tokens}`
//! * `/score_nll`: `{text}` -> `{nll, token_count}`, where `nll` is the
//!   summed negative log-likelihood of `text`.
//!
//! Non-2xx responses may carry `{error: "..."}`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::token_count;
use crate::prompt::{extract_query, PromptSpec};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;
pub const DEFAULT_MAX_NEW_TOKENS: usize = 256;
pub const UNKNOWN_COMPLETION: &str = "UNK";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("server returned status {status}: {message}")]
    Status { status: u16, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("operation not supported by this client: {0}")]
    Unsupported(&'static str),
    #[error("mock failure: {0}")]
    Mock(String),
}

impl ClientError {
    /// Timeouts, transport failures and 5xx responses are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            ClientError::Timeout | ClientError::Transport(_) => true,
            ClientError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    #[default]
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: usize,
    pub decoding: Decoding,
    pub stop: Option<String>,
}

impl GenerationRequest {
    pub fn greedy(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            decoding: Decoding::Greedy,
            stop: None,
        }
    }

    pub fn with_stop(mut self, stop: impl Into<String>) -> Self {
        self.stop = Some(stop.into());
        self
    }

    pub fn with_max_new_tokens(mut self, n: usize) -> Self {
        self.max_new_tokens = n;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub completion: String,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllScore {
    pub nll: f64,
    pub token_count: usize,
}

impl NllScore {
    /// `exp(nll / token_count)`.
    pub fn perplexity(&self) -> f64 {
        (self.nll / self.token_count.max(1) as f64).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreNllRequest {
    pub text: String,
}

#[derive(Debug, Deserialize)]
struct ErrorBody {
    error: String,
}

pub trait LlmClient: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError>;

    fn score_nll(&self, _text: &str) -> Result<NllScore, ClientError> {
        Err(ClientError::Unsupported("score_nll"))
    }
}

impl<C: LlmClient + ?Sized> LlmClient for &C {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        (**self).generate(req)
    }

    fn score_nll(&self, text: &str) -> Result<NllScore, ClientError> {
        (**self).score_nll(text)
    }
}

impl<C: LlmClient + ?Sized> LlmClient for Box<C> {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        (**self).generate(req)
    }

    fn score_nll(&self, text: &str) -> Result<NllScore, ClientError> {
        (**self).score_nll(text)
    }
}

/// Issues all requests with at most `max_in_flight` outstanding at once.
/// Slot `i` of the result always answers request `i`.
pub fn batch_generate<C: LlmClient + ?Sized>(
    client: &C,
    reqs: &[GenerationRequest],
    max_in_flight: usize,
) -> Vec<Result<GenerationResponse, ClientError>> {
    let workers = max_in_flight.max(1).min(reqs.len());
    if workers <= 1 {
        return reqs.iter().map(|r| client.generate(r)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<GenerationResponse, ClientError>>>> =
        reqs.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= reqs.len() {
                    break;
                }
                let result = client.generate(&reqs[i]);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}

/// Retries transient failures with exponential backoff starting at `base`.
pub fn with_retries<T>(
    attempts: usize,
    base: Duration,
    mut op: impl FnMut() -> Result<T, ClientError>,
) -> Result<T, ClientError> {
    let mut delay = base;
    let mut attempt = 1;
    loop {
        match op() {
            Err(e) if e.is_transient() && attempt < attempts => {
                log::debug!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Applies [`with_retries`] to every call of the wrapped client.
pub struct Retrying<C> {
    pub inner: C,
    pub attempts: usize,
    pub backoff: Duration,
}

impl<C: LlmClient> LlmClient for Retrying<C> {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        with_retries(self.attempts, self.backoff, || self.inner.generate(req))
    }

    fn score_nll(&self, text: &str) -> Result<NllScore, ClientError> {
        with_retries(self.attempts, self.backoff, || self.inner.score_nll(text))
    }
}

/// Blocking HTTP client for the `/generate` and `/score_nll` protocol.
pub struct HttpClient {
    base_url: String,
    agent: ureq::Agent,
    retries: usize,
    backoff: Duration,
}

impl HttpClient {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            retries: 3,
            backoff: Duration::from_millis(200),
        }
    }

    pub fn with_retries(mut self, attempts: usize, backoff: Duration) -> Self {
        self.retries = attempts.max(1);
        self.backoff = backoff;
        self
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R, ClientError> {
        let url = format!("{}{path}", self.base_url);
        with_retries(self.retries, self.backoff, || {
            let resp = self.agent.post(&url).send_json(body);
            let resp = match resp {
                Ok(r) => r,
                Err(ureq::Error::Status(status, r)) => {
                    let text = r.into_string().unwrap_or_default();
                    let message = serde_json::from_str::<ErrorBody>(&text)
                        .map(|b| b.error)
                        .unwrap_or(text);
                    return Err(ClientError::Status { status, message });
                }
                Err(ureq::Error::Transport(t)) => return Err(map_transport(&t)),
            };
            let text = resp.into_string().map_err(|e| {
                if e.kind() == std::io::ErrorKind::TimedOut || e.kind() == std::io::ErrorKind::WouldBlock {
                    ClientError::Timeout
                } else {
                    ClientError::Transport(e.to_string())
                }
            })?;
            serde_json::from_str(&text).map_err(|e| ClientError::Malformed(e.to_string()))
        })
    }
}

fn map_transport(t: &ureq::Transport) -> ClientError {
    let msg = t.to_string();
    let timed_out = matches!(t.kind(), ureq::ErrorKind::Io)
        && (msg.contains("timed out") || msg.contains("Timeout") || msg.contains("would block"));
    if timed_out {
        ClientError::Timeout
    } else {
        ClientError::Transport(msg)
    }
}

impl LlmClient for HttpClient {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        self.post("/generate", req)
    }

    fn score_nll(&self, text: &str) -> Result<NllScore, ClientError> {
        self.post(
            "/score_nll",
            &ScoreNllRequest {
                text: text.to_string(),
            },
        )
    }
}

fn apply_stop(text: &str, stop: Option<&str>) -> String {
    match stop.and_then(|s| text.find(s)) {
        Some(pos) => text[..pos].to_string(),
        None => text.to_string(),
    }
}

fn respond(req: &GenerationRequest, completion: &str) -> GenerationResponse {
    let completion = apply_stop(completion, req.stop.as_deref());
    GenerationResponse {
        prompt_tokens: token_count(&req.prompt),
        completion_tokens: token_count(&completion),
        completion,
    }
}

/// Answers with the reference translation of the prompt's query sentence.
pub struct EchoMock {
    spec: PromptSpec,
    references: HashMap<String, String>,
    default: String,
}

impl EchoMock {
    pub fn new<I, S, T>(spec: PromptSpec, references: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        Self {
            spec,
            references: references.into_iter().map(|(s, t)| (s.into(), t.into())).collect(),
            default: UNKNOWN_COMPLETION.into(),
        }
    }
}

impl LlmClient for EchoMock {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        let completion = extract_query(&req.prompt, &self.spec)
            .and_then(|q| self.references.get(q))
            .unwrap_or(&self.default);
        Ok(respond(req, completion))
    }
}

/// Looks the whole prompt up in a table.
pub struct TableMock {
    table: HashMap<String, String>,
    default: String,
}

impl TableMock {
    pub fn new(table: HashMap<String, String>) -> Self {
        Self {
            table,
            default: UNKNOWN_COMPLETION.into(),
        }
    }

    pub fn with_default(mut self, default: impl Into<String>) -> Self {
        self.default = default.into();
        self
    }
}

impl LlmClient for TableMock {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        let completion = self.table.get(&req.prompt).unwrap_or(&self.default);
        Ok(respond(req, completion))
    }
}

/// Wraps a function of the request.
pub struct FnMock<F>(pub F);

impl<F> LlmClient for FnMock<F>
where
    F: Fn(&GenerationRequest) -> Result<String, ClientError> + Send + Sync,
{
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        (self.0)(req).map(|c| respond(req, &c))
    }
}

/// Request/response pairs any server implementing the protocol must
/// satisfy when backed by a model that echoes a fixed continuation.
pub mod conformance {
    use serde_json::{json, Value};

    pub struct Vector {
        pub name: &'static str,
        pub path: &'static str,
        pub request: Value,
        /// Fields that must be present in the response with these values.
        pub expect: Value,
    }

    /// The server under test is assumed to continue any prompt with
    /// `" hello\n###\nnext"` and to tokenize on whitespace.
    pub fn vectors() -> Vec<Vector> {
        vec![
            Vector {
                name: "generate_stop_truncates",
                path: "/generate",
                request: json!({"prompt": "English sentence: hi\nFrench sentence:", "max_new_tokens": 16, "decoding": "greedy", "stop": "###"}),
                expect: json!({"completion": " hello\n"}),
            },
            Vector {
                name: "generate_without_stop",
                path: "/generate",
                request: json!({"prompt": "x", "max_new_tokens": 16, "decoding": "greedy", "stop": null}),
                expect: json!({"completion": " hello\n###\nnext", "prompt_tokens": 1}),
            },
            Vector {
                name: "score_nll_single_token",
                path: "/score_nll",
                request: json!({"text": "hello"}),
                expect: json!({"token_count": 1}),
            },
        ]
    }

    /// Checks that every expected field matches.
    pub fn matches(expect: &Value, actual: &Value) -> bool {
        match expect.as_object() {
            Some(fields) => fields.iter().all(|(k, v)| actual.get(k) == Some(v)),
            None => expect == actual,
        }
    }
}

//! Chat-completion gateway: prompt templates, provider abstraction, retries,
//! concurrency limiting, token accounting and the run transcript.

mod openai;
mod scripted;
mod template;
mod usage;

pub use openai::{OpenAiCompatible, OpenAiConfig};
pub use scripted::{ScriptedProvider, ScriptedReply};
pub use template::{render_template, PromptTemplate, TemplateSet};
pub use usage::{TokenRates, TokenUsage};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 4096;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// What a provider is asked. `context` carries the structured inputs the
/// prompt was rendered from; remote providers ignore it, the rule-based
/// provider computes its reply from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub context: serde_json::Value,
}

impl CompletionRequest {
    pub fn new(messages: Vec<Message>) -> Self {
        Self {
            messages,
            template_id: None,
            context: serde_json::Value::Null,
        }
    }

    pub fn with_template(mut self, id: impl Into<String>, context: serde_json::Value) -> Self {
        self.template_id = Some(id.into());
        self.context = context;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

/// Raw provider answer before cost accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderReply {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("http {status}: {body}")]
    Http { status: u16, body: String },
    #[error("provider refused: {0}")]
    Refusal(String),
    #[error("context length exceeded: {0}")]
    ContextLength(String),
    #[error("scripted provider has no replies left")]
    ScriptExhausted,
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("provider misconfigured: {0}")]
    Config(String),
}

impl ProviderError {
    /// Transport failures, rate limits and server errors are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait CompletionProvider: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, request: &CompletionRequest, params: &CompletionParams) -> Result<ProviderReply, ProviderError>;
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("template {template_id}: missing bindings for {names:?}")]
    MissingPlaceholders { template_id: String, names: Vec<String> },
    #[error("template {template_id}: body lacks required placeholders {names:?}")]
    TemplateUndeclared { template_id: String, names: Vec<String> },
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("request has no messages")]
    EmptyRequest,
    #[error("context length exceeded: {0}")]
    ContextLength(String),
    #[error("provider failed after {attempts} attempt(s): {source}")]
    Provider {
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("io: {0}")]
    Io(String),
}

/// Capped exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64 << retry.saturating_sub(1).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }

    /// Runs `op` until it succeeds, fails permanently, or attempts run out.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<(T, u32), (ProviderError, u32)> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op() {
                Ok(v) => return Ok((v, attempt)),
                Err(e) if e.is_transient() && attempt < attempts => {
                    log::warn!("attempt {attempt} failed ({e}); retrying");
                    std::thread::sleep(self.delay(attempt));
                }
                Err(e) => return Err((e, attempt)),
            }
        }
    }
}

/// One completed request/response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    pub request: Vec<Message>,
    pub response_text: String,
    pub usage: TokenUsage,
    pub provider_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub attempts: u32,
}

struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("limiter poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

/// Shared entry point for every LLM call of a run.
pub struct Gateway {
    provider: Arc<dyn CompletionProvider>,
    retry: RetryPolicy,
    rates: TokenRates,
    usage: Mutex<TokenUsage>,
    limiter: Limiter,
    transcript: Mutex<Option<BufWriter<File>>>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn CompletionProvider>, rates: TokenRates) -> Self {
        Self {
            provider,
            retry: RetryPolicy::default(),
            rates,
            usage: Mutex::new(TokenUsage::default()),
            limiter: Limiter {
                max: DEFAULT_MAX_IN_FLIGHT,
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
            },
            transcript: Mutex::new(None),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.limiter.max = max.max(1);
        self
    }

    /// Appends every exchange as one JSON line to `path`.
    pub fn with_transcript(self, path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        self.set_transcript(Some(path.as_ref()))?;
        Ok(self)
    }

    /// Redirects (or with `None`, stops) transcript output for later exchanges.
    pub fn set_transcript(&self, path: Option<&Path>) -> Result<(), GatewayError> {
        let writer = match path {
            Some(path) => {
                let f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
                Some(BufWriter::new(f))
            }
            None => None,
        };
        *self.transcript.lock().expect("transcript poisoned") = writer;
        Ok(())
    }

    pub fn provider_id(&self) -> String {
        self.provider.id()
    }

    pub fn rates(&self) -> TokenRates {
        self.rates
    }

    /// Sum of all exchanges so far, costed at the gateway's rates.
    pub fn cumulative_usage(&self) -> TokenUsage {
        *self.usage.lock().expect("usage poisoned")
    }

    pub fn complete(&self, request: CompletionRequest, params: CompletionParams) -> Result<ChatExchange, GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError::EmptyRequest);
        }
        let outcome = {
            let _slot = self.limiter.acquire();
            self.retry.run(|| self.provider.complete(&request, &params))
        };
        let (reply, attempts) = match outcome {
            Ok(ok) => ok,
            Err((ProviderError::ContextLength(msg), _)) => return Err(GatewayError::ContextLength(msg)),
            Err((source, attempts)) => return Err(GatewayError::Provider { attempts, source }),
        };
        let usage = self.rates.usage(reply.input_tokens, reply.output_tokens);
        {
            let mut total = self.usage.lock().expect("usage poisoned");
            *total = self.rates.usage(total.input_tokens + usage.input_tokens, total.output_tokens + usage.output_tokens);
        }
        let exchange = ChatExchange {
            template_id: request.template_id,
            request: request.messages,
            response_text: reply.text,
            usage,
            provider_id: self.provider.id(),
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            attempts,
        };
        if let Some(w) = self.transcript.lock().expect("transcript poisoned").as_mut() {
            let line = serde_json::to_string(&exchange).expect("serializable");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| GatewayError::Io(format!("transcript: {e}")))?;
        }
        Ok(exchange)
    }
}

/// Rough token count for providers that do not report one: four characters per token.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

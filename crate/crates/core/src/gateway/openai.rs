//! OpenAI-compatible `/chat/completions` client.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CompletionParams, CompletionProvider, CompletionRequest, Message, ProviderError, ProviderReply};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenAiConfig {
    /// Base URL up to and including the version segment, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> u64 {
    120
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    refusal: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct ErrorEnvelope {
    error: ErrorDetail,
}

#[derive(Deserialize)]
struct ErrorDetail {
    #[serde(default)]
    message: String,
    #[serde(default)]
    code: Option<String>,
}

pub struct OpenAiCompatible {
    config: OpenAiConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiCompatible {
    /// Reads the API key from the configured environment variable, if set.
    pub fn from_env(config: OpenAiConfig) -> Self {
        let key = std::env::var(&config.api_key_env).ok();
        Self::new(config, key)
    }

    pub fn new(config: OpenAiConfig, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, api_key, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl CompletionProvider for OpenAiCompatible {
    fn id(&self) -> String {
        format!("openai-compatible:{}", self.config.model)
    }

    fn complete(&self, request: &CompletionRequest, params: &CompletionParams) -> Result<ProviderReply, ProviderError> {
        let body = ChatBody {
            model: &self.config.model,
            messages: &request.messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut call = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(&body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(classify_error(status, text));
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Malformed("no choices".into()))?;
        if let Some(refusal) = choice.message.refusal.filter(|r| !r.is_empty()) {
            return Err(ProviderError::Refusal(refusal));
        }
        if choice.finish_reason.as_deref() == Some("content_filter") {
            return Err(ProviderError::Refusal("content filtered".into()));
        }
        if choice.finish_reason.as_deref() == Some("length") && choice.message.content.as_deref().map_or(true, str::is_empty) {
            return Err(ProviderError::ContextLength("no output before the token limit".into()));
        }
        let text = choice
            .message
            .content
            .ok_or_else(|| ProviderError::Malformed("choice without content".into()))?;
        let (input_tokens, output_tokens) = parsed
            .usage
            .map_or((0, 0), |u| (u.prompt_tokens, u.completion_tokens));
        Ok(ProviderReply {
            text,
            input_tokens,
            output_tokens,
        })
    }
}

fn classify_error(status: u16, body: String) -> ProviderError {
    let detail = serde_json::from_str::<ErrorEnvelope>(&body).ok().map(|e| e.error);
    let is_context = detail.as_ref().is_some_and(|d| {
        d.code.as_deref() == Some("context_length_exceeded") || d.message.contains("maximum context length")
    });
    if is_context {
        return ProviderError::ContextLength(detail.map(|d| d.message).unwrap_or_default());
    }
    match status {
        401 | 403 => ProviderError::Config(detail.map_or(body, |d| d.message)),
        _ => ProviderError::Http {
            status,
            body: detail.map_or(body, |d| d.message),
        },
    }
}

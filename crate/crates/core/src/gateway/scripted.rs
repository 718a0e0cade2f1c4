use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CompletionParams, CompletionProvider, CompletionRequest, GatewayError, ProviderError, ProviderReply};

/// One canned reply. Lines of a script file deserialize into this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Reply {
        text: String,
        #[serde(default)]
        input_tokens: u64,
        #[serde(default)]
        output_tokens: u64,
    },
    Fail { error: ProviderError },
}

impl ScriptedReply {
    pub fn text(text: impl Into<String>, input_tokens: u64, output_tokens: u64) -> Self {
        ScriptedReply::Reply {
            text: text.into(),
            input_tokens,
            output_tokens,
        }
    }

    pub fn error(error: ProviderError) -> Self {
        ScriptedReply::Fail { error }
    }
}

/// Replays a fixed queue of replies in order and remembers every request.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    queue: Mutex<VecDeque<ScriptedReply>>,
    seen: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedProvider {
    pub fn new(replies: impl IntoIterator<Item = ScriptedReply>) -> Self {
        Self {
            queue: Mutex::new(replies.into_iter().collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Script from a line-delimited file of [`ScriptedReply`] records.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
        let mut replies = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: ScriptedReply = serde_json::from_str(line)
                .map_err(|e| GatewayError::Io(format!("{}:{}: {e}", path.display(), i + 1)))?;
            replies.push(r);
        }
        Ok(Self::new(replies))
    }

    pub fn push(&self, reply: ScriptedReply) {
        self.queue.lock().expect("script poisoned").push_back(reply);
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script poisoned").len()
    }

    /// Requests received so far, in order.
    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.seen.lock().expect("script poisoned").clone()
    }
}

impl CompletionProvider for ScriptedProvider {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, request: &CompletionRequest, _params: &CompletionParams) -> Result<ProviderReply, ProviderError> {
        self.seen.lock().expect("script poisoned").push(request.clone());
        match self.queue.lock().expect("script poisoned").pop_front() {
            Some(ScriptedReply::Reply {
                text,
                input_tokens,
                output_tokens,
            }) => Ok(ProviderReply {
                text,
                input_tokens,
                output_tokens,
            }),
            Some(ScriptedReply::Fail { error }) => Err(error),
            None => Err(ProviderError::ScriptExhausted),
        }
    }
}

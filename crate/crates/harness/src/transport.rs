//! Chat transports: an HTTP JSON endpoint client and a scripted replay mock.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable naming the default chat endpoint.
pub const ENDPOINT_ENV: &str = "TILECHECK_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
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
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

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

/// Which loop step issued a request. Only the scripted mock looks at it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Plan,
    Lower,
    Evaluate,
    Analyze,
    Update,
}

impl Purpose {
    pub fn name(self) -> &'static str {
        match self {
            Purpose::Plan => "plan",
            Purpose::Lower => "lower",
            Purpose::Evaluate => "evaluate",
            Purpose::Analyze => "analyze",
            Purpose::Update => "update",
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("{path}: {msg}")]
    Script { path: PathBuf, msg: String },
    #[error("scripted transport has no reply left for `{0}`")]
    Exhausted(&'static str),
    #[error("scripted failure: {0}")]
    Injected(String),
    #[error("http: {0}")]
    Http(String),
    #[error("endpoint reply has no message content")]
    EmptyReply,
}

pub trait Transport {
    fn complete(&mut self, purpose: Purpose, messages: &[Message]) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, Serialize)]
struct ChatRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    messages: &'a [Message],
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

/// Either an OpenAI-style `choices` array or a bare `content` field.
#[derive(Debug, Deserialize)]
struct ChatReply {
    #[serde(default)]
    choices: Vec<Choice>,
    content: Option<String>,
}

/// POSTs `{"model", "messages": [{"role", "content"}]}` to a chat endpoint.
pub struct HttpTransport {
    url: String,
    model: Option<String>,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, model: Option<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            model,
            api_key,
            agent,
        }
    }

    pub fn from_env(model: Option<String>, timeout: Duration) -> Option<Self> {
        let url = std::env::var(ENDPOINT_ENV).ok().filter(|u| !u.is_empty())?;
        Some(Self::new(url, model, std::env::var("TILECHECK_API_KEY").ok(), timeout))
    }
}

impl Transport for HttpTransport {
    fn complete(&mut self, _purpose: Purpose, messages: &[Message]) -> Result<String, TransportError> {
        let body = ChatRequest {
            model: self.model.as_deref(),
            messages,
        };
        let mut req = self.agent.post(&self.url);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| TransportError::Http(e.to_string()))?;
        let reply: ChatReply = resp
            .body_mut()
            .read_json()
            .map_err(|e| TransportError::Http(e.to_string()))?;
        reply
            .choices
            .into_iter()
            .find_map(|c| c.message.content)
            .or(reply.content)
            .ok_or(TransportError::EmptyReply)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ScriptEntry {
    Text(String),
    File { file: String },
    Error { error: String },
}

#[derive(Debug, Clone)]
enum Reply {
    Text(String),
    Error(String),
}

/// Replays canned replies per purpose, falling back to the shared `any` queue.
#[derive(Debug, Clone, Default)]
pub struct ScriptedTransport {
    queues: BTreeMap<String, VecDeque<Reply>>,
    /// Every request received, in order.
    pub requests: Vec<(Purpose, Vec<Message>)>,
}

const QUEUES: [&str; 6] = ["plan", "lower", "evaluate", "analyze", "update", "any"];

impl ScriptedTransport {
    pub fn load(path: &Path) -> Result<Self, TransportError> {
        let err = |msg: String| TransportError::Script {
            path: path.to_path_buf(),
            msg,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let raw: BTreeMap<String, Vec<ScriptEntry>> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut out = Self::default();
        for (key, entries) in raw {
            if !QUEUES.contains(&key.as_str()) {
                return Err(err(format!("unknown queue `{key}`")));
            }
            let mut q = VecDeque::new();
            for e in entries {
                q.push_back(match e {
                    ScriptEntry::Text(s) => Reply::Text(s),
                    ScriptEntry::Error { error } => Reply::Error(error),
                    ScriptEntry::File { file } => {
                        let p = dir.join(&file);
                        Reply::Text(fs::read_to_string(&p).map_err(|e| err(format!("{}: {e}", p.display())))?)
                    }
                });
            }
            out.queues.insert(key, q);
        }
        Ok(out)
    }

    /// Builds a mock from in-memory replies; `Err` entries simulate failures.
    pub fn from_replies<I>(replies: I) -> Self
    where
        I: IntoIterator<Item = (Purpose, Result<String, String>)>,
    {
        let mut out = Self::default();
        for (p, r) in replies {
            out.push(p, r);
        }
        out
    }

    pub fn push(&mut self, purpose: Purpose, reply: Result<String, String>) {
        let r = match reply {
            Ok(s) => Reply::Text(s),
            Err(e) => Reply::Error(e),
        };
        self.queues.entry(purpose.name().to_string()).or_default().push_back(r);
    }

    pub fn remaining(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }
}

impl Transport for ScriptedTransport {
    fn complete(&mut self, purpose: Purpose, messages: &[Message]) -> Result<String, TransportError> {
        self.requests.push((purpose, messages.to_vec()));
        let reply = [purpose.name(), "any"]
            .iter()
            .find_map(|k| self.queues.get_mut(*k).and_then(VecDeque::pop_front))
            .ok_or(TransportError::Exhausted(purpose.name()))?;
        match reply {
            Reply::Text(s) => Ok(s),
            Reply::Error(e) => Err(TransportError::Injected(e)),
        }
    }
}

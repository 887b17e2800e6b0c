//! Planner: turns a kernel state into ranked optimization proposals.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::KnowledgeBase;
use crate::transport::{Message, Purpose, Transport, TransportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Proposal {
    /// Name of a knowledge base entry.
    pub optimization: String,
    pub context: String,
    pub score: f64,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("transport failed twice: {0}")]
    Transport(#[from] TransportError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProposalError {
    #[error("reply is not a JSON proposal array: {0}")]
    Json(String),
    #[error("proposal {index}: unknown optimization `{name}`")]
    UnknownOptimization { index: usize, name: String },
    #[error("proposal {index}: score {score} is outside [0, 1]")]
    Score { index: usize, score: String },
}

pub const DEFAULT_PLANNER_PROMPT: &str = "\
You plan optimizations for tile-level GPU kernels written in a small Python-like DSL.
Pick rewrites from the knowledge base that lower proxy cost (global bytes, shared bytes, barriers, statement count) \
while keeping every tag assertion passing.
Prefer rewrites whose invariants you can state concretely for this kernel. Never propose a rewrite that was just rejected \
without changing its context.";

/// The planner prompt and every earlier version of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlannerParams {
    history: Vec<String>,
}

impl PlannerParams {
    /// Panics on an empty prompt.
    pub fn new(theta: impl Into<String>) -> Self {
        let theta = theta.into();
        assert!(!theta.trim().is_empty(), "planner prompt must be non-empty");
        Self { history: vec![theta] }
    }

    pub fn theta(&self) -> &str {
        self.history.last().expect("history is never empty")
    }

    pub fn version(&self) -> usize {
        self.history.len() - 1
    }

    pub fn at(&self, version: usize) -> Option<&str> {
        self.history.get(version).map(String::as_str)
    }

    pub fn history(&self) -> &[String] {
        &self.history
    }
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self::new(DEFAULT_PLANNER_PROMPT)
    }
}

/// What the planner sees about the current state.
#[derive(Debug, Clone)]
pub struct PlanContext<'a> {
    pub source: &'a str,
    /// Summary of the current state's validation.
    pub feedback: &'a str,
    /// Summary of the most recent rejected attempt, if any.
    pub last_attempt: Option<&'a str>,
}

const FORMAT: &str = "\
Reply with a JSON array only, each element {\"optimization\": <knowledge base name>, \"context\": <how it applies to this \
kernel, with concrete invariant instantiations>, \"score\": <number in [0, 1]>}.";

/// Strips a surrounding fenced block, if any.
fn json_body(reply: &str) -> &str {
    let t = reply.trim();
    if let Some(start) = t.find("```") {
        let after = &t[start + 3..];
        let after = after.find('\n').map_or(after, |n| &after[n + 1..]);
        if let Some(end) = after.find("```") {
            return after[..end].trim();
        }
    }
    t
}

/// Parses and validates a planner reply; sorts by score, stable on ties.
pub fn parse_proposals(reply: &str, kb: &KnowledgeBase) -> Result<Vec<Proposal>, ProposalError> {
    let mut ps: Vec<Proposal> =
        serde_json::from_str(json_body(reply)).map_err(|e| ProposalError::Json(e.to_string()))?;
    for (index, p) in ps.iter().enumerate() {
        if kb.get(&p.optimization).is_none() {
            return Err(ProposalError::UnknownOptimization {
                index,
                name: p.optimization.clone(),
            });
        }
        if !p.score.is_finite() || !(0.0..=1.0).contains(&p.score) {
            return Err(ProposalError::Score {
                index,
                score: p.score.to_string(),
            });
        }
    }
    ps.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(ps)
}

fn call_with_retry(
    transport: &mut dyn Transport,
    purpose: Purpose,
    messages: &[Message],
) -> Result<String, TransportError> {
    match transport.complete(purpose, messages) {
        Ok(r) => Ok(r),
        Err(e) => {
            warn!("{} request failed, retrying: {e}", purpose.name());
            transport.complete(purpose, messages)
        }
    }
}

pub fn plan(
    ctx: &PlanContext<'_>,
    kb: &KnowledgeBase,
    params: &PlannerParams,
    transport: &mut dyn Transport,
) -> Result<Vec<Proposal>, PlanError> {
    if kb.is_empty() {
        return Ok(Vec::new());
    }
    let mut user = format!(
        "Knowledge base:\n{}\nCurrent kernel:\n```\n{}```\n\nValidation of the current kernel:\n{}\n",
        kb.catalog(),
        ctx.source,
        ctx.feedback
    );
    if let Some(a) = ctx.last_attempt {
        user.push_str(&format!("\nMost recent rejected attempt:\n{a}\n"));
    }
    user.push('\n');
    user.push_str(FORMAT);
    let mut messages = vec![Message::system(params.theta()), Message::user(user)];
    let first = call_with_retry(transport, Purpose::Plan, &messages)?;
    match parse_proposals(&first, kb) {
        Ok(ps) => return Ok(ps),
        Err(e) => {
            messages.push(Message::assistant(first));
            messages.push(Message::user(format!("That reply was rejected: {e}. {FORMAT}")));
        }
    }
    let second = call_with_retry(transport, Purpose::Plan, &messages)?;
    match parse_proposals(&second, kb) {
        Ok(ps) => Ok(ps),
        Err(e) => {
            warn!("planner reply malformed after re-ask, no proposals: {e}");
            Ok(Vec::new())
        }
    }
}

/// Asks the transport to rewrite the planner prompt given a critique. On a
/// transport failure or an empty reply the parameters are returned unchanged.
pub fn update_params(params: &PlannerParams, gradient: &str, transport: &mut dyn Transport) -> PlannerParams {
    let messages = [
        Message::system(
            "You revise the instructions of a kernel optimization planner. Reply with the full revised instructions only.",
        ),
        Message::user(format!(
            "Current instructions:\n{}\n\nCritique of the last episode:\n{}\n",
            params.theta(),
            gradient
        )),
    ];
    match transport.complete(Purpose::Update, &messages) {
        Ok(r) if !r.trim().is_empty() => {
            let mut next = params.clone();
            next.history.push(r.trim().to_string());
            next
        }
        Ok(_) => {
            warn!("planner update returned an empty prompt, keeping version {}", params.version());
            params.clone()
        }
        Err(e) => {
            warn!("planner update failed, keeping version {}: {e}", params.version());
            params.clone()
        }
    }
}

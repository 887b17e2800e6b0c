//! Lowering a selected proposal into candidate kernel source.

use thiserror::Error;
use tilecheck::dsl::parse;

use crate::kb::KnowledgeBase;
use crate::planner::Proposal;
use crate::transport::{Message, Purpose, Transport, TransportError};

#[derive(Debug, Error)]
pub enum LowerPlanError {
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("reply contains no kernel source block")]
    NoCode,
}

const SYSTEM: &str = "\
You rewrite tile-level GPU kernels in a small Python-like DSL. Keep the kernel signature, tag declarations and \
assertions unless the rewrite requires new ones. Reply with the complete rewritten kernel in one fenced code block.";

/// First fenced block containing a kernel header; otherwise the whole reply
/// when it parses as a kernel on its own.
pub fn extract_source(reply: &str) -> Option<String> {
    let mut rest = reply;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = after.find('\n')? + 1;
        let body = &after[body_start..];
        let end = body.find("```")?;
        let block = &body[..end];
        if block.contains("def ") {
            return Some(block.to_string());
        }
        rest = &body[end + 3..];
    }
    let t = reply.trim();
    parse(t).is_ok().then(|| format!("{t}\n"))
}

pub fn lower_plan(
    source: &str,
    proposal: &Proposal,
    kb: &KnowledgeBase,
    transport: &mut dyn Transport,
) -> Result<String, LowerPlanError> {
    let mut messages = vec![Message::system(SYSTEM)];
    if let Some(e) = kb.get(&proposal.optimization) {
        messages.push(Message::user(format!(
            "Example of `{}` ({}):\n{}",
            e.name, e.category, e.description
        )));
        messages.push(Message::assistant(format!(
            "Pattern:\n```\n{}```\nInvariants that must hold afterwards:\n```\n{}```",
            e.pattern, e.invariants
        )));
    }
    messages.push(Message::user(format!(
        "Apply `{}` to this kernel.\nContext: {}\n```\n{}```",
        proposal.optimization, proposal.context, source
    )));
    let reply = transport.complete(Purpose::Lower, &messages)?;
    extract_source(&reply).ok_or(LowerPlanError::NoCode)
}

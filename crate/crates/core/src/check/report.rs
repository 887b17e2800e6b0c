//! JSON and text renderings of check results.

use std::fmt::Write;

use serde::Serialize;

use super::{CheckResult, Status, Violation, WriterPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

#[derive(Serialize)]
struct PassReport {
    status: Status,
    checked: u64,
}

#[derive(Serialize)]
struct FailReport<'a> {
    status: Status,
    checked: u64,
    failures: u64,
    truncated: bool,
    limit: usize,
    violations: Vec<&'a Violation>,
}

pub fn report(results: &[CheckResult], format: ReportFormat) -> String {
    let checked = results.iter().map(|r| r.checked).sum();
    let failures: u64 = results.iter().map(|r| r.failures).sum();
    match format {
        ReportFormat::Json => {
            let mut s = if failures == 0 {
                serde_json::to_string(&PassReport {
                    status: Status::Pass,
                    checked,
                })
            } else {
                serde_json::to_string(&FailReport {
                    status: Status::Fail,
                    checked,
                    failures,
                    truncated: results.iter().any(|r| r.truncated),
                    limit: results.first().map_or(super::DEFAULT_TRUNCATE, |r| r.limit),
                    violations: results.iter().flat_map(|r| &r.violations).collect(),
                })
            }
            .expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Text => text(results, checked, failures),
    }
}

fn writers(ws: &[WriterPoint]) -> String {
    if ws.is_empty() {
        return "none".into();
    }
    ws.iter()
        .map(|w| {
            let inst: Vec<String> = w.instance.iter().map(u32::to_string).collect();
            format!("line {} stmt {} [{}] thread {}", w.line, w.stmt, inst.join(","), w.thread)
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn coord(c: &[i64]) -> String {
    c.iter().map(i64::to_string).collect::<Vec<_>>().join(", ")
}

fn text(results: &[CheckResult], checked: u64, failures: u64) -> String {
    let mut out = String::new();
    if failures == 0 {
        let _ = writeln!(out, "pass: {checked} points checked");
        return out;
    }
    let _ = writeln!(out, "fail: {failures} of {checked} points violate assertions");
    for r in results {
        for v in &r.violations {
            let _ = writeln!(out);
            let _ = writeln!(out, "violation of {} assertion {} at {}", v.kind, v.assertion_id, v.point);
            let _ = writeln!(out, "  thread:   {}", v.thread);
            let _ = writeln!(out, "  position: [{}]", coord(&v.position));
            let _ = writeln!(out, "  left:     {}[{}] = {}", v.left.tile, coord(&v.left.coord), v.left.tag);
            let _ = writeln!(out, "  right:    {}[{}] = {}", v.right.tile, coord(&v.right.coord), v.right.tag);
            let _ = writeln!(out, "  left writers:  {}", writers(&v.writers.left));
            let _ = writeln!(out, "  right writers: {}", writers(&v.writers.right));
        }
        if r.truncated {
            let _ = writeln!(
                out,
                "\n  ... assertion {} has {} failing points; first {} shown",
                r.assertion_id,
                r.failures,
                r.violations.len()
            );
        }
    }
    out
}

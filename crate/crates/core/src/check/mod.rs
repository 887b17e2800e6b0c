//! Assertion discharge by exhaustive enumeration over threads and element
//! positions.
//!
//! Points are visited in the order (thread, instance, element position),
//! element positions lexicographically by quantifier.

mod report;

pub use report::{report, ReportFormat};

use serde::Serialize;
use thiserror::Error;

use crate::dsl::ast::AssertKind;
use crate::ir::iexpr::{FIRST_FREE, TID};
use crate::ir::lower::for_each_point;
use crate::ir::types::*;
use crate::tags::engine::TagTrace;
use crate::tags::lattice::{Tag, TagId};

pub const DEFAULT_TRUNCATE: usize = 16;
pub const DEFAULT_DOMAIN_CAP: u64 = 1 << 26;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("line {line}: `{tile}` is written by the kernel; its tags are not tracked")]
    UntrackedTile { tile: String, line: u32 },
    #[error("line {line}: no tag snapshot for `{tile}`")]
    MissingCapture { tile: String, line: u32 },
    #[error("line {line}: assertion domain of {required} points exceeds the cap of {allowed}")]
    DomainCap { required: u64, allowed: u64, line: u32 },
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Violations materialized per assertion statement.
    pub truncate: usize,
    pub domain_cap: u64,
    pub workers: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            truncate: DEFAULT_TRUNCATE,
            domain_cap: DEFAULT_DOMAIN_CAP,
            workers: 1,
        }
    }
}

/// One assertion instance with its finite domain.
#[derive(Debug, Clone)]
pub struct Constraint {
    /// Statement id of the assertion.
    pub assertion_id: u32,
    /// Index of the instance in the IR.
    pub instance: usize,
    pub point: ProgramPoint,
    pub kind: AssertKind,
    pub left: Accessor,
    pub right: Accessor,
    pub quants: Vec<(String, i64)>,
    pub threads: u32,
}

impl Constraint {
    pub fn domain(&self) -> u64 {
        self.threads as u64 * self.quants.iter().map(|(_, n)| *n as u64).product::<u64>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WriterPoint {
    pub stmt: u32,
    pub instance: Vec<u32>,
    pub line: u32,
    pub thread: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Side {
    pub tile: String,
    pub coord: Vec<i64>,
    pub tag: Tag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SideWriters {
    pub left: Vec<WriterPoint>,
    pub right: Vec<WriterPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub assertion_id: u32,
    pub kind: &'static str,
    pub point: ProgramPoint,
    pub thread: u32,
    /// Quantifier values, in declaration order.
    pub position: Vec<i64>,
    pub left: Side,
    pub right: Side,
    pub writers: SideWriters,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

/// Outcome for one assertion statement across all its instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub assertion_id: u32,
    pub line: u32,
    pub kind: AssertKind,
    pub status: Status,
    pub checked: u64,
    /// Failing points, including those not materialized.
    pub failures: u64,
    pub violations: Vec<Violation>,
    pub truncated: bool,
    pub limit: usize,
}

pub fn kind_name(kind: AssertKind) -> &'static str {
    match kind {
        AssertKind::Conform => "conformity",
        AssertKind::NonConform => "non-conformity",
    }
}

/// Whether an assertion holds for one pair of tags.
pub fn holds(kind: AssertKind, left: TagId, right: TagId) -> bool {
    match kind {
        AssertKind::Conform => left == right && !left.is_top(),
        AssertKind::NonConform => left != right && !left.is_top() && !right.is_top(),
    }
}

/// Same predicate over resolved tags.
pub fn holds_tags(kind: AssertKind, left: &Tag, right: &Tag) -> bool {
    match kind {
        AssertKind::Conform => left == right && *left != Tag::Top,
        AssertKind::NonConform => left != right && *left != Tag::Top && *right != Tag::Top,
    }
}

pub fn compile_assertions(ir: &KernelIr, trace: &TagTrace) -> Result<Vec<Constraint>, CheckError> {
    let mut out = Vec::new();
    for (idx, inst) in ir.assertion_instances() {
        let Op::Assert(a) = &inst.op else { unreachable!() };
        for acc in [&a.left, &a.right] {
            let d = &ir.decls[acc.elem.decl];
            if d.space == Space::Global && d.writable {
                return Err(CheckError::UntrackedTile {
                    tile: acc.tile.clone(),
                    line: inst.point.line,
                });
            }
            if trace.snap(idx, acc.elem.decl).is_none() {
                return Err(CheckError::MissingCapture {
                    tile: acc.tile.clone(),
                    line: inst.point.line,
                });
            }
        }
        out.push(Constraint {
            assertion_id: inst.point.stmt,
            instance: idx,
            point: inst.point.clone(),
            kind: a.kind,
            left: a.left.clone(),
            right: a.right.clone(),
            quants: a.quants.clone(),
            threads: ir.threads,
        });
    }
    Ok(out)
}

/// Violations of one thread range, in enumeration order.
struct Partial {
    failures: u64,
    first: Vec<Violation>,
}

fn side_tag(
    acc: &Accessor,
    snap: &crate::tags::engine::RegionSnap,
    thread: u32,
    env: &[i64],
) -> (TagId, Option<usize>) {
    match acc.elem.offset.eval(env) {
        Ok(o) if o >= 0 => {
            let o = o as usize;
            (snap.element(thread, o, acc.elem.width()).unwrap_or(TagId::TOP), Some(o))
        }
        _ => (TagId::TOP, None),
    }
}

fn discharge_range(
    ir: &KernelIr,
    c: &Constraint,
    trace: &TagTrace,
    threads: std::ops::Range<u32>,
    limit: usize,
) -> Partial {
    let ls = trace.snap(c.instance, c.left.elem.decl).expect("compiled constraint");
    let rs = trace.snap(c.instance, c.right.elem.decl).expect("compiled constraint");
    let dims: Vec<i64> = c.quants.iter().map(|(_, n)| *n).collect();
    let mut env = ir.env(0, trace.block, dims.len());
    let mut p = Partial {
        failures: 0,
        first: Vec::new(),
    };
    for t in threads {
        env[TID as usize] = t as i64;
        for_each_point(&dims, |q| {
            env[FIRST_FREE as usize..].copy_from_slice(q);
            let (lt, lo) = side_tag(&c.left, ls, t, &env);
            let (rt, ro) = side_tag(&c.right, rs, t, &env);
            if holds(c.kind, lt, rt) {
                return;
            }
            p.failures += 1;
            if p.first.len() < limit {
                let side = |acc: &Accessor, tag: TagId| Side {
                    tile: acc.tile.clone(),
                    coord: acc.elem.coords.iter().map(|e| e.eval(&env).unwrap_or(-1)).collect(),
                    tag: trace.resolve(tag),
                };
                let writers = |snap: &crate::tags::engine::RegionSnap, off: Option<usize>, w: usize| {
                    off.map(|o| snap.writers(t, o, w))
                        .unwrap_or_default()
                        .into_iter()
                        .map(|(i, th)| {
                            let pt = &ir.instances[i as usize].point;
                            WriterPoint {
                                stmt: pt.stmt,
                                instance: pt.instance.clone(),
                                line: pt.line,
                                thread: th,
                            }
                        })
                        .collect()
                };
                p.first.push(Violation {
                    assertion_id: c.assertion_id,
                    kind: kind_name(c.kind),
                    point: c.point.clone(),
                    thread: t,
                    position: q.to_vec(),
                    left: side(&c.left, lt),
                    right: side(&c.right, rt),
                    writers: SideWriters {
                        left: writers(ls, lo, c.left.elem.width()),
                        right: writers(rs, ro, c.right.elem.width()),
                    },
                });
            }
        });
    }
    p
}

/// Enumerates one constraint's domain, optionally across worker threads.
pub fn discharge(
    ir: &KernelIr,
    c: &Constraint,
    trace: &TagTrace,
    opts: &CheckOptions,
) -> Result<CheckResult, CheckError> {
    let domain = c.domain();
    if domain > opts.domain_cap {
        return Err(CheckError::DomainCap {
            required: domain,
            allowed: opts.domain_cap,
            line: c.point.line,
        });
    }
    let workers = opts.workers.clamp(1, c.threads.max(1) as usize) as u32;
    let chunk = c.threads.div_ceil(workers);
    let parts: Vec<Partial> = if workers == 1 {
        vec![discharge_range(ir, c, trace, 0..c.threads, opts.truncate)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let lo = (w * chunk).min(c.threads);
                    let hi = ((w + 1) * chunk).min(c.threads);
                    s.spawn(move || discharge_range(ir, c, trace, lo..hi, opts.truncate))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    };
    let failures = parts.iter().map(|p| p.failures).sum();
    let mut violations: Vec<Violation> = parts.into_iter().flat_map(|p| p.first).collect();
    violations.truncate(opts.truncate);
    Ok(CheckResult {
        assertion_id: c.assertion_id,
        line: c.point.line,
        kind: c.kind,
        status: if failures == 0 { Status::Pass } else { Status::Fail },
        checked: domain,
        failures,
        truncated: failures > violations.len() as u64,
        violations,
        limit: opts.truncate,
    })
}

/// Discharges every constraint and groups results by assertion statement,
/// in order of first appearance.
pub fn check_all(
    ir: &KernelIr,
    constraints: &[Constraint],
    trace: &TagTrace,
    opts: &CheckOptions,
) -> Result<Vec<CheckResult>, CheckError> {
    let mut out: Vec<CheckResult> = Vec::new();
    let mut order: Vec<Vec<(usize, Violation)>> = Vec::new();
    for c in constraints {
        let r = discharge(ir, c, trace, opts)?;
        let slot = match out.iter().position(|x| x.assertion_id == c.assertion_id) {
            Some(i) => i,
            None => {
                out.push(CheckResult {
                    violations: Vec::new(),
                    checked: 0,
                    failures: 0,
                    status: Status::Pass,
                    truncated: false,
                    ..r.clone()
                });
                order.push(Vec::new());
                out.len() - 1
            }
        };
        let agg = &mut out[slot];
        agg.checked += r.checked;
        agg.failures += r.failures;
        order[slot].extend(r.violations.into_iter().map(|v| (c.instance, v)));
    }
    for (agg, mut vs) in out.iter_mut().zip(order) {
        vs.sort_by(|(ia, a), (ib, b)| (a.thread, ia, &a.position).cmp(&(b.thread, ib, &b.position)));
        agg.violations = vs.into_iter().take(opts.truncate).map(|(_, v)| v).collect();
        agg.status = if agg.failures == 0 { Status::Pass } else { Status::Fail };
        agg.truncated = agg.failures > agg.violations.len() as u64;
    }
    Ok(out)
}

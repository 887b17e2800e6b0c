//! Memory-safety validation by enumeration over the launch grid.

use thiserror::Error;

use super::iexpr::{IExpr, FIRST_FREE, TID};
use super::lower::for_each_point;
use super::types::*;
use crate::layout::view_compatible;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SafetyError {
    #[error("{point}: out-of-bounds access to `{tile}` by thread {thread} in block {block:?} at byte offset {offset}: {detail}")]
    OutOfBounds {
        point: ProgramPoint,
        tile: String,
        thread: u32,
        block: [i64; 3],
        offset: i64,
        detail: String,
    },
    #[error("{point}: view `{name}` ({dst}) is incompatible with its source ({src})")]
    IncompatibleView {
        point: ProgramPoint,
        name: String,
        src: String,
        dst: String,
    },
}

enum Access<'a> {
    Elem(&'a ElemRef),
    Region(&'a Region),
}

impl Access<'_> {
    fn exprs(&self) -> Vec<&IExpr> {
        let (checks, head) = match self {
            Access::Elem(e) => (&e.checks, &e.offset),
            Access::Region(r) => (&r.checks, &r.base),
        };
        std::iter::once(head).chain(checks.iter().map(|c| &c.expr)).collect()
    }
}

fn accesses(op: &Op) -> (Vec<Access<'_>>, Vec<i64>) {
    let mut out = Vec::new();
    let mut dims = Vec::new();
    match op {
        Op::Store { dst, value } => {
            out.push(Access::Elem(dst));
            match value {
                StoreValue::Copy(s) => out.push(Access::Elem(s)),
                StoreValue::Gather(parts) => out.extend(parts.iter().map(|p| Access::Elem(&p.src))),
                StoreValue::Compute(v) => v.for_each_load(&mut |r| {
                    if !r.guarded {
                        out.push(Access::Elem(r))
                    }
                }),
            }
        }
        Op::Matmul { a, b, c, d, .. } => {
            out.extend([a, b, c, d].into_iter().map(Access::Region));
        }
        Op::ViewAlias { dst, .. } => out.push(Access::Region(dst)),
        Op::TagStamp { region, .. } => out.push(Access::Region(region)),
        Op::Assert(a) => {
            out.push(Access::Elem(&a.left.elem));
            out.push(Access::Elem(&a.right.elem));
            dims = a.quants.iter().map(|(_, n)| *n).collect();
        }
        Op::Barrier | Op::Reset { .. } | Op::Annotation { .. } => {}
    }
    (out, dims)
}

/// Checks one access under `env`; returns the failing offset and a description.
fn check(access: &Access, ir: &KernelIr, env: &[i64]) -> Option<(i64, String)> {
    let (checks, head, decl, lo_rel, hi_rel) = match access {
        Access::Elem(e) => (&e.checks, &e.offset, e.decl, 0, e.width() as i64),
        Access::Region(r) => {
            let eb = r.dtype.bytes() as i64;
            (
                &r.checks,
                &r.base,
                r.decl,
                r.layout.min_offset() * eb,
                (r.layout.max_offset() + 1) * eb,
            )
        }
    };
    let offset = match head.eval(env) {
        Ok(o) => o,
        Err(e) => return Some((0, format!("index arithmetic failed: {e}"))),
    };
    for c in checks {
        match c.expr.eval(env) {
            Ok(v) if (0..c.extent).contains(&v) => {}
            Ok(v) => {
                return Some((
                    offset,
                    format!("coordinate {v} ({}) outside [0, {})", c.expr, c.extent),
                ))
            }
            Err(e) => return Some((offset, format!("index arithmetic failed: {e}"))),
        }
    }
    let bytes = ir.decls[decl].bytes as i64;
    if offset + lo_rel < 0 || offset + hi_rel > bytes {
        return Some((
            offset,
            format!(
                "bytes [{}, {}) exceed the {bytes}-byte declaration",
                offset + lo_rel,
                offset + hi_rel
            ),
        ));
    }
    None
}

/// Verifies every view and every access of every thread in every block of
/// `grid`. Reports the first offender in instance, block, thread order.
pub fn validate_memory_safety(ir: &KernelIr, grid: [i64; 3]) -> Result<(), SafetyError> {
    let mut blocks = Vec::new();
    for_each_point(&[grid[0], grid[1], grid[2]], |b| blocks.push([b[0], b[1], b[2]]));
    for inst in &ir.instances {
        if let Op::ViewAlias { name, src, dst } = &inst.op {
            let same = src.layout == dst.layout && src.dtype == dst.dtype;
            if !same && !view_compatible(&src.layout, &dst.layout) {
                return Err(SafetyError::IncompatibleView {
                    point: inst.point.clone(),
                    name: name.clone(),
                    src: format!("{} {}", src.layout, src.dtype),
                    dst: format!("{} {}", dst.layout, dst.dtype),
                });
            }
        }
        let (accs, dims) = accesses(&inst.op);
        for acc in &accs {
            let exprs = acc.exprs();
            let by_block = exprs.iter().any(|e| e.uses_block());
            let by_thread = exprs.iter().any(|e| e.any_slot(&|s| s == TID));
            let bl: &[[i64; 3]] = if by_block { &blocks } else { &blocks[..1.min(blocks.len())] };
            let threads = if by_thread { ir.threads } else { ir.threads.min(1) };
            for &block in bl {
                let mut env = ir.env(0, block, dims.len());
                for t in 0..threads {
                    env[TID as usize] = t as i64;
                    let mut fail = None;
                    for_each_point(&dims, |q| {
                        if fail.is_some() {
                            return;
                        }
                        env[FIRST_FREE as usize..].copy_from_slice(q);
                        fail = check(acc, ir, &env);
                    });
                    if let Some((offset, detail)) = fail {
                        let tile = match acc {
                            Access::Elem(e) => e.name.clone(),
                            Access::Region(r) => r.name.clone(),
                        };
                        return Err(SafetyError::OutOfBounds {
                            point: inst.point.clone(),
                            tile,
                            thread: t,
                            block,
                            offset,
                            detail,
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

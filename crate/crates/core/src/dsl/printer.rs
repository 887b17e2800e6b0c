//! Canonical pretty-printer. Output re-parses to the same tree.

use std::fmt::Write;

use super::ast::*;

const PREC_COND: u8 = 1;
const PREC_UNARY: u8 = 9;
const PREC_ATOM: u8 = 10;

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    let params: Vec<String> = p.params.iter().map(print_param).collect();
    let _ = writeln!(out, "def {}({}):", p.name, params.join(", "));
    print_block(&mut out, &p.body, 1);
    out
}

pub fn print_stmts(stmts: &[Stmt]) -> String {
    let mut out = String::new();
    for s in stmts {
        print_stmt(&mut out, s, 0);
    }
    out
}

fn print_param(p: &Param) -> String {
    match &p.kind {
        ParamKind::Const { default: None } => format!("{}: const", p.name),
        ParamKind::Const { default: Some(e) } => format!("{}: const = {}", p.name, expr(e)),
        ParamKind::Tensor { shape, dtype } => {
            format!("{}: Tensor({}, {})", p.name, expr(&Expr::Tuple(shape.clone())), dtype)
        }
    }
}

fn print_block(out: &mut String, body: &[Stmt], depth: usize) {
    if body.is_empty() {
        let _ = writeln!(out, "{}pass", "    ".repeat(depth));
    }
    for s in body {
        print_stmt(out, s, depth);
    }
}

fn print_stmt(out: &mut String, s: &Stmt, depth: usize) {
    let pad = "    ".repeat(depth);
    match &s.kind {
        StmtKind::Assign { targets, values } => {
            let t: Vec<String> = targets.iter().map(expr).collect();
            let v: Vec<String> = values.iter().map(expr).collect();
            let _ = writeln!(out, "{pad}{} = {}", t.join(", "), v.join(", "));
        }
        StmtKind::For { var, count, body } | StmtKind::Forall { var, count, body } => {
            let kw = if matches!(s.kind, StmtKind::For { .. }) {
                "for"
            } else {
                "forall"
            };
            let _ = writeln!(out, "{pad}{kw} {var} in range({}):", expr(count));
            print_block(out, body, depth + 1);
        }
        StmtKind::Sync => {
            let _ = writeln!(out, "{pad}syncthreads()");
        }
        StmtKind::Reset(t) => {
            let _ = writeln!(out, "{pad}reset({t})");
        }
        StmtKind::Annotation { name, args } => {
            let _ = writeln!(out, "{pad}{name}({})", args_str(args));
        }
        StmtKind::Assert(a) => {
            let op = match a.kind {
                AssertKind::Conform => "==",
                AssertKind::NonConform => "!=",
            };
            let _ = write!(
                out,
                "{pad}assert {} {op} {}",
                tag_access(&a.left),
                tag_access(&a.right)
            );
            for (v, n) in &a.quants {
                let _ = write!(out, " for {v} in range({})", expr(n));
            }
            out.push('\n');
        }
    }
}

fn tag_access(t: &TagAccess) -> String {
    if t.indices.is_empty() {
        format!("tag({})", t.tile)
    } else {
        format!("tag({}[{}])", t.tile, args_str(&t.indices))
    }
}

fn args_str(args: &[Expr]) -> String {
    args.iter().map(expr).collect::<Vec<_>>().join(", ")
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Cond { .. } => PREC_COND,
        Expr::Bin { op, .. } => op.precedence(),
        Expr::Neg(_) => PREC_UNARY,
        Expr::Int(v) if *v < 0 => PREC_UNARY,
        Expr::Float(v) if v.is_sign_negative() => PREC_UNARY,
        Expr::TagFn { .. } | Expr::Gen { .. } => 0,
        _ => PREC_ATOM,
    }
}

fn wrap(e: &Expr, min: u8) -> String {
    let s = expr(e);
    if prec(e) < min {
        format!("({s})")
    } else {
        s
    }
}

pub fn expr(e: &Expr) -> String {
    match e {
        Expr::Int(v) => v.to_string(),
        Expr::Float(v) => format!("{v:?}"),
        Expr::Name(n) => n.clone(),
        Expr::Attr { base, field } => format!("{}.{field}", wrap(base, PREC_ATOM)),
        Expr::Index { base, indices } => {
            format!("{}[{}]", wrap(base, PREC_ATOM), args_str(indices))
        }
        Expr::Call { func, args } => format!("{func}({})", args_str(args)),
        Expr::Method { base, name, args } => {
            format!("{}.{name}({})", wrap(base, PREC_ATOM), args_str(args))
        }
        Expr::Gen { elt, var, count } => {
            format!("{} for {var} in range({})", wrap(elt, 2), expr(count))
        }
        Expr::Tuple(items) => match items.len() {
            1 => format!("({},)", expr(&items[0])),
            _ => format!("({})", args_str(items)),
        },
        Expr::Neg(inner) => format!("-{}", wrap(inner, PREC_UNARY)),
        Expr::Bin { op, lhs, rhs } => {
            let p = op.precedence();
            format!("{} {} {}", wrap(lhs, p), op.symbol(), wrap(rhs, p + 1))
        }
        Expr::Cond {
            then,
            cond,
            otherwise,
        } => format!(
            "{} if {} else {}",
            wrap(then, 2),
            wrap(cond, 2),
            wrap(otherwise, PREC_COND)
        ),
        Expr::TagFn {
            tensor,
            vars,
            tuple,
        } => {
            let t = if tuple.len() == 1 {
                format!("({},)", expr(&tuple[0]))
            } else {
                format!("({})", args_str(tuple))
            };
            format!("{tensor}[{}] -> {t}", vars.join(", "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse;
    use super::*;

    fn round_trip(src: &str) {
        let mut a = parse(src).unwrap();
        let printed = print_program(&a);
        let mut b = parse(&printed).unwrap_or_else(|e| panic!("{e}\n{printed}"));
        strip_positions(&mut a.body);
        strip_positions(&mut b.body);
        assert_eq!(a, b, "{printed}");
    }

    #[test]
    fn round_trips() {
        round_trip("def k(n: const = 3, A: Tensor((n,), fp32)):\n    x = -(a - -5) * (b + 1) % 3\n    y = 1 if (a if b else c) else 2\n    r[0] = -1e30\n    forall i in range(4): r[i] = A[(i + 1) % n] ^ i << 2\n");
        round_trip("def k():\n    T = A[m, k] -> (m % 32,)\n    assert tag(a) == tag(b[0]) for e in range(2) for f in range(3)\n    sched_barrier(0)\n    s[0] = concat(hi(t[k]) for k in range(2))\n");
    }

    #[test]
    fn negative_literal_operands() {
        round_trip("def k():\n    x = a - (b - c)\n    y = --5\n    z = (a < b) == (c > d)\n");
    }
}

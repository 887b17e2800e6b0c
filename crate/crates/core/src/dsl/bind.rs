//! Compile-time constant binding and folding.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::ast::*;
use crate::intops::{self, IntOpError};

pub type Bindings = BTreeMap<String, i64>;

/// Name of the mandatory thread-count binding.
pub const THREADS: &str = "threads";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindError {
    #[error("missing binding for const `{0}`")]
    MissingConst(String),
    #[error("line {line}: {what} folds to non-positive extent {value}")]
    NonPositiveExtent { what: String, value: i64, line: u32 },
    #[error("line {line}: division by zero while folding constants")]
    DivByZero { line: u32 },
    #[error("line {line}: integer overflow while folding constants")]
    Overflow { line: u32 },
    #[error("line {line}: {what} is not a compile-time constant")]
    NotConstant { what: String, line: u32 },
    #[error("line {line}: const `{name}` cannot be rebound")]
    ConstShadowed { name: String, line: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundProgram {
    /// The program with every const and derived constant substituted.
    pub program: Program,
    /// Const parameters plus the thread count.
    pub consts: Bindings,
    /// Single-assignment top-level names that fold to integers.
    pub derived: Bindings,
}

impl BoundProgram {
    pub fn threads(&self) -> i64 {
        self.consts[THREADS]
    }

    /// Value of a const or derived constant.
    pub fn constant(&self, name: &str) -> Option<i64> {
        self.consts
            .get(name)
            .or_else(|| self.derived.get(name))
            .copied()
    }
}

pub fn bind_constants(program: &Program, bindings: &Bindings) -> Result<BoundProgram, BindError> {
    let mut consts = Bindings::new();
    for p in &program.params {
        if let ParamKind::Const { default } = &p.kind {
            let v = match (bindings.get(&p.name), default) {
                (Some(v), _) => *v,
                (None, Some(d)) => match fold(d, &consts, 0)? {
                    Expr::Int(v) => v,
                    _ => {
                        return Err(BindError::NotConstant {
                            what: format!("default of `{}`", p.name),
                            line: 0,
                        })
                    }
                },
                (None, None) => return Err(BindError::MissingConst(p.name.clone())),
            };
            consts.insert(p.name.clone(), v);
        }
    }
    let threads = *bindings
        .get(THREADS)
        .ok_or_else(|| BindError::MissingConst(THREADS.into()))?;
    if threads <= 0 {
        return Err(BindError::NonPositiveExtent {
            what: "thread count".into(),
            value: threads,
            line: 0,
        });
    }
    consts.insert(THREADS.into(), threads);

    let mut counts = HashMap::new();
    count_assignments(&program.body, &mut counts);
    check_shadowing(&program.body, &consts)?;

    let mut derived = Bindings::new();
    let mut env = consts.clone();
    let mut body = fold_stmts(&program.body, &env)?;
    loop {
        let mut grew = false;
        for s in &body {
            if let StmtKind::Assign { targets, values } = &s.kind {
                for (t, v) in targets.iter().zip(values) {
                    if let (Expr::Name(n), Expr::Int(x)) = (t, v) {
                        if counts.get(n.as_str()) == Some(&1) && !env.contains_key(n) {
                            env.insert(n.clone(), *x);
                            derived.insert(n.clone(), *x);
                            grew = true;
                        }
                    }
                }
            }
        }
        if !grew {
            break;
        }
        body = fold_stmts(&body, &env)?;
    }

    let mut params = Vec::with_capacity(program.params.len());
    for p in &program.params {
        let kind = match &p.kind {
            ParamKind::Const { default } => ParamKind::Const {
                default: default.clone(),
            },
            ParamKind::Tensor { shape, dtype } => {
                let shape = shape
                    .iter()
                    .map(|e| fold(e, &env, 0))
                    .collect::<Result<Vec<_>, _>>()?;
                for e in &shape {
                    positive(e, &format!("shape of `{}`", p.name), 0)?;
                }
                ParamKind::Tensor {
                    shape,
                    dtype: dtype.clone(),
                }
            }
        };
        params.push(Param {
            name: p.name.clone(),
            kind,
        });
    }
    check_extents(&body)?;
    Ok(BoundProgram {
        program: Program {
            name: program.name.clone(),
            params,
            body,
        },
        consts,
        derived,
    })
}

fn count_assignments<'a>(stmts: &'a [Stmt], counts: &mut HashMap<&'a str, usize>) {
    for s in stmts {
        match &s.kind {
            StmtKind::Assign { targets, .. } => {
                for t in targets {
                    if let Expr::Name(n) = t {
                        *counts.entry(n.as_str()).or_default() += 1;
                    }
                }
            }
            StmtKind::For { var, body, .. } | StmtKind::Forall { var, body, .. } => {
                // Loop variables and anything assigned in a loop body are not
                // single-assignment constants.
                *counts.entry(var.as_str()).or_default() += 2;
                let mut inner = HashMap::new();
                count_assignments(body, &mut inner);
                for (k, v) in inner {
                    *counts.entry(k).or_default() += v + 1;
                }
            }
            _ => {}
        }
    }
}

fn check_shadowing(stmts: &[Stmt], consts: &Bindings) -> Result<(), BindError> {
    let clash = |name: &str, line: u32| {
        if consts.contains_key(name) {
            Err(BindError::ConstShadowed {
                name: name.into(),
                line,
            })
        } else {
            Ok(())
        }
    };
    for s in stmts {
        match &s.kind {
            StmtKind::Assign { targets, .. } => {
                for t in targets {
                    if let Expr::Name(n) = t {
                        clash(n, s.line)?;
                    }
                }
            }
            StmtKind::For { var, body, .. } | StmtKind::Forall { var, body, .. } => {
                clash(var, s.line)?;
                check_shadowing(body, consts)?;
            }
            StmtKind::Assert(a) => {
                for (v, _) in &a.quants {
                    clash(v, s.line)?;
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn map_err(e: IntOpError, line: u32) -> BindError {
    match e {
        IntOpError::DivByZero => BindError::DivByZero { line },
        IntOpError::Overflow => BindError::Overflow { line },
    }
}

/// Substitutes `env` and folds integer subexpressions.
pub fn fold(e: &Expr, env: &Bindings, line: u32) -> Result<Expr, BindError> {
    let f = |x: &Expr| fold(x, env, line);
    Ok(match e {
        Expr::Int(_) | Expr::Float(_) => e.clone(),
        Expr::Name(n) => match env.get(n) {
            Some(v) => Expr::Int(*v),
            None => e.clone(),
        },
        Expr::Attr { base, field } => Expr::Attr {
            base: Box::new(f(base)?),
            field: field.clone(),
        },
        Expr::Index { base, indices } => Expr::Index {
            base: Box::new(f(base)?),
            indices: indices.iter().map(f).collect::<Result<_, _>>()?,
        },
        Expr::Call { func, args } => Expr::Call {
            func: func.clone(),
            args: args.iter().map(f).collect::<Result<_, _>>()?,
        },
        Expr::Method { base, name, args } => Expr::Method {
            base: Box::new(f(base)?),
            name: name.clone(),
            args: args.iter().map(f).collect::<Result<_, _>>()?,
        },
        Expr::Gen { elt, var, count } => {
            let mut inner = env.clone();
            inner.remove(var);
            Expr::Gen {
                elt: Box::new(fold(elt, &inner, line)?),
                var: var.clone(),
                count: Box::new(f(count)?),
            }
        }
        Expr::Tuple(items) => Expr::Tuple(items.iter().map(f).collect::<Result<_, _>>()?),
        Expr::Neg(inner) => match f(inner)? {
            Expr::Int(v) => Expr::Int(v.checked_neg().ok_or(BindError::Overflow { line })?),
            Expr::Float(v) => Expr::Float(-v),
            other => Expr::Neg(Box::new(other)),
        },
        Expr::Bin { op, lhs, rhs } => {
            let l = f(lhs)?;
            let r = f(rhs)?;
            match (&l, &r) {
                (Expr::Int(a), Expr::Int(b)) => {
                    Expr::Int(intops::apply(*op, *a, *b).map_err(|e| map_err(e, line))?)
                }
                _ => Expr::bin(*op, l, r),
            }
        }
        Expr::Cond {
            then,
            cond,
            otherwise,
        } => match f(cond)? {
            Expr::Int(0) => f(otherwise)?,
            Expr::Int(_) => f(then)?,
            c => Expr::Cond {
                then: Box::new(f(then)?),
                cond: Box::new(c),
                otherwise: Box::new(f(otherwise)?),
            },
        },
        Expr::TagFn {
            tensor,
            vars,
            tuple,
        } => {
            // Coordinate names may shadow constants.
            let mut inner = env.clone();
            for v in vars {
                inner.remove(v);
            }
            Expr::TagFn {
                tensor: tensor.clone(),
                vars: vars.clone(),
                tuple: tuple
                    .iter()
                    .map(|t| fold(t, &inner, line))
                    .collect::<Result<_, _>>()?,
            }
        }
    })
}

fn fold_stmts(stmts: &[Stmt], env: &Bindings) -> Result<Vec<Stmt>, BindError> {
    stmts
        .iter()
        .map(|s| {
            let l = s.line;
            let kind = match &s.kind {
                StmtKind::Assign { targets, values } => StmtKind::Assign {
                    targets: targets
                        .iter()
                        .map(|t| match t {
                            Expr::Name(_) => Ok(t.clone()),
                            _ => fold(t, env, l),
                        })
                        .collect::<Result<_, _>>()?,
                    values: values
                        .iter()
                        .map(|v| fold(v, env, l))
                        .collect::<Result<_, _>>()?,
                },
                StmtKind::For { var, count, body } => StmtKind::For {
                    var: var.clone(),
                    count: fold(count, env, l)?,
                    body: fold_stmts(body, env)?,
                },
                StmtKind::Forall { var, count, body } => StmtKind::Forall {
                    var: var.clone(),
                    count: fold(count, env, l)?,
                    body: fold_stmts(body, env)?,
                },
                StmtKind::Assert(a) => {
                    let acc = |t: &TagAccess| -> Result<TagAccess, BindError> {
                        Ok(TagAccess {
                            tile: t.tile.clone(),
                            indices: t
                                .indices
                                .iter()
                                .map(|e| fold(e, env, l))
                                .collect::<Result<_, _>>()?,
                        })
                    };
                    StmtKind::Assert(Assertion {
                        kind: a.kind,
                        left: acc(&a.left)?,
                        right: acc(&a.right)?,
                        quants: a
                            .quants
                            .iter()
                            .map(|(v, n)| Ok((v.clone(), fold(n, env, l)?)))
                            .collect::<Result<_, BindError>>()?,
                    })
                }
                StmtKind::Annotation { name, args } => StmtKind::Annotation {
                    name: name.clone(),
                    args: args
                        .iter()
                        .map(|a| fold(a, env, l))
                        .collect::<Result<_, _>>()?,
                },
                other => other.clone(),
            };
            Ok(Stmt {
                line: s.line,
                col: s.col,
                kind,
            })
        })
        .collect()
}

fn positive(e: &Expr, what: &str, line: u32) -> Result<i64, BindError> {
    match e {
        Expr::Int(v) if *v > 0 => Ok(*v),
        Expr::Int(v) => Err(BindError::NonPositiveExtent {
            what: what.into(),
            value: *v,
            line,
        }),
        _ => Err(BindError::NotConstant {
            what: what.into(),
            line,
        }),
    }
}

fn check_shape(e: &Expr, what: &str, line: u32) -> Result<(), BindError> {
    match e {
        Expr::Tuple(items) => items.iter().try_for_each(|i| check_shape(i, what, line)),
        other => positive(other, what, line).map(|_| ()),
    }
}

fn check_counts(n: &Expr, what: &str, line: u32) -> Result<(), BindError> {
    match n {
        Expr::Int(v) if *v >= 0 => Ok(()),
        Expr::Int(v) => Err(BindError::NonPositiveExtent {
            what: what.into(),
            value: *v,
            line,
        }),
        _ => Err(BindError::NotConstant {
            what: what.into(),
            line,
        }),
    }
}

fn check_expr_extents(e: &Expr, line: u32) -> Result<(), BindError> {
    match e {
        Expr::Call { func, args }
            if (func == "make_shared" || func == "make_local") && !args.is_empty() =>
        {
            check_shape(&args[0], &format!("shape of {func}"), line)?;
        }
        Expr::Method { name, args, .. } if name == "view" && !args.is_empty() => {
            check_shape(&args[0], "shape of view", line)?;
        }
        Expr::Gen { count, .. } => check_counts(count, "generator range", line)?,
        _ => {}
    }
    let mut res = Ok(());
    e.for_each_child(&mut |c| {
        if res.is_ok() {
            res = check_expr_extents(c, line);
        }
    });
    res
}

fn check_extents(stmts: &[Stmt]) -> Result<(), BindError> {
    for s in stmts {
        match &s.kind {
            StmtKind::Assign { values, .. } => {
                for v in values {
                    check_expr_extents(v, s.line)?;
                }
            }
            StmtKind::For { count, body, .. } | StmtKind::Forall { count, body, .. } => {
                check_counts(count, "loop trip count", s.line)?;
                check_extents(body)?;
            }
            StmtKind::Assert(a) => {
                for (_, n) in &a.quants {
                    check_counts(n, "assertion range", s.line)?;
                }
            }
            _ => {}
        }
    }
    Ok(())
}

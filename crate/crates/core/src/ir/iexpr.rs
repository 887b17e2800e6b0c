//! Integer index expressions over thread-varying slots.

use std::fmt;

use crate::dsl::ast::BinOp;
use crate::intops::{self, IntOpError};

/// Slot of `threadIdx.x`.
pub const TID: u16 = 0;
/// Slots of `blockIdx.x`, `.y`, `.z`.
pub const BLOCK: [u16; 3] = [1, 2, 3];
/// First slot available for element-position and coordinate variables.
pub const FIRST_FREE: u16 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum IExpr {
    Const(i64),
    Var(u16),
    Bin(BinOp, Box<IExpr>, Box<IExpr>),
    Neg(Box<IExpr>),
    Min(Box<IExpr>, Box<IExpr>),
    Max(Box<IExpr>, Box<IExpr>),
    Select(Box<IExpr>, Box<IExpr>, Box<IExpr>),
}

impl IExpr {
    pub fn var(slot: u16) -> IExpr {
        IExpr::Var(slot)
    }

    /// Builds `a op b`, folding constants and trivial identities.
    pub fn bin(op: BinOp, a: IExpr, b: IExpr) -> IExpr {
        use BinOp::*;
        match (&a, &b) {
            (IExpr::Const(x), IExpr::Const(y)) => {
                if let Ok(v) = intops::apply(op, *x, *y) {
                    return IExpr::Const(v);
                }
            }
            (_, IExpr::Const(0)) if matches!(op, Add | Sub | Or | Xor | Shl | Shr) => return a,
            (IExpr::Const(0), _) if matches!(op, Add | Or | Xor) => return b,
            (_, IExpr::Const(1)) if matches!(op, Mul | Div) => return a,
            (IExpr::Const(1), _) if op == Mul => return b,
            (_, IExpr::Const(0)) | (IExpr::Const(0), _) if op == Mul => return IExpr::Const(0),
            (_, IExpr::Const(1)) if op == Mod => return IExpr::Const(0),
            _ => {}
        }
        IExpr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn add(a: IExpr, b: IExpr) -> IExpr {
        Self::bin(BinOp::Add, a, b)
    }

    pub fn mul(a: IExpr, b: IExpr) -> IExpr {
        Self::bin(BinOp::Mul, a, b)
    }

    pub fn neg(a: IExpr) -> IExpr {
        match a {
            IExpr::Const(v) => IExpr::Const(-v),
            other => IExpr::Neg(Box::new(other)),
        }
    }

    pub fn select(c: IExpr, t: IExpr, e: IExpr) -> IExpr {
        match c {
            IExpr::Const(0) => e,
            IExpr::Const(_) => t,
            c => IExpr::Select(Box::new(c), Box::new(t), Box::new(e)),
        }
    }

    pub fn min(a: IExpr, b: IExpr) -> IExpr {
        match (&a, &b) {
            (IExpr::Const(x), IExpr::Const(y)) => IExpr::Const(*x.min(y)),
            _ => IExpr::Min(Box::new(a), Box::new(b)),
        }
    }

    pub fn max(a: IExpr, b: IExpr) -> IExpr {
        match (&a, &b) {
            (IExpr::Const(x), IExpr::Const(y)) => IExpr::Const(*x.max(y)),
            _ => IExpr::Max(Box::new(a), Box::new(b)),
        }
    }

    pub fn as_const(&self) -> Option<i64> {
        match self {
            IExpr::Const(v) => Some(*v),
            _ => None,
        }
    }

    #[inline]
    pub fn eval(&self, env: &[i64]) -> Result<i64, IntOpError> {
        Ok(match self {
            IExpr::Const(v) => *v,
            IExpr::Var(s) => env[*s as usize],
            IExpr::Bin(op, a, b) => intops::apply(*op, a.eval(env)?, b.eval(env)?)?,
            IExpr::Neg(a) => a.eval(env)?.checked_neg().ok_or(IntOpError::Overflow)?,
            IExpr::Min(a, b) => a.eval(env)?.min(b.eval(env)?),
            IExpr::Max(a, b) => a.eval(env)?.max(b.eval(env)?),
            IExpr::Select(c, t, e) => {
                if c.eval(env)? != 0 {
                    t.eval(env)?
                } else {
                    e.eval(env)?
                }
            }
        })
    }

    /// Largest slot referenced, if any.
    pub fn max_slot(&self) -> Option<u16> {
        match self {
            IExpr::Const(_) => None,
            IExpr::Var(s) => Some(*s),
            IExpr::Neg(a) => a.max_slot(),
            IExpr::Bin(_, a, b) | IExpr::Min(a, b) | IExpr::Max(a, b) => {
                a.max_slot().max(b.max_slot())
            }
            IExpr::Select(c, t, e) => c.max_slot().max(t.max_slot()).max(e.max_slot()),
        }
    }

    /// Whether any slot satisfies `pred`.
    pub fn any_slot(&self, pred: &impl Fn(u16) -> bool) -> bool {
        match self {
            IExpr::Const(_) => false,
            IExpr::Var(s) => pred(*s),
            IExpr::Neg(a) => a.any_slot(pred),
            IExpr::Bin(_, a, b) | IExpr::Min(a, b) | IExpr::Max(a, b) => {
                a.any_slot(pred) || b.any_slot(pred)
            }
            IExpr::Select(c, t, e) => c.any_slot(pred) || t.any_slot(pred) || e.any_slot(pred),
        }
    }

    pub fn uses_block(&self) -> bool {
        self.any_slot(&|s| BLOCK.contains(&s))
    }

    /// Replaces slot `slot` by `with`.
    pub fn substitute(&self, slot: u16, with: &IExpr) -> IExpr {
        match self {
            IExpr::Const(_) => self.clone(),
            IExpr::Var(s) if *s == slot => with.clone(),
            IExpr::Var(_) => self.clone(),
            IExpr::Neg(a) => IExpr::neg(a.substitute(slot, with)),
            IExpr::Bin(op, a, b) => IExpr::bin(*op, a.substitute(slot, with), b.substitute(slot, with)),
            IExpr::Min(a, b) => IExpr::min(a.substitute(slot, with), b.substitute(slot, with)),
            IExpr::Max(a, b) => IExpr::max(a.substitute(slot, with), b.substitute(slot, with)),
            IExpr::Select(c, t, e) => IExpr::select(
                c.substitute(slot, with),
                t.substitute(slot, with),
                e.substitute(slot, with),
            ),
        }
    }
}

impl fmt::Display for IExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IExpr::Const(v) => write!(f, "{v}"),
            IExpr::Var(TID) => write!(f, "tid"),
            IExpr::Var(s) if (1..=3).contains(s) => write!(f, "bid{}", s - 1),
            IExpr::Var(s) => write!(f, "v{s}"),
            IExpr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            IExpr::Neg(a) => write!(f, "-{a}"),
            IExpr::Min(a, b) => write!(f, "min({a}, {b})"),
            IExpr::Max(a, b) => write!(f, "max({a}, {b})"),
            IExpr::Select(c, t, e) => write!(f, "({t} if {c} else {e})"),
        }
    }
}

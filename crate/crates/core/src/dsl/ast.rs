//! Syntax tree of the tile DSL.

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    Const { default: Option<Expr> },
    Tensor { shape: Vec<Expr>, dtype: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub line: u32,
    pub col: u32,
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    /// `t1, t2 = v1, v2`; targets and values have equal length.
    Assign { targets: Vec<Expr>, values: Vec<Expr> },
    For { var: String, count: Expr, body: Vec<Stmt> },
    Forall { var: String, count: Expr, body: Vec<Stmt> },
    Sync,
    Reset(String),
    Assert(Assertion),
    Annotation { name: String, args: Vec<Expr> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AssertKind {
    Conform,
    NonConform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub kind: AssertKind,
    pub left: TagAccess,
    pub right: TagAccess,
    pub quants: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagAccess {
    pub tile: String,
    pub indices: Vec<Expr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::And => "&",
            BinOp::Or => "|",
            BinOp::Xor => "^",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
        }
    }

    /// Binding strength; larger binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => 2,
            BinOp::Or => 3,
            BinOp::Xor => 4,
            BinOp::And => 5,
            BinOp::Shl | BinOp::Shr => 6,
            BinOp::Add | BinOp::Sub => 7,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 8,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Float(f64),
    Name(String),
    /// `base.field`, e.g. `threadIdx.x`.
    Attr { base: Box<Expr>, field: String },
    /// `base[i, j, ...]`.
    Index { base: Box<Expr>, indices: Vec<Expr> },
    /// `func(args)`.
    Call { func: String, args: Vec<Expr> },
    /// `base.method(args)`.
    Method { base: Box<Expr>, name: String, args: Vec<Expr> },
    /// `elt for var in range(count)`, only as the sole argument of a call.
    Gen { elt: Box<Expr>, var: String, count: Box<Expr> },
    Tuple(Vec<Expr>),
    Neg(Box<Expr>),
    Bin { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    /// `then if cond else otherwise`.
    Cond { then: Box<Expr>, cond: Box<Expr>, otherwise: Box<Expr> },
    /// `T[a, b] -> (e1, e2)`.
    TagFn { tensor: String, vars: Vec<String>, tuple: Vec<Expr> },
}

impl Expr {
    pub fn name(s: &str) -> Expr {
        Expr::Name(s.to_string())
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bin {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Expr::Int(v) => Some(*v),
            _ => None,
        }
    }

    /// Applies `f` to every direct child expression.
    pub fn for_each_child(&self, f: &mut impl FnMut(&Expr)) {
        match self {
            Expr::Int(_) | Expr::Float(_) | Expr::Name(_) => {}
            Expr::Attr { base, .. } => f(base),
            Expr::Index { base, indices } => {
                f(base);
                indices.iter().for_each(f);
            }
            Expr::Call { args, .. } => args.iter().for_each(f),
            Expr::Method { base, args, .. } => {
                f(base);
                args.iter().for_each(f);
            }
            Expr::Gen { elt, count, .. } => {
                f(elt);
                f(count);
            }
            Expr::Tuple(items) => items.iter().for_each(f),
            Expr::Neg(e) => f(e),
            Expr::Bin { lhs, rhs, .. } => {
                f(lhs);
                f(rhs);
            }
            Expr::Cond {
                then,
                cond,
                otherwise,
            } => {
                f(then);
                f(cond);
                f(otherwise);
            }
            Expr::TagFn { tuple, .. } => tuple.iter().for_each(f),
        }
    }
}

impl Stmt {
    pub fn new(line: u32, col: u32, kind: StmtKind) -> Self {
        Self { line, col, kind }
    }
}

/// Names treated as statement-level hardware annotations.
pub const ANNOTATIONS: [&str; 4] = ["sched_barrier", "materialize", "buffer_load", "set_prio"];

/// Clears source positions so trees can be compared structurally.
pub fn strip_positions(stmts: &mut [Stmt]) {
    for s in stmts {
        s.line = 0;
        s.col = 0;
        match &mut s.kind {
            StmtKind::For { body, .. } | StmtKind::Forall { body, .. } => strip_positions(body),
            _ => {}
        }
    }
}

/// Number of statements, counting nested bodies.
pub fn count_stmts(stmts: &[Stmt], pred: &impl Fn(&StmtKind) -> bool) -> usize {
    stmts
        .iter()
        .map(|s| {
            let inner = match &s.kind {
                StmtKind::For { body, .. } | StmtKind::Forall { body, .. } => {
                    count_stmts(body, pred)
                }
                _ => 0,
            };
            usize::from(pred(&s.kind)) + inner
        })
        .sum()
}

impl Program {
    pub fn assertion_count(&self) -> usize {
        count_stmts(&self.body, &|k| matches!(k, StmtKind::Assert(_)))
    }

    pub fn tag_decl_count(&self) -> usize {
        count_stmts(&self.body, &|k| match k {
            StmtKind::Assign { values, .. } => {
                values.iter().any(|v| matches!(v, Expr::TagFn { .. }))
            }
            _ => false,
        })
    }

    pub fn stmt_count(&self) -> usize {
        count_stmts(&self.body, &|_| true)
    }
}

//! Unrolled kernel representation.

use std::fmt;

use serde::Serialize;

use super::iexpr::IExpr;
use super::intrinsic::IntrinsicDescriptor;
use crate::dsl::ast::AssertKind;
use crate::dtype::DType;
use crate::intops::IntOpError;
use crate::layout::Layout;
use crate::tags::lattice::Tag;

pub type DeclId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Global,
    Shared,
    Register,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemDecl {
    pub name: String,
    pub space: Space,
    pub layout: Layout,
    pub dtype: DType,
    /// Globals only: whether any statement stores into the tensor.
    pub writable: bool,
    /// Bytes of the declaration; per thread for registers.
    pub bytes: usize,
    /// Logical shape; for globals this is the tensor shape.
    pub shape: Vec<i64>,
    /// Index into [`KernelIr::tag_decls`] for tagged globals.
    pub tag: Option<usize>,
}

/// A tag function attached to a global tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TagDecl {
    pub tensor: String,
    pub vars: Vec<String>,
    /// Expressions over slots `0..vars.len()`.
    pub exprs: Vec<IExpr>,
    pub line: u32,
}

impl TagDecl {
    pub fn apply(&self, coord: &[i64]) -> Result<Tag, IntOpError> {
        Ok(Tag::Tuple(
            self.exprs
                .iter()
                .map(|e| e.eval(coord))
                .collect::<Result<_, _>>()?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ProgramPoint {
    pub stmt: u32,
    pub instance: Vec<u32>,
    pub line: u32,
}

impl fmt::Display for ProgramPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {} stmt {} [", self.line, self.stmt)?;
        for (i, x) in self.instance.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, "]")
    }
}

/// One coordinate bound `0 <= expr < extent`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub expr: IExpr,
    pub extent: i64,
}

/// A logical view onto part of a declaration.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub decl: DeclId,
    pub name: String,
    /// Byte offset of the region's origin within the declaration.
    pub base: IExpr,
    pub layout: Layout,
    pub dtype: DType,
    pub checks: Vec<Check>,
}

/// A single element of a declaration.
#[derive(Debug, Clone, PartialEq)]
pub struct ElemRef {
    pub decl: DeclId,
    pub name: String,
    /// Byte offset within the declaration.
    pub offset: IExpr,
    pub dtype: DType,
    /// Logical coordinates within the accessed tile, for reporting.
    pub coords: Vec<IExpr>,
    pub checks: Vec<Check>,
    /// Loads under a selection arm: out-of-range addresses are not errors.
    pub guarded: bool,
}

impl ElemRef {
    pub fn width(&self) -> usize {
        self.dtype.bytes()
    }

    /// Whether every coordinate check holds under `env`.
    pub fn in_bounds(&self, env: &[i64], decl_bytes: usize) -> bool {
        self.checks.iter().all(|c| {
            matches!(c.expr.eval(env), Ok(v) if (0..c.extent).contains(&v))
        }) && matches!(self.offset.eval(env), Ok(o) if o >= 0 && o as usize + self.width() <= decl_bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FFn {
    Exp,
    Sqrt,
    Abs,
    Max,
    Min,
}

/// Numeric data expression, evaluated in f64.
#[derive(Debug, Clone, PartialEq)]
pub enum VExpr {
    Load(ElemRef),
    Const(f64),
    Index(IExpr),
    Neg(Box<VExpr>),
    Bin(FOp, Box<VExpr>, Box<VExpr>),
    Call(FFn, Vec<VExpr>),
    Select(IExpr, Box<VExpr>, Box<VExpr>),
}

impl VExpr {
    pub fn for_each_load<'a>(&'a self, f: &mut impl FnMut(&'a ElemRef)) {
        match self {
            VExpr::Load(r) => f(r),
            VExpr::Const(_) | VExpr::Index(_) => {}
            VExpr::Neg(a) => a.for_each_load(f),
            VExpr::Bin(_, a, b) | VExpr::Select(_, a, b) => {
                a.for_each_load(f);
                b.for_each_load(f);
            }
            VExpr::Call(_, args) => args.iter().for_each(|a| a.for_each_load(f)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ByteSlice {
    pub src: ElemRef,
    pub lo: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoreValue {
    /// Byte-for-byte copy of one element of equal width.
    Copy(ElemRef),
    /// Destination bytes assembled from source byte ranges, in order.
    Gather(Vec<ByteSlice>),
    /// Numeric evaluation converted to the destination type.
    Compute(VExpr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accessor {
    pub tile: String,
    /// Element selected at a quantifier point; quantifier `i` is slot
    /// `FIRST_FREE + i`.
    pub elem: ElemRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssertOp {
    pub kind: AssertKind,
    pub left: Accessor,
    pub right: Accessor,
    pub quants: Vec<(String, i64)>,
}

impl AssertOp {
    pub fn domain_per_thread(&self) -> u64 {
        self.quants.iter().map(|(_, n)| *n as u64).product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Store {
        dst: ElemRef,
        value: StoreValue,
    },
    /// `d = a * b + c`, executed warp-collectively.
    Matmul {
        desc: usize,
        a: Region,
        b: Region,
        c: Region,
        d: Region,
    },
    ViewAlias {
        name: String,
        src: Region,
        dst: Region,
    },
    Barrier,
    Reset {
        decl: DeclId,
    },
    Assert(AssertOp),
    Annotation {
        name: String,
        args: Vec<String>,
    },
    /// Assigns tags to every element of a register tile. The tag expressions
    /// read coordinate `i` from slot `FIRST_FREE + i`.
    TagStamp {
        region: Region,
        exprs: Vec<IExpr>,
    },
}

impl Op {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Op::Store { .. } => "store",
            Op::Matmul { .. } => "matmul",
            Op::ViewAlias { .. } => "view",
            Op::Barrier => "barrier",
            Op::Reset { .. } => "reset",
            Op::Assert(_) => "assert",
            Op::Annotation { .. } => "annotation",
            Op::TagStamp { .. } => "tag",
        }
    }
}

/// Byte range of a declaration captured at an instance, for every thread.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureSpec {
    pub decl: DeclId,
    pub lo: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub point: ProgramPoint,
    pub phase: u32,
    pub op: Op,
    /// Operand byte ranges recorded by the static and dynamic tag passes.
    pub captures: Vec<CaptureSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelIr {
    pub name: String,
    pub threads: u32,
    pub decls: Vec<MemDecl>,
    /// Global parameters, in declaration order.
    pub params: Vec<DeclId>,
    pub tag_decls: Vec<TagDecl>,
    pub instances: Vec<Instance>,
    pub phase_count: u32,
    pub descriptors: Vec<IntrinsicDescriptor>,
    /// Block whose index values were used to size operand captures.
    pub capture_block: [i64; 3],
}

impl KernelIr {
    pub fn decl_by_name(&self, name: &str) -> Option<DeclId> {
        self.decls.iter().position(|d| d.name == name)
    }

    pub fn assertion_instances(&self) -> impl Iterator<Item = (usize, &Instance)> {
        self.instances
            .iter()
            .enumerate()
            .filter(|(_, i)| matches!(i.op, Op::Assert(_)))
    }

    /// Environment with thread and block slots filled and `extra` free slots.
    pub fn env(&self, thread: u32, block: [i64; 3], extra: usize) -> Vec<i64> {
        let mut env = vec![0i64; super::iexpr::FIRST_FREE as usize + extra];
        env[0] = thread as i64;
        env[1..4].copy_from_slice(&block);
        env
    }
}

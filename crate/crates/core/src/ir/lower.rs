//! Lowering of a bound program into fully unrolled statement instances.

use std::collections::HashMap;

use thiserror::Error;

use super::iexpr::{IExpr, BLOCK, FIRST_FREE, TID};
use super::intrinsic::IntrinsicDescriptor;
use super::types::*;
use crate::dsl::ast::*;
use crate::dsl::bind::{fold, BoundProgram};
use crate::dsl::printer;
use crate::dtype::DType;
use crate::layout::{IntTuple, Layout, LayoutDim};

/// Default bound on unrolled statement instances.
pub const DEFAULT_INSTANCE_CAP: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LowerError {
    #[error("line {line}: unrolling exceeds the instance cap of {limit}")]
    InstanceCap { limit: usize, line: u32 },
    #[error("line {line}: matmul operands do not fit `{intrinsic}`: {message}")]
    Matmul {
        intrinsic: String,
        message: String,
        line: u32,
    },
    #[error("line {line}: {message}")]
    Invalid { message: String, line: u32 },
}

#[derive(Debug, Clone)]
pub struct LowerOptions {
    pub instance_cap: usize,
    pub descriptors: Vec<IntrinsicDescriptor>,
    /// Extra top-level tag declarations, e.g. loaded from a separate file.
    pub extra_tags: Vec<Stmt>,
    /// Block index used when sizing operand captures.
    pub capture_block: [i64; 3],
}

impl Default for LowerOptions {
    fn default() -> Self {
        Self {
            instance_cap: DEFAULT_INSTANCE_CAP,
            descriptors: vec![IntrinsicDescriptor::mfma_32x32x8_bf16()],
            extra_tags: Vec::new(),
            capture_block: [0; 3],
        }
    }
}

pub fn lower(bp: &BoundProgram, opts: &LowerOptions) -> Result<KernelIr, LowerError> {
    let threads = bp.threads();
    if threads > u32::MAX as i64 {
        return Err(invalid(0, "thread count too large"));
    }
    let mut ids = HashMap::new();
    let mut counter = 0u32;
    assign_ids(&bp.program.body, &mut counter, &mut ids);
    let mut extra_ids = HashMap::new();
    assign_ids(&opts.extra_tags, &mut counter, &mut extra_ids);
    ids.extend(extra_ids);

    let mut l = Lowerer {
        opts,
        threads: threads as u32,
        decls: Vec::new(),
        params: Vec::new(),
        tag_decls: Vec::new(),
        instances: Vec::new(),
        env: HashMap::new(),
        ids,
        loops: Vec::new(),
        phase: 0,
        decl_sites: HashMap::new(),
        tag_sites: HashMap::new(),
    };
    for p in &bp.program.params {
        if let ParamKind::Tensor { shape, dtype } = &p.kind {
            let dtype: DType = dtype.parse().map_err(|e: String| invalid(0, &e))?;
            let shape: Vec<i64> = shape
                .iter()
                .map(|e| e.as_int().ok_or_else(|| invalid(0, "unbound tensor shape")))
                .collect::<Result<_, _>>()?;
            let layout = Layout::row_major(&shape, dtype.bytes() as u32)
                .map_err(|e| invalid(0, &format!("tensor `{}`: {e}", p.name)))?;
            let id = l.decls.len();
            l.decls.push(MemDecl {
                name: p.name.clone(),
                space: Space::Global,
                bytes: layout.byte_span() as usize,
                layout: layout.clone(),
                dtype,
                writable: false,
                shape,
                tag: None,
            });
            l.params.push(id);
            l.env.insert(
                p.name.clone(),
                Binding::Tile {
                    region: full_region(id, &p.name, &layout, dtype),
                    owned: true,
                },
            );
        }
    }
    let extra: Vec<Stmt> = opts
        .extra_tags
        .iter()
        .map(|s| -> Result<Stmt, LowerError> {
            let mut s = s.clone();
            if let StmtKind::Assign { values, .. } = &mut s.kind {
                for v in values.iter_mut() {
                    *v = fold(v, &bp.consts, s.line).map_err(|e| invalid(s.line, &e.to_string()))?;
                }
            }
            Ok(s)
        })
        .collect::<Result<_, _>>()?;
    for s in &extra {
        match &s.kind {
            StmtKind::Assign { .. } => l.stmt(s)?,
            _ => return Err(invalid(s.line, "tag files may only contain tag declarations")),
        }
    }
    l.block(&bp.program.body)?;

    let Lowerer {
        decls,
        params,
        tag_decls,
        mut instances,
        phase,
        ..
    } = l;
    let mut decls = decls;
    for inst in &instances {
        if let Op::Store { dst, .. } = &inst.op {
            if decls[dst.decl].space == Space::Global {
                decls[dst.decl].writable = true;
            }
        }
    }
    let mut ir = KernelIr {
        name: bp.program.name.clone(),
        threads: threads as u32,
        decls,
        params,
        tag_decls,
        instances: Vec::new(),
        phase_count: phase + 1,
        descriptors: opts.descriptors.clone(),
        capture_block: opts.capture_block,
    };
    for inst in &mut instances {
        inst.captures = capture_specs(&ir, &inst.op);
    }
    ir.instances = instances;
    Ok(ir)
}

fn invalid(line: u32, msg: &str) -> LowerError {
    LowerError::Invalid {
        message: msg.to_string(),
        line,
    }
}

fn assign_ids(stmts: &[Stmt], counter: &mut u32, ids: &mut HashMap<*const Stmt, u32>) {
    for s in stmts {
        ids.insert(s as *const Stmt, *counter);
        match &s.kind {
            StmtKind::Assign { targets, .. } => *counter += targets.len().max(1) as u32,
            StmtKind::For { body, .. } | StmtKind::Forall { body, .. } => {
                *counter += 1;
                assign_ids(body, counter, ids);
            }
            _ => *counter += 1,
        }
    }
}

fn full_region(decl: DeclId, name: &str, layout: &Layout, dtype: DType) -> Region {
    Region {
        decl,
        name: name.to_string(),
        base: IExpr::Const(0),
        layout: layout.clone(),
        dtype,
        checks: Vec::new(),
    }
}

/// Offset contributed by coordinate `c` along one layout dimension.
pub fn dim_offset(dim: &LayoutDim, c: IExpr) -> IExpr {
    let modes = dim.modes();
    if modes.len() == 1 {
        return IExpr::mul(c, IExpr::Const(modes[0].stride));
    }
    let mut acc = IExpr::Const(0);
    let mut q = c;
    for (i, m) in modes.iter().enumerate() {
        if i + 1 == modes.len() {
            acc = IExpr::add(acc, IExpr::mul(q.clone(), IExpr::Const(m.stride)));
        } else {
            let r = IExpr::bin(BinOp::Mod, q.clone(), IExpr::Const(m.shape));
            acc = IExpr::add(acc, IExpr::mul(r, IExpr::Const(m.stride)));
            q = IExpr::bin(BinOp::Div, q, IExpr::Const(m.shape));
        }
    }
    acc
}

impl Region {
    pub fn rank(&self) -> usize {
        self.layout.rank()
    }

    pub fn size(&self) -> u64 {
        self.layout.size()
    }

    /// Fixes the leading `idx.len()` coordinates.
    pub fn index(&self, idx: &[IExpr]) -> Region {
        let eb = self.dtype.bytes() as i64;
        let mut base = self.base.clone();
        let mut checks = self.checks.clone();
        for (c, dim) in idx.iter().zip(self.layout.dims()) {
            if c.as_const().is_none_or(|v| v < 0 || v >= dim.extent()) {
                checks.push(Check {
                    expr: c.clone(),
                    extent: dim.extent(),
                });
            }
            base = IExpr::add(base, IExpr::mul(dim_offset(dim, c.clone()), IExpr::Const(eb)));
        }
        Region {
            decl: self.decl,
            name: self.name.clone(),
            base,
            layout: self.layout.suffix(idx.len()),
            dtype: self.dtype,
            checks,
        }
    }

    /// Element at a full coordinate.
    pub fn element(&self, idx: &[IExpr], guarded: bool) -> ElemRef {
        let r = self.index(idx);
        ElemRef {
            decl: r.decl,
            name: r.name,
            offset: r.base,
            dtype: r.dtype,
            coords: idx.to_vec(),
            checks: r.checks,
            guarded,
        }
    }
}

#[derive(Debug, Clone)]
enum Binding {
    Int(IExpr),
    Tile { region: Region, owned: bool },
    TagName,
}

struct Lowerer<'a> {
    opts: &'a LowerOptions,
    threads: u32,
    decls: Vec<MemDecl>,
    params: Vec<DeclId>,
    tag_decls: Vec<TagDecl>,
    instances: Vec<Instance>,
    env: HashMap<String, Binding>,
    ids: HashMap<*const Stmt, u32>,
    loops: Vec<u32>,
    phase: u32,
    decl_sites: HashMap<u32, DeclId>,
    tag_sites: HashMap<u32, usize>,
}

enum Piece {
    Whole(ElemRef),
    Lo(ElemRef),
    Hi(ElemRef),
}

impl<'a> Lowerer<'a> {
    fn emit(&mut self, stmt: u32, line: u32, op: Op) -> Result<(), LowerError> {
        if self.instances.len() >= self.opts.instance_cap {
            return Err(LowerError::InstanceCap {
                limit: self.opts.instance_cap,
                line,
            });
        }
        let is_barrier = matches!(op, Op::Barrier);
        self.instances.push(Instance {
            point: ProgramPoint {
                stmt,
                instance: self.loops.clone(),
                line,
            },
            phase: self.phase,
            op,
            captures: Vec::new(),
        });
        if is_barrier {
            self.phase += 1;
        }
        Ok(())
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<(), LowerError> {
        for s in stmts {
            self.stmt(s)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), LowerError> {
        let id = self.ids[&(s as *const Stmt)];
        let line = s.line;
        match &s.kind {
            StmtKind::Assign { targets, values } => {
                for (k, (t, v)) in targets.iter().zip(values).enumerate() {
                    self.assign(id + k as u32, line, t, v)?;
                }
            }
            StmtKind::For { var, count, body } | StmtKind::Forall { var, count, body } => {
                let n = count
                    .as_int()
                    .ok_or_else(|| invalid(line, "loop trip count is not constant"))?;
                let saved = self.env.remove(var);
                for v in 0..n.max(0) {
                    self.env.insert(var.clone(), Binding::Int(IExpr::Const(v)));
                    self.loops.push(v as u32);
                    let r = self.block(body);
                    self.loops.pop();
                    r?;
                }
                self.env.remove(var);
                if let Some(b) = saved {
                    self.env.insert(var.clone(), b);
                }
            }
            StmtKind::Sync => self.emit(id, line, Op::Barrier)?,
            StmtKind::Reset(name) => {
                let region = self.tile(name, line)?;
                if self.decls[region.decl].space != Space::Shared {
                    return Err(invalid(line, &format!("reset of non-shared tile `{name}`")));
                }
                self.emit(id, line, Op::Reset { decl: region.decl })?;
            }
            StmtKind::Annotation { name, args } => {
                let args = args.iter().map(printer::expr).collect();
                self.emit(
                    id,
                    line,
                    Op::Annotation {
                        name: name.clone(),
                        args,
                    },
                )?;
            }
            StmtKind::Assert(a) => {
                let mut quants = Vec::new();
                let mut saved = Vec::new();
                for (i, (v, n)) in a.quants.iter().enumerate() {
                    let n = n
                        .as_int()
                        .ok_or_else(|| invalid(line, "assertion range is not constant"))?;
                    quants.push((v.clone(), n));
                    saved.push((v.clone(), self.env.remove(v)));
                    self.env.insert(
                        v.clone(),
                        Binding::Int(IExpr::Var(FIRST_FREE + i as u16)),
                    );
                }
                let left = self.accessor(&a.left, line);
                let right = self.accessor(&a.right, line);
                for (v, b) in saved {
                    self.env.remove(&v);
                    if let Some(b) = b {
                        self.env.insert(v, b);
                    }
                }
                let op = Op::Assert(AssertOp {
                    kind: a.kind,
                    left: left?,
                    right: right?,
                    quants,
                });
                self.emit(id, line, op)?;
            }
        }
        Ok(())
    }

    fn accessor(&mut self, t: &TagAccess, line: u32) -> Result<Accessor, LowerError> {
        let region = self.tile(&t.tile, line)?;
        let elem = if t.indices.is_empty() {
            self.scalar_element(&region, false, line)?
        } else {
            let idx = self.int_list(&t.indices, line)?;
            if idx.len() != region.rank() {
                return Err(invalid(
                    line,
                    &format!(
                        "tag access to `{}` needs {} indices, got {}",
                        t.tile,
                        region.rank(),
                        idx.len()
                    ),
                ));
            }
            region.element(&idx, false)
        };
        Ok(Accessor {
            tile: t.tile.clone(),
            elem,
        })
    }

    fn tile(&self, name: &str, line: u32) -> Result<Region, LowerError> {
        match self.env.get(name) {
            Some(Binding::Tile { region, .. }) => Ok(region.clone()),
            Some(_) => Err(invalid(line, &format!("`{name}` is not a tile"))),
            None => Err(invalid(line, &format!("unknown name `{name}`"))),
        }
    }

    fn scalar_element(&self, r: &Region, guarded: bool, line: u32) -> Result<ElemRef, LowerError> {
        if r.size() != 1 {
            return Err(invalid(
                line,
                &format!("`{}` has {} elements; index it", r.name, r.size()),
            ));
        }
        let zeros = vec![IExpr::Const(0); r.rank()];
        Ok(r.element(&zeros, guarded))
    }

    fn int_list(&self, es: &[Expr], line: u32) -> Result<Vec<IExpr>, LowerError> {
        es.iter()
            .map(|e| {
                self.int_expr(e, line)?
                    .ok_or_else(|| invalid(line, &format!("`{}` is not an integer index", printer::expr(e))))
            })
            .collect()
    }

    /// Lowers `e` as an integer expression; `None` when it involves tile data.
    fn int_expr(&self, e: &Expr, line: u32) -> Result<Option<IExpr>, LowerError> {
        Ok(match e {
            Expr::Int(v) => Some(IExpr::Const(*v)),
            Expr::Float(_) => None,
            Expr::Name(n) => match self.env.get(n) {
                Some(Binding::Int(ie)) => Some(ie.clone()),
                Some(Binding::Tile { .. }) => None,
                Some(Binding::TagName) => {
                    return Err(invalid(line, &format!("`{n}` names a tag function")))
                }
                None => return Err(invalid(line, &format!("unknown name `{n}`"))),
            },
            Expr::Attr { base, field } => Some(builtin_attr(base, field, line)?),
            Expr::Neg(a) => self.int_expr(a, line)?.map(IExpr::neg),
            Expr::Bin { op, lhs, rhs } => {
                let l = self.int_expr(lhs, line)?;
                let r = self.int_expr(rhs, line)?;
                match (l, r) {
                    (Some(l), Some(r)) => Some(IExpr::bin(*op, l, r)),
                    _ => None,
                }
            }
            Expr::Cond {
                then,
                cond,
                otherwise,
            } => {
                let t = self.int_expr(then, line)?;
                let c = self.int_expr(cond, line)?;
                let o = self.int_expr(otherwise, line)?;
                match (t, c, o) {
                    (Some(t), Some(c), Some(o)) => Some(IExpr::select(c, t, o)),
                    _ => None,
                }
            }
            Expr::Call { func, args } if (func == "max" || func == "min") && args.len() == 2 => {
                let a = self.int_expr(&args[0], line)?;
                let b = self.int_expr(&args[1], line)?;
                match (a, b) {
                    (Some(a), Some(b)) if func == "max" => Some(IExpr::max(a, b)),
                    (Some(a), Some(b)) => Some(IExpr::min(a, b)),
                    _ => None,
                }
            }
            _ => None,
        })
    }

    /// Resolves `e` to a region when it denotes tile storage.
    fn region_of(&mut self, e: &Expr, line: u32) -> Result<Option<Region>, LowerError> {
        match e {
            Expr::Name(n) => match self.env.get(n) {
                Some(Binding::Tile { region, .. }) => Ok(Some(region.clone())),
                _ => Ok(None),
            },
            Expr::Index { base, indices } => {
                let Some(r) = self.region_of(base, line)? else {
                    return Ok(None);
                };
                let idx = self.int_list(indices, line)?;
                if idx.len() > r.rank() {
                    return Err(invalid(
                        line,
                        &format!("`{}` has rank {}, indexed with {}", r.name, r.rank(), idx.len()),
                    ));
                }
                Ok(Some(r.index(&idx)))
            }
            Expr::Method { base, name, args } if name == "view" => {
                let Some(src) = self.region_of(base, line)? else {
                    return Err(invalid(line, "view of a non-tile value"));
                };
                let (layout, dtype) = self.shape_dtype(args, line)?;
                Ok(Some(Region {
                    decl: src.decl,
                    name: src.name.clone(),
                    base: src.base.clone(),
                    layout,
                    dtype,
                    checks: src.checks.clone(),
                }))
            }
            _ => Ok(None),
        }
    }

    fn shape_dtype(&self, args: &[Expr], line: u32) -> Result<(Layout, DType), LowerError> {
        if args.len() < 2 || args.len() > 3 {
            return Err(invalid(line, "expected (shape, dtype[, strides])"));
        }
        let dtype: DType = match &args[1] {
            Expr::Name(n) => n.parse().map_err(|e: String| invalid(line, &e))?,
            _ => return Err(invalid(line, "element type must be a name")),
        };
        let shape = int_tuple_list(&args[0], line)?;
        let strides = match args.get(2) {
            Some(s) => Some(int_tuple_list(s, line)?),
            None => None,
        };
        let layout = Layout::make(&shape, strides.as_deref(), dtype.bytes() as u32)
            .map_err(|e| invalid(line, &e.to_string()))?;
        Ok((layout, dtype))
    }

    fn declare(
        &mut self,
        id: u32,
        line: u32,
        name: &str,
        space: Space,
        layout: Layout,
        dtype: DType,
    ) -> Result<Region, LowerError> {
        if let Some(&d) = self.decl_sites.get(&id) {
            let decl = &self.decls[d];
            let r = full_region(d, name, &decl.layout, decl.dtype);
            self.env.insert(
                name.into(),
                Binding::Tile {
                    region: r.clone(),
                    owned: true,
                },
            );
            return Ok(r);
        }
        if let Some(Binding::Tile { owned: true, .. }) = self.env.get(name) {
            return Err(invalid(line, &format!("tile `{name}` declared twice")));
        }
        let cos = layout
            .cosize()
            .map_err(|e| invalid(line, &format!("tile `{name}`: {e}")))?;
        let id_decl = self.decls.len();
        self.decls.push(MemDecl {
            name: name.to_string(),
            space,
            bytes: cos as usize * dtype.bytes(),
            shape: layout.extents(),
            layout: layout.clone(),
            dtype,
            writable: true,
            tag: None,
        });
        self.decl_sites.insert(id, id_decl);
        let r = full_region(id_decl, name, &layout, dtype);
        self.env.insert(
            name.into(),
            Binding::Tile {
                region: r.clone(),
                owned: true,
            },
        );
        Ok(r)
    }

    fn assign(&mut self, id: u32, line: u32, target: &Expr, value: &Expr) -> Result<(), LowerError> {
        match value {
            Expr::Call { func, args } if func == "make_shared" || func == "make_local" => {
                let Expr::Name(name) = target else {
                    return Err(invalid(line, "tile declarations bind a plain name"));
                };
                let (layout, dtype) = self.shape_dtype(args, line)?;
                let space = if func == "make_shared" {
                    Space::Shared
                } else {
                    Space::Register
                };
                self.declare(id, line, name, space, layout, dtype)?;
                return Ok(());
            }
            Expr::TagFn {
                tensor,
                vars,
                tuple,
            } => {
                if let Expr::Name(n) = target {
                    self.env.insert(n.clone(), Binding::TagName);
                }
                return self.tag_fn(id, line, tensor, vars, tuple);
            }
            Expr::Call { func, args } if func == "matmul" => {
                return self.matmul(id, line, target, args);
            }
            _ => {}
        }
        let target_owned = match target {
            Expr::Name(n) => matches!(self.env.get(n), Some(Binding::Tile { owned: true, .. })),
            _ => true,
        };
        if !target_owned {
            let Expr::Name(name) = target else {
                unreachable!()
            };
            if let Some(ie) = self.int_expr(value, line)? {
                self.env.insert(name.clone(), Binding::Int(ie));
                return Ok(());
            }
            if let Some(src) = self.region_of(value, line)? {
                let is_view = matches!(value, Expr::Method { .. } | Expr::Name(_));
                if is_view || src.rank() > 0 {
                    self.env.insert(
                        name.clone(),
                        Binding::Tile {
                            region: src.clone(),
                            owned: false,
                        },
                    );
                    let from = match value {
                        Expr::Method { base, .. } => self.region_of(base, line)?.unwrap(),
                        _ => src.clone(),
                    };
                    return self.emit(
                        id,
                        line,
                        Op::ViewAlias {
                            name: name.clone(),
                            src: from,
                            dst: src,
                        },
                    );
                }
            }
        }
        let store = self.store_value(value, line)?;
        let dst = match target {
            Expr::Name(name) if !target_owned => {
                let dtype = match &store {
                    StoreValue::Copy(src) => src.dtype,
                    StoreValue::Gather(parts) => {
                        let n: usize = parts.iter().map(|p| p.len).sum();
                        raw_of_width(n).ok_or_else(|| {
                            invalid(line, &format!("concatenation of {n} bytes has no element type"))
                        })?
                    }
                    StoreValue::Compute(v) => {
                        let mut dt = None;
                        v.for_each_load(&mut |r| {
                            if dt.is_none() && r.dtype.is_float() {
                                dt = Some(r.dtype);
                            }
                        });
                        dt.unwrap_or(DType::Fp32)
                    }
                };
                let layout = Layout::row_major(&[1], dtype.bytes() as u32).unwrap();
                let r = self.declare(id, line, name, Space::Register, layout, dtype)?;
                r.element(&[IExpr::Const(0)], false)
            }
            _ => self.elem_target(target, line)?,
        };
        let value = self.finish_store(dst.dtype, store, line)?;
        if let StoreValue::Gather(parts) = &value {
            let n: usize = parts.iter().map(|p| p.len).sum();
            if n != dst.width() {
                return Err(invalid(
                    line,
                    &format!("{n} gathered bytes stored into a {}-byte element", dst.width()),
                ));
            }
        }
        self.emit(id, line, Op::Store { dst, value })
    }

    fn elem_target(&mut self, target: &Expr, line: u32) -> Result<ElemRef, LowerError> {
        match target {
            Expr::Name(n) => {
                let r = self.tile(n, line)?;
                self.scalar_element(&r, false, line)
            }
            Expr::Index { base, indices } => {
                let r = self
                    .region_of(base, line)?
                    .ok_or_else(|| invalid(line, "assignment target is not a tile"))?;
                let idx = self.int_list(indices, line)?;
                if idx.len() != r.rank() {
                    return Err(invalid(
                        line,
                        &format!(
                            "store into `{}` needs {} indices, got {}",
                            r.name,
                            r.rank(),
                            idx.len()
                        ),
                    ));
                }
                Ok(r.element(&idx, false))
            }
            _ => Err(invalid(line, "invalid assignment target")),
        }
    }

    fn finish_store(&self, dst: DType, v: StoreValue, line: u32) -> Result<StoreValue, LowerError> {
        Ok(match v {
            StoreValue::Copy(src) => {
                if src.dtype == dst
                    || (src.width() == dst.bytes() && (src.dtype.is_raw() || dst.is_raw()))
                {
                    StoreValue::Copy(src)
                } else if (src.dtype.is_raw() || dst.is_raw()) && src.width() != dst.bytes() {
                    return Err(invalid(
                        line,
                        &format!("cannot convert {} to {}", src.dtype, dst),
                    ));
                } else {
                    StoreValue::Compute(VExpr::Load(src))
                }
            }
            other => other,
        })
    }

    fn store_value(&mut self, value: &Expr, line: u32) -> Result<StoreValue, LowerError> {
        if let Expr::Call { func, args } = value {
            if matches!(func.as_str(), "concat" | "lo" | "hi") {
                let mut pieces = Vec::new();
                if func == "concat" {
                    if let [Expr::Gen { elt, var, count }] = args.as_slice() {
                        let n = count
                            .as_int()
                            .ok_or_else(|| invalid(line, "generator range is not constant"))?;
                        let saved = self.env.remove(var);
                        for k in 0..n {
                            self.env.insert(var.clone(), Binding::Int(IExpr::Const(k)));
                            let p = self.piece(elt, line);
                            if p.is_err() {
                                self.env.remove(var);
                            }
                            pieces.push(p?);
                        }
                        self.env.remove(var);
                        if let Some(b) = saved {
                            self.env.insert(var.clone(), b);
                        }
                    } else {
                        for a in args {
                            pieces.push(self.piece(a, line)?);
                        }
                    }
                } else {
                    pieces.push(self.piece(value, line)?);
                }
                let parts = pieces
                    .into_iter()
                    .map(|p| match p {
                        Piece::Whole(r) => ByteSlice {
                            len: r.width(),
                            src: r,
                            lo: 0,
                        },
                        Piece::Lo(r) => ByteSlice {
                            len: r.width() / 2,
                            src: r,
                            lo: 0,
                        },
                        Piece::Hi(r) => ByteSlice {
                            lo: r.width() / 2,
                            len: r.width() / 2,
                            src: r,
                        },
                    })
                    .collect();
                return Ok(StoreValue::Gather(parts));
            }
        }
        let v = self.vexpr(value, false, line)?;
        Ok(match v {
            VExpr::Load(r) => StoreValue::Copy(r),
            other => StoreValue::Compute(other),
        })
    }

    fn piece(&mut self, e: &Expr, line: u32) -> Result<Piece, LowerError> {
        if let Expr::Call { func, args } = e {
            if (func == "lo" || func == "hi") && args.len() == 1 {
                let r = self.element_of(&args[0], false, line)?;
                if r.width() < 2 {
                    return Err(invalid(line, "lo/hi of a single-byte element"));
                }
                return Ok(if func == "lo" {
                    Piece::Lo(r)
                } else {
                    Piece::Hi(r)
                });
            }
        }
        Ok(Piece::Whole(self.element_of(e, false, line)?))
    }

    fn element_of(&mut self, e: &Expr, guarded: bool, line: u32) -> Result<ElemRef, LowerError> {
        match e {
            Expr::Name(n) => {
                let r = self.tile(n, line)?;
                self.scalar_element(&r, guarded, line)
            }
            Expr::Index { base, indices } => {
                let r = self
                    .region_of(base, line)?
                    .ok_or_else(|| invalid(line, &format!("`{}` is not a tile", printer::expr(base))))?;
                let idx = self.int_list(indices, line)?;
                if idx.len() != r.rank() {
                    return Err(invalid(
                        line,
                        &format!(
                            "element of `{}` needs {} indices, got {}",
                            r.name,
                            r.rank(),
                            idx.len()
                        ),
                    ));
                }
                Ok(r.element(&idx, guarded))
            }
            _ => Err(invalid(
                line,
                &format!("`{}` is not a tile element", printer::expr(e)),
            )),
        }
    }

    fn vexpr(&mut self, e: &Expr, guarded: bool, line: u32) -> Result<VExpr, LowerError> {
        if let Some(ie) = self.int_expr(e, line)? {
            return Ok(match ie {
                IExpr::Const(v) => VExpr::Const(v as f64),
                other => VExpr::Index(other),
            });
        }
        Ok(match e {
            Expr::Float(v) => VExpr::Const(*v),
            Expr::Name(_) | Expr::Index { .. } => VExpr::Load(self.element_of(e, guarded, line)?),
            Expr::Neg(a) => VExpr::Neg(Box::new(self.vexpr(a, guarded, line)?)),
            Expr::Bin { op, lhs, rhs } => {
                let fop = match op {
                    BinOp::Add => FOp::Add,
                    BinOp::Sub => FOp::Sub,
                    BinOp::Mul => FOp::Mul,
                    BinOp::Div => FOp::Div,
                    other => {
                        return Err(invalid(
                            line,
                            &format!("operator `{}` is not defined on tile data", other.symbol()),
                        ))
                    }
                };
                VExpr::Bin(
                    fop,
                    Box::new(self.vexpr(lhs, guarded, line)?),
                    Box::new(self.vexpr(rhs, guarded, line)?),
                )
            }
            Expr::Call { func, args } => {
                let (f, arity) = match func.as_str() {
                    "exp" => (FFn::Exp, 1),
                    "sqrt" => (FFn::Sqrt, 1),
                    "abs" => (FFn::Abs, 1),
                    "max" => (FFn::Max, 2),
                    "min" => (FFn::Min, 2),
                    other => return Err(invalid(line, &format!("unknown function `{other}`"))),
                };
                if args.len() != arity {
                    return Err(invalid(line, &format!("`{func}` takes {arity} arguments")));
                }
                VExpr::Call(
                    f,
                    args.iter()
                        .map(|a| self.vexpr(a, guarded, line))
                        .collect::<Result<_, _>>()?,
                )
            }
            Expr::Cond {
                then,
                cond,
                otherwise,
            } => {
                let c = self
                    .int_expr(cond, line)?
                    .ok_or_else(|| invalid(line, "selection condition must be an integer expression"))?;
                VExpr::Select(
                    c,
                    Box::new(self.vexpr(then, true, line)?),
                    Box::new(self.vexpr(otherwise, true, line)?),
                )
            }
            other => {
                return Err(invalid(
                    line,
                    &format!("`{}` is not a data expression", printer::expr(other)),
                ))
            }
        })
    }

    fn tag_fn(
        &mut self,
        id: u32,
        line: u32,
        tensor: &str,
        vars: &[String],
        tuple: &[Expr],
    ) -> Result<(), LowerError> {
        let region = self.tile(tensor, line)?;
        let decl = region.decl;
        if vars.len() != region.rank() {
            return Err(invalid(
                line,
                &format!(
                    "tag function for `{tensor}` names {} coordinates, tile has rank {}",
                    vars.len(),
                    region.rank()
                ),
            ));
        }
        match self.decls[decl].space {
            Space::Global => {
                if self.tag_sites.contains_key(&id) {
                    return Ok(());
                }
                if self.decls[decl].tag.is_some() {
                    return Err(invalid(line, &format!("`{tensor}` already has a tag function")));
                }
                let env: HashMap<&str, u16> = vars
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v.as_str(), i as u16))
                    .collect();
                let exprs = tuple
                    .iter()
                    .map(|e| closed_int(e, &env, line))
                    .collect::<Result<_, _>>()?;
                let idx = self.tag_decls.len();
                self.tag_decls.push(TagDecl {
                    tensor: tensor.to_string(),
                    vars: vars.to_vec(),
                    exprs,
                    line,
                });
                self.decls[decl].tag = Some(idx);
                self.tag_sites.insert(id, idx);
                Ok(())
            }
            Space::Register => {
                let mut saved = Vec::new();
                for (i, v) in vars.iter().enumerate() {
                    saved.push((v.clone(), self.env.remove(v)));
                    self.env
                        .insert(v.clone(), Binding::Int(IExpr::Var(FIRST_FREE + i as u16)));
                }
                let exprs = self.int_list(tuple, line);
                for (v, b) in saved {
                    self.env.remove(&v);
                    if let Some(b) = b {
                        self.env.insert(v, b);
                    }
                }
                self.emit(
                    id,
                    line,
                    Op::TagStamp {
                        region,
                        exprs: exprs?,
                    },
                )
            }
            Space::Shared => Err(invalid(
                line,
                &format!("tag functions apply to global tensors or register tiles, not `{tensor}`"),
            )),
        }
    }

    fn matmul(&mut self, id: u32, line: u32, target: &Expr, args: &[Expr]) -> Result<(), LowerError> {
        if args.len() != 3 && args.len() != 4 {
            return Err(invalid(line, "matmul takes (a, b, c[, intrinsic])"));
        }
        let desc_name = match args.get(3) {
            Some(Expr::Name(n)) => n.clone(),
            Some(_) => return Err(invalid(line, "intrinsic must be named")),
            None => "mfma_32x32x8_bf16".to_string(),
        };
        let desc = self
            .opts
            .descriptors
            .iter()
            .position(|d| d.name == desc_name)
            .ok_or_else(|| invalid(line, &format!("unknown intrinsic `{desc_name}`")))?;
        let mut regs = Vec::new();
        for a in &args[..3] {
            let r = self
                .region_of(a, line)?
                .ok_or_else(|| invalid(line, &format!("`{}` is not a tile", printer::expr(a))))?;
            regs.push(r);
        }
        let c = regs.pop().unwrap();
        let b = regs.pop().unwrap();
        let a = regs.pop().unwrap();
        let d = match target {
            Expr::Name(n) if !matches!(self.env.get(n), Some(Binding::Tile { .. })) => {
                self.declare(id, line, n, Space::Register, c.layout.clone(), c.dtype)?
            }
            _ => self
                .region_of(target, line)?
                .ok_or_else(|| invalid(line, "matmul result must be a tile"))?,
        };
        let dsc = &self.opts.descriptors[desc];
        let fail = |m: String| LowerError::Matmul {
            intrinsic: dsc.name.clone(),
            message: m,
            line,
        };
        if self.threads as usize % dsc.lanes != 0 {
            return Err(fail(format!(
                "{} threads is not a multiple of {} lanes",
                self.threads, dsc.lanes
            )));
        }
        for (nm, r) in [("a", &a), ("b", &b)] {
            if r.dtype != dsc.operand {
                return Err(fail(format!("operand {nm} is {}, expected {}", r.dtype, dsc.operand)));
            }
            if r.size() == 0 || r.size() % dsc.slots as u64 != 0 {
                return Err(fail(format!(
                    "operand {nm} holds {} elements per lane, expected a multiple of {}",
                    r.size(),
                    dsc.slots
                )));
            }
        }
        if a.size() != b.size() {
            return Err(fail(format!(
                "operands hold {} and {} elements per lane",
                a.size(),
                b.size()
            )));
        }
        for (nm, r) in [("c", &c), ("result", &d)] {
            if r.dtype != dsc.accumulator || r.size() != dsc.accs as u64 {
                return Err(fail(format!(
                    "{nm} must hold {} {} elements per lane, found {} {}",
                    dsc.accs,
                    dsc.accumulator,
                    r.size(),
                    r.dtype
                )));
            }
        }
        if self.decls[d.decl].space != Space::Register || self.decls[c.decl].space != Space::Register {
            return Err(fail("accumulators must live in registers".into()));
        }
        self.emit(id, line, Op::Matmul { desc, a, b, c, d })
    }
}

fn raw_of_width(n: usize) -> Option<DType> {
    Some(match n {
        1 => DType::U8,
        2 => DType::U16,
        4 => DType::U32,
        8 => DType::U64,
        16 => DType::U128,
        32 => DType::U256,
        _ => return None,
    })
}

fn builtin_attr(base: &Expr, field: &str, line: u32) -> Result<IExpr, LowerError> {
    let Expr::Name(b) = base else {
        return Err(invalid(line, "attribute access on an expression"));
    };
    match (b.as_str(), field) {
        ("threadIdx", "x") => Ok(IExpr::Var(TID)),
        ("blockIdx", "x") => Ok(IExpr::Var(BLOCK[0])),
        ("blockIdx", "y") => Ok(IExpr::Var(BLOCK[1])),
        ("blockIdx", "z") => Ok(IExpr::Var(BLOCK[2])),
        _ => Err(invalid(line, &format!("unknown builtin `{b}.{field}`"))),
    }
}

/// Integer expression over coordinate names only.
fn closed_int(e: &Expr, env: &HashMap<&str, u16>, line: u32) -> Result<IExpr, LowerError> {
    let f = |x: &Expr| closed_int(x, env, line);
    Ok(match e {
        Expr::Int(v) => IExpr::Const(*v),
        Expr::Name(n) => IExpr::Var(*env.get(n.as_str()).ok_or_else(|| {
            invalid(
                line,
                &format!("tag expression uses `{n}`, which is neither a coordinate nor a const"),
            )
        })?),
        Expr::Neg(a) => IExpr::neg(f(a)?),
        Expr::Bin { op, lhs, rhs } => IExpr::bin(*op, f(lhs)?, f(rhs)?),
        Expr::Cond {
            then,
            cond,
            otherwise,
        } => IExpr::select(f(cond)?, f(then)?, f(otherwise)?),
        other => {
            return Err(invalid(
                line,
                &format!("`{}` is not an integer tag expression", printer::expr(other)),
            ))
        }
    })
}

fn int_tuple_list(e: &Expr, line: u32) -> Result<Vec<IntTuple>, LowerError> {
    fn one(e: &Expr, line: u32) -> Result<IntTuple, LowerError> {
        match e {
            Expr::Int(v) => Ok(IntTuple::Int(*v)),
            Expr::Tuple(items) => Ok(IntTuple::Tuple(
                items.iter().map(|i| one(i, line)).collect::<Result<_, _>>()?,
            )),
            other => Err(invalid(
                line,
                &format!("`{}` is not a constant shape", printer::expr(other)),
            )),
        }
    }
    match e {
        Expr::Tuple(items) => items.iter().map(|i| one(i, line)).collect(),
        other => Ok(vec![one(other, line)?]),
    }
}

/// Byte range of an element or region read, unioned over threads and
/// quantifier points.
fn capture_specs(ir: &KernelIr, op: &Op) -> Vec<CaptureSpec> {
    let threads = ir.threads;
    let span = |decl: DeclId, mut offsets: Box<dyn FnMut(&mut Vec<i64>) -> Option<(i64, i64)> + '_>, extra: usize| {
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        let mut env = ir.env(0, ir.capture_block, extra);
        for t in 0..threads {
            env[0] = t as i64;
            if let Some((a, b)) = offsets(&mut env) {
                lo = lo.min(a);
                hi = hi.max(b);
            }
        }
        let bytes = ir.decls[decl].bytes as i64;
        let lo = lo.max(0);
        let hi = hi.min(bytes);
        CaptureSpec {
            decl,
            lo: lo.min(hi).max(0) as usize,
            len: (hi - lo).max(0) as usize,
        }
    };
    match op {
        Op::Assert(a) => {
            let dims: Vec<i64> = a.quants.iter().map(|(_, n)| *n).collect();
            [&a.left, &a.right]
                .into_iter()
                .map(|acc| {
                    let e = &acc.elem;
                    let w = e.width() as i64;
                    let dims = dims.clone();
                    let n = dims.len();
                    span(
                        e.decl,
                        Box::new(move |env: &mut Vec<i64>| {
                            let mut lo = i64::MAX;
                            let mut hi = i64::MIN;
                            for_each_point(&dims, |q| {
                                env[FIRST_FREE as usize..].copy_from_slice(q);
                                if let Ok(o) = e.offset.eval(env) {
                                    lo = lo.min(o);
                                    hi = hi.max(o + w);
                                }
                            });
                            (lo <= hi).then_some((lo, hi))
                        }),
                        n,
                    )
                })
                .collect()
        }
        Op::Matmul { a, b, .. } => [a, b]
            .into_iter()
            .map(|r| {
                let eb = r.dtype.bytes() as i64;
                let (mn, mx) = (r.layout.min_offset() * eb, (r.layout.max_offset() + 1) * eb);
                span(
                    r.decl,
                    Box::new(move |env: &mut Vec<i64>| {
                        r.base.eval(env).ok().map(|b| (b + mn, b + mx))
                    }),
                    0,
                )
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// Visits every point of a rectangular domain in lexicographic order.
pub fn for_each_point(dims: &[i64], mut f: impl FnMut(&[i64])) {
    if dims.iter().any(|&d| d <= 0) {
        return;
    }
    let mut p = vec![0i64; dims.len()];
    loop {
        f(&p);
        let mut i = dims.len();
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            p[i] += 1;
            if p[i] < dims[i] {
                break;
            }
            p[i] = 0;
        }
    }
}

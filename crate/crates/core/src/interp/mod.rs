//! Concrete CPU execution of lowered kernels.
//!
//! Blocks run one after another. Within a block, each barrier phase is split
//! at matmul instances into segments; every thread runs a segment to its end
//! in ascending thread order, then the matmul executes warp by warp.

pub mod manifest;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::dtype::DType;
use crate::ir::iexpr::{FIRST_FREE, TID};
use crate::ir::lower::for_each_point;
use crate::ir::types::*;
use crate::tags::engine::{global_tag_table, PropagateError};
use crate::tags::lattice::{TagId, TagInterner};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    pub dtype: DType,
    pub shape: Vec<i64>,
    /// Little-endian, row-major.
    pub data: Vec<u8>,
}

impl TensorValue {
    pub fn zeros(dtype: DType, shape: &[i64]) -> Self {
        let n: i64 = shape.iter().product();
        Self {
            dtype,
            shape: shape.to_vec(),
            data: vec![0; n as usize * dtype.bytes()],
        }
    }

    pub fn from_f64(dtype: DType, shape: &[i64], values: &[f64]) -> Self {
        let mut t = Self::zeros(dtype, shape);
        let w = dtype.bytes();
        for (i, v) in values.iter().enumerate() {
            dtype.encode(*v, &mut t.data[i * w..(i + 1) * w]);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dtype.bytes()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data
            .chunks(self.dtype.bytes())
            .map(|c| self.dtype.decode(c))
            .collect()
    }
}

pub type Tensors = BTreeMap<String, TensorValue>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("input `{name}` is {found}, kernel declares {expected}")]
    Mismatch {
        name: String,
        expected: String,
        found: String,
    },
    #[error("missing input tensor `{0}`")]
    MissingInput(String),
    #[error("input `{0}` is not a kernel parameter")]
    UnknownInput(String),
    #[error("{point}: thread {thread} of block {block:?} accesses `{tile}` out of bounds")]
    OutOfBounds {
        point: ProgramPoint,
        thread: u32,
        block: [i64; 3],
        tile: String,
    },
    #[error("{point}: index arithmetic failed in thread {thread}")]
    Arith { point: ProgramPoint, thread: u32 },
    #[error("invalid grid {0:?}")]
    Grid([i64; 3]),
    #[error(transparent)]
    Tag(#[from] PropagateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub grid: [i64; 3],
    pub dynamic_tags: bool,
    /// Record every tracked byte store of the capture block.
    pub log_stores: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            grid: [1, 1, 1],
            dynamic_tags: false,
            log_stores: false,
        }
    }
}

/// Work counters feeding the proxy cost model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Costs {
    pub global_bytes: u64,
    pub shared_bytes: u64,
    pub barriers: u64,
    pub statement_instances: u64,
}

/// Operand bytes as seen by each thread when it reached an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DynSnap {
    pub decl: DeclId,
    pub lo: usize,
    pub len: usize,
    /// `threads * len` entries, thread-major.
    pub tags: Vec<TagId>,
}

impl DynSnap {
    pub fn byte(&self, thread: u32, at: usize) -> Option<TagId> {
        (at >= self.lo && at < self.lo + self.len)
            .then(|| self.tags[thread as usize * self.len + at - self.lo])
    }

    pub fn element(&self, thread: u32, at: usize, width: usize) -> Option<TagId> {
        let mut acc = TagId::BOTTOM;
        for b in at..at + width {
            acc = acc.merge(self.byte(thread, b)?);
        }
        Some(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreRecord {
    pub instance: u32,
    pub thread: u32,
    pub decl: DeclId,
    pub addr: u32,
    pub tag: TagId,
}

/// Concrete tags observed during a run of the capture block.
#[derive(Debug, Clone)]
pub struct DynamicTagLog {
    pub interner: TagInterner,
    /// Indexed by instance, parallel to each instance's capture specs.
    pub captures: Vec<Vec<DynSnap>>,
    pub stores: Vec<StoreRecord>,
}

impl DynamicTagLog {
    pub fn capture(&self, inst: usize, decl: DeclId) -> Option<&DynSnap> {
        self.captures.get(inst)?.iter().find(|s| s.decl == decl)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Every global tensor after the run.
    pub tensors: Tensors,
    pub costs: Costs,
    pub log: Option<DynamicTagLog>,
}

pub fn run(ir: &KernelIr, inputs: &Tensors, grid: [i64; 3]) -> Result<RunOutput, RunError> {
    run_with(
        ir,
        inputs,
        &RunOptions {
            grid,
            ..RunOptions::default()
        },
    )
}

pub fn run_with_dynamic_tags(ir: &KernelIr, inputs: &Tensors, grid: [i64; 3]) -> Result<RunOutput, RunError> {
    run_with(
        ir,
        inputs,
        &RunOptions {
            grid,
            dynamic_tags: true,
            log_stores: false,
        },
    )
}

struct Machine<'a> {
    ir: &'a KernelIr,
    opts: &'a RunOptions,
    data: Vec<Vec<u8>>,
    tags: Vec<Vec<TagId>>,
    global_tags: Vec<Option<Vec<TagId>>>,
    interner: TagInterner,
    costs: Costs,
    block: [i64; 3],
    logging: bool,
    captures: Vec<Vec<DynSnap>>,
    stores: Vec<StoreRecord>,
    env: Vec<i64>,
}

pub fn run_with(ir: &KernelIr, inputs: &Tensors, opts: &RunOptions) -> Result<RunOutput, RunError> {
    if opts.grid.iter().any(|&g| g <= 0) {
        return Err(RunError::Grid(opts.grid));
    }
    for name in inputs.keys() {
        match ir.decl_by_name(name) {
            Some(d) if ir.decls[d].space == Space::Global => {}
            _ => return Err(RunError::UnknownInput(name.clone())),
        }
    }
    let threads = ir.threads as usize;
    let mut data = Vec::with_capacity(ir.decls.len());
    for d in &ir.decls {
        data.push(match d.space {
            Space::Global => match inputs.get(&d.name) {
                Some(t) => {
                    if t.dtype != d.dtype || t.shape != d.shape || t.data.len() != d.bytes {
                        return Err(RunError::Mismatch {
                            name: d.name.clone(),
                            expected: format!("{} {:?}", d.dtype, d.shape),
                            found: format!("{} {:?} ({} bytes)", t.dtype, t.shape, t.data.len()),
                        });
                    }
                    t.data.clone()
                }
                None if d.writable => vec![0; d.bytes],
                None => return Err(RunError::MissingInput(d.name.clone())),
            },
            Space::Shared => vec![0; d.bytes],
            Space::Register => vec![0; d.bytes * threads],
        });
    }
    let tags = ir
        .decls
        .iter()
        .map(|d| match d.space {
            Space::Global => Vec::new(),
            Space::Shared => vec![TagId::BOTTOM; d.bytes],
            Space::Register => vec![TagId::BOTTOM; d.bytes * threads],
        })
        .collect();
    let slots = ir
        .instances
        .iter()
        .map(|i| match &i.op {
            Op::TagStamp { region, .. } => region.rank(),
            _ => 0,
        })
        .max()
        .unwrap_or(0);
    let mut m = Machine {
        ir,
        opts,
        data,
        tags,
        global_tags: vec![None; ir.decls.len()],
        interner: TagInterner::new(),
        costs: Costs::default(),
        block: [0; 3],
        logging: false,
        captures: vec![Vec::new(); ir.instances.len()],
        stores: Vec::new(),
        env: ir.env(0, [0; 3], slots),
    };
    let mut blocks = Vec::new();
    for_each_point(&opts.grid, |b| blocks.push([b[0], b[1], b[2]]));
    for block in blocks {
        m.run_block(block)?;
    }
    let log = opts.dynamic_tags.then(|| DynamicTagLog {
        interner: std::mem::take(&mut m.interner),
        captures: std::mem::take(&mut m.captures),
        stores: std::mem::take(&mut m.stores),
    });
    let mut tensors = Tensors::new();
    for (i, d) in ir.decls.iter().enumerate() {
        if d.space == Space::Global {
            tensors.insert(
                d.name.clone(),
                TensorValue {
                    dtype: d.dtype,
                    shape: d.shape.clone(),
                    data: std::mem::take(&mut m.data[i]),
                },
            );
        }
    }
    Ok(RunOutput {
        tensors,
        costs: m.costs,
        log,
    })
}

impl Machine<'_> {
    fn run_block(&mut self, block: [i64; 3]) -> Result<(), RunError> {
        self.block = block;
        self.env[1..4].copy_from_slice(&block);
        self.logging = self.opts.dynamic_tags && block == self.ir.capture_block;
        for (i, d) in self.ir.decls.iter().enumerate() {
            if d.space != Space::Global {
                self.data[i].fill(0);
                self.tags[i].fill(TagId::BOTTOM);
            }
        }
        let n = self.ir.instances.len();
        let mut start = 0;
        while start < n {
            let mut end = start;
            while end < n && !matches!(self.ir.instances[end].op, Op::Barrier | Op::Matmul { .. }) {
                end += 1;
            }
            for t in 0..self.ir.threads {
                self.env[TID as usize] = t as i64;
                for i in start..end {
                    self.exec(i, t)?;
                }
            }
            if end < n {
                match &self.ir.instances[end].op {
                    Op::Barrier => {
                        self.costs.barriers += 1;
                        self.costs.statement_instances += self.ir.threads as u64;
                    }
                    _ => self.matmul(end)?,
                }
            }
            start = end + 1;
        }
        Ok(())
    }

    fn reg_base(&self, decl: DeclId, thread: u32) -> usize {
        match self.ir.decls[decl].space {
            Space::Register => thread as usize * self.ir.decls[decl].bytes,
            _ => 0,
        }
    }

    fn global_tags(&mut self, decl: DeclId) -> Result<&[TagId], RunError> {
        if self.global_tags[decl].is_none() {
            let t = global_tag_table(self.ir, decl, &mut self.interner, None)?;
            self.global_tags[decl] = Some(t);
        }
        Ok(self.global_tags[decl].as_deref().unwrap())
    }

    fn count(&mut self, decl: DeclId, bytes: usize) {
        match self.ir.decls[decl].space {
            Space::Global => self.costs.global_bytes += bytes as u64,
            Space::Shared => self.costs.shared_bytes += bytes as u64,
            Space::Register => {}
        }
    }

    fn offset(&self, r: &ElemRef, inst: usize, thread: u32) -> Result<Option<usize>, RunError> {
        if r.in_bounds(&self.env, self.ir.decls[r.decl].bytes) {
            return Ok(Some(r.offset.eval(&self.env).unwrap() as usize));
        }
        if r.guarded {
            return Ok(None);
        }
        Err(RunError::OutOfBounds {
            point: self.ir.instances[inst].point.clone(),
            thread,
            block: self.block,
            tile: r.name.clone(),
        })
    }

    /// Bytes and per-byte tags of one element.
    fn load(&mut self, r: &ElemRef, off: usize, thread: u32) -> Result<(Vec<u8>, Vec<TagId>), RunError> {
        let w = r.width();
        let base = self.reg_base(r.decl, thread) + off;
        let bytes = self.data[r.decl][base..base + w].to_vec();
        self.count(r.decl, w);
        let tags = if !self.logging {
            Vec::new()
        } else if self.ir.decls[r.decl].space == Space::Global {
            let eb = self.ir.decls[r.decl].dtype.bytes();
            let table = self.global_tags(r.decl)?;
            (off..off + w).map(|b| table[b / eb]).collect()
        } else {
            self.tags[r.decl][base..base + w].to_vec()
        };
        Ok((bytes, tags))
    }

    fn store(&mut self, inst: usize, decl: DeclId, off: usize, thread: u32, bytes: &[u8], tags: &[TagId]) {
        let base = self.reg_base(decl, thread) + off;
        self.data[decl][base..base + bytes.len()].copy_from_slice(bytes);
        self.count(decl, bytes.len());
        if self.logging && self.ir.decls[decl].space != Space::Global {
            self.tags[decl][base..base + tags.len()].copy_from_slice(tags);
            if self.opts.log_stores {
                for (i, &tag) in tags.iter().enumerate() {
                    self.stores.push(StoreRecord {
                        instance: inst as u32,
                        thread,
                        decl,
                        addr: (off + i) as u32,
                        tag,
                    });
                }
            }
        }
    }

    fn capture(&mut self, inst: usize, thread: u32) -> Result<(), RunError> {
        if !self.logging {
            return Ok(());
        }
        let threads = self.ir.threads as usize;
        for (k, spec) in self.ir.instances[inst].captures.iter().enumerate() {
            if self.captures[inst].len() <= k {
                self.captures[inst].push(DynSnap {
                    decl: spec.decl,
                    lo: spec.lo,
                    len: spec.len,
                    tags: vec![TagId::BOTTOM; threads * spec.len],
                });
            }
            let d = &self.ir.decls[spec.decl];
            let dst = thread as usize * spec.len;
            let src: Vec<TagId> = match d.space {
                Space::Global => {
                    let eb = d.dtype.bytes();
                    let table = self.global_tags(spec.decl)?;
                    (spec.lo..spec.lo + spec.len).map(|b| table[b / eb]).collect()
                }
                _ => {
                    let base = self.reg_base(spec.decl, thread) + spec.lo;
                    self.tags[spec.decl][base..base + spec.len].to_vec()
                }
            };
            self.captures[inst][k].tags[dst..dst + spec.len].copy_from_slice(&src);
        }
        Ok(())
    }

    fn exec(&mut self, i: usize, t: u32) -> Result<(), RunError> {
        let ir = self.ir;
        let inst = &ir.instances[i];
        self.costs.statement_instances += 1;
        match &inst.op {
            Op::Barrier | Op::Matmul { .. } | Op::ViewAlias { .. } | Op::Annotation { .. } => {}
            Op::Assert(_) => self.capture(i, t)?,
            Op::Reset { decl } => {
                if self.logging && t == 0 {
                    self.tags[*decl].fill(TagId::BOTTOM);
                }
            }
            Op::TagStamp { region, exprs } => {
                if !self.logging {
                    return Ok(());
                }
                let eb = region.dtype.bytes();
                let base = region.base.eval(&self.env).map_err(|_| RunError::Arith {
                    point: inst.point.clone(),
                    thread: t,
                })?;
                let mut coords = Vec::new();
                region.layout.for_each_coord(|x| coords.push(x.to_vec()));
                let f = FIRST_FREE as usize;
                for x in coords {
                    self.env[f..f + x.len()].copy_from_slice(&x);
                    let vals: Vec<i64> = exprs
                        .iter()
                        .map(|e| e.eval(&self.env))
                        .collect::<Result<_, _>>()
                        .map_err(|_| RunError::Arith {
                            point: inst.point.clone(),
                            thread: t,
                        })?;
                    let id = self.interner.intern_tuple(&vals);
                    let off = (base + region.layout.eval_unchecked(&x) * eb as i64) as usize;
                    let rb = self.reg_base(region.decl, t) + off;
                    self.tags[region.decl][rb..rb + eb].fill(id);
                }
            }
            Op::Store { dst, value } => {
                let off = self.offset(dst, i, t)?.expect("unguarded store");
                let w = dst.width();
                let (bytes, tags) = match value {
                    StoreValue::Copy(src) => {
                        let so = self.offset(src, i, t)?.expect("unguarded load");
                        self.load(src, so, t)?
                    }
                    StoreValue::Gather(parts) => {
                        let mut bytes = Vec::with_capacity(w);
                        let mut tags = Vec::with_capacity(w);
                        for p in parts {
                            let so = self.offset(&p.src, i, t)?.expect("unguarded load");
                            let (b, tg) = self.load(&p.src, so, t)?;
                            bytes.extend_from_slice(&b[p.lo..p.lo + p.len]);
                            if self.logging {
                                tags.extend_from_slice(&tg[p.lo..p.lo + p.len]);
                            }
                        }
                        (bytes, tags)
                    }
                    StoreValue::Compute(v) => {
                        let mut tag = TagId::BOTTOM;
                        let x = self.eval(v, i, t, &mut tag)?;
                        let mut bytes = vec![0u8; w];
                        dst.dtype.encode(x, &mut bytes);
                        (bytes, if self.logging { vec![tag; w] } else { Vec::new() })
                    }
                };
                self.store(i, dst.decl, off, t, &bytes, &tags);
            }
        }
        Ok(())
    }

    fn eval(&mut self, v: &VExpr, i: usize, t: u32, tag: &mut TagId) -> Result<f64, RunError> {
        Ok(match v {
            VExpr::Const(c) => *c,
            VExpr::Index(e) => e.eval(&self.env).map_err(|_| RunError::Arith {
                point: self.ir.instances[i].point.clone(),
                thread: t,
            })? as f64,
            VExpr::Load(r) => match self.offset(r, i, t)? {
                None => 0.0,
                Some(off) => {
                    let (b, tg) = self.load(r, off, t)?;
                    for x in tg {
                        *tag = tag.merge(x);
                    }
                    r.dtype.decode(&b)
                }
            },
            VExpr::Neg(a) => -self.eval(a, i, t, tag)?,
            VExpr::Bin(op, a, b) => {
                let x = self.eval(a, i, t, tag)?;
                let y = self.eval(b, i, t, tag)?;
                match op {
                    FOp::Add => x + y,
                    FOp::Sub => x - y,
                    FOp::Mul => x * y,
                    FOp::Div => x / y,
                }
            }
            VExpr::Call(f, args) => {
                let mut xs = Vec::with_capacity(args.len());
                for a in args {
                    xs.push(self.eval(a, i, t, tag)?);
                }
                match f {
                    FFn::Exp => xs[0].exp(),
                    FFn::Sqrt => xs[0].sqrt(),
                    FFn::Abs => xs[0].abs(),
                    FFn::Max => xs[0].max(xs[1]),
                    FFn::Min => xs[0].min(xs[1]),
                }
            }
            VExpr::Select(c, a, b) => {
                let cv = c.eval(&self.env).map_err(|_| RunError::Arith {
                    point: self.ir.instances[i].point.clone(),
                    thread: t,
                })?;
                if cv != 0 {
                    self.eval(a, i, t, tag)?
                } else {
                    self.eval(b, i, t, tag)?
                }
            }
        })
    }

    /// Element byte offsets of a region for one thread, row-major.
    fn region_offsets(&mut self, r: &Region, i: usize, t: u32) -> Result<Vec<usize>, RunError> {
        self.env[TID as usize] = t as i64;
        let base = r.base.eval(&self.env).map_err(|_| RunError::Arith {
            point: self.ir.instances[i].point.clone(),
            thread: t,
        })?;
        let eb = r.dtype.bytes() as i64;
        let mut out = Vec::with_capacity(r.size() as usize);
        r.layout
            .for_each_coord(|x| out.push((base + r.layout.eval_unchecked(x) * eb) as usize));
        Ok(out)
    }

    fn matmul(&mut self, i: usize) -> Result<(), RunError> {
        let ir = self.ir;
        let inst = &ir.instances[i];
        let Op::Matmul { desc, a, b, c, d } = &inst.op else {
            unreachable!()
        };
        let desc = &ir.descriptors[*desc];
        let threads = ir.threads;
        for t in 0..threads {
            self.env[TID as usize] = t as i64;
            self.capture(i, t)?;
        }
        self.costs.statement_instances += threads as u64;
        let steps = a.size() as usize / desc.slots;
        let kt = steps * desc.k;
        for warp in 0..threads as usize / desc.lanes {
            let mut am = vec![0f32; desc.m * kt];
            let mut bm = vec![0f32; kt * desc.n];
            let mut cm = vec![0f32; desc.m * desc.n];
            let mut d_offs = Vec::with_capacity(desc.lanes);
            let mut c_tags = Vec::with_capacity(desc.lanes);
            for lane in 0..desc.lanes {
                let t = (warp * desc.lanes + lane) as u32;
                let ao = self.region_offsets(a, i, t)?;
                let bo = self.region_offsets(b, i, t)?;
                let co = self.region_offsets(c, i, t)?;
                d_offs.push(self.region_offsets(d, i, t)?);
                for (e, &o) in ao.iter().enumerate() {
                    let (step, slot) = (e / desc.slots, e % desc.slots);
                    let (row, k) = desc.a[lane * desc.slots + slot];
                    let base = self.reg_base(a.decl, t) + o;
                    am[row * kt + step * desc.k + k] =
                        a.dtype.decode(&self.data[a.decl][base..base + a.dtype.bytes()]) as f32;
                    self.count(a.decl, a.dtype.bytes());
                }
                for (e, &o) in bo.iter().enumerate() {
                    let (step, slot) = (e / desc.slots, e % desc.slots);
                    let (k, col) = desc.b[lane * desc.slots + slot];
                    let base = self.reg_base(b.decl, t) + o;
                    bm[(step * desc.k + k) * desc.n + col] =
                        b.dtype.decode(&self.data[b.decl][base..base + b.dtype.bytes()]) as f32;
                    self.count(b.decl, b.dtype.bytes());
                }
                let mut lane_tags = Vec::new();
                for (e, &o) in co.iter().enumerate() {
                    let (row, col) = desc.c[lane * desc.accs + e];
                    let base = self.reg_base(c.decl, t) + o;
                    let w = c.dtype.bytes();
                    cm[row * desc.n + col] = c.dtype.decode(&self.data[c.decl][base..base + w]) as f32;
                    if self.logging {
                        lane_tags.extend_from_slice(&self.tags[c.decl][base..base + w]);
                    }
                }
                c_tags.push(lane_tags);
            }
            for row in 0..desc.m {
                for col in 0..desc.n {
                    let mut acc = cm[row * desc.n + col];
                    for k in 0..kt {
                        acc += am[row * kt + k] * bm[k * desc.n + col];
                    }
                    cm[row * desc.n + col] = acc;
                }
            }
            for lane in 0..desc.lanes {
                let t = (warp * desc.lanes + lane) as u32;
                let w = d.dtype.bytes();
                for (e, &o) in d_offs[lane].iter().enumerate() {
                    let (row, col) = desc.c[lane * desc.accs + e];
                    let mut bytes = vec![0u8; w];
                    d.dtype.encode(cm[row * desc.n + col] as f64, &mut bytes);
                    let tags = if self.logging {
                        c_tags[lane][e * w..(e + 1) * w].to_vec()
                    } else {
                        Vec::new()
                    };
                    let base = self.reg_base(d.decl, t) + o;
                    self.data[d.decl][base..base + w].copy_from_slice(&bytes);
                    if self.logging {
                        self.tags[d.decl][base..base + w].copy_from_slice(&tags);
                    }
                }
            }
        }
        Ok(())
    }
}

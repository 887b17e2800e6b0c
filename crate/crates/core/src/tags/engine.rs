//! Forward tag propagation over the unrolled IR.
//!
//! Shared memory is updated weakly: a store merges into the byte's current
//! tag. Registers are updated strongly per thread. A shared byte written in
//! the current phase by a thread other than the reader reads as ⊤.

use thiserror::Error;

use super::lattice::{Tag, TagId, TagInterner};
use crate::intops::IntOpError;
use crate::ir::iexpr::{FIRST_FREE, TID};
use crate::ir::types::*;

/// Marker for a byte that has never been written.
pub const NO_WRITER: u32 = u32::MAX;
const MANY: u32 = u32::MAX;
const NO_PHASE: u32 = u32::MAX;
/// Writer entries retained per shared byte.
pub const WRITER_CAP: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PropagateError {
    #[error("tag function of `{tensor}` failed at {coord:?}: {err}")]
    TagEval {
        tensor: String,
        coord: Vec<i64>,
        err: IntOpError,
    },
    #[error("{point}: thread {thread} accesses `{tile}` out of bounds; validate the kernel first")]
    OutOfBounds {
        point: ProgramPoint,
        thread: u32,
        tile: String,
    },
    #[error("`{0}` is not a shared tile")]
    NotShared(String),
    #[error("element width {width} does not divide the {bytes}-byte span of `{tile}`")]
    Width {
        tile: String,
        width: usize,
        bytes: usize,
    },
}

/// The most recent writers of a byte, as (instance index, thread) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Writers {
    len: u8,
    items: [(u32, u32); WRITER_CAP],
}

impl Writers {
    pub fn push(&mut self, instance: u32, thread: u32) {
        let w = (instance, thread);
        if self.as_slice().contains(&w) {
            return;
        }
        if (self.len as usize) < WRITER_CAP {
            self.items[self.len as usize] = w;
            self.len += 1;
        } else {
            self.items.rotate_left(1);
            self.items[WRITER_CAP - 1] = w;
        }
    }

    pub fn as_slice(&self) -> &[(u32, u32)] {
        &self.items[..self.len as usize]
    }

    pub fn clear(&mut self) {
        self.len = 0;
    }
}

#[derive(Debug, Clone)]
enum DeclState {
    Global,
    Shared {
        tags: Vec<TagId>,
        writers: Vec<Writers>,
        /// Per byte: phase of the last write and the writing thread or `MANY`.
        race: Vec<(u32, u32)>,
    },
    Register {
        bytes: usize,
        tags: Vec<TagId>,
        writers: Vec<u32>,
    },
}

/// Abstract memory: one tag per tracked byte.
#[derive(Debug, Clone)]
pub struct TagState {
    decls: Vec<DeclState>,
    names: Vec<String>,
}

impl TagState {
    pub fn new(ir: &KernelIr) -> Self {
        let threads = ir.threads as usize;
        let decls = ir
            .decls
            .iter()
            .map(|d| match d.space {
                Space::Global => DeclState::Global,
                Space::Shared => DeclState::Shared {
                    tags: vec![TagId::BOTTOM; d.bytes],
                    writers: vec![Writers::default(); d.bytes],
                    race: vec![(NO_PHASE, 0); d.bytes],
                },
                Space::Register => DeclState::Register {
                    bytes: d.bytes,
                    tags: vec![TagId::BOTTOM; d.bytes * threads],
                    writers: vec![NO_WRITER; d.bytes * threads],
                },
            })
            .collect();
        Self {
            decls,
            names: ir.decls.iter().map(|d| d.name.clone()).collect(),
        }
    }

    /// Sets every byte of a shared declaration to ⊥ and forgets its writers.
    pub fn reset_shared(&mut self, decl: DeclId) -> Result<(), PropagateError> {
        match &mut self.decls[decl] {
            DeclState::Shared {
                tags,
                writers,
                race,
            } => {
                tags.fill(TagId::BOTTOM);
                writers.iter_mut().for_each(Writers::clear);
                race.fill((NO_PHASE, 0));
                Ok(())
            }
            _ => Err(PropagateError::NotShared(self.names[decl].clone())),
        }
    }

    /// Byte tags of a shared declaration, or of one thread's register.
    pub fn bytes(&self, decl: DeclId, thread: u32) -> &[TagId] {
        match &self.decls[decl] {
            DeclState::Global => &[],
            DeclState::Shared { tags, .. } => tags,
            DeclState::Register { bytes, tags, .. } => {
                let t = thread as usize;
                &tags[t * bytes..(t + 1) * bytes]
            }
        }
    }

    pub fn set_bytes(&mut self, decl: DeclId, thread: u32, at: usize, new: &[TagId]) {
        match &mut self.decls[decl] {
            DeclState::Global => {}
            DeclState::Shared { tags, .. } => tags[at..at + new.len()].copy_from_slice(new),
            DeclState::Register { bytes, tags, .. } => {
                let o = thread as usize * *bytes + at;
                tags[o..o + new.len()].copy_from_slice(new);
            }
        }
    }

    /// Per-element tags of a declaration viewed with elements of `width` bytes.
    pub fn reinterpret(&self, decl: DeclId, thread: u32, width: usize) -> Result<Vec<TagId>, PropagateError> {
        let bytes = self.bytes(decl, thread);
        if width == 0 || bytes.len() % width != 0 {
            return Err(PropagateError::Width {
                tile: self.names[decl].clone(),
                width,
                bytes: bytes.len(),
            });
        }
        Ok(bytes
            .chunks(width)
            .map(|c| super::lattice::fold(c.iter().copied()))
            .collect())
    }
}

/// Evaluates a tag function at a coordinate.
pub fn apply_tag_decl(decl: &TagDecl, coord: &[i64]) -> Result<Tag, IntOpError> {
    decl.apply(coord)
}

/// Tags of a captured byte range at one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSnap {
    pub decl: DeclId,
    pub space: Space,
    pub lo: usize,
    pub len: usize,
    /// Phase of the capturing instance.
    pub phase: u32,
    /// Registers: `threads * len` entries, thread-major. Otherwise `len`.
    pub tags: Vec<TagId>,
    /// Registers: writer instance per entry of `tags`.
    pub reg_writers: Vec<u32>,
    /// Shared: writer sets per byte.
    pub shared_writers: Vec<Writers>,
    /// Shared: last write phase and writer class per byte.
    pub race: Vec<(u32, u32)>,
}

impl RegionSnap {
    /// Tag of byte `at` as read by `thread`, or `None` outside the capture.
    pub fn byte(&self, thread: u32, at: usize) -> Option<TagId> {
        if at < self.lo || at >= self.lo + self.len {
            return None;
        }
        let i = at - self.lo;
        Some(match self.space {
            Space::Register => self.tags[thread as usize * self.len + i],
            Space::Shared => {
                let (p, class) = self.race[i];
                if p == self.phase && (class == MANY || class != thread) {
                    TagId::TOP
                } else {
                    self.tags[i]
                }
            }
            Space::Global => self.tags[i],
        })
    }

    /// Merge-fold over the bytes of one element.
    pub fn element(&self, thread: u32, at: usize, width: usize) -> Option<TagId> {
        let mut acc = TagId::BOTTOM;
        for b in at..at + width {
            acc = acc.merge(self.byte(thread, b)?);
        }
        Some(acc)
    }

    /// Distinct writers of an element's bytes, as (instance, thread).
    pub fn writers(&self, thread: u32, at: usize, width: usize) -> Vec<(u32, u32)> {
        let mut out: Vec<(u32, u32)> = Vec::new();
        for b in at..at + width {
            if b < self.lo || b >= self.lo + self.len {
                continue;
            }
            let i = b - self.lo;
            match self.space {
                Space::Register => {
                    let w = self.reg_writers[thread as usize * self.len + i];
                    if w != NO_WRITER {
                        out.push((w, thread));
                    }
                }
                Space::Shared => out.extend_from_slice(self.shared_writers[i].as_slice()),
                Space::Global => {}
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Result of propagation: captured snapshots per instance and the final state.
#[derive(Debug, Clone)]
pub struct TagTrace {
    pub interner: TagInterner,
    /// Indexed by instance; one snapshot per capture spec.
    pub snaps: Vec<Vec<RegionSnap>>,
    pub state: TagState,
    pub block: [i64; 3],
}

impl TagTrace {
    pub fn resolve(&self, id: TagId) -> Tag {
        self.interner.resolve(id)
    }

    /// Snapshot of `decl` at instance `inst`.
    pub fn snap(&self, inst: usize, decl: DeclId) -> Option<&RegionSnap> {
        self.snaps[inst].iter().find(|s| s.decl == decl)
    }
}

/// Replaces the tag a global element would receive from its tag function.
pub type InputOverride<'a> = &'a dyn Fn(DeclId, usize, Tag) -> Tag;

#[derive(Default, Clone, Copy)]
pub struct PropagateOptions<'a> {
    pub input_override: Option<InputOverride<'a>>,
}

/// Tag of every element of a global tensor, row-major. Untagged tensors
/// yield ⊥.
pub fn global_tag_table(
    ir: &KernelIr,
    decl: DeclId,
    interner: &mut TagInterner,
    input_override: Option<InputOverride<'_>>,
) -> Result<Vec<TagId>, PropagateError> {
    let d = &ir.decls[decl];
    let n = d.layout.size() as usize;
    let mut table = Vec::with_capacity(n);
    for i in 0..n {
        let tag = match d.tag {
            Some(t) => {
                let coord = d.layout.delinearize_row_major(i as i64);
                ir.tag_decls[t]
                    .apply(&coord)
                    .map_err(|err| PropagateError::TagEval {
                        tensor: d.name.clone(),
                        coord,
                        err,
                    })?
            }
            None => Tag::Bottom,
        };
        let tag = match input_override {
            Some(f) => f(decl, i, tag),
            None => tag,
        };
        table.push(interner.intern(&tag));
    }
    Ok(table)
}

struct Engine<'a> {
    ir: &'a KernelIr,
    opts: PropagateOptions<'a>,
    interner: TagInterner,
    state: TagState,
    /// Per global declaration: tag per element, computed on first use.
    global_tags: Vec<Option<Vec<TagId>>>,
}

pub fn propagate(ir: &KernelIr) -> Result<TagTrace, PropagateError> {
    propagate_with(ir, PropagateOptions::default())
}

pub fn propagate_with(ir: &KernelIr, opts: PropagateOptions<'_>) -> Result<TagTrace, PropagateError> {
    let mut e = Engine {
        ir,
        opts,
        interner: TagInterner::new(),
        state: TagState::new(ir),
        global_tags: vec![None; ir.decls.len()],
    };
    let slots = ir
        .instances
        .iter()
        .map(|i| match &i.op {
            Op::Assert(a) => a.quants.len(),
            Op::TagStamp { region, .. } => region.rank(),
            _ => 0,
        })
        .max()
        .unwrap_or(0);
    let mut env = ir.env(0, ir.capture_block, slots);
    let mut snaps = Vec::with_capacity(ir.instances.len());
    for (idx, inst) in ir.instances.iter().enumerate() {
        let mut taken = Vec::new();
        for spec in &inst.captures {
            taken.push(e.snapshot(spec, inst.phase)?);
        }
        snaps.push(taken);
        e.step(idx as u32, inst, &mut env)?;
    }
    Ok(TagTrace {
        interner: e.interner,
        snaps,
        state: e.state,
        block: ir.capture_block,
    })
}

impl Engine<'_> {
    fn global_table(&mut self, decl: DeclId) -> Result<&[TagId], PropagateError> {
        if self.global_tags[decl].is_none() {
            let table = global_tag_table(self.ir, decl, &mut self.interner, self.opts.input_override)?;
            self.global_tags[decl] = Some(table);
        }
        Ok(self.global_tags[decl].as_deref().unwrap())
    }

    fn snapshot(&mut self, spec: &CaptureSpec, phase: u32) -> Result<RegionSnap, PropagateError> {
        let d = &self.ir.decls[spec.decl];
        let (lo, len) = (spec.lo, spec.len);
        let mut snap = RegionSnap {
            decl: spec.decl,
            space: d.space,
            lo,
            len,
            phase,
            tags: Vec::new(),
            reg_writers: Vec::new(),
            shared_writers: Vec::new(),
            race: Vec::new(),
        };
        match &self.state.decls[spec.decl] {
            DeclState::Global => {
                let eb = d.dtype.bytes();
                let table = self.global_table(spec.decl)?.to_vec();
                snap.tags = (lo..lo + len).map(|b| table[b / eb]).collect();
            }
            DeclState::Shared {
                tags,
                writers,
                race,
            } => {
                snap.tags = tags[lo..lo + len].to_vec();
                snap.shared_writers = writers[lo..lo + len].to_vec();
                snap.race = race[lo..lo + len].to_vec();
            }
            DeclState::Register {
                bytes,
                tags,
                writers,
            } => {
                for t in 0..self.ir.threads as usize {
                    let o = t * bytes;
                    snap.tags.extend_from_slice(&tags[o + lo..o + lo + len]);
                    snap.reg_writers.extend_from_slice(&writers[o + lo..o + lo + len]);
                }
            }
        }
        Ok(snap)
    }

    /// Tag of one byte as read by `thread` in `phase`.
    fn read_byte(&mut self, decl: DeclId, thread: u32, at: usize, phase: u32) -> Result<TagId, PropagateError> {
        Ok(match &self.state.decls[decl] {
            DeclState::Global => {
                let eb = self.ir.decls[decl].dtype.bytes();
                self.global_table(decl)?[at / eb]
            }
            DeclState::Shared { tags, race, .. } => {
                let (p, class) = race[at];
                if p == phase && (class == MANY || class != thread) {
                    TagId::TOP
                } else {
                    tags[at]
                }
            }
            DeclState::Register { bytes, tags, .. } => tags[thread as usize * bytes + at],
        })
    }

    fn elem_offset(&self, r: &ElemRef, inst: &Instance, thread: u32, env: &[i64]) -> Result<Option<usize>, PropagateError> {
        let bytes = self.ir.decls[r.decl].bytes;
        if r.in_bounds(env, bytes) {
            return Ok(Some(r.offset.eval(env).unwrap() as usize));
        }
        if r.guarded {
            return Ok(None);
        }
        Err(PropagateError::OutOfBounds {
            point: inst.point.clone(),
            thread,
            tile: r.name.clone(),
        })
    }

    fn read_elem_bytes(
        &mut self,
        r: &ElemRef,
        inst: &Instance,
        thread: u32,
        env: &[i64],
        out: &mut Vec<TagId>,
    ) -> Result<(), PropagateError> {
        let off = self
            .elem_offset(r, inst, thread, env)?
            .expect("unguarded access");
        for b in off..off + r.width() {
            out.push(self.read_byte(r.decl, thread, b, inst.phase)?);
        }
        Ok(())
    }

    fn value_tag(&mut self, v: &VExpr, inst: &Instance, thread: u32, env: &[i64]) -> Result<TagId, PropagateError> {
        Ok(match v {
            VExpr::Const(_) | VExpr::Index(_) => TagId::BOTTOM,
            VExpr::Load(r) => match self.elem_offset(r, inst, thread, env)? {
                None => TagId::BOTTOM,
                Some(off) => {
                    let mut acc = TagId::BOTTOM;
                    for b in off..off + r.width() {
                        acc = acc.merge(self.read_byte(r.decl, thread, b, inst.phase)?);
                    }
                    acc
                }
            },
            VExpr::Neg(a) => self.value_tag(a, inst, thread, env)?,
            VExpr::Bin(_, a, b) | VExpr::Select(_, a, b) => {
                let x = self.value_tag(a, inst, thread, env)?;
                x.merge(self.value_tag(b, inst, thread, env)?)
            }
            VExpr::Call(_, args) => {
                let mut acc = TagId::BOTTOM;
                for a in args {
                    acc = acc.merge(self.value_tag(a, inst, thread, env)?);
                }
                acc
            }
        })
    }

    fn write(&mut self, decl: DeclId, thread: u32, at: usize, new: &[TagId], inst_idx: u32, phase: u32) {
        match &mut self.state.decls[decl] {
            DeclState::Global => {}
            DeclState::Shared {
                tags,
                writers,
                race,
            } => {
                for (i, &t) in new.iter().enumerate() {
                    let b = at + i;
                    tags[b] = tags[b].merge(t);
                    writers[b].push(inst_idx, thread);
                    let (p, class) = race[b];
                    race[b] = if p != phase {
                        (phase, thread)
                    } else if class == thread {
                        (p, class)
                    } else {
                        (p, MANY)
                    };
                }
            }
            DeclState::Register {
                bytes,
                tags,
                writers,
            } => {
                let o = thread as usize * *bytes + at;
                tags[o..o + new.len()].copy_from_slice(new);
                writers[o..o + new.len()].fill(inst_idx);
            }
        }
    }

    fn step(&mut self, idx: u32, inst: &Instance, env: &mut Vec<i64>) -> Result<(), PropagateError> {
        let threads = self.ir.threads;
        match &inst.op {
            Op::Barrier | Op::ViewAlias { .. } | Op::Assert(_) | Op::Annotation { .. } => {}
            Op::Reset { decl } => self.state.reset_shared(*decl)?,
            Op::Store { dst, value } => {
                if self.ir.decls[dst.decl].space == Space::Global {
                    return Ok(());
                }
                let mut pending: Vec<(u32, usize, Vec<TagId>)> = Vec::with_capacity(threads as usize);
                for t in 0..threads {
                    env[TID as usize] = t as i64;
                    let off = self.elem_offset(dst, inst, t, env)?.expect("unguarded store");
                    let mut tags = Vec::with_capacity(dst.width());
                    match value {
                        StoreValue::Copy(src) => self.read_elem_bytes(src, inst, t, env, &mut tags)?,
                        StoreValue::Gather(parts) => {
                            let mut buf = Vec::new();
                            for p in parts {
                                buf.clear();
                                self.read_elem_bytes(&p.src, inst, t, env, &mut buf)?;
                                tags.extend_from_slice(&buf[p.lo..p.lo + p.len]);
                            }
                        }
                        StoreValue::Compute(v) => {
                            let tag = self.value_tag(v, inst, t, env)?;
                            tags.resize(dst.width(), tag);
                        }
                    }
                    pending.push((t, off, tags));
                }
                for (t, off, tags) in pending {
                    self.write(dst.decl, t, off, &tags, idx, inst.phase);
                }
            }
            Op::Matmul { c, d, .. } => {
                if c == d {
                    return Ok(());
                }
                let eb = c.dtype.bytes();
                let mut coords = Vec::new();
                c.layout.for_each_coord(|x| coords.push(x.to_vec()));
                for t in 0..threads {
                    env[TID as usize] = t as i64;
                    let cb = c.base.eval(env).unwrap_or(0);
                    let db = d.base.eval(env).unwrap_or(0);
                    for x in &coords {
                        let co = (cb + c.layout.eval_unchecked(x) * eb as i64) as usize;
                        let dof = (db + d.layout.eval_unchecked(x) * eb as i64) as usize;
                        let mut tags = Vec::with_capacity(eb);
                        for b in co..co + eb {
                            tags.push(self.read_byte(c.decl, t, b, inst.phase)?);
                        }
                        self.write(d.decl, t, dof, &tags, idx, inst.phase);
                    }
                }
            }
            Op::TagStamp { region, exprs } => {
                let eb = region.dtype.bytes();
                let mut coords = Vec::new();
                region.layout.for_each_coord(|x| coords.push(x.to_vec()));
                let f = FIRST_FREE as usize;
                for t in 0..threads {
                    env[TID as usize] = t as i64;
                    let base = region.base.eval(env).unwrap_or(0);
                    for x in &coords {
                        env[f..f + x.len()].copy_from_slice(x);
                        let vals: Vec<i64> = exprs
                            .iter()
                            .map(|e| e.eval(env))
                            .collect::<Result<_, _>>()
                            .map_err(|err| PropagateError::TagEval {
                                tensor: region.name.clone(),
                                coord: x.clone(),
                                err,
                            })?;
                        let id = self.interner.intern_tuple(&vals);
                        let off = (base + region.layout.eval_unchecked(x) * eb as i64) as usize;
                        self.write(region.decl, t, off, &vec![id; eb], idx, inst.phase);
                    }
                }
            }
        }
        Ok(())
    }
}

#![allow(dead_code)]

pub mod lattice;
pub mod layouts;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tilecheck::check::{Constraint, Violation};
use tilecheck::dtype::DType;
use tilecheck::interp::{DynamicTagLog, TensorValue, Tensors};
use tilecheck::ir::iexpr::FIRST_FREE;
use tilecheck::ir::types::{KernelIr, Space};
use tilecheck::pipeline::Config;
use tilecheck::tags::engine::TagTrace;
use tilecheck::tags::{Tag, TagId};

pub fn fixture(name: &str) -> String {
    let p = format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{p}: {e}"))
}

pub fn config(bindings: &[(&str, i64)]) -> Config {
    let mut cfg = Config::default();
    for (k, v) in bindings {
        cfg.bindings.insert((*k).into(), *v);
    }
    cfg
}

pub fn attn_config() -> Config {
    config(&[("d", 128), ("gqa", 8), ("threads", 512)])
}

pub fn gemm_config() -> Config {
    config(&[("threads", 256)])
}

/// Random values for every read-only global, rounded to the tensor's dtype.
pub fn random_inputs(ir: &KernelIr, seed: u64, mut draw: impl FnMut(&str, &mut ChaCha8Rng) -> f64) -> Tensors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Tensors::new();
    for &d in &ir.params {
        let decl = &ir.decls[d];
        if decl.space != Space::Global || decl.writable {
            continue;
        }
        let n: i64 = decl.shape.iter().product();
        let vals: Vec<f64> = (0..n).map(|_| draw(&decl.name, &mut rng)).collect();
        out.insert(decl.name.clone(), TensorValue::from_f64(decl.dtype, &decl.shape, &vals));
    }
    out
}

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

pub fn small_int(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-4i32..=4) as f64
}

pub fn bf16_round(x: f64) -> f64 {
    half::bf16::from_f64(x).to_f64()
}

pub fn dtype_of(ir: &KernelIr, name: &str) -> DType {
    ir.decls[ir.decl_by_name(name).unwrap()].dtype
}

/// Bytes compared by [`agreement`].
#[derive(Debug, Default)]
pub struct Agreement {
    pub bytes: u64,
    pub concrete: u64,
}

/// Every captured byte whose static tag is concrete must carry exactly that
/// tag at runtime; a static bottom must stay bottom.
pub fn agreement(ir: &KernelIr, trace: &TagTrace, log: &DynamicTagLog) -> Result<Agreement, String> {
    let mut memo: HashMap<(TagId, TagId), bool> = HashMap::new();
    let mut a = Agreement::default();
    for (inst, snaps) in trace.snaps.iter().enumerate() {
        for s in snaps {
            let Some(d) = log.capture(inst, s.decl) else {
                return Err(format!("instance {inst}: no dynamic capture of {}", ir.decls[s.decl].name));
            };
            for t in 0..ir.threads {
                for b in s.lo..s.lo + s.len {
                    let st = s.byte(t, b).unwrap();
                    if st.is_top() {
                        continue;
                    }
                    let dt = d.byte(t, b).ok_or_else(|| format!("instance {inst}: byte {b} not captured"))?;
                    a.bytes += 1;
                    if !st.is_bottom() {
                        a.concrete += 1;
                    }
                    let ok = *memo
                        .entry((st, dt))
                        .or_insert_with(|| trace.resolve(st) == log.interner.resolve(dt));
                    if !ok {
                        let p = &ir.instances[inst].point;
                        return Err(format!(
                            "line {} {:?} thread {t} {}+{b}: static {} dynamic {}",
                            p.line,
                            p.instance,
                            ir.decls[s.decl].name,
                            trace.resolve(st),
                            log.interner.resolve(dt)
                        ));
                    }
                }
            }
        }
    }
    Ok(a)
}

/// Dynamic tags of both sides of a violation's point.
pub fn dynamic_sides(ir: &KernelIr, c: &Constraint, log: &DynamicTagLog, v: &Violation) -> Option<(Tag, Tag)> {
    let mut env = ir.env(v.thread, ir.capture_block, v.position.len());
    env[FIRST_FREE as usize..].copy_from_slice(&v.position);
    let side = |acc: &tilecheck::ir::types::Accessor| -> Option<Tag> {
        let o = acc.elem.offset.eval(&env).ok()?;
        let snap = log.capture(c.instance, acc.elem.decl)?;
        let id = snap.element(v.thread, usize::try_from(o).ok()?, acc.elem.width())?;
        Some(log.interner.resolve(id))
    };
    Some((side(&c.left)?, side(&c.right)?))
}

/// A violation is confirmed when the assertion fails on the concrete tags
/// observed at the same instance, thread and position.
pub fn confirmed(ir: &KernelIr, constraints: &[Constraint], log: &DynamicTagLog, v: &Violation) -> bool {
    let Some(c) = constraints
        .iter()
        .find(|c| c.assertion_id == v.assertion_id && c.point.instance == v.point.instance)
    else {
        return false;
    };
    match dynamic_sides(ir, c, log, v) {
        Some((l, r)) => !tilecheck::check::holds_tags(c.kind, &l, &r),
        None => false,
    }
}

pub struct Mutant {
    pub name: &'static str,
    pub fixture: &'static str,
    pub from: &'static str,
    pub to: &'static str,
}

impl Mutant {
    /// Mutated source; panics unless the edit site is unique.
    pub fn source(&self) -> String {
        let src = fixture(self.fixture);
        assert_eq!(src.matches(self.from).count(), 1, "{}: edit site not unique", self.name);
        src.replacen(self.from, self.to, 1)
    }

    pub fn config(&self) -> Config {
        if self.fixture == "flash_attn.tk" {
            attn_config()
        } else {
            gemm_config()
        }
    }
}

const ATTN_STAGE_END: &str = "concat(hi(tU[j, k]) for k in range(4))\n        syncthreads()\n";
const GEMM_STAGE_END: &str = "gB[rowb, kt, chb]\n        syncthreads()\n";

pub const MUTANTS: &[Mutant] = &[
    Mutant {
        name: "attn_nw_low_bit",
        fixture: "flash_attn.tk",
        from: "nw = (wid & 2) * 2",
        to: "nw = (wid & 1) * 2",
    },
    Mutant {
        name: "attn_nw_high_bit",
        fixture: "flash_attn.tk",
        from: "wid / 4 * 2 + wid % 2",
        to: "wid / 4 + wid % 2",
    },
    Mutant {
        name: "attn_dropped_staging_barrier",
        fixture: "flash_attn.tk",
        from: ATTN_STAGE_END,
        to: "concat(hi(tU[j, k]) for k in range(4))\n",
    },
    Mutant {
        name: "attn_k_read_swizzle",
        fixture: "flash_attn.tk",
        from: "j % 4 * 2 + wtid / 32, j / 8]",
        to: "j % 4 * 2 + (wtid / 32 + 1) % 2, j / 8]",
    },
    Mutant {
        name: "attn_k_row_stride",
        fixture: "flash_attn.tk",
        from: "gK[i, j * 32 + tid / 16",
        to: "gK[i, j * 31 + tid / 16",
    },
    Mutant {
        name: "attn_v_hi_slot",
        fixture: "flash_attn.tk",
        from: "(wtid % 16) * 2 + 1, nw / 4]",
        to: "(wtid % 16) * 2, nw / 4]",
    },
    Mutant {
        name: "attn_q_chunk",
        fixture: "flash_attn.tk",
        from: "2 * i + wtid / 32]",
        to: "2 * i + 1 - wtid / 32]",
    },
    Mutant {
        name: "attn_v_read_lane",
        fixture: "flash_attn.tk",
        from: "j % 2 * 2 + wtid / 32, wtid % 32]",
        to: "j % 2 * 2 + wtid / 32, (wtid + 1) % 32]",
    },
    Mutant {
        name: "gemm_store_swizzle",
        fixture: "gemm_staging.tk",
        from: "sA[row, ch ^ row % 8]",
        to: "sA[row, ch ^ row % 4]",
    },
    Mutant {
        name: "gemm_read_swizzle",
        fixture: "gemm_staging.tk",
        from: "sB[rb, (2 * s + wtid / 32) ^ rb % 8]",
        to: "sB[rb, (2 * s + wtid / 32) ^ rb % 4]",
    },
    Mutant {
        name: "gemm_lane_offset",
        fixture: "gemm_staging.tk",
        from: "wn * 32 + wtid % 32\n",
        to: "wn * 32 + (wtid + 1) % 32\n",
    },
    Mutant {
        name: "gemm_dropped_staging_barrier",
        fixture: "gemm_staging.tk",
        from: GEMM_STAGE_END,
        to: "gB[rowb, kt, chb]\n",
    },
    Mutant {
        name: "gemm_chunk_stride",
        fixture: "gemm_staging.tk",
        from: "gA[row, kt, ch]",
        to: "gA[row, kt, (ch + 1) % 8]",
    },
];

/// Outcome of checking one mutant with every failing point materialized and
/// replaying it dynamically.
#[derive(Debug)]
pub struct MutantOutcome {
    pub failures: u64,
    pub materialized: usize,
    pub confirmed: usize,
    pub first_confirmed: bool,
}

pub fn evaluate_mutant(m: &Mutant) -> Result<MutantOutcome, String> {
    use tilecheck::interp::{run_with, RunOptions};
    let src = m.source();
    let mut cfg = m.config();
    cfg.check.truncate = usize::MAX;
    let r = tilecheck::pipeline::check_source(&src, &cfg).map_err(|e| format!("{}: {e}", m.name))?;
    let ir = &r.compiled.ir;
    let constraints = tilecheck::check::compile_assertions(ir, &r.trace).map_err(|e| e.to_string())?;
    let inputs = random_inputs(ir, 1, |_, rng| uniform(rng));
    let opts = RunOptions {
        grid: [1, 1, 1],
        dynamic_tags: true,
        log_stores: false,
    };
    let out = run_with(ir, &inputs, &opts).map_err(|e| format!("{}: {e}", m.name))?;
    let log = out.log.expect("dynamic tags requested");
    let vs: Vec<&Violation> = r.results.iter().flat_map(|x| &x.violations).collect();
    let ok: Vec<bool> = vs.iter().map(|v| confirmed(ir, &constraints, &log, v)).collect();
    Ok(MutantOutcome {
        failures: r.violation_count(),
        materialized: vs.len(),
        confirmed: ok.iter().filter(|&&b| b).count(),
        first_confirmed: ok.first().copied().unwrap_or(false),
    })
}

pub fn schema() -> serde_json::Value {
    let p = format!("{}/../../docs/violation.schema.json", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Schema validation errors of one report, empty when it conforms.
pub fn schema_errors(report: &str) -> Vec<String> {
    let v: serde_json::Value = serde_json::from_str(report).expect("report is JSON");
    let validator = jsonschema::validator_for(&schema()).expect("schema compiles");
    validator.iter_errors(&v).map(|e| e.to_string()).collect()
}

/// Dense fp64 softmax(Q K^T) V for one shared key/value head.
/// Layouts: q and out `(nq, hq, d)`, k and v `(sq, d)`.
pub fn attention_oracle(q: &[f64], k: &[f64], v: &[f64], nq: usize, hq: usize, sq: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; nq * hq * d];
    for qi in 0..nq {
        for h in 0..hq {
            let row = &q[(qi * hq + h) * d..][..d];
            let s: Vec<f64> = (0..sq)
                .map(|j| row.iter().zip(&k[j * d..][..d]).map(|(a, b)| a * b).sum())
                .collect();
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = p.iter().sum();
            for x in 0..d {
                out[(qi * hq + h) * d + x] = (0..sq).map(|j| p[j] * v[j * d + x]).sum::<f64>() / z;
            }
        }
    }
    out
}

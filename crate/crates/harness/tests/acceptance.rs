//! Acceptance suite: one PASS/FAIL line per criterion with its runtime.

#[path = "../../core/tests/common/mod.rs"]
#[allow(dead_code)]
mod common;
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::layouts::{index_table, oracle_points, random_composable, random_layout};
use common::*;
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tilecheck::check::{report, CheckOptions, ReportFormat};
use tilecheck::interp::{run_with, RunOptions};
use tilecheck::layout::LayoutError;
use tilecheck::pipeline::{check_source, compile, Checked};
use tilecheck::tags::{fold, merge, Tag, TagInterner};
use tilecheck_harness::{run_icrl, IcrlConfig, PlannerParams, ScriptedTransport};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn layout_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    let mut nested = 0;
    for _ in 0..200 {
        let spec = random_layout(&mut rng, 4096);
        nested += spec.dims.iter().any(|d| d.nested) as usize;
        let l = spec.build(2);
        for (c, want) in oracle_points(&spec) {
            let got = l.eval(&c).map_err(|e| format!("{l} at {c:?}: {e}"))?;
            ensure(got == want, || format!("{l} at {c:?}: {got} != {want}"))?;
        }
    }
    ensure(nested > 0, || "no nested layouts drawn".into())?;
    let mut composed = 0;
    let mut trials = 0;
    while composed < 200 && trials < 20_000 {
        trials += 1;
        let (outer, inner) = random_composable(&mut rng);
        let (lo, li) = (outer.build(4), inner.build(4));
        let r = match lo.compose(&li) {
            Ok(r) => r,
            Err(LayoutError::NotRepresentable(_)) => continue,
            Err(e) => return Err(format!("{lo} o {li}: {e}")),
        };
        composed += 1;
        let table = index_table(&outer);
        for (c, i) in oracle_points(&inner) {
            let got = r.eval(&c).map_err(|e| e.to_string())?;
            ensure(got == table[i as usize], || format!("{lo} o {li} at {c:?}"))?;
        }
    }
    ensure(composed == 200, || format!("only {composed} compositions"))?;
    Ok(format!("200 layouts ({nested} nested), {composed} compositions"))
}

fn lattice_laws() -> Outcome {
    const CASES: usize = 10_000;
    let mut runner = TestRunner::new(PropConfig::default());
    let strat = common::lattice::arb_tag();
    let draw = |runner: &mut TestRunner| strat.new_tree(runner).map(|t| t.current()).map_err(|e| e.to_string());
    for n in 0..CASES {
        let (a, b, c) = (draw(&mut runner)?, draw(&mut runner)?, draw(&mut runner)?);
        let fail = |law: &str| format!("{law} fails at case {n}: {a:?} {b:?} {c:?}");
        ensure(merge(&a, &b) == merge(&b, &a), || fail("commutativity"))?;
        ensure(merge(&merge(&a, &b), &c) == merge(&a, &merge(&b, &c)), || fail("associativity"))?;
        ensure(merge(&a, &a) == a, || fail("idempotence"))?;
        ensure(merge(&Tag::Bottom, &a) == a, || fail("bottom identity"))?;
        ensure(merge(&Tag::Top, &a) == Tag::Top, || fail("top absorption"))?;
        let m = merge(&a, &b);
        ensure(a.le(&m) && b.le(&m), || fail("upper bound"))?;
        ensure(!(a.le(&c) && b.le(&c)) || m.le(&c), || fail("least upper bound"))?;
        let mut i = TagInterner::new();
        let ids = [i.intern(&a), i.intern(&b), i.intern(&c)];
        ensure(i.resolve(fold(ids.iter().copied())) == merge(&m, &c), || fail("interned fold"))?;
    }
    Ok(format!("{CASES} cases x 8 laws"))
}

fn attention() -> Outcome {
    let r = check_source(&fixture("flash_attn.tk"), &attn_config()).map_err(|e| e.to_string())?;
    ensure(r.passed(), || report(&r.results, ReportFormat::Text))?;
    let lines: Vec<u32> = r.results.iter().map(|x| x.line).collect();
    ensure(lines == [36, 57], || format!("assertion lines {lines:?}"))?;
    let c = compile(&fixture("flash_attn.tk"), &attn_config()).map_err(|e| e.to_string())?;
    let inputs = random_inputs(&c.ir, 7, |name, rng| {
        let x = uniform(rng);
        if name == "V" {
            0.625 + 0.375 * x
        } else {
            x
        }
    });
    let opts = RunOptions {
        grid: [1, 8, 1],
        ..RunOptions::default()
    };
    let out = run_with(&c.ir, &inputs, &opts).map_err(|e| e.to_string())?;
    let got = out.tensors["O"].to_f64();
    let want = attention_oracle(
        &inputs["Q"].to_f64(),
        &inputs["K"].to_f64(),
        &inputs["V"].to_f64(),
        256,
        8,
        128,
        128,
    );
    let worst = got.iter().zip(&want).map(|(a, w)| (a - w).abs() / w.abs()).fold(0.0, f64::max);
    ensure(worst <= 2e-2, || format!("max relative error {worst:.3e}"))?;
    Ok(format!("{} points pass, max relative error {worst:.3e}", r.results.iter().map(|x| x.checked).sum::<u64>()))
}

fn mutation_detection() -> Outcome {
    for (name, cfg) in [("flash_attn.tk", attn_config()), ("gemm_staging.tk", gemm_config())] {
        let r = check_source(&fixture(name), &cfg).map_err(|e| e.to_string())?;
        ensure(r.passed(), || format!("unmutated {name} fails"))?;
    }
    ensure(MUTANTS.len() >= 10, || format!("only {} mutants", MUTANTS.len()))?;
    for m in MUTANTS {
        let o = evaluate_mutant(m)?;
        ensure(o.failures > 0, || format!("{} not detected", m.name))?;
        ensure(o.confirmed > 0, || format!("{}: no violation confirmed dynamically", m.name))?;
    }
    Ok(format!("{} mutants detected and confirmed", MUTANTS.len()))
}

fn agreement_corpus() -> Outcome {
    let corpus: Vec<(&str, tilecheck::pipeline::Config, [i64; 3], bool)> = vec![
        ("flash_attn.tk", attn_config(), [1, 8, 1], false),
        ("gemm_staging.tk", gemm_config(), [1, 1, 1], false),
        ("copy_shared.tk", config(&[("threads", 256)]), [1, 1, 1], true),
        ("select.tk", config(&[("threads", 64)]), [1, 1, 1], true),
        ("reset_reuse.tk", config(&[("threads", 256)]), [1, 1, 1], true),
        ("two_writers.tk", config(&[("threads", 64)]), [1, 1, 1], true),
        ("split_writers.tk", config(&[("threads", 64)]), [1, 1, 1], true),
        ("mfma_single.tk", config(&[("threads", 64)]), [1, 1, 1], true),
    ];
    let mut points = 0;
    for (name, cfg, grid, ints) in &corpus {
        let r = check_source(&fixture(name), cfg).map_err(|e| format!("{name}: {e}"))?;
        let ir = &r.compiled.ir;
        let inputs = random_inputs(ir, 8, |_, rng| if *ints { small_int(rng) } else { uniform(rng) });
        let opts = RunOptions {
            grid: *grid,
            dynamic_tags: true,
            log_stores: false,
        };
        let out = run_with(ir, &inputs, &opts).map_err(|e| format!("{name}: {e}"))?;
        let a = agreement(ir, &r.trace, out.log.as_ref().expect("dynamic tags requested"))
            .map_err(|e| format!("{name}: {e}"))?;
        points += a.concrete;
    }
    Ok(format!("{} kernels, {points} concrete tags agree", corpus.len()))
}

fn final_tag(r: &Checked, name: &str, thread: u32, width: usize) -> Tag {
    let d = r.compiled.ir.decl_by_name(name).expect("declared");
    let bytes = &r.trace.state.bytes(d, thread)[..width];
    r.trace.resolve(fold(bytes.iter().copied()))
}

fn path_insensitivity() -> Outcome {
    let r = check_source(&fixture("select.tk"), &config(&[("threads", 64)])).map_err(|e| e.to_string())?;
    for t in 0..64u32 {
        let want = if t < 48 { Tag::Tuple(vec![t as i64 + 16]) } else { Tag::Bottom };
        let got = final_tag(&r, "r", t, 4);
        ensure(got == want, || format!("thread {t}: {got:?}, want {want:?}"))?;
    }
    Ok("48 loaded lanes keep their tag, 16 constant lanes are bottom".into())
}

fn shared_reset() -> Outcome {
    let cfg = config(&[("threads", 256)]);
    let src = fixture("reset_reuse.tk");
    let r = check_source(&src, &cfg).map_err(|e| e.to_string())?;
    ensure(r.passed(), || report(&r.results, ReportFormat::Text))?;
    let stripped = src.replace("        reset(buf)\n", "");
    ensure(stripped != src, || "reset statement not found".into())?;
    let r = check_source(&stripped, &cfg).map_err(|e| e.to_string())?;
    let vs: Vec<_> = r.results.iter().flat_map(|x| &x.violations).collect();
    ensure(!vs.is_empty(), || "missing reset not detected".into())?;
    ensure(vs.iter().any(|v| v.left.tag == Tag::Top || v.right.tag == Tag::Top), || {
        "no violating side is top".into()
    })?;
    Ok(format!("with reset passes, without reset {} violations", r.violation_count()))
}

fn icrl_run(seed: u64) -> Result<(tilecheck_harness::IcrlOutcome, String), String> {
    let task = support::demo_task();
    let mut t = ScriptedTransport::load(&support::demo_script()).map_err(|e| e.to_string())?;
    let cfg = IcrlConfig {
        episodes: 3,
        steps: 2,
        temperature: 1.0,
        seed,
    };
    let mut log = Vec::new();
    let out = run_icrl(&task, &support::shipped_kb(), PlannerParams::default(), &mut t, &cfg, &mut log)
        .map_err(|e| e.to_string())?;
    Ok((out, String::from_utf8(log).expect("utf-8 log")))
}

fn icrl_contract() -> Outcome {
    let (out, log) = icrl_run(5)?;
    let best = out.best.as_ref().ok_or("no candidate retained")?;
    ensure(best.feedback.passed(), || "retained candidate does not pass".into())?;
    ensure(out.params.version() == 3, || format!("planner version {}", out.params.version()))?;
    let mut prev = f64::NEG_INFINITY;
    let mut accepted = 0;
    for line in log.lines() {
        let r: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if r["event"] != "step" {
            continue;
        }
        let fb = &r["feedback"];
        let passed = fb.is_object() && fb.get("cost").is_some();
        ensure(r["accepted"].as_bool() == Some(passed), || format!("step acceptance mismatch: {line}"))?;
        accepted += passed as usize;
        if let Some(b) = r["best_reward"].as_f64() {
            ensure(b >= prev, || format!("best reward fell from {prev} to {b}"))?;
            prev = b;
        }
    }
    let (_, again) = icrl_run(5)?;
    ensure(log == again, || "replay differs".into())?;
    Ok(format!("{accepted}/6 steps accepted, best reward {:.4}, replay identical", best.reward))
}

fn report_stability() -> Outcome {
    let mut reports = 0;
    for m in MUTANTS {
        let json = |workers: usize| -> Result<String, String> {
            let mut cfg = m.config();
            cfg.check = CheckOptions {
                workers,
                ..CheckOptions::default()
            };
            let r = check_source(&m.source(), &cfg).map_err(|e| e.to_string())?;
            Ok(report(&r.results, ReportFormat::Json))
        };
        let base = json(1)?;
        let errs = schema_errors(&base);
        ensure(errs.is_empty(), || format!("{}: {errs:?}", m.name))?;
        for w in [1, 2, 8] {
            ensure(json(w)? == base, || format!("{}: differs with {w} workers", m.name))?;
            reports += 1;
        }
    }
    Ok(format!("{reports} reports schema-valid and identical"))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("layout algebra matches table oracle", Duration::from_secs(10), layout_oracle),
        ("tag lattice laws", Duration::from_secs(5), lattice_laws),
        ("attention fixture checks and computes", Duration::from_secs(60), attention),
        ("seeded mutants detected", Duration::from_secs(300), mutation_detection),
        ("static tags agree with runtime", Duration::from_secs(300), agreement_corpus),
        ("select is path insensitive", Duration::from_secs(5), path_insensitivity),
        ("shared buffer reset", Duration::from_secs(5), shared_reset),
        ("optimization loop contract", Duration::from_secs(30), icrl_contract),
        ("violation reports stable", Duration::from_secs(300), report_stability),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let took = start.elapsed();
        let res = match res {
            Ok(_) if took > *budget => Err(format!("took {took:.2?}, budget {budget:?}")),
            r => r,
        };
        match res {
            Ok(detail) => println!("PASS {} {name} ({took:.2?}): {detail}", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL {} {name} ({took:.2?}): {e}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

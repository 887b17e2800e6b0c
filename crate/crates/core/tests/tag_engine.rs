mod common;

use common::*;
use tilecheck::check::{report, ReportFormat, Status};
use tilecheck::interp::{run, run_with, RunOptions};
use tilecheck::pipeline::{check_source, compile, PipelineError};
use tilecheck::tags::engine::{propagate, propagate_with, PropagateOptions};
use tilecheck::tags::{Tag, TagId};

fn final_tag(r: &tilecheck::pipeline::Checked, name: &str, thread: u32, at: usize, width: usize) -> Tag {
    let d = r.compiled.ir.decl_by_name(name).unwrap();
    let bytes = &r.trace.state.bytes(d, thread)[at..at + width];
    r.trace.resolve(tilecheck::tags::fold(bytes.iter().copied()))
}

#[test]
fn select_keeps_load_tag_and_constant_is_bottom() {
    let r = check_source(&fixture("select.tk"), &config(&[("threads", 64)])).unwrap();
    for t in 0..64u32 {
        let want = if t < 48 { Tag::Tuple(vec![t as i64 + 16]) } else { Tag::Bottom };
        assert_eq!(final_tag(&r, "r", t, 0, 4), want, "thread {t}");
    }
}

#[test]
fn select_evaluates_the_taken_arm() {
    let c = compile(&fixture("select.tk"), &config(&[("threads", 64)])).unwrap();
    let inputs = random_inputs(&c.ir, 2, |_, rng| uniform(rng));
    let out = run(&c.ir, &inputs, [1, 1, 1]).unwrap();
    let q = inputs["Q"].to_f64();
    let o = out.tensors["O"].to_f64();
    for t in 0..64 {
        assert_eq!(o[t], if t < 48 { q[t + 16] } else { 0.0 });
    }
}

#[test]
fn reused_buffer_passes_with_reset() {
    let r = check_source(&fixture("reset_reuse.tk"), &config(&[("threads", 256)])).unwrap();
    assert!(r.passed(), "{}", report(&r.results, ReportFormat::Text));
    assert_eq!(r.results[0].checked, 512);
}

#[test]
fn reused_buffer_without_reset_merges_to_top() {
    let src = fixture("reset_reuse.tk").replace("        reset(buf)\n", "");
    let r = check_source(&src, &config(&[("threads", 256)])).unwrap();
    assert!(!r.passed());
    let res = &r.results[0];
    assert_eq!(res.failures, 256);
    for v in &res.violations {
        assert_eq!(v.point.instance, vec![1]);
        assert_eq!(v.left.tag, Tag::Top);
        assert!(v.right.tag.is_tuple());
    }
}

#[test]
fn colliding_writers_break_non_conformity() {
    let r = check_source(&fixture("two_writers.tk"), &config(&[("threads", 64)])).unwrap();
    let res = &r.results[0];
    assert_eq!(res.status, Status::Fail);
    assert_eq!(res.failures, 64);
    let v = &res.violations[0];
    assert_eq!(v.kind, "non-conformity");
    assert_eq!(v.left.tag, Tag::Top);
    let lines: Vec<u32> = v.writers.left.iter().map(|w| w.line).collect();
    assert_eq!(lines, vec![6, 7]);
    let threads: Vec<u32> = v.writers.left.iter().map(|w| w.thread).collect();
    assert_eq!(threads, vec![0, 63]);
}

#[test]
fn separated_writers_satisfy_non_conformity() {
    let r = check_source(&fixture("split_writers.tk"), &config(&[("threads", 64)])).unwrap();
    assert!(r.passed(), "{}", report(&r.results, ReportFormat::Text));
}

#[test]
fn copy_through_shared_preserves_data_and_tags() {
    let r = check_source(&fixture("copy_shared.tk"), &config(&[("threads", 256)])).unwrap();
    let ir = &r.compiled.ir;
    let s = ir.decl_by_name("s").unwrap();
    assert_eq!(ir.decls[s].bytes, 1024);
    for t in 0..256u32 {
        let want = Tag::Tuple(vec![t as i64]);
        assert_eq!(final_tag(&r, "s", 0, 4 * t as usize, 4), want);
    }
    let inputs = random_inputs(ir, 9, |_, rng| rand::Rng::random_range(rng, 0..1_000_000) as f64);
    let out = run(ir, &inputs, [1, 1, 1]).unwrap();
    assert_eq!(out.tensors["Y"].data, inputs["X"].data);
    assert_eq!(out.costs.shared_bytes, 2 * 1024);
    assert_eq!(out.costs.global_bytes, 2 * 1024);
    assert_eq!(out.costs.barriers, 1);
}

#[test]
fn single_matmul_matches_triple_loop() {
    let r = check_source(&fixture("mfma_single.tk"), &config(&[("threads", 64)])).unwrap();
    assert!(r.passed(), "{}", report(&r.results, ReportFormat::Text));
    let ir = &r.compiled.ir;
    let inputs = random_inputs(ir, 4, |_, rng| uniform(rng));
    let out = run(ir, &inputs, [1, 1, 1]).unwrap();
    let a = inputs["A"].to_f64();
    let b = inputs["B"].to_f64();
    let c = out.tensors["C"].to_f64();
    for m in 0..32 {
        for n in 0..32 {
            let want: f64 = (0..8).map(|k| a[m * 8 + k] * b[k * 32 + n]).sum();
            assert!((c[m * 32 + n] - want).abs() <= 1e-5 * (1.0 + want.abs()), "C[{m}, {n}]");
        }
    }
}

#[test]
fn matmul_accumulator_keeps_its_tags() {
    let src = fixture("mfma_single.tk").replace(
        "    assert tag(a[e]) == tag(b[e]) for e in range(4)\n",
        "    T_C = acc[x] -> (x, tid)\n",
    );
    let r = check_source(&src, &config(&[("threads", 64)])).unwrap();
    for t in [0u32, 17, 63] {
        for x in 0..16 {
            assert_eq!(final_tag(&r, "acc", t, 4 * x, 4), Tag::Tuple(vec![x as i64, t as i64]));
        }
    }
}

#[test]
fn reinterpreting_bytes_folds_tags() {
    let r = check_source(&fixture("gemm_staging.tk"), &gemm_config()).unwrap();
    let ir = &r.compiled.ir;
    let ta = ir.decl_by_name("tA").unwrap();
    let st = &r.trace.state;
    let halves = st.reinterpret(ta, 0, 2).unwrap();
    assert_eq!(halves.len(), 8);
    assert!(halves.iter().all(|t| t.is_tuple()));
    let whole = st.reinterpret(ta, 0, 16).unwrap();
    assert_eq!(whole, vec![TagId::TOP]);
    assert!(st.reinterpret(ta, 0, 3).is_err());
}

fn assert_monotone(src: &str, cfg: &tilecheck::pipeline::Config) {
    let c = compile(src, cfg).unwrap();
    let base = propagate(&c.ir).unwrap();
    let raise = |_: usize, idx: usize, t: Tag| if idx % 5 == 0 { Tag::Top } else { t };
    let raised = propagate_with(
        &c.ir,
        PropagateOptions {
            input_override: Some(&raise),
        },
    )
    .unwrap();
    let mut compared = 0u64;
    for (a, b) in base.snaps.iter().zip(&raised.snaps) {
        for (x, y) in a.iter().zip(b) {
            for t in 0..c.ir.threads {
                for at in x.lo..x.lo + x.len {
                    let lo = base.resolve(x.byte(t, at).unwrap());
                    let hi = raised.resolve(y.byte(t, at).unwrap());
                    assert!(lo.le(&hi), "byte {at} thread {t}: {lo} then {hi}");
                    compared += 1;
                }
            }
        }
    }
    assert!(compared > 0);
}

#[test]
fn raising_inputs_only_raises_tags() {
    assert_monotone(&fixture("gemm_staging.tk"), &gemm_config());
    assert_monotone(&fixture("reset_reuse.tk"), &config(&[("threads", 256)]));
    assert_monotone(&fixture("mfma_single.tk"), &config(&[("threads", 64)]));
}

#[test]
fn micro_kernels_agree_with_runtime_tags() {
    for (name, threads) in [
        ("copy_shared.tk", 256),
        ("select.tk", 64),
        ("reset_reuse.tk", 256),
        ("two_writers.tk", 64),
        ("split_writers.tk", 64),
        ("mfma_single.tk", 64),
    ] {
        let r = check_source(&fixture(name), &config(&[("threads", threads)])).unwrap();
        let ir = &r.compiled.ir;
        let inputs = random_inputs(ir, 8, |_, rng| small_int(rng));
        let opts = RunOptions {
            grid: [1, 1, 1],
            dynamic_tags: true,
            log_stores: false,
        };
        let out = run_with(ir, &inputs, &opts).unwrap();
        agreement(ir, &r.trace, out.log.as_ref().unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn out_of_bounds_view_is_rejected() {
    let src = fixture("copy_shared.tk").replace("Y[(tid + 1) % n] = s[(tid + 1) % n]", "Y[tid] = s[tid + 1]");
    let err = compile(&src, &config(&[("threads", 256)])).unwrap_err();
    assert!(matches!(err, PipelineError::Safety(_)), "{err}");
}

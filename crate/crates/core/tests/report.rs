mod common;

use common::*;
use tilecheck::check::{compile_assertions, report, CheckError, CheckOptions, ReportFormat};
use tilecheck::pipeline::{check_source, compile, PipelineError};
use tilecheck::tags::propagate;

fn nw_mutant() -> &'static Mutant {
    MUTANTS.iter().find(|m| m.name == "attn_nw_low_bit").unwrap()
}

fn json_with_workers(m: &Mutant, workers: usize) -> String {
    let mut cfg = m.config();
    cfg.check = CheckOptions {
        workers,
        ..CheckOptions::default()
    };
    let r = check_source(&m.source(), &cfg).unwrap();
    report(&r.results, ReportFormat::Json)
}

#[test]
fn passing_report_is_minimal() {
    let r = check_source(&fixture("flash_attn.tk"), &attn_config()).unwrap();
    let s = report(&r.results, ReportFormat::Json);
    assert_eq!(s, "{\"status\":\"pass\",\"checked\":262144}\n");
    assert!(schema_errors(&s).is_empty());
    assert_eq!(report(&r.results, ReportFormat::Text), "pass: 262144 points checked\n");
}

#[test]
fn failing_reports_validate_against_schema() {
    for m in MUTANTS {
        let s = json_with_workers(m, 1);
        let errs = schema_errors(&s);
        assert!(errs.is_empty(), "{}: {errs:?}", m.name);
    }
    let r = check_source(&fixture("two_writers.tk"), &config(&[("threads", 64)])).unwrap();
    assert!(schema_errors(&report(&r.results, ReportFormat::Json)).is_empty());
}

#[test]
fn schema_rejects_malformed_reports() {
    assert!(!schema_errors("{\"status\":\"pass\"}").is_empty());
    assert!(!schema_errors("{\"status\":\"fail\",\"checked\":1}").is_empty());
    assert!(!schema_errors("{\"status\":\"pass\",\"checked\":1,\"extra\":0}").is_empty());
}

#[test]
fn reports_are_identical_across_runs_and_workers() {
    for m in [nw_mutant(), &MUTANTS[2], &MUTANTS[11]] {
        let base = json_with_workers(m, 1);
        assert_eq!(base, json_with_workers(m, 1), "{}", m.name);
        for w in [2, 3, 8] {
            assert_eq!(base, json_with_workers(m, w), "{} with {w} workers", m.name);
        }
    }
}

#[test]
fn nw_mutant_first_violation_is_on_the_value_assertion() {
    let r = check_source(&nw_mutant().source(), &attn_config()).unwrap();
    assert!(r.results[0].failures == 0);
    let res = &r.results[1];
    assert_eq!(res.line, 57);
    assert_eq!(res.violations.len(), 16);
    assert!(res.truncated);
    let v = &res.violations[0];
    assert_eq!((v.thread, v.point.instance.clone(), v.position.clone()), (0, vec![0, 0], vec![0]));
    assert_eq!(v.left.tile, "tVv");
    assert_eq!(v.right.tile, "rP");
}

#[test]
fn materialized_violations_follow_the_total_order() {
    let m = nw_mutant();
    let mut cfg = m.config();
    cfg.check.truncate = usize::MAX;
    let all = check_source(&m.source(), &cfg).unwrap();
    let short = check_source(&m.source(), &m.config()).unwrap();
    for (a, s) in all.results.iter().zip(&short.results) {
        assert_eq!(a.failures, a.violations.len() as u64);
        let keys: Vec<_> = a
            .violations
            .iter()
            .map(|v| (v.thread, v.point.instance.clone(), v.position.clone()))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(&a.violations[..s.violations.len()], &s.violations[..]);
    }
}

#[test]
fn violations_replay_through_the_trace() {
    let m = nw_mutant();
    let r = check_source(&m.source(), &m.config()).unwrap();
    let ir = &r.compiled.ir;
    let cs = compile_assertions(ir, &r.trace).unwrap();
    for v in r.results.iter().flat_map(|x| &x.violations) {
        let c = cs
            .iter()
            .find(|c| c.assertion_id == v.assertion_id && c.point.instance == v.point.instance)
            .unwrap();
        let mut env = ir.env(v.thread, r.trace.block, v.position.len());
        env[tilecheck::ir::iexpr::FIRST_FREE as usize..].copy_from_slice(&v.position);
        for (acc, side) in [(&c.left, &v.left), (&c.right, &v.right)] {
            let off = acc.elem.offset.eval(&env).unwrap() as usize;
            let snap = r.trace.snap(c.instance, acc.elem.decl).unwrap();
            let tag = snap.element(v.thread, off, acc.elem.width()).unwrap();
            assert_eq!(r.trace.resolve(tag), side.tag);
        }
    }
}

#[test]
fn text_report_has_one_block_per_violation() {
    let r = check_source(&fixture("two_writers.tk"), &config(&[("threads", 64)])).unwrap();
    let t = report(&r.results, ReportFormat::Text);
    assert!(t.starts_with("fail: 64 of 64 points violate assertions\n"));
    assert_eq!(t.matches("violation of non-conformity assertion").count(), 16);
    assert!(t.contains("first 16 shown"));
}

#[test]
fn domain_cap_is_reported() {
    let mut cfg = attn_config();
    cfg.check.domain_cap = 1000;
    let err = check_source(&fixture("flash_attn.tk"), &cfg).unwrap_err();
    assert!(matches!(
        err,
        PipelineError::Check(CheckError::DomainCap {
            required: 4096,
            allowed: 1000,
            ..
        })
    ));
    assert!(err.is_cap());
}

#[test]
fn asserting_on_a_written_global_is_rejected() {
    let src = fixture("copy_shared.tk") + "    assert tag(Y[tid]) == tag(X[tid])\n";
    let err = check_source(&src, &config(&[("threads", 256)])).unwrap_err();
    assert!(matches!(err, PipelineError::Check(CheckError::UntrackedTile { .. })), "{err}");
}

#[test]
fn kernel_without_assertions_has_no_constraints() {
    let c = compile(&fixture("copy_shared.tk"), &config(&[("threads", 256)])).unwrap();
    let trace = propagate(&c.ir).unwrap();
    assert!(compile_assertions(&c.ir, &trace).unwrap().is_empty());
}

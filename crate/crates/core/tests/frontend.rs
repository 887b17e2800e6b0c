mod common;

use common::*;
use tilecheck::dsl::ast::strip_positions;
use tilecheck::dsl::bind::{bind_constants, BindError};
use tilecheck::dsl::parse;
use tilecheck::dsl::printer::print_program;

fn corpus() -> Vec<(String, String)> {
    let dir = format!("{}/../../fixtures", env!("CARGO_MANIFEST_DIR"));
    let mut out: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "tk"))
        .map(|p| (p.display().to_string(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn printing_and_reparsing_is_identity_on_corpus() {
    let files = corpus();
    assert!(files.len() >= 8);
    for (name, src) in files {
        let mut a = parse(&src).unwrap_or_else(|e| panic!("{name}: {e}"));
        let printed = print_program(&a);
        let mut b = parse(&printed).unwrap_or_else(|e| panic!("{name} reprinted: {e}\n{printed}"));
        strip_positions(&mut a.body);
        strip_positions(&mut b.body);
        assert_eq!(a.body, b.body, "{name}");
        assert_eq!(a.params, b.params, "{name}");
        assert_eq!(print_program(&b), printed, "{name}");
    }
}

#[test]
fn mutants_parse() {
    for m in MUTANTS {
        parse(&m.source()).unwrap_or_else(|e| panic!("{}: {e}", m.name));
    }
}

#[test]
fn missing_const_is_named() {
    let p = parse(&fixture("flash_attn.tk")).unwrap();
    let b = config(&[("d", 128), ("threads", 512)]).bindings;
    assert_eq!(bind_constants(&p, &b).unwrap_err(), BindError::MissingConst("gqa".into()));
}

#[test]
fn zero_head_dim_is_a_non_positive_extent() {
    let p = parse(&fixture("flash_attn.tk")).unwrap();
    let b = config(&[("d", 0), ("gqa", 8), ("threads", 512)]).bindings;
    assert!(matches!(bind_constants(&p, &b), Err(BindError::NonPositiveExtent { .. })));
}

#[test]
fn binding_is_idempotent() {
    let p = parse(&fixture("flash_attn.tk")).unwrap();
    let b = attn_config().bindings;
    let once = bind_constants(&p, &b).unwrap();
    let twice = bind_constants(&once.program, &b).unwrap();
    assert_eq!(once.program, twice.program);
}

#[test]
fn unbalanced_parenthesis_reports_offset() {
    let src = "def k(X: Tensor((4,), fp32)):\n    r = (X[0] + 1\n";
    let e = parse(src).unwrap_err();
    assert_eq!(e.line, 2);
    assert_eq!(e.offset, src.find("(X[0]").unwrap());
}

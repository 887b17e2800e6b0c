mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use support::*;
use tilecheck_harness::kb::{KbEntry, KbError};
use tilecheck_harness::{load_knowledge_base, Category};

const SHIPPED: [(&str, Category); 12] = [
    ("software_pipelining", Category::GlobalIntrusive),
    ("split_k", Category::GlobalIntrusive),
    ("mfma_matmul", Category::GlobalIntrusive),
    ("stagger_k", Category::GlobalIntrusive),
    ("async_memcpy", Category::GlobalIntrusive),
    ("bank_conflict_mitigation", Category::LocalSource),
    ("vectorized_loads", Category::LocalSource),
    ("loop_unrolling", Category::LocalSource),
    ("workgroup_swizzling", Category::LocalSource),
    ("hw_oob_loads", Category::IsaSpecific),
    ("agpr_accumulators", Category::IsaSpecific),
    ("instruction_scheduling", Category::IsaSpecific),
];

fn entry(name: &str, category: &str, params: &str, invariants: &str) -> String {
    format!(
        "---\nname: {name}\ncategory: {category}\nparams: {params}\n---\n## description\nSomething.\n\n\
         ## pattern\n```\nx = y\n```\n\n## invariants\n```\n{invariants}\n```\n"
    )
}

#[test]
fn shipped_kb_has_twelve_entries_in_three_categories() {
    let kb = shipped_kb();
    assert_eq!(kb.len(), 12);
    let got: BTreeMap<&str, Category> = kb.entries.iter().map(|e| (e.name.as_str(), e.category)).collect();
    let want: BTreeMap<&str, Category> = SHIPPED.into_iter().collect();
    assert_eq!(got, want);
    let cats: BTreeSet<Category> = kb.entries.iter().map(|e| e.category).collect();
    assert_eq!(cats.len(), 3);
}

#[test]
fn shipped_templates_instantiate_with_concrete_values() {
    for e in &shipped_kb().entries {
        let values: BTreeMap<String, String> = e
            .params
            .iter()
            .map(|p| (p.clone(), if p == "n" || p == "stage" { "8".into() } else { format!("t_{p}") }))
            .collect();
        let inst = e.instantiate(&values).unwrap_or_else(|err| panic!("{err}"));
        assert!(!inst.contains('{'), "{}: {inst}", e.name);
        assert!(!e.description.trim().is_empty() && !e.pattern.trim().is_empty());
    }
}

#[test]
fn empty_directory_gives_an_empty_kb() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_knowledge_base(dir.path()).unwrap().is_empty());
}

#[test]
fn template_syntax_error_names_the_entry() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("a.md"),
        entry("broken_swizzle", "local-source", "a", "assert tag({a}[e] == tag(b[e])"),
    )
    .unwrap();
    match load_knowledge_base(dir.path()) {
        Err(KbError::Entry { entry, msg }) => {
            assert_eq!(entry, "broken_swizzle");
            assert!(msg.contains("invariant template"), "{msg}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn duplicate_names_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let e = entry("twice", "isa-specific", "", "assert tag(a[e]) == tag(b[e]) for e in range(4)");
    fs::write(dir.path().join("a.md"), &e).unwrap();
    fs::write(dir.path().join("b.md"), &e).unwrap();
    assert!(matches!(load_knowledge_base(dir.path()), Err(KbError::Duplicate(n)) if n == "twice"));
}

#[test]
fn malformed_entries_are_rejected_with_their_name() {
    let good = entry("x", "local-source", "", "assert tag(a[e]) == tag(b[e]) for e in range(4)");
    let cases = [
        ("no_front", good.replacen("---\n", "", 1)),
        ("x", good.replace("local-source", "global")),
        ("x", good.replace("## pattern", "## patterns")),
        ("x", good.replace("category", "kind")),
        ("x", entry("x", "local-source", "", "")),
    ];
    for (stem, text) in cases {
        let err = KbEntry::parse(stem, &text).unwrap_err();
        match err {
            KbError::Entry { entry, .. } => assert_eq!(entry, stem),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn instantiation_substitutes_every_parameter() {
    let e = KbEntry::parse(
        "p",
        &entry("p", "local-source", "a, n", "assert tag({a}[e]) == tag(b[e]) for e in range({n})"),
    )
    .unwrap();
    let vals = BTreeMap::from([("a".to_string(), "tAv".to_string()), ("n".to_string(), "8".to_string())]);
    assert_eq!(e.instantiate(&vals).unwrap(), "assert tag(tAv[e]) == tag(b[e]) for e in range(8)\n");
    let missing = BTreeMap::from([("a".to_string(), "tAv".to_string())]);
    assert!(e.instantiate(&missing).is_err());
    let bad = BTreeMap::from([("a".to_string(), "(".to_string()), ("n".to_string(), "8".to_string())]);
    assert!(e.instantiate(&bad).is_err());
}

#[test]
fn non_markdown_files_are_ignored() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("notes.txt"), "not an entry").unwrap();
    fs::write(
        dir.path().join("e.md"),
        entry("e", "local-source", "", "assert tag(a[e]) == tag(b[e]) for e in range(4)"),
    )
    .unwrap();
    assert_eq!(load_knowledge_base(dir.path()).unwrap().len(), 1);
}

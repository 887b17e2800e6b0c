#![allow(dead_code)]

use std::path::PathBuf;

use tilecheck_harness::{load_knowledge_base, KnowledgeBase, TaskEnv, TaskSpec};

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn read(rel: &str) -> String {
    let p = root().join(rel);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

pub fn shipped_kb() -> KnowledgeBase {
    load_knowledge_base(&root().join("kb")).expect("shipped knowledge base loads")
}

pub fn demo_task() -> TaskEnv {
    TaskEnv::load(&root().join("demo/gemm/task.json")).expect("demo task loads")
}

pub fn demo_script() -> PathBuf {
    root().join("demo/gemm/script.json")
}

/// Task over an arbitrary baseline with default weights and one seed.
pub fn task(name: &str, baseline: &str, consts: &[(&str, i64)], grid: [i64; 3]) -> TaskEnv {
    let spec = TaskSpec {
        name: name.into(),
        kernel: "inline".into(),
        consts: consts.iter().map(|(k, v)| ((*k).to_string(), *v)).collect(),
        tags: None,
        grid,
        tests: Default::default(),
        cost: Default::default(),
        reward: Default::default(),
    };
    TaskEnv::new(spec, baseline.into(), None, Vec::new()).expect("baseline validates")
}

/// Wraps kernel source the way a chat model would.
pub fn fenced(src: &str) -> String {
    format!("Here is the rewritten kernel.\n\n```python\n{src}```\n")
}

/// The first occurrence of `from` replaced by `to`; panics if absent.
pub fn edit(src: &str, from: &str, to: &str) -> String {
    assert!(src.contains(from), "edit site `{from}` not found");
    src.replacen(from, to, 1)
}

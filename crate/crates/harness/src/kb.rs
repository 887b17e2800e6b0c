//! Knowledge base of optimization skills, one Markdown file per entry.
//!
//! ```text
//! ---
//! name: loop_unrolling
//! category: local-source
//! params: n, x
//! ---
//! ## description
//! ...
//! ## pattern
//! ...
//! ## invariants
//! assert tag(a[e]) == tag(b[e]) for e in range({n})
//! ```
//!
//! `{param}` placeholders in the invariant template are substituted before
//! parsing. Fenced code blocks inside a section are unwrapped.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tilecheck::dsl::parse_fragment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    GlobalIntrusive,
    LocalSource,
    IsaSpecific,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::GlobalIntrusive, Category::LocalSource, Category::IsaSpecific];

    pub fn name(self) -> &'static str {
        match self {
            Category::GlobalIntrusive => "global-intrusive",
            Category::LocalSource => "local-source",
            Category::IsaSpecific => "isa-specific",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KbEntry {
    pub name: String,
    pub category: Category,
    pub params: Vec<String>,
    pub description: String,
    pub pattern: String,
    pub invariants: String,
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("knowledge base entry `{entry}`: {msg}")]
    Entry { entry: String, msg: String },
    #[error("knowledge base entry `{0}` defined twice")]
    Duplicate(String),
}

fn entry_err(entry: &str, msg: impl Into<String>) -> KbError {
    KbError::Entry {
        entry: entry.to_string(),
        msg: msg.into(),
    }
}

impl KbEntry {
    /// Substitutes `{param}` placeholders and checks the result parses.
    pub fn instantiate(&self, values: &BTreeMap<String, String>) -> Result<String, KbError> {
        let mut out = self.invariants.clone();
        for p in &self.params {
            let v = values
                .get(p)
                .ok_or_else(|| entry_err(&self.name, format!("no value for parameter `{p}`")))?;
            out = out.replace(&format!("{{{p}}}"), v);
        }
        parse_fragment(&out).map_err(|e| entry_err(&self.name, format!("invariant template: {e}")))?;
        Ok(out)
    }

    /// Template with every parameter replaced by its own name.
    fn check_template(&self) -> Result<(), KbError> {
        let values = self.params.iter().map(|p| (p.clone(), p.clone())).collect();
        self.instantiate(&values).map(drop)
    }

    pub fn parse(stem: &str, text: &str) -> Result<Self, KbError> {
        let body = text
            .strip_prefix("---\n")
            .ok_or_else(|| entry_err(stem, "missing front matter"))?;
        let (front, rest) = body
            .split_once("\n---\n")
            .ok_or_else(|| entry_err(stem, "unterminated front matter"))?;
        let mut fields = BTreeMap::new();
        for line in front.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| entry_err(stem, format!("bad front matter line `{line}`")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let name = fields.remove("name").ok_or_else(|| entry_err(stem, "missing `name`"))?;
        let cat = fields
            .remove("category")
            .ok_or_else(|| entry_err(&name, "missing `category`"))?;
        let category = Category::parse(&cat).ok_or_else(|| entry_err(&name, format!("unknown category `{cat}`")))?;
        let params = fields
            .remove("params")
            .map(|p| {
                p.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default();
        if let Some(k) = fields.keys().next() {
            return Err(entry_err(&name, format!("unknown front matter key `{k}`")));
        }

        let mut sections: BTreeMap<String, String> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in rest.lines() {
            if let Some(h) = line.strip_prefix("## ") {
                let h = h.trim().to_lowercase();
                if sections.contains_key(&h) {
                    return Err(entry_err(&name, format!("section `{h}` repeated")));
                }
                sections.insert(h.clone(), String::new());
                current = Some(h);
            } else if let Some(c) = &current {
                let s = sections.get_mut(c).expect("section inserted");
                s.push_str(line);
                s.push('\n');
            } else if !line.trim().is_empty() {
                return Err(entry_err(&name, "text before the first section"));
            }
        }
        let mut take = |key: &str| -> Result<String, KbError> {
            let raw = sections
                .remove(key)
                .ok_or_else(|| entry_err(&name, format!("missing section `{key}`")))?;
            Ok(unfence(&raw))
        };
        let entry = KbEntry {
            description: take("description")?,
            pattern: take("pattern")?,
            invariants: take("invariants")?,
            name: name.clone(),
            category,
            params,
        };
        if let Some(k) = sections.keys().next() {
            return Err(entry_err(&name, format!("unknown section `{k}`")));
        }
        if entry.invariants.trim().is_empty() {
            return Err(entry_err(&name, "empty invariant template"));
        }
        entry.check_template()?;
        Ok(entry)
    }
}

fn unfence(s: &str) -> String {
    let lines: Vec<&str> = s
        .lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect();
    let text = lines.join("\n");
    let t = text.trim_matches('\n');
    if t.is_empty() {
        String::new()
    } else {
        format!("{t}\n")
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct KnowledgeBase {
    pub entries: Vec<KbEntry>,
}

impl KnowledgeBase {
    pub fn get(&self, name: &str) -> Option<&KbEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One line per entry, for prompts.
    pub fn catalog(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let summary = e.description.lines().next().unwrap_or("");
            out.push_str(&format!("- {} [{}]: {}\n", e.name, e.category, summary));
        }
        out
    }
}

/// Loads every `*.md` file of `dir`, sorted by file name.
pub fn load_knowledge_base(dir: &Path) -> Result<KnowledgeBase, KbError> {
    let io = |source| KbError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "md"));
    paths.sort();
    let mut kb = KnowledgeBase::default();
    for p in paths {
        let text = fs::read_to_string(&p).map_err(|source| KbError::Io {
            path: p.clone(),
            source,
        })?;
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("?");
        let e = KbEntry::parse(stem, &text)?;
        if kb.get(&e.name).is_some() {
            return Err(KbError::Duplicate(e.name));
        }
        kb.entries.push(e);
    }
    Ok(kb)
}

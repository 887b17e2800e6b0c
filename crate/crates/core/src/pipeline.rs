//! End-to-end entry points: source text to check results or outputs.

use thiserror::Error;

use crate::check::{check_all, compile_assertions, CheckError, CheckOptions, CheckResult};
use crate::dsl::ast::Program;
use crate::dsl::bind::{bind_constants, BindError, Bindings, BoundProgram};
use crate::dsl::{parse, parse_fragment, ParseError};
use crate::ir::lower::{lower, LowerError, LowerOptions};
use crate::ir::safety::{validate_memory_safety, SafetyError};
use crate::ir::types::KernelIr;
use crate::tags::engine::{propagate, PropagateError, TagTrace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("parse error: {0}")]
    Parse(ParseError),
    #[error("tag file parse error: {0}")]
    TagParse(ParseError),
    #[error("bind error: {0}")]
    Bind(#[from] BindError),
    #[error("lowering error: {0}")]
    Lower(#[from] LowerError),
    #[error("memory safety: {0}")]
    Safety(#[from] SafetyError),
    #[error("tag propagation: {0}")]
    Propagate(#[from] PropagateError),
    #[error("check error: {0}")]
    Check(#[from] CheckError),
}

impl PipelineError {
    /// Whether the failure is a configured size cap rather than a defect.
    pub fn is_cap(&self) -> bool {
        matches!(
            self,
            PipelineError::Lower(LowerError::InstanceCap { .. })
                | PipelineError::Check(CheckError::DomainCap { .. })
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    pub bindings: Bindings,
    /// Source of extra top-level tag declarations.
    pub tags: Option<String>,
    pub lower: LowerOptions,
    pub check: CheckOptions,
    /// Launch grid used for memory-safety enumeration.
    pub grid: Option<[i64; 3]>,
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub program: Program,
    pub bound: BoundProgram,
    pub ir: KernelIr,
}

#[derive(Debug, Clone)]
pub struct Checked {
    pub compiled: Compiled,
    pub trace: TagTrace,
    pub results: Vec<CheckResult>,
}

impl Checked {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.failures == 0)
    }

    pub fn violation_count(&self) -> u64 {
        self.results.iter().map(|r| r.failures).sum()
    }
}

/// Parse, bind, lower and validate memory safety.
pub fn compile(src: &str, cfg: &Config) -> Result<Compiled, PipelineError> {
    let program = parse(src).map_err(PipelineError::Parse)?;
    let bound = bind_constants(&program, &cfg.bindings)?;
    let mut opts = cfg.lower.clone();
    if let Some(t) = &cfg.tags {
        opts.extra_tags = parse_fragment(t).map_err(PipelineError::TagParse)?;
    }
    let ir = lower(&bound, &opts)?;
    validate_memory_safety(&ir, cfg.grid.unwrap_or([1, 1, 1]))?;
    Ok(Compiled { program, bound, ir })
}

/// Full static pipeline through assertion discharge.
pub fn check_source(src: &str, cfg: &Config) -> Result<Checked, PipelineError> {
    let compiled = compile(src, cfg)?;
    let trace = propagate(&compiled.ir)?;
    let constraints = compile_assertions(&compiled.ir, &trace)?;
    let results = check_all(&compiled.ir, &constraints, &trace, &cfg.check)?;
    Ok(Checked {
        compiled,
        trace,
        results,
    })
}

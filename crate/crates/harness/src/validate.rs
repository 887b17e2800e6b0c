//! Task environments and candidate validation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tilecheck::check::{kind_name, Violation};
use tilecheck::dsl::bind::Bindings;
use tilecheck::interp::manifest::{read_manifest, ManifestError};
use tilecheck::interp::{run, Costs, TensorValue, Tensors};
use tilecheck::ir::types::{KernelIr, Space};
use tilecheck::pipeline::{check_source, Checked, Config};

use crate::reward::{CostWeights, RewardWeights};

/// Violations kept per assertion in feedback.
pub const FEEDBACK_VIOLATIONS: usize = 3;
/// Element mismatches kept per test case.
pub const FEEDBACK_MISMATCHES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    /// Each seed draws one random input set for the read-only tensors.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Input manifests, relative to the task file.
    #[serde(default)]
    pub manifests: Vec<PathBuf>,
    #[serde(default = "default_tol")]
    pub rtol: f64,
    #[serde(default = "default_tol")]
    pub atol: f64,
}

fn default_tol() -> f64 {
    1e-3
}

impl Default for TestSpec {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            manifests: Vec::new(),
            rtol: default_tol(),
            atol: default_tol(),
        }
    }
}

/// On-disk task description. Paths are relative to the task file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub kernel: PathBuf,
    #[serde(default)]
    pub consts: Bindings,
    #[serde(default)]
    pub tags: Option<PathBuf>,
    #[serde(default = "default_grid")]
    pub grid: [i64; 3],
    #[serde(default)]
    pub tests: TestSpec,
    #[serde(default)]
    pub cost: CostWeights,
    #[serde(default)]
    pub reward: RewardWeights,
}

fn default_grid() -> [i64; 3] {
    [1, 1, 1]
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("{path}: {msg}")]
    Read { path: PathBuf, msg: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("baseline kernel does not validate: {0}")]
    Baseline(String),
}

#[derive(Debug, Clone)]
pub struct TestCase {
    pub name: String,
    pub inputs: Tensors,
    /// Baseline outputs for every tensor the baseline writes.
    pub expected: Tensors,
}

/// Everything needed to validate and score candidates for one kernel.
#[derive(Debug, Clone)]
pub struct TaskEnv {
    pub name: String,
    pub baseline: String,
    pub config: Config,
    pub grid: [i64; 3],
    pub cases: Vec<TestCase>,
    pub rtol: f64,
    pub atol: f64,
    pub cost_weights: CostWeights,
    pub reward_weights: RewardWeights,
    pub baseline_feedback: Feedback,
}

/// Random inputs for the read-only global tensors of `ir`.
pub fn random_inputs(ir: &KernelIr, seed: u64) -> Tensors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Tensors::new();
    for &p in &ir.params {
        let d = &ir.decls[p];
        if d.space != Space::Global || d.writable {
            continue;
        }
        let n: i64 = d.shape.iter().product();
        let t = if d.dtype.is_float() {
            let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            TensorValue::from_f64(d.dtype, &d.shape, &vals)
        } else if d.dtype.is_raw() {
            let mut t = TensorValue::zeros(d.dtype, &d.shape);
            rng.fill(&mut t.data[..]);
            t
        } else {
            let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-8..8) as f64).collect();
            TensorValue::from_f64(d.dtype, &d.shape, &vals)
        };
        out.insert(d.name.clone(), t);
    }
    out
}

fn outputs(ir: &KernelIr, tensors: &Tensors) -> Tensors {
    ir.params
        .iter()
        .map(|&p| &ir.decls[p])
        .filter(|d| d.writable)
        .filter_map(|d| tensors.get(&d.name).map(|t| (d.name.clone(), t.clone())))
        .collect()
}

impl TaskEnv {
    pub fn load(path: &Path) -> Result<Self, TaskError> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|e| TaskError::Read {
                path: p.to_path_buf(),
                msg: e.to_string(),
            })
        };
        let text = read(path)?;
        let spec: TaskSpec = serde_json::from_str(&text).map_err(|e| TaskError::Read {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let baseline = read(&dir.join(&spec.kernel))?;
        let tags = spec.tags.as_ref().map(|t| read(&dir.join(t))).transpose()?;
        let mut manifests = Vec::new();
        for m in &spec.tests.manifests {
            let (_, tensors) = read_manifest(&dir.join(m))?;
            manifests.push((m.display().to_string(), tensors));
        }
        Self::new(spec, baseline, tags, manifests)
    }

    /// Builds the environment and records baseline outputs as expectations.
    pub fn new(
        spec: TaskSpec,
        baseline: String,
        tags: Option<String>,
        manifests: Vec<(String, Tensors)>,
    ) -> Result<Self, TaskError> {
        let config = Config {
            bindings: spec.consts.clone(),
            tags,
            grid: Some(spec.grid),
            ..Config::default()
        };
        let checked = check_source(&baseline, &config).map_err(|e| TaskError::Baseline(e.to_string()))?;
        if !checked.passed() {
            return Err(TaskError::Baseline(format!(
                "{} assertion points fail",
                checked.violation_count()
            )));
        }
        let ir = &checked.compiled.ir;
        let mut inputs: Vec<(String, Tensors)> = spec
            .tests
            .seeds
            .iter()
            .map(|s| (format!("seed {s}"), random_inputs(ir, *s)))
            .collect();
        inputs.extend(manifests);
        let mut cases = Vec::new();
        for (name, inputs) in inputs {
            let out = run(ir, &inputs, spec.grid).map_err(|e| TaskError::Baseline(format!("{name}: {e}")))?;
            cases.push(TestCase {
                name,
                expected: outputs(ir, &out.tensors),
                inputs,
            });
        }
        let mut env = TaskEnv {
            name: spec.name,
            baseline,
            config,
            grid: spec.grid,
            cases,
            rtol: spec.tests.rtol,
            atol: spec.tests.atol,
            cost_weights: spec.cost,
            reward_weights: spec.reward,
            baseline_feedback: Feedback::default(),
        };
        let fb = validate(&env.baseline, &env);
        if !fb.passed() {
            return Err(TaskError::Baseline(fb.summary()));
        }
        env.baseline_feedback = fb;
        Ok(env)
    }

    pub fn baseline_cost(&self) -> f64 {
        self.baseline_feedback.cost.expect("baseline passed")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssertionSummary {
    pub line: u32,
    pub kind: &'static str,
    pub checked: u64,
    pub failures: u64,
    /// The first few violations in checker order.
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub tensor: String,
    pub index: usize,
    pub expected: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub mismatch_count: u64,
    pub mismatches: Vec<Mismatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub passed: bool,
    pub cases: Vec<CaseReport>,
}

/// Outcome of validating one candidate. Exactly one of `error` and `checks`
/// is set.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Feedback {
    /// Parse, bind, lowering, safety or checker error, verbatim.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<AssertionSummary>>,
    /// Failing assertion points across all assertions.
    pub violations: u64,
    /// Present only when every check passed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tests: Option<TestReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub costs: Option<Costs>,
    /// Proxy cost, present only when checks and tests passed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

impl Feedback {
    pub fn checks_passed(&self) -> bool {
        self.error.is_none() && self.violations == 0
    }

    pub fn passed(&self) -> bool {
        self.checks_passed() && self.tests.as_ref().is_some_and(|t| t.passed)
    }

    /// Short text for prompts and logs.
    pub fn summary(&self) -> String {
        if let Some(e) = &self.error {
            return format!("rejected: {e}");
        }
        let mut out = String::new();
        for a in self.checks.iter().flatten() {
            out.push_str(&format!(
                "line {} {}: {} of {} points fail\n",
                a.line, a.kind, a.failures, a.checked
            ));
            for v in &a.violations {
                out.push_str(&format!(
                    "  thread {} at {:?}: {}{:?} is {}, {}{:?} is {}\n",
                    v.thread,
                    v.position,
                    v.left.tile,
                    v.left.coord,
                    serde_json::to_string(&v.left.tag).unwrap_or_default(),
                    v.right.tile,
                    v.right.coord,
                    serde_json::to_string(&v.right.tag).unwrap_or_default()
                ));
            }
        }
        if let Some(t) = &self.tests {
            for c in &t.cases {
                match (&c.error, c.passed) {
                    (Some(e), _) => out.push_str(&format!("test {}: error: {e}\n", c.name)),
                    (None, true) => out.push_str(&format!("test {}: pass\n", c.name)),
                    (None, false) => out.push_str(&format!(
                        "test {}: {} elements differ from the baseline\n",
                        c.name, c.mismatch_count
                    )),
                }
            }
        }
        if let Some(c) = self.cost {
            out.push_str(&format!("proxy cost {c}\n"));
        }
        out
    }
}

fn summarize(checked: &Checked) -> Vec<AssertionSummary> {
    checked
        .results
        .iter()
        .map(|r| AssertionSummary {
            line: r.line,
            kind: kind_name(r.kind),
            checked: r.checked,
            failures: r.failures,
            violations: r.violations.iter().take(FEEDBACK_VIOLATIONS).cloned().collect(),
        })
        .collect()
}

fn close(expected: f64, actual: f64, rtol: f64, atol: f64) -> bool {
    (expected.is_nan() && actual.is_nan()) || (expected - actual).abs() <= atol + rtol * expected.abs()
}

fn compare(case: &TestCase, got: &Tensors, rtol: f64, atol: f64) -> CaseReport {
    let mut report = CaseReport {
        name: case.name.clone(),
        passed: true,
        error: None,
        mismatch_count: 0,
        mismatches: Vec::new(),
    };
    for (name, want) in &case.expected {
        let Some(have) = got.get(name) else {
            report.passed = false;
            report.error = Some(format!("candidate does not produce `{name}`"));
            return report;
        };
        if have.dtype != want.dtype || have.shape != want.shape {
            report.passed = false;
            report.error = Some(format!(
                "`{name}` is {} {:?}, baseline is {} {:?}",
                have.dtype, have.shape, want.dtype, want.shape
            ));
            return report;
        }
        let w = want.dtype.bytes();
        let (we, he) = (want.to_f64(), have.to_f64());
        for i in 0..want.len() {
            let ok = if want.dtype.is_float() {
                close(we[i], he[i], rtol, atol)
            } else {
                want.data[i * w..(i + 1) * w] == have.data[i * w..(i + 1) * w]
            };
            if !ok {
                report.passed = false;
                report.mismatch_count += 1;
                if report.mismatches.len() < FEEDBACK_MISMATCHES {
                    report.mismatches.push(Mismatch {
                        tensor: name.clone(),
                        index: i,
                        expected: we[i],
                        actual: he[i],
                    });
                }
            }
        }
    }
    report
}

/// Checks, then tests, then costs; stops at the first stage that fails.
pub fn validate(candidate: &str, task: &TaskEnv) -> Feedback {
    let checked = match check_source(candidate, &task.config) {
        Ok(c) => c,
        Err(e) => {
            return Feedback {
                error: Some(e.to_string()),
                ..Feedback::default()
            }
        }
    };
    let mut fb = Feedback {
        checks: Some(summarize(&checked)),
        violations: checked.violation_count(),
        ..Feedback::default()
    };
    if fb.violations > 0 {
        return fb;
    }
    let ir = &checked.compiled.ir;
    let mut costs: Option<Costs> = None;
    let mut cases = Vec::new();
    for case in &task.cases {
        match run(ir, &case.inputs, task.grid) {
            Ok(out) => {
                costs.get_or_insert(out.costs);
                cases.push(compare(case, &out.tensors, task.rtol, task.atol));
            }
            Err(e) => cases.push(CaseReport {
                name: case.name.clone(),
                passed: false,
                error: Some(e.to_string()),
                mismatch_count: 0,
                mismatches: Vec::new(),
            }),
        }
    }
    if task.cases.is_empty() {
        match run(ir, &random_inputs(ir, 0), task.grid) {
            Ok(out) => costs = Some(out.costs),
            Err(e) => cases.push(CaseReport {
                name: "cost".into(),
                passed: false,
                error: Some(e.to_string()),
                mismatch_count: 0,
                mismatches: Vec::new(),
            }),
        }
    }
    let passed = cases.iter().all(|c| c.passed);
    fb.tests = Some(TestReport { passed, cases });
    if passed {
        if let Some(c) = costs {
            fb.cost = Some(task.cost_weights.cost(&c));
            fb.costs = Some(c);
        }
    }
    fb
}

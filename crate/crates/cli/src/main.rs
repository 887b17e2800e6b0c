//! `tilecheck check | run | icrl`.
//!
//! Exit codes: 0 success, 1 assertion violations, 2 input or configuration
//! error, 3 size cap exceeded, 4 no passing candidate.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;
use serde::Serialize;
use tilecheck::check::{report, ReportFormat, DEFAULT_DOMAIN_CAP, DEFAULT_TRUNCATE};
use tilecheck::dsl::bind::Bindings;
use tilecheck::interp::manifest::{read_manifest, write_manifest};
use tilecheck::interp::{run, Costs, Tensors};
use tilecheck::ir::lower::DEFAULT_INSTANCE_CAP;
use tilecheck::pipeline::{check_source, compile, Config, PipelineError};
use tilecheck_harness::transport::ENDPOINT_ENV;
use tilecheck_harness::{
    load_knowledge_base, run_icrl, HttpTransport, IcrlConfig, PlannerParams, ScriptedTransport, TaskEnv, Transport,
};

const EXIT_VIOLATIONS: u8 = 1;
const EXIT_ERROR: u8 = 2;
const EXIT_CAP: u8 = 3;
const EXIT_NO_CANDIDATE: u8 = 4;

#[derive(Parser)]
#[command(name = "tilecheck", version, about = "Data-flow invariant checking for tile kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Statically discharge every tag assertion of a kernel.
    Check(CheckArgs),
    /// Execute a kernel on the CPU interpreter.
    Run(RunArgs),
    /// Run the agentic optimization loop on a task.
    Icrl(IcrlArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct KernelArgs {
    /// Kernel source file.
    source: PathBuf,
    /// Constant binding, repeatable.
    #[arg(long = "const", value_name = "NAME=VALUE", value_parser = parse_binding)]
    consts: Vec<(String, i64)>,
    /// File of extra top-level tag declarations.
    #[arg(long, value_name = "FILE")]
    tags: Option<PathBuf>,
    /// Launch grid `x,y,z` used for memory-safety enumeration and execution.
    #[arg(long, value_name = "X,Y,Z", value_parser = parse_grid)]
    grid: Option<[i64; 3]>,
    /// Maximum number of unrolled statement instances.
    #[arg(long, default_value_t = DEFAULT_INSTANCE_CAP)]
    instance_cap: usize,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Violations reported per assertion.
    #[arg(long, default_value_t = DEFAULT_TRUNCATE)]
    truncate: usize,
    /// Maximum points enumerated per assertion instance.
    #[arg(long, default_value_t = DEFAULT_DOMAIN_CAP)]
    domain_cap: u64,
    /// Worker threads for assertion discharge.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    /// Input tensor manifest.
    #[arg(long, value_name = "FILE")]
    inputs: PathBuf,
    /// Directory for the output manifest and blobs.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct IcrlArgs {
    /// Task description (JSON).
    #[arg(long, value_name = "FILE")]
    task: PathBuf,
    /// Knowledge base directory.
    #[arg(long, value_name = "DIR")]
    kb: PathBuf,
    /// Scripted transport replay file; overrides the endpoint.
    #[arg(long, value_name = "FILE")]
    script: Option<PathBuf>,
    /// Chat endpoint URL.
    #[arg(long, env = ENDPOINT_ENV, value_name = "URL")]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
    /// File holding the initial planner prompt.
    #[arg(long, value_name = "FILE")]
    planner: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    episodes: usize,
    #[arg(long, default_value_t = 2)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for `trajectory.jsonl` and `best.tk`.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn parse_binding(s: &str) -> Result<(String, i64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let v = v.trim().parse().map_err(|e| format!("`{v}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_grid(s: &str) -> Result<[i64; 3], String> {
    let parts: Vec<i64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    <[i64; 3]>::try_from(parts).map_err(|_| "expected three comma-separated extents".to_string())
}

/// A failure already reported on stderr, carrying its exit code.
struct Fail(u8);

fn fail(code: u8, msg: impl std::fmt::Display) -> Fail {
    error!("{msg}");
    Fail(code)
}

fn read(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(|e| fail(EXIT_ERROR, format!("{}: {e}", path.display())))
}

fn pipeline_fail(e: PipelineError) -> Fail {
    fail(if e.is_cap() { EXIT_CAP } else { EXIT_ERROR }, e)
}

fn config(k: &KernelArgs) -> Result<Config, Fail> {
    let mut cfg = Config {
        bindings: k.consts.iter().cloned().collect::<Bindings>(),
        tags: k.tags.as_deref().map(read).transpose()?,
        grid: k.grid,
        ..Config::default()
    };
    cfg.lower.instance_cap = k.instance_cap;
    Ok(cfg)
}

fn cmd_check(a: &CheckArgs) -> Result<u8, Fail> {
    let src = read(&a.kernel.source)?;
    let mut cfg = config(&a.kernel)?;
    cfg.check.truncate = a.truncate;
    cfg.check.domain_cap = a.domain_cap;
    cfg.check.workers = a.workers;
    let checked = check_source(&src, &cfg).map_err(pipeline_fail)?;
    let fmt = match a.format {
        Format::Json => ReportFormat::Json,
        Format::Text => ReportFormat::Text,
    };
    print!("{}", report(&checked.results, fmt));
    Ok(if checked.passed() { 0 } else { EXIT_VIOLATIONS })
}

#[derive(Serialize)]
struct RunReport {
    manifest: PathBuf,
    grid: [i64; 3],
    outputs: Vec<String>,
    costs: Costs,
}

fn cmd_run(a: &RunArgs) -> Result<u8, Fail> {
    let src = read(&a.kernel.source)?;
    let (manifest, inputs) = read_manifest(&a.inputs).map_err(|e| fail(EXIT_ERROR, e))?;
    let grid = a.kernel.grid.or(manifest.grid).unwrap_or([1, 1, 1]);
    let mut cfg = config(&a.kernel)?;
    cfg.grid = Some(grid);
    let compiled = compile(&src, &cfg).map_err(pipeline_fail)?;
    let ir = &compiled.ir;
    let out = run(ir, &inputs, grid).map_err(|e| fail(EXIT_ERROR, e))?;
    let outputs: Tensors = ir
        .params
        .iter()
        .map(|&p| &ir.decls[p])
        .filter(|d| d.writable)
        .map(|d| (d.name.clone(), out.tensors[&d.name].clone()))
        .collect();
    let path = write_manifest(&a.out, &outputs, Some(grid)).map_err(|e| fail(EXIT_ERROR, e))?;
    let rep = RunReport {
        manifest: path,
        grid,
        outputs: outputs.keys().cloned().collect(),
        costs: out.costs,
    };
    match a.format {
        Format::Json => println!("{}", serde_json::to_string(&rep).expect("report serializes")),
        Format::Text => {
            println!("wrote {} ({})", rep.manifest.display(), rep.outputs.join(", "));
            let c = rep.costs;
            println!(
                "global bytes {}, shared bytes {}, barriers {}, statement instances {}",
                c.global_bytes, c.shared_bytes, c.barriers, c.statement_instances
            );
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct IcrlReport {
    status: &'static str,
    best_reward: Option<f64>,
    best_episode: Option<usize>,
    best_step: Option<usize>,
    best: Option<PathBuf>,
    trajectory: PathBuf,
    theta_version: usize,
}

fn cmd_icrl(a: &IcrlArgs) -> Result<u8, Fail> {
    let task = TaskEnv::load(&a.task).map_err(|e| fail(EXIT_ERROR, e))?;
    let kb = load_knowledge_base(&a.kb).map_err(|e| fail(EXIT_ERROR, e))?;
    let mut transport: Box<dyn Transport> = match (&a.script, &a.endpoint) {
        (Some(s), _) => Box::new(ScriptedTransport::load(s).map_err(|e| fail(EXIT_ERROR, e))?),
        (None, Some(url)) if !url.is_empty() => Box::new(HttpTransport::new(
            url.clone(),
            a.model.clone(),
            std::env::var("TILECHECK_API_KEY").ok(),
            Duration::from_secs(a.timeout),
        )),
        _ => return Err(fail(EXIT_ERROR, format!("no transport: pass --script or --endpoint or set {ENDPOINT_ENV}"))),
    };
    let params = match &a.planner {
        Some(p) => {
            let theta = read(p)?;
            if theta.trim().is_empty() {
                return Err(fail(EXIT_ERROR, format!("{}: empty planner prompt", p.display())));
            }
            PlannerParams::new(theta)
        }
        None => PlannerParams::default(),
    };
    let cfg = IcrlConfig {
        episodes: a.episodes,
        steps: a.steps,
        temperature: a.temperature,
        seed: a.seed,
    };
    fs::create_dir_all(&a.out).map_err(|e| fail(EXIT_ERROR, format!("{}: {e}", a.out.display())))?;
    let traj_path = a.out.join("trajectory.jsonl");
    let mut log = Vec::new();
    let outcome = run_icrl(&task, &kb, params, transport.as_mut(), &cfg, &mut log).map_err(|e| fail(EXIT_ERROR, e))?;
    fs::write(&traj_path, &log).map_err(|e| fail(EXIT_ERROR, format!("{}: {e}", traj_path.display())))?;
    let best_path = match &outcome.best {
        Some(b) => {
            let p = a.out.join("best.tk");
            fs::write(&p, &b.source).map_err(|e| fail(EXIT_ERROR, format!("{}: {e}", p.display())))?;
            Some(p)
        }
        None => None,
    };
    let best = outcome.best.as_ref();
    let rep = IcrlReport {
        status: if best.is_some() { "pass" } else { "no-candidate" },
        best_reward: best.map(|b| b.reward),
        best_episode: best.map(|b| b.episode),
        best_step: best.map(|b| b.step),
        best: best_path,
        trajectory: traj_path,
        theta_version: outcome.params.version(),
    };
    println!("{}", serde_json::to_string(&rep).expect("report serializes"));
    Ok(if best.is_some() { 0 } else { EXIT_NO_CANDIDATE })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    let r = match &cli.command {
        Command::Check(a) => cmd_check(a),
        Command::Run(a) => cmd_run(a),
        Command::Icrl(a) => cmd_icrl(a),
    };
    ExitCode::from(r.unwrap_or_else(|Fail(code)| code))
}

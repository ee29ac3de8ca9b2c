//! Experiment driver: runs one bench or sweep per subcommand and writes CSVs, plot
//! scripts, a check table and a manifest that can be fed back through --config.

mod config;
mod plots;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use config::{ConfigError, ExperimentConfig};
use run::{checks_csv, Outcome};

#[derive(Parser)]
#[command(name = "cgo-biharmonic", version, about = "Numerical experiments for biharmonic inverse problems with partial data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config, or a manifest.toml from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Lattice nodes per unit length.
    #[arg(long, global = true)]
    resolution: Option<usize>,
}

#[derive(Subcommand, Clone, Copy, ValueEnum, Debug)]
enum Command {
    /// Manufactured-solution convergence study of the clamped plate solver.
    Solve,
    /// Remainder decay of the special solutions along the h ladder.
    Special,
    /// Inversion limit of the transform.
    Transform,
    /// Fréchet order and duality gap of the linearized Cauchy data map.
    Linearize,
    /// Strip reconstruction of the coefficient bundle from synthetic moments.
    Recover,
    /// Density approximation trend on a nested pair.
    Density,
    /// Transform bound sweep and a¹ contamination sweep.
    Sweep,
    /// Acceptance suite in dependency order.
    All,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Special => "special",
            Command::Transform => "transform",
            Command::Linearize => "linearize",
            Command::Recover => "recover",
            Command::Density => "density",
            Command::Sweep => "sweep",
            Command::All => "all",
        }
    }
}

const CONFIG_ERROR: u8 = 2;
const TOLERANCE_FAILURE: u8 = 3;
const SOLVER_FAILURE: u8 = 4;

fn resolve(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(r) = cli.resolution {
        cfg.domain.resolution = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn error_report(kind: &str, code: u8, messages: &[String]) -> String {
    let mut t = toml::Table::new();
    t.insert("kind".into(), kind.into());
    t.insert("exit_code".into(), i64::from(code).into());
    t.insert("messages".into(), toml::Value::Array(messages.iter().map(|m| m.as_str().into()).collect()));
    toml::to_string(&t).expect("report serializes")
}

fn fail(out: Option<&Path>, kind: &str, code: u8, messages: &[String]) -> ExitCode {
    let report = error_report(kind, code, messages);
    eprint!("{report}");
    if let Some(dir) = out {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("error.toml"), &report);
        }
    }
    ExitCode::from(code)
}

fn execute(cmd: Command, cfg: &ExperimentConfig) -> cgo_biharmonic::Result<Outcome> {
    match cmd {
        Command::Solve => run::solve(cfg),
        Command::Special => run::special(cfg),
        Command::Transform => run::transform(cfg),
        Command::Linearize => run::linearize(cfg),
        Command::Recover => run::recover(cfg),
        Command::Density => run::density(cfg),
        Command::Sweep => run::sweep(cfg),
        Command::All => run::all(cfg),
    }
}

fn manifest(cmd: Command, cfg: &ExperimentConfig, outcome: &Outcome, outputs: &[String], started: u64, seconds: f64, status: &str) -> String {
    let mut run = toml::Table::new();
    run.insert("subcommand".into(), cmd.name().into());
    run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    run.insert("code_hash".into(), env!("CODE_HASH").into());
    run.insert("argv".into(), toml::Value::Array(std::env::args().map(toml::Value::from).collect()));
    run.insert("started_unix".into(), (started as i64).into());
    run.insert("wall_seconds".into(), seconds.into());
    run.insert("status".into(), status.into());
    run.insert("outputs".into(), toml::Value::Array(outputs.iter().map(|o| o.as_str().into()).collect()));
    let mut timings = toml::Table::new();
    for (k, v) in &outcome.timings {
        timings.insert(k.clone(), (*v).into());
    }
    let mut doc = toml::Table::new();
    doc.insert("run".into(), run.into());
    doc.insert("timings".into(), timings.into());
    doc.insert("config".into(), toml::Table::try_from(cfg).expect("config serializes").into());
    toml::to_string(&doc).expect("manifest serializes")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_hint = cli.out.clone();
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => return fail(out_hint.as_deref(), "config", CONFIG_ERROR, &e.0),
    };
    let out = PathBuf::from(&cfg.out);
    // Dense factorizations run sequentially so results do not depend on the thread count.
    cgo_biharmonic::numerics::sequential_linear_algebra();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global() {
        return fail(Some(&out), "config", CONFIG_ERROR, &[format!("thread pool: {e}")]);
    }
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let outcome = match execute(cli.command, &cfg) {
        Ok(o) => o,
        Err(e) if e.is_solver_failure() => return fail(Some(&out), "solver", SOLVER_FAILURE, &[e.to_string()]),
        Err(e) => return fail(Some(&out), "config", CONFIG_ERROR, &[e.to_string()]),
    };
    let seconds = clock.elapsed().as_secs_f64();
    if let Err(e) = std::fs::create_dir_all(&out) {
        return fail(None, "config", CONFIG_ERROR, &[format!("{}: {e}", out.display())]);
    }
    let mut files = outcome.files.clone();
    files.push(("checks.csv".into(), checks_csv(&outcome.checks)));
    files.extend(plots::scripts(&outcome.files));
    let failed: Vec<_> = outcome.checks.iter().filter(|c| !c.passed()).collect();
    let status = if failed.is_empty() { "ok" } else { "tolerance_failure" };
    let mut names: Vec<String> = files.iter().map(|f| f.0.clone()).collect();
    names.push("manifest.toml".into());
    files.push(("manifest.toml".into(), manifest(cli.command, &cfg, &outcome, &names, started, seconds, status)));
    for (name, body) in &files {
        if let Err(e) = std::fs::write(out.join(name), body) {
            return fail(None, "config", CONFIG_ERROR, &[format!("{}: {e}", out.join(name).display())]);
        }
    }
    for c in &outcome.checks {
        println!("{} {} = {} in [{}, {}]", if c.passed() { "PASS" } else { "FAIL" }, c.name, c.measured, c.lo, c.hi);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        let failed: Vec<run::Check> = failed.into_iter().cloned().collect();
        eprint!("tolerance failures:\n{}", checks_csv(&failed));
        ExitCode::from(TOLERANCE_FAILURE)
    }
}

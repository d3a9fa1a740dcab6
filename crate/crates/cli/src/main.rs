//! `mfctl`: runs the solver or one of the experiments from a TOML config and writes CSV
//! results plus a JSON manifest into the output directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use meanfield_control::config::{ExperimentKind, RunConfig};
use meanfield_control::dynamics::LinearizationTerm;
use meanfield_control::harness::{
    experiment_adjoint_consistency, experiment_convergence_rate, experiment_gradient_suite, write_csv, SuiteOptions,
};
use meanfield_control::optimize::{optimize, write_control_csv, write_history_csv, OptimizeStatus};
use meanfield_control::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Caps the worker threads used by the parallel sweeps.
const THREADS_ENV: &str = "MFCTL_THREADS";

#[derive(Parser, Debug)]
#[command(name = "mfctl", version, about = "Optimal control of interacting particle systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize the control of the configured instance.
    Solve(Common),
    /// Run the gradient and stability verification suite.
    Check {
        #[command(flatten)]
        common: Common,
        /// Reverse the sign of one linearization term (the suite must then fail).
        #[arg(long, value_enum)]
        mutate: Option<Term>,
        /// Divide the number of time steps by this factor.
        #[arg(long, default_value_t = 1)]
        coarsen: usize,
    },
    /// Adjoint consistency across particle counts.
    Consistency(Common),
    /// Convergence rate of optimal controls across particle counts.
    Rate(Common),
}

#[derive(clap::Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Term {
    Transport,
    Interaction,
    Control,
}

impl From<Term> for LinearizationTerm {
    fn from(t: Term) -> Self {
        match t {
            Term::Transport => LinearizationTerm::Transport,
            Term::Interaction => LinearizationTerm::Interaction,
            Term::Control => LinearizationTerm::Control,
        }
    }
}

#[derive(Serialize)]
struct Manifest {
    command: &'static str,
    config_path: String,
    config_sha256: String,
    configured_experiment: ExperimentKind,
    seed: u64,
    version: &'static str,
    threads: usize,
    seconds: f64,
    passed: bool,
    outputs: Vec<String>,
    summary: serde_json::Value,
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numerical(format!("io error: {e}"))
    }
}

/// Files staged in memory and written only once the run has finished.
struct Outputs {
    dir: PathBuf,
    prefix: String,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((format!("{}-{name}", self.prefix), bytes));
    }

    fn names(&self) -> Vec<String> {
        self.files.iter().map(|f| f.0.clone()).collect()
    }

    /// Writes every file through a temporary in the output directory and renames it.
    fn commit(self) -> std::io::Result<()> {
        use std::io::Write;
        std::fs::create_dir_all(&self.dir)?;
        for (name, bytes) in self.files {
            let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
            tmp.write_all(&bytes)?;
            tmp.as_file().sync_all()?;
            tmp.persist(self.dir.join(name)).map_err(|e| e.error)?;
        }
        Ok(())
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> meanfield_control::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn load(common: &Common) -> Result<(RunConfig, String), Failure> {
    let mut cfg = RunConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let text = cfg.to_toml_string()?;
    let hash = hex::encode(Sha256::digest(text.as_bytes()));
    Ok((cfg, hash))
}

fn configure_threads() -> Result<usize, Failure> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().ok().filter(|n| *n > 0).ok_or_else(|| Failure::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Config(e.to_string()))?;
    }
    Ok(rayon::current_num_threads())
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let threads = configure_threads()?;
    let clock = Instant::now();
    let (name, common) = match &cli.command {
        Command::Solve(c) => ("solve", c),
        Command::Check { common, .. } => ("check", common),
        Command::Consistency(c) => ("consistency", c),
        Command::Rate(c) => ("rate", c),
    };
    let (cfg, hash) = load(common)?;
    let mut out = Outputs { dir: common.out.clone(), prefix: hash[..12].to_string(), files: Vec::new() };
    let (passed, summary) = match &cli.command {
        Command::Solve(_) => {
            let problem = cfg.problem()?;
            let start = cfg.initial_control(cfg.grid()?)?;
            let result = optimize(&problem, &start, &cfg.optimizer)?;
            out.add("u_star.csv", csv_bytes(|b| write_control_csv(&result.solution.control, b))?);
            out.add("history.csv", csv_bytes(|b| write_history_csv(&result.history, b))?);
            let converged = result.status == OptimizeStatus::Converged;
            let summary = serde_json::json!({
                "status": result.status,
                "iterations": result.history.len() - 1,
                "initial_cost": result.history[0].cost,
                "final_cost": result.solution.cost,
                "grad_norm": result.grad_norm(),
            });
            (converged, summary)
        }
        Command::Check { mutate, coarsen, .. } => {
            let options = SuiteOptions { mutation: mutate.map(Into::into), coarsen: *coarsen };
            let report = experiment_gradient_suite(&cfg, &options)?;
            for c in &report.checks {
                eprintln!("{:<24} {} value {:.3e} threshold {:.3e}  {}", c.name, if c.passed { "pass" } else { "FAIL" }, c.value, c.threshold, c.detail);
            }
            out.add("check.csv", csv_bytes(|b| write_csv(&report.checks, b))?);
            let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
            (report.all_passed(), serde_json::json!({ "checks": report.checks.len(), "failed": failed }))
        }
        Command::Consistency(_) => {
            let report = experiment_adjoint_consistency(&cfg)?;
            out.add("consistency.csv", csv_bytes(|b| write_csv(&report.rows, b))?);
            let summary = serde_json::json!({
                "reference_particles": report.reference_particles,
                "fitted_constant": report.fitted_constant,
                "spearman": report.spearman,
            });
            (report.spearman < 0.0, summary)
        }
        Command::Rate(_) => {
            let report = experiment_convergence_rate(&cfg)?;
            out.add("rate.csv", csv_bytes(|b| write_csv(&report.rows, b))?);
            let summary = serde_json::json!({
                "reference_particles": report.reference_particles,
                "reference_status": report.reference_status,
                "spearman": report.spearman,
                "ratio_bound": report.ratio_bound,
                "bounded": report.bounded,
                "complete": report.complete,
            });
            (report.passed(), summary)
        }
    };
    let manifest_name = format!("{}-manifest.json", out.prefix);
    let mut outputs = out.names();
    outputs.push(manifest_name);
    let manifest = Manifest {
        command: name,
        config_path: common.config.display().to_string(),
        config_sha256: hash,
        configured_experiment: cfg.experiment,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION"),
        threads,
        seconds: clock.elapsed().as_secs_f64(),
        passed,
        outputs,
        summary,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::Numerical(e.to_string()))?;
    out.add("manifest.json", json);
    let (dir, names) = (out.dir.clone(), out.names());
    out.commit()?;
    print_outputs(&dir, &names);
    Ok(passed)
}

fn print_outputs(dir: &Path, names: &[String]) {
    for n in names {
        println!("{}", dir.join(n).display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("mfctl: run finished but its checks failed; see the manifest");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("mfctl: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("mfctl: {msg}");
            ExitCode::from(2)
        }
    }
}

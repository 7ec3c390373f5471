//! The `wickshe` command line.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails or the run
//! errors, 2 for usage and config errors.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::Result;
use crate::par;
use commands::Outcome;
use config::RunConfig;

pub const THREADS_ENV: &str = "WICKSHE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "wickshe", version, about = "Wick stochastic heat equation with spatial white noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. WICKSHE_THREADS takes precedence.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Chaos coefficients of u at the probe points.
    Chaos(Common),
    /// Chaos coefficients of ∂ₓu at the probe points.
    Derivative(Common),
    /// Feynman-Kac double average against the heat flow, and the law of Ψ.
    Fk(Common),
    /// S-transform from the chaos against Monte Carlo.
    StransformCompare(Common),
    /// Feynman-Kac, multiple Wiener and chaos kernels side by side.
    Equivalence(Common),
    /// Local-time estimator checks.
    Localtime(Common),
    /// Increment moments, exponent fits and order-norm decay.
    Regularity(Common),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Chaos(_) => "chaos",
            Command::Derivative(_) => "derivative",
            Command::Fk(_) => "fk",
            Command::StransformCompare(_) => "stransform-compare",
            Command::Equivalence(_) => "equivalence",
            Command::Localtime(_) => "localtime",
            Command::Regularity(_) => "regularity",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Chaos(c)
            | Command::Derivative(c)
            | Command::Fk(c)
            | Command::StransformCompare(c)
            | Command::Equivalence(c)
            | Command::Localtime(c)
            | Command::Regularity(c) => c,
        }
    }
}

/// Runs one subcommand by name.
pub fn execute(name: &str, cfg: &RunConfig) -> Result<Outcome> {
    match name {
        "chaos" => commands::chaos(cfg),
        "derivative" => commands::derivative(cfg),
        "fk" => commands::fk(cfg),
        "stransform-compare" => commands::stransform_compare(cfg),
        "equivalence" => commands::equivalence(cfg),
        "localtime" => commands::localtime(cfg),
        "regularity" => commands::regularity(cfg),
        other => Err(crate::Error::InvalidArgument(format!("unknown subcommand {other}"))),
    }
}

fn thread_count(flag: Option<usize>) -> std::result::Result<usize, String> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")),
        Err(_) => Ok(flag.unwrap_or(0)),
    }
}

/// Parses `args` (program name first), runs and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let name = cli.command.name();
    let common = cli.command.common();
    let mut cfg = match config::parse_config(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("wickshe {name}: {e}");
            return 2;
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    let threads = match thread_count(common.threads) {
        Ok(n) => n,
        Err(e) => {
            eprintln!("wickshe {name}: {e}");
            return 2;
        }
    };

    let start = Instant::now();
    let outcome = match par::with_threads(threads, || execute(name, &cfg)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("wickshe {name}: {e}");
            return 1;
        }
    };
    match report::write_outputs(name, &cfg, &outcome, start.elapsed()) {
        Ok(path) => {
            let mut stdout = std::io::stdout().lock();
            for c in &outcome.checks {
                let _ = writeln!(stdout, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let _ = writeln!(stdout, "report: {}", path.display());
            if outcome.passed() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("wickshe {name}: cannot write outputs: {e}");
            1
        }
    }
}

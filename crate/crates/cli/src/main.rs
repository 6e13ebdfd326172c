//! `qcl`: gate optimisation for an open two-qubit system with coherent and
//! incoherent controls.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Config, GateName, InitName};
use qcl_core::objectives::ObjectiveKind;
use qcl_core::optimize::StopNorm;

#[derive(Parser, Debug)]
#[command(name = "qcl", version, about = "Open two-qubit gate generation with coherent and incoherent controls")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

/// Flags accepted by every command. Explicit flags override the config file.
#[derive(Args, Debug, Clone)]
struct Shared {
    /// JSON config file (a run record's embedded config is accepted too).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for multistart commands.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Model number: 1, 2 or 3.
    #[arg(long, global = true)]
    system: Option<u8>,
    #[arg(long, global = true, value_enum)]
    gate: Option<GateName>,
    /// Controlled-phase angle in units of π (implies --gate cphase).
    #[arg(long, global = true)]
    lambda_over_pi: Option<f64>,
    #[arg(long, global = true)]
    objective: Option<ObjectiveKind>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    t_final: Option<f64>,
    #[arg(long, global = true)]
    intervals: Option<usize>,
    /// Trapezoid segments for gradient quadrature.
    #[arg(long, global = true)]
    segments: Option<usize>,
    #[arg(long, global = true, value_enum)]
    init: Option<InitName>,
    /// Controls CSV for --init file.
    #[arg(long, global = true)]
    init_file: Option<PathBuf>,
    /// Gradient-norm stopping threshold.
    #[arg(long, global = true)]
    eacc: Option<f64>,
    /// Measure the gradient per unit time (divided by Δt) when stopping.
    #[arg(long, global = true)]
    per_unit_time: bool,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Propagate a state or the channel under given controls.
    Propagate {
        /// Controls CSV (`t,u,n1,n2`); defaults to the configured initial controls.
        #[arg(long)]
        controls: Option<PathBuf>,
        /// Initial state: 1, 2 or 3 for the special states.
        #[arg(long, default_value_t = 1)]
        state: u8,
        /// Write the channel trajectory instead of a state trajectory.
        #[arg(long)]
        channel: bool,
        /// Compare the final state with an adaptive ODE integration.
        #[arg(long)]
        oracle: bool,
    },
    /// Gradient descent with adaptive step.
    Grape,
    /// Generalised simulated annealing over bounded controls.
    Anneal {
        #[arg(long)]
        maxfun: Option<usize>,
        #[arg(long)]
        maxiter: Option<usize>,
    },
    /// Many gradient-descent runs from random starting points.
    Landscape {
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Best optimised value as a function of ε.
    SweepEps {
        /// Comma-separated ε values.
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Compare exact gradients with finite differences.
    Gradcheck {
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn effective_config(shared: &Shared) -> anyhow::Result<Config> {
    let mut cfg = match &shared.config {
        Some(path) => Config::load_any(path)?,
        None => Config::default(),
    };
    if let Some(v) = shared.seed {
        cfg.seed = v;
    }
    if let Some(v) = shared.system {
        cfg.system = v;
    }
    if let Some(v) = shared.gate {
        cfg.gate = v;
    }
    if let Some(v) = shared.lambda_over_pi {
        cfg.gate = GateName::Cphase;
        cfg.lambda_over_pi = v;
    }
    if let Some(v) = shared.objective {
        cfg.objective = v;
    }
    if let Some(v) = shared.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = shared.t_final {
        cfg.t_final = v;
    }
    if let Some(v) = shared.intervals {
        cfg.intervals = v;
    }
    if let Some(v) = shared.segments {
        cfg.segments = v;
    }
    if let Some(v) = shared.init {
        cfg.init = v;
    }
    if let Some(v) = &shared.init_file {
        cfg.init_file = Some(v.clone());
    }
    if let Some(v) = shared.eacc {
        cfg.grape.eps_acc = v;
    }
    if shared.per_unit_time {
        cfg.grape.stop_norm = StopNorm::PerUnitTime;
    }
    if let Some(v) = shared.max_iter {
        cfg.grape.max_iter = v;
    }
    cfg.anneal.seed = cfg.seed;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut cfg = effective_config(&cli.shared)?;
    let out = &cli.shared.out;
    let jobs = cli.shared.jobs;
    match cli.command {
        Command::Propagate { controls, state, channel, oracle } => {
            commands::propagate(&cfg, out, controls.as_deref(), state, channel, oracle)
        }
        Command::Grape => commands::grape(&cfg, out),
        Command::Anneal { maxfun, maxiter } => {
            if let Some(v) = maxfun {
                cfg.anneal.maxfun = v;
            }
            if let Some(v) = maxiter {
                cfg.anneal.maxiter = v;
            }
            commands::anneal(&cfg, out)
        }
        Command::Landscape { runs, bins } => {
            if let Some(v) = runs {
                cfg.landscape.runs = v;
            }
            if bins.is_some() {
                cfg.landscape.bins = bins;
            }
            commands::landscape(&cfg, out, jobs)
        }
        Command::SweepEps { epsilons, restarts } => {
            if let Some(v) = epsilons {
                cfg.sweep.epsilons = v;
            }
            if let Some(v) = restarts {
                cfg.sweep.restarts = v;
            }
            commands::sweep(&cfg, out, jobs)
        }
        Command::Gradcheck { threshold } => {
            if let Some(v) = threshold {
                cfg.gradcheck.threshold = v;
            }
            commands::gradcheck(&cfg, out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

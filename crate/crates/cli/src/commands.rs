use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use qcl_core::gradients::{fd_gradient, l2_norm, relative_error, value_and_grad, GradOptions};
use qcl_core::landscape::{
    epsilon_sweep, initial_params, run_landscape, sample_initial, write_landscape, write_sweep, InitScheme,
};
use qcl_core::objectives::{evaluate_channel, ObjectiveKind};
use qcl_core::optimize::{anneal_run, ingrape_run, RunRecord};
use qcl_core::propagator::csv::{read_controls, write_channel_trajectory, write_controls, write_state_trajectory};
use qcl_core::propagator::ode::{ode_oracle, OdeOptions};
use qcl_core::propagator::{propagate_channel, propagate_state, ControlVector, ParamVector, StateCheck};
use qcl_core::qmodel::{build_generators, special_coords, GateTarget, RealState};

use crate::config::Config;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn grad_options(cfg: &Config) -> GradOptions {
    GradOptions { segments: cfg.segments, fd_step: cfg.gradcheck.fd_step }
}

fn starting_params(cfg: &Config) -> Result<ParamVector> {
    Ok(initial_params(&cfg.init_scheme()?, cfg.seed, 0, &cfg.grid()?)?)
}

fn finish_run(cfg: &Config, out: &Path, record: RunRecord) -> Result<ExitCode> {
    let record = record.with_config(cfg.snapshot()).with_seed(Some(cfg.seed));
    fs::create_dir_all(out)?;
    write_json(&out.join("run.json"), &record)?;
    write_controls(&out.join("controls.csv"), &cfg.grid()?, &record.controls)?;
    log::info!(
        "{:?}: {} -> {} after {} iterations ({} evaluations, {:?}) in {:.2?}",
        record.method,
        record.initial_value,
        record.final_value,
        record.iterations,
        record.nfev,
        record.termination,
        record.wall_time,
    );
    println!("{}", record.final_value);
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct PropagateReport {
    objective_values: Vec<(String, f64)>,
    final_trace: Option<f64>,
    final_min_eigenvalue: Option<f64>,
    oracle_max_abs_diff: Option<f64>,
}

pub fn propagate(
    cfg: &Config,
    out: &Path,
    controls: Option<&Path>,
    state: u8,
    channel: bool,
    oracle: bool,
) -> Result<ExitCode> {
    let grid = cfg.grid()?;
    let gen = build_generators(&cfg.system_spec()?)?;
    let target = GateTarget::new(cfg.gate_kind())?;
    let f: ControlVector = match controls {
        Some(path) => {
            let table = read_controls(path)?;
            table.check_grid(&grid)?;
            table.controls
        }
        None => starting_params(cfg)?.to_controls(),
    };
    fs::create_dir_all(out)?;
    write_controls(&out.join("controls.csv"), &grid, &f)?;

    let traj = propagate_channel(&gen, &grid, &f)?;
    let psi = traj.final_channel();
    let objective_values = ObjectiveKind::ALL
        .iter()
        .map(|&k| (k.name().to_string(), evaluate_channel(k, psi, &target)))
        .collect();
    let mut report = PropagateReport {
        objective_values,
        final_trace: None,
        final_min_eigenvalue: None,
        oracle_max_abs_diff: None,
    };

    if channel {
        write_channel_trajectory(&out.join("trajectory.csv"), &traj)?;
    }
    if !channel || oracle {
        let Some(x0) = (state as usize).checked_sub(1).and_then(|i| special_coords().get(i).copied()) else {
            bail!("--state must be 1, 2 or 3, got {state}");
        };
        let x0 = RealState(x0);
        let st = propagate_state(&gen, &grid, &f, &x0, StateCheck::Reject)?;
        let last = st.final_state();
        report.final_trace = Some(last.trace());
        report.final_min_eigenvalue = Some(last.min_eigenvalue());
        if !channel {
            write_state_trajectory(&out.join("trajectory.csv"), &st)?;
        }
        if oracle {
            let reference = ode_oracle(&gen, &grid, &f, &x0, &OdeOptions::default())?;
            report.oracle_max_abs_diff = Some((reference.0 - last.0).amax());
        }
    }
    write_json(&out.join("propagate.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(ExitCode::SUCCESS)
}

pub fn grape(cfg: &Config, out: &Path) -> Result<ExitCode> {
    let grid = cfg.grid()?;
    let gen = build_generators(&cfg.system_spec()?)?;
    let target = GateTarget::new(cfg.gate_kind())?;
    let g0 = starting_params(cfg)?;
    let record = ingrape_run(cfg.objective, &gen, &grid, &g0, &target, &cfg.grape, &grad_options(cfg))?;
    finish_run(cfg, out, record)
}

pub fn anneal(cfg: &Config, out: &Path) -> Result<ExitCode> {
    let grid = cfg.grid()?;
    let gen = build_generators(&cfg.system_spec()?)?;
    let target = GateTarget::new(cfg.gate_kind())?;
    // random and symmetric starts leave the choice to the annealer's own RNG
    let f0 = match cfg.init_scheme()? {
        InitScheme::UniformUnitCube | InitScheme::Symmetric => None,
        scheme => Some(initial_params(&scheme, cfg.seed, 0, &grid)?.to_controls()),
    };
    let record = anneal_run(cfg.objective, &gen, &grid, f0.as_ref(), &target, &cfg.anneal, &grad_options(cfg))?;
    finish_run(cfg, out, record)
}

pub fn landscape(cfg: &Config, out: &Path, jobs: usize) -> Result<ExitCode> {
    let lcfg = cfg.landscape_config()?;
    let mut result = run_landscape(&lcfg, jobs)?;
    let snapshot = cfg.snapshot();
    for (idx, rec) in result.records.iter_mut().enumerate() {
        if let Ok(r) = rec {
            let mut c = snapshot.clone();
            c["run_index"] = idx.into();
            r.config = c;
        }
    }
    write_landscape(out, &result)?;
    let s = &result.summary;
    log::info!(
        "{} runs, {} failed; min {} max {} mean {}; {} clusters",
        s.runs,
        s.failures.len(),
        s.min,
        s.max,
        s.mean,
        s.clustering.clusters.len()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn sweep(cfg: &Config, out: &Path, jobs: usize) -> Result<ExitCode> {
    let result = epsilon_sweep(&cfg.sweep_config()?, jobs)?;
    write_sweep(out, &result)?;
    for row in &result.rows {
        println!("{},{},{}", row.epsilon, row.best_value, row.iterations);
    }
    for (a, b) in &result.trend_violations {
        log::warn!("best value drops by more than 20% from epsilon {a} to {b}");
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ConvergenceRow {
    segments: usize,
    relative_error: f64,
}

#[derive(Serialize)]
struct GradcheckReport {
    system: u8,
    gate: String,
    objective: ObjectiveKind,
    t_final: f64,
    intervals: usize,
    seed: u64,
    fd_step: f64,
    segments: usize,
    value: f64,
    grad_norm: f64,
    relative_error: f64,
    threshold: f64,
    pass: bool,
    convergence: Vec<ConvergenceRow>,
}

pub fn gradcheck(cfg: &Config, out: &Path) -> Result<ExitCode> {
    let gc = &cfg.gradcheck;
    let check_cfg = Config { t_final: gc.t_final, intervals: gc.intervals, ..cfg.clone() };
    let grid = check_cfg.grid()?;
    let gen = build_generators(&cfg.system_spec()?)?;
    let target = GateTarget::new(cfg.gate_kind())?;
    let g = sample_initial(cfg.seed, 0, grid.intervals);
    let fd = fd_gradient(cfg.objective, &gen, &grid, &g, &target, gc.fd_step)?;

    let exact = |segments: usize| {
        let opts = GradOptions { segments, fd_step: gc.fd_step };
        value_and_grad(cfg.objective, &gen, &grid, &g, &target, &opts)
    };
    let (value, grad) = exact(cfg.segments)?;
    let err = relative_error(&grad, &fd);
    let mut convergence = Vec::with_capacity(gc.convergence.len());
    for &segments in &gc.convergence {
        let (_, gs) = exact(segments)?;
        convergence.push(ConvergenceRow { segments, relative_error: relative_error(&gs, &fd) });
    }

    let report = GradcheckReport {
        system: cfg.system,
        gate: cfg.gate_kind().label(),
        objective: cfg.objective,
        t_final: gc.t_final,
        intervals: gc.intervals,
        seed: cfg.seed,
        fd_step: gc.fd_step,
        segments: cfg.segments,
        value,
        grad_norm: l2_norm(&grad),
        relative_error: err,
        threshold: gc.threshold,
        pass: err <= gc.threshold,
        convergence,
    };
    fs::create_dir_all(out)?;
    write_json(&out.join("gradcheck.json"), &report)?;
    println!("relative error {err:.3e} (threshold {:.1e})", gc.threshold);
    for row in &report.convergence {
        println!("  S = {:>4}: {:.3e}", row.segments, row.relative_error);
    }
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

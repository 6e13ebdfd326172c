use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Method, RunRecord, Termination};
use crate::gradients::{l2_norm, value_and_grad, GradOptions};
use crate::objectives::{evaluate, ObjectiveKind};
use crate::propagator::{ControlGrid, ParamVector};
use crate::qmodel::{GateTarget, GeneratorSet};
use crate::{Error, Result};

/// Norm compared against `eps_acc`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopNorm {
    /// `‖∂F/∂g‖₂` over the 3K parameters.
    #[default]
    Euclidean,
    /// `‖∂F/∂g‖₂ / Δt`, the norm of the gradient per unit time. Thresholds
    /// then keep their meaning when `K` changes.
    PerUnitTime,
}

impl StopNorm {
    pub fn measure(self, grad: &[f64], grid: &ControlGrid) -> f64 {
        match self {
            StopNorm::Euclidean => l2_norm(grad),
            StopNorm::PerUnitTime => l2_norm(grad) / grid.dt(),
        }
    }
}

/// Adaptive-step gradient descent settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrapeParams {
    pub h0: f64,
    /// Step multiplier after a successful step.
    pub growth: f64,
    /// Step multiplier on each retry.
    pub shrink: f64,
    /// Stop once the gradient, measured by `stop_norm`, is below this.
    pub eps_acc: f64,
    pub stop_norm: StopNorm,
    pub max_iter: usize,
    pub max_backtracks: usize,
}

impl Default for GrapeParams {
    fn default() -> Self {
        Self {
            h0: 1.0,
            growth: 1.1,
            shrink: 0.5,
            eps_acc: 2.5e-3,
            stop_norm: StopNorm::Euclidean,
            max_iter: 5000,
            max_backtracks: 60,
        }
    }
}

impl GrapeParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.h0 > 0.0 && self.h0.is_finite()) {
            return bad(format!("h0 must be positive, got {}", self.h0));
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return bad(format!("growth must be at least 1, got {}", self.growth));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad(format!("shrink must lie in (0, 1), got {}", self.shrink));
        }
        if !(self.eps_acc > 0.0) {
            return bad(format!("eps_acc must be positive, got {}", self.eps_acc));
        }
        Ok(())
    }
}

/// Gradient descent `g ← g − h ∇F(g)` with adaptive `h`.
///
/// A step that lowers the objective is accepted and `h` grows by `growth`;
/// otherwise `h` shrinks by `shrink` and the step is retried.
pub fn ingrape_run(
    kind: ObjectiveKind,
    gen: &GeneratorSet,
    grid: &ControlGrid,
    g0: &ParamVector,
    target: &GateTarget,
    params: &GrapeParams,
    opts: &GradOptions,
) -> Result<RunRecord> {
    params.validate()?;
    let start = Instant::now();
    if g0.len() != grid.intervals || g0.w1.len() != grid.intervals || g0.w2.len() != grid.intervals {
        return Err(Error::InvalidControls(format!(
            "initial parameters have {} intervals, grid has {}",
            g0.len(),
            grid.intervals
        )));
    }
    if g0.to_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidControls("initial parameters are not finite".into()));
    }

    let mut g = g0.to_flat();
    let (mut value, mut grad) = value_and_grad(kind, gen, grid, g0, target, opts)?;
    let mut nfev = 1;
    let initial_value = value;
    let mut history = vec![value];
    let mut h = params.h0;
    let mut iterations = 0;
    let termination = loop {
        if params.stop_norm.measure(&grad, grid) < params.eps_acc {
            break Termination::Converged;
        }
        if iterations >= params.max_iter {
            break Termination::MaxIterations;
        }
        let mut accepted = None;
        for _ in 0..=params.max_backtracks {
            let trial: Vec<f64> = g.iter().zip(&grad).map(|(x, d)| x - h * d).collect();
            let f = ParamVector::from_flat(&trial).to_controls();
            let trial_value = evaluate(kind, gen, grid, &f, target).map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, iteration: iterations },
                other => other,
            })?;
            nfev += 1;
            if trial_value < value {
                accepted = Some(trial);
                break;
            }
            h *= params.shrink;
        }
        let Some(next) = accepted else {
            break Termination::BacktrackExhausted;
        };
        g = next;
        h *= params.growth;
        iterations += 1;
        let (v, d) = value_and_grad(kind, gen, grid, &ParamVector::from_flat(&g), target, opts)?;
        nfev += 1;
        if d.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "gradient", iteration: iterations });
        }
        value = v;
        grad = d;
        history.push(value);
    };

    let params_out = ParamVector::from_flat(&g);
    let controls = params_out.to_controls();
    let final_sd = if kind == ObjectiveKind::Sd {
        value
    } else {
        evaluate(ObjectiveKind::Sd, gen, grid, &controls, target)?
    };
    Ok(RunRecord {
        method: Method::Ingrape,
        config: serde_json::Value::Null,
        seed: None,
        objective: kind,
        iterations,
        nfev,
        history,
        initial_value,
        final_value: value,
        grad_norm: l2_norm(&grad),
        final_sd,
        params: Some(params_out),
        controls,
        termination,
        wall_time: start.elapsed(),
    })
}

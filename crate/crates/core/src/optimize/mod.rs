//! Local and global optimisers over piecewise-constant controls.

mod anneal;
mod grape;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::objectives::ObjectiveKind;
use crate::propagator::{ControlVector, ParamVector};

pub use anneal::{anneal_run, AnnealParams};
pub use grape::{ingrape_run, GrapeParams, StopNorm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ingrape,
    Anneal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Gradient norm fell below the accuracy parameter.
    Converged,
    MaxIterations,
    /// No step length among the allowed backtracks decreased the objective.
    BacktrackExhausted,
    MaxFunctionEvaluations,
}

/// Outcome of one optimiser run.
///
/// The wall-clock time is kept in memory only, so serialized records are a
/// pure function of the inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    /// Snapshot of the experiment description, filled in by the caller.
    #[serde(default)]
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub objective: ObjectiveKind,
    pub iterations: usize,
    /// Objective evaluations; a gradient evaluation counts as one.
    pub nfev: usize,
    pub history: Vec<f64>,
    pub initial_value: f64,
    pub final_value: f64,
    pub grad_norm: f64,
    /// Squared-distance infidelity of the final controls, for cross-checking
    /// the GRK objectives.
    pub final_sd: f64,
    /// Final `g = (u, w₁, w₂)`; absent for annealing, which works in `f`.
    pub params: Option<ParamVector>,
    pub controls: ControlVector,
    pub termination: Termination,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunRecord {
    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }
}

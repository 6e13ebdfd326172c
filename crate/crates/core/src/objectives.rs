//! Infidelity functionals comparing an evolution channel with a target gate.
//!
//! * `sd`: squared distance of the whole channel, `‖Ψ − Ψ_U‖²_M / 32`;
//! * `grk-sd`: squared distance on the three special states, averaged;
//! * `grk-sp`: one minus the averaged normalised overlap on those states.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use nalgebra::SMatrix;

use crate::propagator::{ControlGrid, ControlVector, StepCache};
use crate::qmodel::{
    special_coords, weighted_channel_inner, weighted_inner, weighted_norm_sq, GateTarget, GeneratorSet,
};
use crate::{Error, Mat16, Result, Vec16};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    #[serde(rename = "sd")]
    Sd,
    #[serde(rename = "grk-sd")]
    GrkSd,
    #[serde(rename = "grk-sp")]
    GrkSp,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] = [ObjectiveKind::GrkSd, ObjectiveKind::GrkSp, ObjectiveKind::Sd];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Sd => "sd",
            ObjectiveKind::GrkSd => "grk-sd",
            ObjectiveKind::GrkSp => "grk-sp",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sd" => Ok(ObjectiveKind::Sd),
            "grk-sd" => Ok(ObjectiveKind::GrkSd),
            "grk-sp" => Ok(ObjectiveKind::GrkSp),
            other => Err(Error::InvalidParameter(format!(
                "unknown objective {other:?} (expected sd, grk-sd or grk-sp)"
            ))),
        }
    }
}

/// Normalisation of the squared-distance functional, `2 · dim²` for two qubits.
pub const SD_NORM: f64 = 32.0;

pub fn j_sd(psi: &Mat16, target: &GateTarget) -> f64 {
    let d = psi - target.channel;
    weighted_channel_inner(&d, &d) / SD_NORM
}

/// GRK squared distance from the evolved special states `Ψ x_m`.
pub fn j_grk_sd_states(evolved: &[Vec16; 3], target: &GateTarget) -> f64 {
    evolved
        .iter()
        .zip(&target.target_states)
        .map(|(x, y)| weighted_norm_sq(&(x - y)))
        .sum::<f64>()
        / 6.0
}

/// GRK overlap infidelity from the evolved special states; `inputs` are the
/// states before evolution, used for normalisation.
pub fn j_grk_sp_states(evolved: &[Vec16; 3], inputs: &[Vec16; 3], target: &GateTarget) -> f64 {
    let overlap: f64 = (0..3)
        .map(|m| weighted_inner(&evolved[m], &target.target_states[m]) / weighted_norm_sq(&inputs[m]))
        .sum();
    1.0 - overlap / 3.0
}

pub fn j_grk_sd(psi: &Mat16, target: &GateTarget) -> f64 {
    let inputs = special_coords();
    j_grk_sd_states(&inputs.map(|x| psi * x), target)
}

pub fn j_grk_sp(psi: &Mat16, target: &GateTarget) -> f64 {
    let inputs = special_coords();
    j_grk_sp_states(&inputs.map(|x| psi * x), &inputs, target)
}

pub fn evaluate_channel(kind: ObjectiveKind, psi: &Mat16, target: &GateTarget) -> f64 {
    match kind {
        ObjectiveKind::Sd => j_sd(psi, target),
        ObjectiveKind::GrkSd => j_grk_sd(psi, target),
        ObjectiveKind::GrkSp => j_grk_sp(psi, target),
    }
}

/// Objective value for controls `f`. The GRK variants propagate only the
/// three special states; `sd` propagates the full channel.
pub fn evaluate(
    kind: ObjectiveKind,
    gen: &GeneratorSet,
    grid: &ControlGrid,
    f: &ControlVector,
    target: &GateTarget,
) -> Result<f64> {
    let cache = StepCache::new(gen, grid, f)?;
    let value = match kind {
        ObjectiveKind::Sd => {
            let psi = cache.exps.iter().fold(Mat16::identity(), |acc, e| e * acc);
            j_sd(&psi, target)
        }
        ObjectiveKind::GrkSd | ObjectiveKind::GrkSp => {
            let inputs = special_coords();
            let mut x = SMatrix::<f64, 16, 3>::from_columns(&inputs);
            for e in &cache.exps {
                x = e * x;
            }
            let evolved = [x.column(0).into_owned(), x.column(1).into_owned(), x.column(2).into_owned()];
            if kind == ObjectiveKind::GrkSd {
                j_grk_sd_states(&evolved, target)
            } else {
                j_grk_sp_states(&evolved, &inputs, target)
            }
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "objective", iteration: 0 });
    }
    Ok(value)
}

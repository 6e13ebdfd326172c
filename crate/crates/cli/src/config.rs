use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use qcl_core::landscape::{Binning, InitScheme, LandscapeConfig, SweepConfig};
use qcl_core::objectives::ObjectiveKind;
use qcl_core::optimize::{AnnealParams, GrapeParams};
use qcl_core::propagator::ControlGrid;
use qcl_core::qmodel::{GateKind, SystemKind, SystemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GateName {
    Cnot,
    Cz,
    Cphase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InitName {
    Paper,
    Random,
    Symmetric,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeOptions {
    pub runs: usize,
    /// Fixed bin count; Freedman–Diaconis width when absent.
    pub bins: Option<usize>,
    pub gap_threshold: f64,
}

impl Default for LandscapeOptions {
    fn default() -> Self {
        Self { runs: 100, bins: None, gap_threshold: 0.15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub epsilons: Vec<f64>,
    pub restarts: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            epsilons: vec![0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1],
            restarts: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckOptions {
    pub t_final: f64,
    pub intervals: usize,
    /// Relative ℓ² error above which the check fails (at `segments`).
    pub threshold: f64,
    pub fd_step: f64,
    /// Segment counts for the quadrature-convergence table.
    pub convergence: Vec<usize>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            t_final: 4.0,
            intervals: 20,
            threshold: 1e-4,
            fd_step: 1e-5,
            convergence: vec![20, 40, 80, 200],
        }
    }
}

/// Full experiment description. Unknown keys are rejected; every key is
/// optional and defaults to the reference parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub system: u8,
    pub omega1: f64,
    pub omega2: f64,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub cap_omega1: f64,
    pub cap_omega2: f64,
    pub epsilon: f64,
    pub gate: GateName,
    /// Phase of the controlled-phase gate in units of π.
    pub lambda_over_pi: f64,
    pub objective: ObjectiveKind,
    pub t_final: f64,
    pub intervals: usize,
    pub segments: usize,
    pub init: InitName,
    pub init_file: Option<PathBuf>,
    pub seed: u64,
    pub grape: GrapeParams,
    pub anneal: AnnealParams,
    pub landscape: LandscapeOptions,
    pub sweep: SweepOptions,
    pub gradcheck: GradcheckOptions,
}

impl Default for Config {
    fn default() -> Self {
        let p = SystemSpec::paper(SystemKind::System1, 0.1);
        Self {
            system: 1,
            omega1: p.omega1,
            omega2: p.omega2,
            alpha: p.alpha,
            lambda1: p.lambda1,
            lambda2: p.lambda2,
            cap_omega1: p.cap_omega1,
            cap_omega2: p.cap_omega2,
            epsilon: p.epsilon,
            gate: GateName::Cnot,
            lambda_over_pi: 1.0,
            objective: ObjectiveKind::GrkSd,
            t_final: 20.0,
            intervals: 100,
            segments: 20,
            init: InitName::Paper,
            init_file: None,
            seed: 0,
            grape: GrapeParams::default(),
            anneal: AnnealParams::default(),
            landscape: LandscapeOptions::default(),
            sweep: SweepOptions::default(),
            gradcheck: GradcheckOptions::default(),
        }
    }
}

impl Config {
    /// Reads a config or the `config` member of a run record.
    pub fn load_any(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let inner = match value.get("config") {
            Some(c) if value.get("history").is_some() => c.clone(),
            _ => value,
        };
        serde_json::from_value(inner).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        let Some(kind) = SystemKind::from_number(self.system) else {
            bail!("system must be 1, 2 or 3, got {}", self.system);
        };
        let spec = SystemSpec {
            kind,
            omega1: self.omega1,
            omega2: self.omega2,
            alpha: self.alpha,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            cap_omega1: self.cap_omega1,
            cap_omega2: self.cap_omega2,
            epsilon: self.epsilon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gate_kind(&self) -> GateKind {
        match self.gate {
            GateName::Cnot => GateKind::Cnot,
            GateName::Cz => GateKind::cz(),
            GateName::Cphase => GateKind::Cphase { lambda: self.lambda_over_pi * std::f64::consts::PI },
        }
    }

    pub fn grid(&self) -> Result<ControlGrid> {
        Ok(ControlGrid::new(self.t_final, self.intervals)?)
    }

    pub fn init_scheme(&self) -> Result<InitScheme> {
        Ok(match self.init {
            InitName::Paper => InitScheme::PaperGuess,
            InitName::Random => InitScheme::UniformUnitCube,
            InitName::Symmetric => InitScheme::Symmetric,
            InitName::File => match &self.init_file {
                Some(p) => InitScheme::File(p.clone()),
                None => bail!("init = \"file\" needs init_file"),
            },
        })
    }

    pub fn landscape_config(&self) -> Result<LandscapeConfig> {
        let mut cfg = LandscapeConfig::new(self.system_spec()?, self.gate_kind(), self.objective, self.grid()?);
        cfg.runs = self.landscape.runs;
        cfg.master_seed = self.seed;
        cfg.init = match self.init {
            // a landscape from one deterministic point is degenerate; random is the default
            InitName::Paper => InitScheme::UniformUnitCube,
            _ => self.init_scheme()?,
        };
        cfg.grape = self.grape;
        cfg.segments = self.segments;
        cfg.binning = self.landscape.bins.map_or(Binning::FreedmanDiaconis, Binning::Fixed);
        cfg.gap_threshold = self.landscape.gap_threshold;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        Ok(SweepConfig {
            system: self.system_spec()?,
            gate: self.gate_kind(),
            objective: self.objective,
            grid: self.grid()?,
            epsilons: self.sweep.epsilons.clone(),
            restarts: self.sweep.restarts,
            master_seed: self.seed,
            grape: self.grape,
            segments: self.segments,
        })
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg: Config = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.omega2, 1.1);
        assert_eq!(cfg.intervals, 100);
        assert_eq!(cfg.grape.eps_acc, 2.5e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<Config>(r#"{"sytem": 2}"#).is_err());
        assert!(serde_json::from_str::<Config>(r#"{"grape": {"eps": 1}}"#).is_err());
    }

    #[test]
    fn round_trip() {
        let mut cfg = Config::default();
        cfg.gate = GateName::Cphase;
        cfg.lambda_over_pi = 0.5;
        cfg.objective = ObjectiveKind::GrkSp;
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<Config>(&text).unwrap(), cfg);
        assert_eq!(cfg.gate_kind(), GateKind::Cphase { lambda: std::f64::consts::FRAC_PI_2 });
    }

    #[test]
    fn invalid_system_number() {
        let cfg = Config { system: 4, ..Config::default() };
        assert!(cfg.system_spec().is_err());
    }
}

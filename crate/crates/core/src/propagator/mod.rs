//! Evolution under piecewise-constant controls.
//!
//! On interval `k` the generator `L_k = A + u_k B_u + n_{k,1} B_n1 + n_{k,2} B_n2`
//! is constant, so the channel matrix at the grid points is the ordered
//! product `Ψ_{t_k} = exp(Δt L_{k−1}) ⋯ exp(Δt L_0)`.

pub mod csv;
pub mod expm;
pub mod ode;

use serde::{Deserialize, Serialize};

use crate::qmodel::{GeneratorSet, RealState};
use crate::{Error, Mat16, Result, Vec16};

pub use expm::matrix_exp;
pub use ode::{ode_oracle, OdeOptions};

/// Uniform grid `0 = t_0 < t_1 < … < t_K = T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlGrid {
    pub t_final: f64,
    pub intervals: usize,
}

impl ControlGrid {
    pub fn new(t_final: f64, intervals: usize) -> Result<Self> {
        let grid = Self { t_final, intervals };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(Error::InvalidParameter(format!("final time must be positive, got {}", self.t_final)));
        }
        if self.intervals == 0 {
            return Err(Error::InvalidParameter("need at least one interval".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.intervals as f64
    }

    /// `t_k` for `k = 0..=K`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// Left endpoints `t_0 … t_{K−1}`.
    pub fn left_times(&self) -> Vec<f64> {
        (0..self.intervals).map(|k| self.time(k)).collect()
    }
}

/// Piecewise-constant controls `f = (u, n₁, n₂)`, one value per interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    pub u: Vec<f64>,
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
}

impl ControlVector {
    pub fn zeros(intervals: usize) -> Self {
        Self {
            u: vec![0.0; intervals],
            n1: vec![0.0; intervals],
            n2: vec![0.0; intervals],
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn validate(&self, grid: &ControlGrid) -> Result<()> {
        let k = grid.intervals;
        if self.u.len() != k || self.n1.len() != k || self.n2.len() != k {
            return Err(Error::InvalidControls(format!(
                "expected {k} values per channel, got u={}, n1={}, n2={}",
                self.u.len(),
                self.n1.len(),
                self.n2.len()
            )));
        }
        for (name, values) in [("u", &self.u), ("n1", &self.n1), ("n2", &self.n2)] {
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidControls(format!("{name}[{i}] is not finite")));
            }
        }
        for (name, values) in [("n1", &self.n1), ("n2", &self.n2)] {
            if let Some(i) = values.iter().position(|&v| v < 0.0) {
                return Err(Error::InvalidControls(format!("{name}[{i}] = {} is negative", values[i])));
            }
        }
        Ok(())
    }

    /// Flattened `[u_1..u_K, n_{1,1}..n_{K,1}, n_{1,2}..n_{K,2}]`.
    pub fn to_flat(&self) -> Vec<f64> {
        [self.u.as_slice(), &self.n1, &self.n2].concat()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        let (u, n1, n2) = split3(flat);
        Self { u, n1, n2 }
    }
}

fn split3(flat: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    assert_eq!(flat.len() % 3, 0, "flat control vector length must be a multiple of 3");
    let k = flat.len() / 3;
    (flat[..k].to_vec(), flat[k..2 * k].to_vec(), flat[2 * k..].to_vec())
}

/// Unconstrained parameters `g = (u, w₁, w₂)` with `n_l = w_l²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub u: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn to_controls(&self) -> ControlVector {
        ControlVector {
            u: self.u.clone(),
            n1: self.w1.iter().map(|w| w * w).collect(),
            n2: self.w2.iter().map(|w| w * w).collect(),
        }
    }

    /// Inverse of [`to_controls`](Self::to_controls) on the branch `w ≥ 0`.
    pub fn from_controls(f: &ControlVector) -> Self {
        Self {
            u: f.u.clone(),
            w1: f.n1.iter().map(|n| n.max(0.0).sqrt()).collect(),
            w2: f.n2.iter().map(|n| n.max(0.0).sqrt()).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        [self.u.as_slice(), &self.w1, &self.w2].concat()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        let (u, w1, w2) = split3(flat);
        Self { u, w1, w2 }
    }

    /// Deterministic starting point `u_k = cos(0.3 t_k)`,
    /// `w_{k,l} = exp(−5 (t_k/T − 1/2)²)`, sampled at `t_k = k T/K`, `k = 1..K`.
    pub fn paper_guess(grid: &ControlGrid) -> Self {
        let times: Vec<f64> = (1..=grid.intervals).map(|k| grid.time(k)).collect();
        let u = times.iter().map(|t| (0.3 * t).cos()).collect();
        let w: Vec<f64> = times
            .iter()
            .map(|t| (-5.0 * (t / grid.t_final - 0.5).powi(2)).exp())
            .collect();
        Self { u, w1: w.clone(), w2: w }
    }
}

/// Generator matrix for one interval; rejects negative incoherent controls.
pub fn step_generator(gen: &GeneratorSet, u: f64, n1: f64, n2: f64) -> Result<Mat16> {
    if n1 < 0.0 || n2 < 0.0 {
        return Err(Error::InvalidControls(format!("incoherent controls must be non-negative (n1={n1}, n2={n2})")));
    }
    Ok(gen.generator(u, n1, n2))
}

/// Per-interval generators and their exponentials `exp(Δt L_k)`.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub dt: f64,
    pub generators: Vec<Mat16>,
    pub exps: Vec<Mat16>,
}

impl StepCache {
    pub fn new(gen: &GeneratorSet, grid: &ControlGrid, f: &ControlVector) -> Result<Self> {
        grid.validate()?;
        f.validate(grid)?;
        let dt = grid.dt();
        let mut generators = Vec::with_capacity(grid.intervals);
        let mut exps = Vec::with_capacity(grid.intervals);
        for k in 0..grid.intervals {
            let l = step_generator(gen, f.u[k], f.n1[k], f.n2[k])?;
            exps.push(matrix_exp(&(l * dt))?);
            generators.push(l);
        }
        Ok(Self { dt, generators, exps })
    }

    pub fn intervals(&self) -> usize {
        self.exps.len()
    }

    /// Forward checkpoints `Ψ_{t_0} = 𝕀, …, Ψ_{t_K}`.
    pub fn forward(&self) -> Vec<Mat16> {
        let mut out = Vec::with_capacity(self.exps.len() + 1);
        out.push(Mat16::identity());
        for e in &self.exps {
            let next = e * out.last().unwrap();
            out.push(next);
        }
        out
    }

    /// Backward factors `Ψ_{t_k,T} = exp(Δt L_{K−1}) ⋯ exp(Δt L_k)` for
    /// `k = 0..=K`, accumulated in one reverse pass.
    pub fn backward(&self) -> Vec<Mat16> {
        let k = self.exps.len();
        let mut out = vec![Mat16::identity(); k + 1];
        for i in (0..k).rev() {
            out[i] = out[i + 1] * self.exps[i];
        }
        out
    }

    /// Images `x(t_k)` of a set of column vectors.
    pub fn forward_columns<const C: usize>(
        &self,
        x0: &nalgebra::SMatrix<f64, 16, C>,
    ) -> Vec<nalgebra::SMatrix<f64, 16, C>> {
        let mut out = Vec::with_capacity(self.exps.len() + 1);
        out.push(*x0);
        for e in &self.exps {
            let next = e * out.last().unwrap();
            out.push(next);
        }
        out
    }
}

/// Channel checkpoints at every grid point.
#[derive(Clone, Debug)]
pub struct ChannelTrajectory {
    pub times: Vec<f64>,
    pub checkpoints: Vec<Mat16>,
}

impl ChannelTrajectory {
    pub fn final_channel(&self) -> &Mat16 {
        self.checkpoints.last().expect("trajectory has at least one checkpoint")
    }
}

pub fn propagate_channel(gen: &GeneratorSet, grid: &ControlGrid, f: &ControlVector) -> Result<ChannelTrajectory> {
    let cache = StepCache::new(gen, grid, f)?;
    Ok(ChannelTrajectory {
        times: (0..=grid.intervals).map(|k| grid.time(k)).collect(),
        checkpoints: cache.forward(),
    })
}

/// How [`propagate_state`] treats an initial vector that is not a density matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateCheck {
    #[default]
    Reject,
    Warn,
    Skip,
}

/// Tolerance on trace and eigenvalues when validating an initial state.
pub const STATE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<RealState>,
}

impl StateTrajectory {
    pub fn final_state(&self) -> &RealState {
        self.states.last().expect("trajectory has at least one state")
    }
}

pub fn propagate_state(
    gen: &GeneratorSet,
    grid: &ControlGrid,
    f: &ControlVector,
    x0: &RealState,
    check: StateCheck,
) -> Result<StateTrajectory> {
    match check {
        StateCheck::Reject => x0.validate_density(STATE_TOL)?,
        StateCheck::Warn => {
            if let Err(e) = x0.validate_density(STATE_TOL) {
                log::warn!("initial state: {e}");
            }
        }
        StateCheck::Skip => {}
    }
    let cache = StepCache::new(gen, grid, f)?;
    let mut states = Vec::with_capacity(grid.intervals + 1);
    let mut x: Vec16 = x0.0;
    states.push(RealState(x));
    for e in &cache.exps {
        x = e * x;
        states.push(RealState(x));
    }
    Ok(StateTrajectory {
        times: (0..=grid.intervals).map(|k| grid.time(k)).collect(),
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmodel::{
        build_generators, gate_channel_matrix, realify, special_states, SystemKind, SystemSpec, TRACE_SLOTS,
    };
    use crate::CMat4;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trace_row_residual(m: &Mat16) -> f64 {
        (0..16)
            .map(|j| TRACE_SLOTS.iter().map(|&i| m[(i, j)]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// Deviation of `tᵀ Ψ` from `tᵀ`, where `t` selects the trace slots.
    fn trace_preservation_residual(psi: &Mat16) -> f64 {
        (0..16)
            .map(|j| {
                let expected = if TRACE_SLOTS.contains(&j) { 1.0 } else { 0.0 };
                (TRACE_SLOTS.iter().map(|&i| psi[(i, j)]).sum::<f64>() - expected).abs()
            })
            .fold(0.0, f64::max)
    }

    fn random_controls(rng: &mut ChaCha8Rng, k: usize, u_max: f64, n_max: f64) -> ControlVector {
        ControlVector {
            u: (0..k).map(|_| rng.random_range(-u_max..u_max)).collect(),
            n1: (0..k).map(|_| rng.random_range(0.0..n_max)).collect(),
            n2: (0..k).map(|_| rng.random_range(0.0..n_max)).collect(),
        }
    }

    /// `exp(−i H t)` by Taylor series with scaling and squaring, complex domain.
    fn unitary_exp(h: &CMat4, t: f64) -> CMat4 {
        let s = 10;
        let a = h * Complex64::new(0.0, -t / f64::from(1 << s));
        let mut sum = CMat4::identity();
        let mut term = CMat4::identity();
        for k in 1..30 {
            term = term * a / Complex64::new(k as f64, 0.0);
            sum += term;
        }
        for _ in 0..s {
            sum = sum * sum;
        }
        sum
    }

    #[test]
    fn step_generator_basics() {
        let gens = build_generators(&SystemSpec::paper(SystemKind::System1, 0.1)).unwrap();
        assert_eq!(step_generator(&gens, 0.0, 0.0, 0.0).unwrap(), gens.a);
        let u = 0.37;
        let diff = step_generator(&gens, 2.0 * u, 0.0, 0.0).unwrap() - step_generator(&gens, u, 0.0, 0.0).unwrap();
        assert!((diff - gens.b_u * u).amax() < 1e-15);
        assert!(step_generator(&gens, 0.0, -1e-3, 0.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let l = step_generator(&gens, rng.random_range(-5.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)).unwrap();
            assert!(trace_row_residual(&l) < 1e-14);
        }
    }

    #[test]
    fn paper_guess_samples_right_endpoints() {
        let grid = ControlGrid::new(20.0, 100).unwrap();
        let g = ParamVector::paper_guess(&grid);
        assert_eq!(g.len(), 100);
        assert!((g.u[0] - (0.3f64 * 0.2).cos()).abs() < 1e-15);
        assert!((g.u[99] - 6.0f64.cos()).abs() < 1e-15);
        assert!((g.w1[49] - 1.0).abs() < 1e-15);
        assert_eq!(g.w1, g.w2);
    }

    #[test]
    fn param_vector_round_trip() {
        let g = ParamVector { u: vec![0.5, -1.0], w1: vec![0.3, 2.0], w2: vec![1.5, 0.0] };
        let f = g.to_controls();
        assert_eq!(f.n1, vec![0.09, 4.0]);
        assert_eq!(ParamVector::from_flat(&g.to_flat()), g);
        assert_eq!(ControlVector::from_flat(&f.to_flat()), f);
    }

    #[test]
    fn control_validation() {
        let grid = ControlGrid::new(1.0, 2).unwrap();
        let mut f = ControlVector::zeros(2);
        f.validate(&grid).unwrap();
        f.n2[1] = -0.5;
        assert!(f.validate(&grid).is_err());
        assert!(ControlVector::zeros(3).validate(&grid).is_err());
        assert!(ControlGrid::new(0.0, 3).is_err());
        assert!(ControlGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn channel_starts_at_identity_and_preserves_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in SystemKind::ALL {
            let gens = build_generators(&SystemSpec::paper(kind, 0.1)).unwrap();
            let grid = ControlGrid::new(20.0, 100).unwrap();
            let f = random_controls(&mut rng, 100, 2.0, 2.0);
            let traj = propagate_channel(&gens, &grid, &f).unwrap();
            assert_eq!(traj.checkpoints[0], Mat16::identity());
            assert_eq!(traj.checkpoints.len(), 101);
            for psi in &traj.checkpoints {
                assert!(trace_preservation_residual(psi) < 1e-12);
            }
        }
    }

    #[test]
    fn single_interval_free_evolution_is_unitary_conjugation() {
        for kind in SystemKind::ALL {
            let spec = SystemSpec::paper(kind, 0.0);
            let gens = build_generators(&spec).unwrap();
            let grid = ControlGrid::new(3.0, 1).unwrap();
            let traj = propagate_channel(&gens, &grid, &ControlVector::zeros(1)).unwrap();
            let expected = gate_channel_matrix(&unitary_exp(&spec.free_hamiltonian(), 3.0)).unwrap();
            assert!((traj.final_channel() - expected).amax() < 1e-12);
        }
    }

    #[test]
    fn closed_system_matches_schroedinger_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in SystemKind::ALL {
            let spec = SystemSpec::paper(kind, 0.0);
            let gens = build_generators(&spec).unwrap();
            let grid = ControlGrid::new(4.0, 16).unwrap();
            let f = random_controls(&mut rng, 16, 2.0, 1.0);
            let mut u = CMat4::identity();
            for k in 0..16 {
                let h = spec.free_hamiltonian() + spec.control_hamiltonian() * Complex64::new(f.u[k], 0.0);
                u = unitary_exp(&h, grid.dt()) * u;
            }
            let expected = gate_channel_matrix(&u).unwrap();
            let psi = propagate_channel(&gens, &grid, &f).unwrap();
            assert!((psi.final_channel() - expected).amax() < 1e-11);
        }
    }

    #[test]
    fn semigroup_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gens = build_generators(&SystemSpec::paper(SystemKind::System2, 0.1)).unwrap();
        let f = random_controls(&mut rng, 40, 3.0, 2.0);
        let full = propagate_channel(&gens, &ControlGrid::new(8.0, 40).unwrap(), &f).unwrap();
        let half = ControlGrid::new(4.0, 20).unwrap();
        let first = ControlVector { u: f.u[..20].to_vec(), n1: f.n1[..20].to_vec(), n2: f.n2[..20].to_vec() };
        let second = ControlVector { u: f.u[20..].to_vec(), n1: f.n1[20..].to_vec(), n2: f.n2[20..].to_vec() };
        let a = propagate_channel(&gens, &half, &first).unwrap();
        let b = propagate_channel(&gens, &half, &second).unwrap();
        let composed = b.final_channel() * a.final_channel();
        assert!((composed - full.final_channel()).amax() < 1e-13);
        assert!((full.checkpoints[20] - a.final_channel()).amax() == 0.0);
    }

    #[test]
    fn backward_factors_compose_with_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gens = build_generators(&SystemSpec::paper(SystemKind::System3, 0.1)).unwrap();
        let grid = ControlGrid::new(5.0, 25).unwrap();
        let cache = StepCache::new(&gens, &grid, &random_controls(&mut rng, 25, 2.0, 2.0)).unwrap();
        let fwd = cache.forward();
        let bwd = cache.backward();
        for k in 0..=25 {
            assert!((bwd[k] * fwd[k] - fwd[25]).amax() < 1e-13);
        }
    }

    #[test]
    fn maximally_mixed_is_fixed_without_environment() {
        let x0 = realify(&special_states()[2]).unwrap();
        for kind in SystemKind::ALL {
            let gens = build_generators(&SystemSpec::paper(kind, 0.0)).unwrap();
            let grid = ControlGrid::new(20.0, 50).unwrap();
            let traj = propagate_state(&gens, &grid, &ControlVector::zeros(50), &x0, StateCheck::Reject).unwrap();
            assert!((traj.final_state().0 - x0.0).amax() < 1e-14);
        }
    }

    #[test]
    fn states_keep_unit_trace_and_positivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in SystemKind::ALL {
            let gens = build_generators(&SystemSpec::paper(kind, 0.1)).unwrap();
            let grid = ControlGrid::new(20.0, 100).unwrap();
            for rho in special_states() {
                let f = random_controls(&mut rng, 100, 3.0, 3.0);
                let traj = propagate_state(&gens, &grid, &f, &realify(&rho).unwrap(), StateCheck::Reject).unwrap();
                for x in &traj.states {
                    assert!((x.trace() - 1.0).abs() < 1e-12);
                    assert!(x.min_eigenvalue() >= -1e-8);
                }
            }
        }
    }

    #[test]
    fn invalid_initial_state_handling() {
        let gens = build_generators(&SystemSpec::paper(SystemKind::System1, 0.1)).unwrap();
        let grid = ControlGrid::new(1.0, 2).unwrap();
        let f = ControlVector::zeros(2);
        let mut x = realify(&special_states()[0]).unwrap();
        x.0[0] += 0.5;
        assert!(matches!(
            propagate_state(&gens, &grid, &f, &x, StateCheck::Reject),
            Err(Error::InvalidState(_))
        ));
        assert!(propagate_state(&gens, &grid, &f, &x, StateCheck::Warn).is_ok());
        assert!(propagate_state(&gens, &grid, &f, &x, StateCheck::Skip).is_ok());
    }
}

//! Exact gradients of the objectives and finite-difference checks.
//!
//! The derivative of one interval's exponential along a control matrix `B` is
//! `Δt ∫₀¹ exp((1−τ)ΔtL) B exp(τΔtL) dτ`, evaluated with the composite
//! trapezoidal rule. Objective gradients pair that integrand with a costate
//! propagated backwards from `∂J/∂X(T)`, so each interval costs `O(segments)`
//! products of a 16×16 matrix with the propagated columns.

use nalgebra::SMatrix;

use crate::objectives::{self, ObjectiveKind};
use crate::propagator::{matrix_exp, ControlGrid, ControlVector, ParamVector, StepCache};
use crate::qmodel::{special_coords, weighted_norm_sq, GateTarget, GeneratorSet, BETA};
use crate::{Error, Mat16, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradOptions {
    pub segments: usize,
    pub fd_step: f64,
}

impl Default for GradOptions {
    fn default() -> Self {
        Self { segments: 20, fd_step: 1e-5 }
    }
}

impl GradOptions {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::InvalidParameter("segments must be at least 1".into()));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::InvalidParameter(format!("fd_step must be positive, got {}", self.fd_step)));
        }
        Ok(())
    }
}

fn trapezoid_weights(segments: usize) -> Vec<f64> {
    let mut w = vec![1.0 / segments as f64; segments + 1];
    w[0] *= 0.5;
    w[segments] *= 0.5;
    w
}

/// Trapezoidal approximation of `Δt ∫₀¹ exp((1−τ)ΔtL) B exp(τΔtL) dτ`.
pub fn dexp_integral(l: &Mat16, b: &Mat16, dt: f64, segments: usize) -> Result<Mat16> {
    if segments == 0 {
        return Err(Error::InvalidParameter("segments must be at least 1".into()));
    }
    let e = matrix_exp(&(l * (dt / segments as f64)))?;
    let mut powers = Vec::with_capacity(segments + 1);
    powers.push(Mat16::identity());
    for _ in 0..segments {
        let next = e * powers.last().unwrap();
        powers.push(next);
    }
    let w = trapezoid_weights(segments);
    let mut acc = Mat16::zeros();
    for j in 0..=segments {
        acc += powers[segments - j] * b * powers[j] * w[j];
    }
    Ok(acc * dt)
}

/// `∂Ψ_T/∂f_{k,μ}` for every interval `k` and control `μ ∈ {u, n₁, n₂}`.
pub fn grad_channel(
    gen: &GeneratorSet,
    grid: &ControlGrid,
    f: &ControlVector,
    segments: usize,
) -> Result<Vec<[Mat16; 3]>> {
    let cache = StepCache::new(gen, grid, f)?;
    let fwd = cache.forward();
    let bwd = cache.backward();
    let controls = gen.control_matrices();
    (0..grid.intervals)
        .map(|k| {
            let mut out = [Mat16::zeros(); 3];
            for (mu, b) in controls.iter().enumerate() {
                let d = dexp_integral(&cache.generators[k], b, cache.dt, segments)?;
                out[mu] = bwd[k + 1] * d * fwd[k];
            }
            Ok(out)
        })
        .collect()
}

/// Gradient in `f` of a functional of `X(T) = Ψ_T X₀`, given `X₀` and
/// `Λ = ∂J/∂X(T)`. Returns the flat `[u, n₁, n₂]` layout.
fn costate_gradient<const C: usize>(
    gen: &GeneratorSet,
    cache: &StepCache,
    states: &[SMatrix<f64, 16, C>],
    terminal: SMatrix<f64, 16, C>,
    segments: usize,
) -> Result<Vec<f64>> {
    let k_total = cache.intervals();
    let controls = gen.control_matrices();
    let w = trapezoid_weights(segments);
    let mut grad = vec![0.0; 3 * k_total];
    let mut lambda = terminal;
    let mut a = vec![SMatrix::<f64, 16, C>::zeros(); segments + 1];
    let mut b = vec![SMatrix::<f64, 16, C>::zeros(); segments + 1];
    for k in (0..k_total).rev() {
        let e = matrix_exp(&(cache.generators[k] * (cache.dt / segments as f64)))?;
        let et = e.transpose();
        a[0] = states[k];
        b[0] = lambda;
        for j in 0..segments {
            a[j + 1] = e * a[j];
            b[j + 1] = et * b[j];
        }
        for (mu, bm) in controls.iter().enumerate() {
            let mut s = 0.0;
            for j in 0..=segments {
                s += w[j] * b[segments - j].dot(&(*bm * a[j]));
            }
            grad[mu * k_total + k] = s * cache.dt;
        }
        lambda = cache.exps[k].transpose() * lambda;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", iteration: 0 });
    }
    Ok(grad)
}

/// Objective value and its gradient with respect to `f` (flat `[u, n₁, n₂]`).
pub(crate) fn value_and_grad_f(
    kind: ObjectiveKind,
    gen: &GeneratorSet,
    grid: &ControlGrid,
    f: &ControlVector,
    target: &GateTarget,
    segments: usize,
) -> Result<(f64, Vec<f64>)> {
    if segments == 0 {
        return Err(Error::InvalidParameter("segments must be at least 1".into()));
    }
    let cache = StepCache::new(gen, grid, f)?;
    let (value, grad) = match kind {
        ObjectiveKind::Sd => {
            let states = cache.forward();
            let residual = states[grid.intervals] - target.channel;
            let terminal = Mat16::from_fn(|i, j| BETA[i] / BETA[j] * residual[(i, j)] / 16.0);
            let value = objectives::j_sd(&states[grid.intervals], target);
            (value, costate_gradient(gen, &cache, &states, terminal, segments)?)
        }
        ObjectiveKind::GrkSd | ObjectiveKind::GrkSp => {
            let inputs = special_coords();
            let x0 = SMatrix::<f64, 16, 3>::from_columns(&inputs);
            let states = cache.forward_columns(&x0);
            let xt = states[grid.intervals];
            let evolved = [xt.column(0).into_owned(), xt.column(1).into_owned(), xt.column(2).into_owned()];
            let targets = SMatrix::<f64, 16, 3>::from_columns(&target.target_states);
            let (value, terminal) = if kind == ObjectiveKind::GrkSd {
                let r = xt - targets;
                (
                    objectives::j_grk_sd_states(&evolved, target),
                    SMatrix::<f64, 16, 3>::from_fn(|i, m| BETA[i] * r[(i, m)] / 3.0),
                )
            } else {
                let norms = inputs.map(|x| weighted_norm_sq(&x));
                (
                    objectives::j_grk_sp_states(&evolved, &inputs, target),
                    SMatrix::<f64, 16, 3>::from_fn(|i, m| -BETA[i] * targets[(i, m)] / (3.0 * norms[m])),
                )
            };
            (value, costate_gradient(gen, &cache, &states, terminal, segments)?)
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "objective", iteration: 0 });
    }
    Ok((value, grad))
}

/// Objective value and gradient with respect to `g = (u, w₁, w₂)`.
pub fn value_and_grad(
    kind: ObjectiveKind,
    gen: &GeneratorSet,
    grid: &ControlGrid,
    g: &ParamVector,
    target: &GateTarget,
    opts: &GradOptions,
) -> Result<(f64, Vec<f64>)> {
    opts.validate()?;
    let (value, mut grad) = value_and_grad_f(kind, gen, grid, &g.to_controls(), target, opts.segments)?;
    let k = grid.intervals;
    for i in 0..k {
        grad[k + i] *= 2.0 * g.w1[i];
        grad[2 * k + i] *= 2.0 * g.w2[i];
    }
    Ok((value, grad))
}

pub fn grad_objective(
    kind: ObjectiveKind,
    gen: &GeneratorSet,
    grid: &ControlGrid,
    g: &ParamVector,
    target: &GateTarget,
    opts: &GradOptions,
) -> Result<Vec<f64>> {
    value_and_grad(kind, gen, grid, g, target, opts).map(|(_, grad)| grad)
}

/// Central differences of a scalar function.
pub fn fd_gradient_of<F>(func: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = func(&probe)?;
        probe[i] = x[i] - step;
        let minus = func(&probe)?;
        probe[i] = x[i];
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Central-difference gradient of the objective in `g` coordinates.
pub fn fd_gradient(
    kind: ObjectiveKind,
    gen: &GeneratorSet,
    grid: &ControlGrid,
    g: &ParamVector,
    target: &GateTarget,
    step: f64,
) -> Result<Vec<f64>> {
    let eval = |flat: &[f64]| objectives::evaluate(kind, gen, grid, &ParamVector::from_flat(flat).to_controls(), target);
    fd_gradient_of(eval, &g.to_flat(), step)
}

/// Symmetrised central differences of a gradient, row-major `n × n`.
pub fn fd_hessian_of<G>(grad: G, x: &[f64], step: f64) -> Result<Vec<Vec<f64>>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut probe = x.to_vec();
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        probe[i] = x[i] + step;
        let plus = grad(&probe)?;
        probe[i] = x[i] - step;
        let minus = grad(&probe)?;
        probe[i] = x[i];
        for j in 0..n {
            h[i][j] = (plus[j] - minus[j]) / (2.0 * step);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = avg;
            h[j][i] = avg;
        }
    }
    Ok(h)
}

/// Hessian of the objective in `g` coordinates from differences of the exact gradient.
pub fn fd_hessian(
    kind: ObjectiveKind,
    gen: &GeneratorSet,
    grid: &ControlGrid,
    g: &ParamVector,
    target: &GateTarget,
    opts: &GradOptions,
) -> Result<Vec<Vec<f64>>> {
    opts.validate()?;
    let grad = |flat: &[f64]| grad_objective(kind, gen, grid, &ParamVector::from_flat(flat), target, opts);
    fd_hessian_of(grad, &g.to_flat(), opts.fd_step)
}

/// `‖a − b‖₂ / ‖b‖₂`, or the absolute error when `b` vanishes.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

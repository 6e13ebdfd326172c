//! Adaptive Dormand–Prince 5(4) integration of `ẋ = L(t) x`, used as an
//! independent check on the matrix-exponential propagator.

use super::{step_generator, ControlGrid, ControlVector};
use crate::qmodel::{GeneratorSet, RealState};
use crate::{Error, Mat16, Result, Vec16};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    /// Mixed absolute/relative tolerance per component.
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_steps: 1_000_000 }
    }
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates one interval of length `len` with constant generator `l`.
fn integrate_interval(l: &Mat16, x: Vec16, t0: f64, len: f64, opts: &OdeOptions, steps: &mut usize) -> Result<Vec16> {
    let norm = l.amax() * 16.0;
    let mut h = if norm > 0.0 { (0.1 / norm).min(len) } else { len };
    let mut t = 0.0;
    let mut y = x;
    while t < len {
        if *steps >= opts.max_steps {
            return Err(Error::InvalidParameter(format!("ODE exceeded {} steps", opts.max_steps)));
        }
        h = h.min(len - t);
        if h <= 1e-14 * len.max(1.0) {
            return Err(Error::StepUnderflow { t: t0 + t, h });
        }
        let mut k = [Vec16::zeros(); 7];
        k[0] = l * y;
        for s in 1..7 {
            let mut stage = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                if A[s][j] != 0.0 {
                    stage += kj * (h * A[s][j]);
                }
            }
            k[s] = l * stage;
        }
        let mut y5 = y;
        let mut y4 = y;
        for s in 0..7 {
            y5 += k[s] * (h * B5[s]);
            y4 += k[s] * (h * B4[s]);
        }
        let err = (0..16)
            .map(|i| (y5[i] - y4[i]).abs() / (opts.tol + opts.tol * y[i].abs().max(y5[i].abs())))
            .fold(0.0, f64::max);
        *steps += 1;
        if !err.is_finite() {
            return Err(Error::NonFiniteMatrix);
        }
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    Ok(y)
}

/// Final state `x(T)` obtained by integrating interval by interval.
pub fn ode_oracle(
    gen: &GeneratorSet,
    grid: &ControlGrid,
    f: &ControlVector,
    x0: &RealState,
    opts: &OdeOptions,
) -> Result<RealState> {
    grid.validate()?;
    f.validate(grid)?;
    let dt = grid.dt();
    let mut x = x0.0;
    let mut steps = 0;
    for k in 0..grid.intervals {
        let l = step_generator(gen, f.u[k], f.n1[k], f.n2[k])?;
        x = integrate_interval(&l, x, grid.time(k), dt, opts, &mut steps)?;
    }
    Ok(RealState(x))
}

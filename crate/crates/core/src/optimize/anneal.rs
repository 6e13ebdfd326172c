//! Generalised simulated annealing with a distorted Cauchy–Lorentz visiting
//! distribution, generalised Metropolis acceptance, re-annealing restarts and
//! periodic local search, over the box `|u| ≤ u_max`, `0 ≤ n ≤ n_max`.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{Method, RunRecord, Termination};
use crate::gradients::{l2_norm, value_and_grad_f, GradOptions};
use crate::objectives::{evaluate, ObjectiveKind};
use crate::propagator::{ControlGrid, ControlVector};
use crate::qmodel::{GateTarget, GeneratorSet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealParams {
    pub initial_temp: f64,
    pub maxiter: usize,
    pub maxfun: usize,
    /// Visiting parameter `q_v ∈ (1, 3)`.
    pub visit: f64,
    /// Acceptance parameter `q_a < 1`.
    pub accept: f64,
    pub restart_temp_ratio: f64,
    pub u_max: f64,
    pub n_max: f64,
    pub seed: u64,
    pub local_search: bool,
    /// Projected-gradient norm at which a local search stops.
    pub local_eps: f64,
}

impl Default for AnnealParams {
    fn default() -> Self {
        Self {
            initial_temp: 2e4,
            maxiter: 2000,
            maxfun: 30_000,
            visit: 2.62,
            accept: -5.0,
            restart_temp_ratio: 2e-5,
            u_max: 30.0,
            n_max: 10.0,
            seed: 0,
            local_search: true,
            local_eps: 2.5e-3,
        }
    }
}

impl AnnealParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.initial_temp > 0.0 && self.initial_temp.is_finite()) {
            return bad(format!("initial_temp must be positive, got {}", self.initial_temp));
        }
        if !(self.visit > 1.0 && self.visit < 3.0) {
            return bad(format!("visit must lie in (1, 3), got {}", self.visit));
        }
        if !(self.accept < 1.0) {
            return bad(format!("accept must be below 1, got {}", self.accept));
        }
        if !(self.restart_temp_ratio > 0.0 && self.restart_temp_ratio < 1.0) {
            return bad(format!("restart_temp_ratio must lie in (0, 1), got {}", self.restart_temp_ratio));
        }
        if !(self.u_max > 0.0 && self.n_max > 0.0 && self.u_max.is_finite() && self.n_max.is_finite()) {
            return bad("bounds must be positive and finite".into());
        }
        if self.maxfun == 0 {
            return bad("maxfun must be at least 1".into());
        }
        Ok(())
    }
}

const TAIL_LIMIT: f64 = 1e8;
const MIN_VISIT_BOUND: f64 = 1e-10;
const MAX_REINIT: usize = 1000;
const NOT_IMPROVED_MAX: usize = 1000;

struct Visiting {
    q: f64,
    factor4_p: f64,
    factor6: f64,
}

impl Visiting {
    fn new(q: f64) -> Self {
        let factor2 = ((4.0 - q) * (q - 1.0).ln()).exp();
        let factor3 = ((2.0 - q) * 2f64.ln() / (q - 1.0)).exp();
        let factor4_p = PI.sqrt() * factor2 / (factor3 * (3.0 - q));
        let factor5 = 1.0 / (q - 1.0) - 0.5;
        let d1 = 2.0 - factor5;
        let factor6 = PI * (1.0 - factor5) / (PI * (1.0 - factor5)).sin() / ln_gamma(d1).exp();
        Self { q, factor4_p, factor6 }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, temperature: f64) -> f64 {
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let q = self.q;
        let factor1 = (temperature.ln() / (q - 1.0)).exp();
        let factor4 = self.factor4_p * factor1;
        let sigma = (-(q - 1.0) * (self.factor6 / factor4).ln() / (3.0 - q)).exp();
        let den = ((q - 1.0) * y.abs().ln() / (3.0 - q)).exp();
        x * sigma / den
    }
}

struct Problem<'a> {
    kind: ObjectiveKind,
    gen: &'a GeneratorSet,
    grid: &'a ControlGrid,
    target: &'a GateTarget,
    segments: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    nfev: usize,
    maxfun: usize,
}

impl Problem<'_> {
    fn exhausted(&self) -> bool {
        self.nfev >= self.maxfun
    }

    fn value(&mut self, x: &[f64]) -> Option<f64> {
        if self.exhausted() {
            return None;
        }
        self.nfev += 1;
        let v = evaluate(self.kind, self.gen, self.grid, &ControlVector::from_flat(x), self.target);
        Some(v.ok().filter(|v| v.is_finite()).unwrap_or(f64::INFINITY))
    }

    fn value_grad(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        if self.exhausted() {
            return None;
        }
        self.nfev += 1;
        value_and_grad_f(self.kind, self.gen, self.grid, &ControlVector::from_flat(x), self.target, self.segments).ok()
    }

    fn wrap(&self, i: usize, v: f64) -> f64 {
        let range = self.upper[i] - self.lower[i];
        let a = v - self.lower[i];
        let b = a % range + range;
        let mut out = b % range + self.lower[i];
        if (out - self.lower[i]).abs() < MIN_VISIT_BOUND {
            out += MIN_VISIT_BOUND;
        }
        out
    }

    fn random_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.lower.len()).map(|i| rng.random_range(self.lower[i]..self.upper[i])).collect()
    }

    /// Gradient with components that push against an active bound removed.
    fn projected_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        let p: Vec<f64> = (0..x.len())
            .map(|i| {
                if (x[i] <= self.lower[i] && g[i] > 0.0) || (x[i] >= self.upper[i] && g[i] < 0.0) {
                    0.0
                } else {
                    g[i]
                }
            })
            .collect();
        l2_norm(&p)
    }

    /// Bounded adaptive-step gradient descent from `x`. Returns the better of
    /// the start and the end point.
    fn local_search(&mut self, x: &[f64], e: f64, eps: f64) -> (f64, Vec<f64>) {
        let n = x.len();
        let maxiter = (6 * n).clamp(100, 1000);
        let Some((mut v, mut g)) = self.value_grad(x) else {
            return (e, x.to_vec());
        };
        let mut cur = x.to_vec();
        let mut h = 1.0;
        'outer: for _ in 0..maxiter {
            if !v.is_finite() || self.projected_norm(&cur, &g) < eps {
                break;
            }
            let mut accepted = None;
            for _ in 0..=60 {
                let trial: Vec<f64> = (0..n)
                    .map(|i| (cur[i] - h * g[i]).clamp(self.lower[i], self.upper[i]))
                    .collect();
                if trial == cur {
                    break;
                }
                let Some(tv) = self.value(&trial) else { break 'outer };
                if tv < v {
                    cur = trial;
                    accepted = Some(tv);
                    break;
                }
                h *= 0.5;
            }
            let Some(accepted) = accepted else { break };
            h *= 1.1;
            match self.value_grad(&cur) {
                Some((nv, ng)) => {
                    v = nv;
                    g = ng;
                }
                None => {
                    v = accepted;
                    break;
                }
            }
        }
        if v.is_finite() && v < e {
            (v, cur)
        } else {
            (e, x.to_vec())
        }
    }
}

/// Global search in `f = (u, n₁, n₂)`. Starts from `f0` when given, otherwise
/// from a uniform point in the box. Every objective or gradient evaluation
/// counts against `maxfun`, which is never exceeded.
pub fn anneal_run(
    kind: ObjectiveKind,
    gen: &GeneratorSet,
    grid: &ControlGrid,
    f0: Option<&ControlVector>,
    target: &GateTarget,
    params: &AnnealParams,
    opts: &GradOptions,
) -> Result<RunRecord> {
    params.validate()?;
    opts.validate()?;
    let start = Instant::now();
    let k = grid.intervals;
    let mut lower = vec![-params.u_max; k];
    lower.extend(std::iter::repeat_n(0.0, 2 * k));
    let mut upper = vec![params.u_max; k];
    upper.extend(std::iter::repeat_n(params.n_max, 2 * k));
    let dim = 3 * k;
    let mut p = Problem {
        kind,
        gen,
        grid,
        target,
        segments: opts.segments,
        lower,
        upper,
        nfev: 0,
        maxfun: params.maxfun,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut current = match f0 {
        Some(f) => {
            f.validate(grid)?;
            let x = f.to_flat();
            if (0..dim).any(|i| x[i] < p.lower[i] || x[i] > p.upper[i]) {
                return Err(Error::InvalidControls("initial controls lie outside the annealing bounds".into()));
            }
            x
        }
        None => p.random_point(&mut rng),
    };
    let mut current_e = p.value(&current).expect("maxfun >= 1");
    let mut reinit = 0;
    while !current_e.is_finite() {
        if reinit >= MAX_REINIT || p.exhausted() {
            return Err(Error::NonFinite { what: "objective", iteration: 0 });
        }
        current = p.random_point(&mut rng);
        current_e = p.value(&current).unwrap_or(f64::INFINITY);
        reinit += 1;
    }
    let initial_value = current_e;
    let mut best = current.clone();
    let mut best_e = current_e;
    let mut xmin = current.clone();
    let mut emin = current_e;
    let mut not_improved = 0usize;
    let mut not_improved_max = NOT_IMPROVED_MAX;
    let mut history = vec![best_e];

    let visiting = Visiting::new(params.visit);
    let q = params.visit;
    let t1 = ((q - 1.0) * 2f64.ln()).exp() - 1.0;
    let temperature_restart = params.initial_temp * params.restart_temp_ratio;
    let mut iteration = 0;
    let mut out_of_budget = p.exhausted();

    'anneal: while !out_of_budget && iteration < params.maxiter {
        for i in 0..params.maxiter {
            let t2 = ((q - 1.0) * (i as f64 + 2.0).ln()).exp() - 1.0;
            let temperature = params.initial_temp * t1 / t2;
            if iteration >= params.maxiter {
                break 'anneal;
            }
            if temperature < temperature_restart {
                current = p.random_point(&mut rng);
                match p.value(&current) {
                    Some(e) => current_e = e,
                    None => {
                        out_of_budget = true;
                        break 'anneal;
                    }
                }
                break;
            }

            // strategy chain
            let temperature_step = temperature / (i as f64 + 1.0);
            not_improved += 1;
            let mut improved = i == 0;
            for j in 0..2 * dim {
                let mut visit = current.clone();
                if j < dim {
                    let mut steps: Vec<f64> = (0..dim).map(|_| visiting.draw(&mut rng, temperature)).collect();
                    let upper_sample: f64 = rng.random();
                    let lower_sample: f64 = rng.random();
                    for s in steps.iter_mut() {
                        if *s > TAIL_LIMIT {
                            *s = TAIL_LIMIT * upper_sample;
                        } else if *s < -TAIL_LIMIT {
                            *s = -TAIL_LIMIT * lower_sample;
                        }
                    }
                    for idx in 0..dim {
                        visit[idx] = p.wrap(idx, current[idx] + steps[idx]);
                    }
                } else {
                    let mut s = visiting.draw(&mut rng, temperature);
                    if s > TAIL_LIMIT {
                        s = TAIL_LIMIT * rng.random::<f64>();
                    } else if s < -TAIL_LIMIT {
                        s = -TAIL_LIMIT * rng.random::<f64>();
                    }
                    let idx = j - dim;
                    visit[idx] = p.wrap(idx, current[idx] + s);
                }
                let Some(e) = p.value(&visit) else {
                    out_of_budget = true;
                    break;
                };
                if e < current_e {
                    current = visit;
                    current_e = e;
                    if e < best_e {
                        best = current.clone();
                        best_e = e;
                        improved = true;
                        not_improved = 0;
                    }
                } else {
                    let r: f64 = rng.random();
                    let base = 1.0 - (1.0 - params.accept) * (e - current_e) / temperature_step;
                    let pqv = if base <= 0.0 { 0.0 } else { (base.ln() / (1.0 - params.accept)).exp() };
                    if r <= pqv {
                        current = visit;
                        current_e = e;
                        xmin = current.clone();
                    }
                    if not_improved >= not_improved_max && (j == 0 || current_e < emin) {
                        emin = current_e;
                        xmin = current.clone();
                    }
                }
            }
            if out_of_budget {
                history.push(best_e);
                break 'anneal;
            }

            if params.local_search {
                if improved {
                    let (e, x) = p.local_search(&best, best_e, params.local_eps);
                    if e < best_e {
                        not_improved = 0;
                        best = x.clone();
                        best_e = e;
                        current = x;
                        current_e = e;
                    }
                }
                if !p.exhausted() && not_improved >= not_improved_max {
                    let (e, x) = p.local_search(&xmin, emin, params.local_eps);
                    xmin = x.clone();
                    emin = e;
                    not_improved = 0;
                    not_improved_max = dim;
                    if e < best_e {
                        best = x.clone();
                        best_e = e;
                        current = x;
                        current_e = e;
                    }
                }
                if p.exhausted() {
                    out_of_budget = true;
                    iteration += 1;
                    history.push(best_e);
                    break 'anneal;
                }
            }
            iteration += 1;
            history.push(best_e);
        }
    }

    let controls = ControlVector::from_flat(&best);
    let grad_norm = value_and_grad_f(kind, gen, grid, &controls, target, opts.segments)
        .map(|(_, g)| p.projected_norm(&best, &g))
        .unwrap_or(f64::NAN);
    let final_sd = if kind == ObjectiveKind::Sd {
        best_e
    } else {
        evaluate(ObjectiveKind::Sd, gen, grid, &controls, target)?
    };
    Ok(RunRecord {
        method: Method::Anneal,
        config: serde_json::Value::Null,
        seed: Some(params.seed),
        objective: kind,
        iterations: iteration,
        nfev: p.nfev,
        history,
        initial_value,
        final_value: best_e,
        grad_norm,
        final_sd,
        params: None,
        controls,
        termination: if out_of_budget { Termination::MaxFunctionEvaluations } else { Termination::MaxIterations },
        wall_time: start.elapsed(),
    })
}

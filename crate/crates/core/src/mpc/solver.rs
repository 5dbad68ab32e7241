//! Local NLP solver for the single-shooting problem.
//!
//! Box and rate limits on each input channel are handled exactly by a change
//! of variables: step `k` of channel `c` is written as
//!
//! `u(k) = L(k) + z(k)·(U(k) − L(k))`, with
//! `L(k) = max(u_min, u(k−1) − δu)` and `U(k) = min(u_max, u(k−1) + δu)`,
//!
//! so every `z ∈ [0, 1]^(3N)` maps to a feasible sequence and every feasible
//! sequence has a preimage. The box-constrained problem in `z` is solved
//! with projected L-BFGS and an Armijo search along the projection arc.

use std::collections::VecDeque;
use std::time::Instant;

use crate::model::{ControlInput, GreenhouseModel, GreenhouseState, WeatherRecord};

use super::cost::{rollout_cost, rollout_cost_and_gradient};
use super::{HorizonSolution, MpcConfig, MpcError, SolveStatus};

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Maps normalized coordinates to rate- and box-feasible input sequences.
pub(crate) struct IntervalMap {
    prev: [f64; 3],
    lo: [f64; 3],
    hi: [f64; 3],
    rate: [f64; 3],
    steps: usize,
}

/// Interval bookkeeping needed to push gradients back to `z`.
struct Expansion {
    inputs: Vec<ControlInput>,
    width: Vec<[f64; 3]>,
    // d u(k) / d u(k−1) with z(k) held fixed.
    carry: Vec<[f64; 3]>,
}

impl IntervalMap {
    pub(crate) fn new(config: &MpcConfig, prev: &ControlInput) -> Self {
        Self {
            prev: prev.clamped(&config.u_min(), &config.u_max()).0,
            lo: config.u_min,
            hi: config.u_max,
            rate: config.rate_limit(),
            steps: config.horizon,
        }
    }

    fn expand(&self, z: &[f64]) -> Expansion {
        let mut inputs = Vec::with_capacity(self.steps);
        let mut width = Vec::with_capacity(self.steps);
        let mut carry = Vec::with_capacity(self.steps);
        let mut last = self.prev;
        for k in 0..self.steps {
            let mut u = [0.0; 3];
            let mut wk = [0.0; 3];
            let mut ck = [0.0; 3];
            for c in 0..3 {
                let down = last[c] - self.rate[c];
                let up = last[c] + self.rate[c];
                let l = self.lo[c].max(down);
                let h = self.hi[c].min(up);
                let w = (h - l).max(0.0);
                let zc = z[3 * k + c];
                u[c] = feasible(l + zc * w, last[c], self.rate[c], self.lo[c], self.hi[c]);
                wk[c] = w;
                let dl = if down > self.lo[c] { 1.0 } else { 0.0 };
                let du = if up < self.hi[c] { 1.0 } else { 0.0 };
                ck[c] = dl * (1.0 - zc) + du * zc;
            }
            inputs.push(ControlInput(u));
            width.push(wk);
            carry.push(ck);
            last = u;
        }
        Expansion { inputs, width, carry }
    }

    pub(crate) fn inputs(&self, z: &[f64]) -> Vec<ControlInput> {
        self.expand(z).inputs
    }

    /// Normalized coordinates of `inputs`; infeasible entries are pulled to
    /// the nearest end of their interval.
    pub(crate) fn coordinates(&self, inputs: &[ControlInput]) -> Vec<f64> {
        let mut z = vec![0.0; 3 * self.steps];
        let mut last = self.prev;
        for k in 0..self.steps {
            let target = inputs.get(k).map(|u| u.0).unwrap_or(last);
            for c in 0..3 {
                let l = self.lo[c].max(last[c] - self.rate[c]);
                let h = self.hi[c].min(last[c] + self.rate[c]);
                let w = (h - l).max(0.0);
                let zc = if w > 0.0 { ((target[c] - l) / w).clamp(0.0, 1.0) } else { 0.0 };
                z[3 * k + c] = zc;
                last[c] = feasible(l + zc * w, last[c], self.rate[c], self.lo[c], self.hi[c]);
            }
        }
        z
    }

    fn gradient(&self, exp: &Expansion, grad_u: &[[f64; 3]]) -> Vec<f64> {
        let mut gz = vec![0.0; 3 * self.steps];
        let mut total = [0.0; 3];
        for k in (0..self.steps).rev() {
            for c in 0..3 {
                total[c] += grad_u[k][c];
                gz[3 * k + c] = total[c] * exp.width[k][c];
                total[c] *= exp.carry[k][c];
            }
        }
        gz
    }
}

// Clamp into the box and the rate interval around `last`, nudging by ulps
// so that `|u − last| ≤ rate` holds in floating point.
fn feasible(u: f64, last: f64, rate: f64, lo: f64, hi: f64) -> f64 {
    let mut u = u.clamp(lo, hi);
    while u - last > rate && u > lo {
        u = u.next_down();
    }
    while last - u > rate && u < hi {
        u = u.next_up();
    }
    u
}

struct Problem<'a> {
    model: &'a GreenhouseModel,
    config: &'a MpcConfig,
    x0: &'a GreenhouseState,
    weather: &'a [WeatherRecord],
    h: f64,
    map: IntervalMap,
}

impl Problem<'_> {
    fn value(&self, z: &[f64]) -> f64 {
        let inputs = self.map.inputs(z);
        match rollout_cost(self.model, self.config, self.x0, self.weather, &inputs, self.h) {
            Ok(c) if c.objective.is_finite() => c.objective,
            _ => f64::INFINITY,
        }
    }

    fn value_and_gradient(&self, z: &[f64]) -> Result<(f64, Vec<f64>), MpcError> {
        let exp = self.map.expand(z);
        let (cost, grad_u) =
            rollout_cost_and_gradient(self.model, self.config, self.x0, self.weather, &exp.inputs, self.h)?;
        Ok((cost.objective, self.map.gradient(&exp, &grad_u)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(z: &[f64], d: &[f64], alpha: f64) -> Vec<f64> {
    z.iter().zip(d).map(|(v, s)| (v + alpha * s).clamp(0.0, 1.0)).collect()
}

fn projected_gradient_norm(z: &[f64], g: &[f64]) -> f64 {
    z.iter()
        .zip(g)
        .map(|(v, gi)| ((v - gi).clamp(0.0, 1.0) - v).abs())
        .fold(0.0, f64::max)
}

/// Coordinates pinned at a bound with the gradient pushing outward.
fn free_mask(z: &[f64], g: &[f64]) -> Vec<bool> {
    z.iter()
        .zip(g)
        .map(|(v, gi)| !((*v <= 0.0 && *gi > 0.0) || (*v >= 1.0 && *gi < 0.0)))
        .collect()
}

fn lbfgs_direction(g: &[f64], free: &[bool], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().zip(free).map(|(v, f)| if *f { *v } else { 0.0 }).collect();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += si * (a - b);
        }
    }
    q.iter().zip(free).map(|(v, f)| if *f { -v } else { 0.0 }).collect()
}

/// Backtracking search along the projection arc. Returns the accepted
/// point and its value.
fn line_search(problem: &Problem<'_>, z: &[f64], f: f64, g: &[f64], d: &[f64], alpha0: f64) -> Option<(Vec<f64>, f64)> {
    let mut alpha = alpha0;
    for _ in 0..MAX_BACKTRACKS {
        let trial = project(z, d, alpha);
        let step: Vec<f64> = trial.iter().zip(z).map(|(a, b)| a - b).collect();
        let predicted = dot(g, &step);
        if predicted < 0.0 {
            let ft = problem.value(&trial);
            if ft <= f + ARMIJO * predicted {
                return Some((trial, ft));
            }
        } else if step.iter().all(|s| *s == 0.0) {
            return None;
        }
        alpha *= 0.5;
    }
    None
}

/// Solve the finite-horizon problem from `x0`.
///
/// The search starts from the best of the warm start, holding `prev_u`, and
/// the fastest admissible decrease of every input, and only ever accepts
/// descent steps, so the result is never worse than any of those.
/// `weather` starts at the current step; it is padded with its last record
/// if shorter than the horizon.
pub fn solve_ocp(
    model: &GreenhouseModel,
    config: &MpcConfig,
    x0: &GreenhouseState,
    weather: &[WeatherRecord],
    prev_u: &ControlInput,
    warm_start: Option<&[ControlInput]>,
    h: f64,
) -> Result<HorizonSolution, MpcError> {
    let started = Instant::now();
    config.validate()?;
    let problem = Problem {
        model,
        config,
        x0,
        weather,
        h,
        map: IntervalMap::new(config, prev_u),
    };
    let n = 3 * config.horizon;

    let mut candidates = vec![vec![0.0; n], problem.map.coordinates(&vec![*prev_u; config.horizon])];
    if let Some(ws) = warm_start {
        candidates.insert(0, problem.map.coordinates(ws));
    }
    let mut z = candidates[0].clone();
    let mut best = problem.value(&z);
    for c in candidates.into_iter().skip(1) {
        let v = problem.value(&c);
        if v < best {
            best = v;
            z = c;
        }
    }

    let (mut f, mut g) = problem.value_and_gradient(&z)?;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut small_steps = 0;

    while iterations < config.max_iterations {
        if projected_gradient_norm(&z, &g) <= config.gradient_tolerance {
            status = SolveStatus::Converged;
            break;
        }
        iterations += 1;
        let free = free_mask(&z, &g);
        let mut accepted = None;
        if !memory.is_empty() {
            let d = lbfgs_direction(&g, &free, &memory);
            if dot(&g, &d) < 0.0 {
                accepted = line_search(&problem, &z, f, &g, &d, 1.0);
            }
        }
        if accepted.is_none() {
            memory.clear();
            let d: Vec<f64> = g.iter().zip(&free).map(|(v, fr)| if *fr { -v } else { 0.0 }).collect();
            let scale = d.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
            if scale > 0.0 {
                accepted = line_search(&problem, &z, f, &g, &d, 1.0 / scale);
            }
        }
        let Some((z_new, _)) = accepted else {
            status = SolveStatus::Stalled;
            break;
        };
        let (f_new, g_new) = problem.value_and_gradient(&z_new)?;
        let s: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == config.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - f_new;
        z = z_new;
        f = f_new;
        g = g_new;
        if decrease <= config.objective_tolerance * (1.0 + f.abs()) {
            small_steps += 1;
            if small_steps >= 3 {
                status = SolveStatus::Converged;
                break;
            }
        } else {
            small_steps = 0;
        }
    }

    let inputs = problem.map.inputs(&z);
    let cost = rollout_cost(model, config, x0, weather, &inputs, h)?;
    Ok(HorizonSolution {
        inputs,
        outputs: cost.outputs,
        slacks: cost.violations,
        objective: cost.objective,
        status,
        iterations,
        solve_seconds: started.elapsed().as_secs_f64(),
    })
}

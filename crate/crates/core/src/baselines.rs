//! Centralized power allocators used as benchmarks, and an exhaustive grid
//! oracle for small instances.
//!
//! FP and WMMSE optimize the uncapped weighted sum-rate; the SINR cap only
//! applies to rates reported by the simulator.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelGains;
use crate::error::{Error, Result};
use crate::simcore::{sinr, weighted_sum_rate};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Guard on the WMMSE MSE-weight denominator.
const WMMSE_EPS: f64 = 1e-12;
/// Largest grid the oracle agrees to enumerate.
pub const GRID_LIMIT: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub p: Vec<f64>,
    /// Objective (uncapped weighted sum-rate, bit/s/Hz) before the first
    /// iteration and after each one.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SolveResult {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Writes `iteration,objective` rows.
    pub fn write_trace_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "iteration,objective")?;
        for (k, v) in self.objective_trace.iter().enumerate() {
            writeln!(out, "{k},{v}")?;
        }
        Ok(())
    }
}

/// Iteration controls shared by FP and WMMSE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative objective change that stops the iteration.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

fn check_inputs(g: &ChannelGains, w: &[f64], p_max: f64, noise: f64) -> Result<()> {
    if w.len() != g.n_links() {
        return Err(Error::DimensionMismatch { expected: g.n_links(), actual: w.len() });
    }
    if !(p_max > 0.0 && noise > 0.0) {
        return Err(Error::InvalidConfig("P_max and noise must be positive".into()));
    }
    if w.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidConfig("weights must be finite and nonnegative".into()));
    }
    Ok(())
}

fn has_converged(prev: f64, cur: f64, tol: f64) -> bool {
    (cur - prev).abs() <= tol * prev.abs().max(1e-12)
}

/// Closed-form fractional programming from a pseudo-random start.
pub fn fp_solve<R: Rng + ?Sized>(
    g: &ChannelGains,
    w: &[f64],
    p_max: f64,
    noise: f64,
    opts: SolverOptions,
    rng: &mut R,
) -> Result<SolveResult> {
    check_inputs(g, w, p_max, noise)?;
    let p0: Vec<f64> = (0..w.len()).map(|_| rng.random_range(0.0..=p_max)).collect();
    fp_solve_from(g, w, p_max, noise, opts, p0)
}

/// Closed-form FP from a given start. Each iteration sets the SINR
/// auxiliaries, then the quadratic-transform auxiliaries, then the powers.
pub fn fp_solve_from(
    g: &ChannelGains,
    w: &[f64],
    p_max: f64,
    noise: f64,
    opts: SolverOptions,
    mut p: Vec<f64>,
) -> Result<SolveResult> {
    check_inputs(g, w, p_max, noise)?;
    let n = w.len();
    let mut trace = vec![weighted_sum_rate(g, w, &p, noise)];
    let mut gamma = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        for i in 0..n {
            gamma[i] = sinr(g, &p, i, noise);
        }
        for i in 0..n {
            let total: f64 = noise + (0..n).map(|j| g.get(j, i) * p[j]).sum::<f64>();
            y[i] = (w[i] * (1.0 + gamma[i]) * g.get(i, i) * p[i]).sqrt() / total;
        }
        for i in 0..n {
            let den: f64 = (0..n).map(|j| y[j] * y[j] * g.get(i, j)).sum();
            p[i] = if den > 0.0 {
                (y[i] * y[i] * w[i] * (1.0 + gamma[i]) * g.get(i, i) / (den * den)).min(p_max)
            } else {
                0.0
            };
        }
        let obj = weighted_sum_rate(g, w, &p, noise);
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if has_converged(prev, obj, opts.tol) {
            converged = true;
            break;
        }
    }
    Ok(SolveResult { p, objective_trace: trace, iterations, converged })
}

/// Scalar WMMSE started from full power.
pub fn wmmse_solve(
    g: &ChannelGains,
    w: &[f64],
    p_max: f64,
    noise: f64,
    opts: SolverOptions,
) -> Result<SolveResult> {
    check_inputs(g, w, p_max, noise)?;
    let n = w.len();
    let v_max = p_max.sqrt();
    // amplitudes, and sqrt of gains h[tx, rx]
    let mut v = vec![v_max; n];
    let h = |tx: usize, rx: usize| g.get(tx, rx).sqrt();
    let powers = |v: &[f64]| v.iter().map(|x| (x * x).min(p_max)).collect::<Vec<_>>();
    let mut trace = vec![weighted_sum_rate(g, w, &powers(&v), noise)];
    let mut u = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        for i in 0..n {
            let total: f64 = noise + (0..n).map(|j| g.get(j, i) * v[j] * v[j]).sum::<f64>();
            u[i] = h(i, i) * v[i] / total;
            m[i] = 1.0 / (1.0 - u[i] * h(i, i) * v[i]).max(WMMSE_EPS);
        }
        for i in 0..n {
            let den: f64 = (0..n).map(|j| w[j] * m[j] * u[j] * u[j] * g.get(i, j)).sum();
            let num = w[i] * m[i] * u[i] * h(i, i);
            v[i] = if den > 0.0 { (num / den).clamp(0.0, v_max) } else { 0.0 };
        }
        let obj = weighted_sum_rate(g, w, &powers(&v), noise);
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if has_converged(prev, obj, opts.tol) {
            converged = true;
            break;
        }
    }
    Ok(SolveResult { p: powers(&v), objective_trace: trace, iterations, converged })
}

/// FP solved on the previous slot's gains; the caller applies the powers to
/// the current slot.
pub fn central_delayed<R: Rng + ?Sized>(
    g_prev: &ChannelGains,
    w: &[f64],
    p_max: f64,
    noise: f64,
    opts: SolverOptions,
    rng: &mut R,
) -> Result<SolveResult> {
    fp_solve(g_prev, w, p_max, noise, opts, rng)
}

pub fn random_alloc<R: Rng + ?Sized>(n: usize, p_max: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..=p_max)).collect()
}

pub fn full_power(n: usize, p_max: f64) -> Vec<f64> {
    vec![p_max; n]
}

/// `levels` evenly spaced powers from 0 to `p_max`.
pub fn power_grid(p_max: f64, levels: usize) -> Result<Vec<f64>> {
    if levels < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 power levels, got {levels}")));
    }
    Ok((0..levels).map(|k| p_max * k as f64 / (levels - 1) as f64).collect())
}

/// Exhaustive search over the discrete power grid; ties keep the first
/// allocation in lexicographic order.
pub fn grid_oracle(
    g: &ChannelGains,
    w: &[f64],
    p_max: f64,
    noise: f64,
    levels: usize,
) -> Result<SolveResult> {
    check_inputs(g, w, p_max, noise)?;
    let n = w.len();
    let grid = power_grid(p_max, levels)?;
    let total = (levels as f64).powi(n as i32);
    if total > GRID_LIMIT as f64 {
        return Err(Error::InstanceTooLarge { levels, links: n });
    }
    let mut idx = vec![0usize; n];
    let mut p = vec![0.0; n];
    let mut best = f64::NEG_INFINITY;
    let mut best_p = p.clone();
    let mut count = 0usize;
    loop {
        for (pi, &k) in p.iter_mut().zip(&idx) {
            *pi = grid[k];
        }
        let obj = weighted_sum_rate(g, w, &p, noise);
        if obj > best {
            best = obj;
            best_p.copy_from_slice(&p);
        }
        count += 1;
        // odometer increment, last link fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(SolveResult {
                    p: best_p,
                    objective_trace: vec![best],
                    iterations: count,
                    converged: true,
                });
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < levels {
                break;
            }
            idx[pos] = 0;
        }
    }
}

//! Transmit power allocation for fixed antenna selections.
//!
//! The SCA allocator maximizes the weighted sum rate
//! `sum_k w_k [log2(a_k(P) + s2) - log2(b_k(P) + s2)]`, where `a_k` is the
//! signal-plus-interference power and `b_k` the interference power at user k,
//! both linear in P. Each round replaces the concave `log2(b_k + s2)` by its
//! tangent at the current point, which leaves a concave surrogate that is
//! tight there; the surrogate is maximized over `{P >= 0, sum P <= P_tot}`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::ascent::{project_capped_simplex, projected_ascent, AscentOptions};
use crate::error::{invalid, Error, Result};
use crate::metrics::{LinkGains, PowerVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerSolverConfig {
    pub grid_points: usize,
    pub sca_max_iters: usize,
    pub sca_tol: f64,
    pub inner_step: f64,
    pub inner_max_iters: usize,
    /// Also start SCA from every single-user allocation and keep the best.
    pub multi_start: bool,
}

impl Default for PowerSolverConfig {
    fn default() -> Self {
        Self {
            grid_points: 2001,
            sca_max_iters: 100,
            sca_tol: 1e-10,
            inner_step: 0.1,
            inner_max_iters: 500,
            multi_start: true,
        }
    }
}

impl PowerSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2 {
            return Err(invalid("grid_points must be at least 2"));
        }
        if !(self.sca_tol > 0.0) || !(self.inner_step > 0.0) || self.sca_max_iters == 0 {
            return Err(invalid("power solver tolerances and step must be positive"));
        }
        Ok(())
    }
}

/// Everything that defines a power allocation instance.
#[derive(Debug, Clone, Copy)]
pub struct PowerProblem<'a> {
    pub gains: &'a LinkGains,
    pub noise: f64,
    pub budget: f64,
    pub weights: &'a [f64],
}

impl<'a> PowerProblem<'a> {
    pub fn new(gains: &'a LinkGains, noise: f64, budget: f64, weights: &'a [f64]) -> Result<Self> {
        if !(noise > 0.0) || !(budget > 0.0) {
            return Err(invalid("noise and budget must be positive"));
        }
        if weights.len() != gains.num_users() {
            return Err(invalid("one weight per user required"));
        }
        Ok(Self { gains, noise, budget, weights })
    }

    pub fn num_users(&self) -> usize {
        self.gains.num_users()
    }

    pub fn objective(&self, p: &[f64]) -> f64 {
        self.gains.weighted_sum_rate(p, self.noise, self.weights)
    }

    fn sums(&self, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.num_users();
        let mut a = vec![0.0; k];
        let mut b = vec![0.0; k];
        for u in 0..k {
            for i in 0..k {
                let r = self.gains.gains[u][i] * p[i];
                a[u] += r;
                if i != u {
                    b[u] += r;
                }
            }
        }
        (a, b)
    }

    /// Concave minorant of the objective, tight at `anchor`.
    pub fn surrogate_at(&self, anchor: &[f64]) -> PowerSurrogate<'a> {
        let (_, b) = self.sums(anchor);
        PowerSurrogate { problem: *self, anchor_interference: b }
    }
}

#[derive(Debug, Clone)]
pub struct PowerSurrogate<'a> {
    problem: PowerProblem<'a>,
    anchor_interference: Vec<f64>,
}

impl PowerSurrogate<'_> {
    pub fn value(&self, p: &[f64]) -> f64 {
        let pr = &self.problem;
        let (a, b) = pr.sums(p);
        let mut total = 0.0;
        for u in 0..pr.num_users() {
            let bh = self.anchor_interference[u] + pr.noise;
            let zeta_ub = bh.log2() + (b[u] + pr.noise - bh) / (bh * LN_2);
            total += pr.weights[u] * ((a[u] + pr.noise).log2() - zeta_ub);
        }
        total
    }

    pub fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let pr = &self.problem;
        let k = pr.num_users();
        let (a, _) = pr.sums(p);
        let mut g = vec![0.0; k];
        for u in 0..k {
            let ca = pr.weights[u] / ((a[u] + pr.noise) * LN_2);
            let cb = pr.weights[u] / ((self.anchor_interference[u] + pr.noise) * LN_2);
            for (j, gj) in g.iter_mut().enumerate() {
                let gain = pr.gains.gains[u][j];
                *gj += ca * gain;
                if j != u {
                    *gj -= cb * gain;
                }
            }
        }
        g
    }
}

/// Uniform scan of `P_1` over `[0, P_tot]` with `P_2 = P_tot - P_1`.
pub fn two_user_power_search(problem: &PowerProblem, config: &PowerSolverConfig) -> Result<PowerVector> {
    config.validate()?;
    if problem.num_users() != 2 {
        return Err(invalid(format!("two-user search needs K = 2, got {}", problem.num_users())));
    }
    let t = problem.budget;
    let steps = (config.grid_points - 1) as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for j in 0..config.grid_points {
        let p1 = t * j as f64 / steps;
        let v = problem.objective(&[p1, t - p1]);
        if v > best.0 {
            best = (v, p1);
        }
    }
    PowerVector::new(vec![best.1, (t - best.1).max(0.0)], t)
}

fn sca_single(problem: &PowerProblem, config: &PowerSolverConfig, initial: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut p = initial;
    let mut f = problem.objective(&p);
    if !f.is_finite() {
        return Err(Error::NumericalBlowUp { context: "sca_power_alloc", detail: format!("objective {f} at start {p:?}") });
    }
    let mut trace = vec![f];
    let opts = AscentOptions {
        max_iter: config.inner_max_iters,
        initial_step: config.inner_step,
        scale: problem.budget,
        ..AscentOptions::default()
    };
    for _ in 0..config.sca_max_iters {
        let sur = problem.surrogate_at(&p);
        let res = projected_ascent(
            p.clone(),
            |x| sur.value(x),
            |x| sur.gradient(x),
            |x| project_capped_simplex(x, problem.budget),
            &opts,
        );
        let f_new = problem.objective(&res.x);
        if !f_new.is_finite() {
            return Err(Error::NumericalBlowUp {
                context: "sca_power_alloc",
                detail: format!("objective {f_new} at {:?}", res.x),
            });
        }
        if f_new < f {
            // minorant guarantees ascent; anything else is roundoff
            break;
        }
        p = res.x;
        let gain = f_new - f;
        f = f_new;
        trace.push(f);
        if gain <= config.sca_tol * f.abs().max(1.0) {
            break;
        }
    }
    Ok((p, trace))
}

/// SCA power allocation. Returns the allocation and the objective trace of
/// the winning start (non-decreasing).
pub fn sca_power_alloc(
    problem: &PowerProblem,
    config: &PowerSolverConfig,
    initial: &PowerVector,
) -> Result<(PowerVector, Vec<f64>)> {
    config.validate()?;
    let k = problem.num_users();
    if initial.len() != k {
        return Err(invalid("initial allocation has wrong length"));
    }
    let mut starts = vec![initial.powers().to_vec()];
    if config.multi_start && k > 1 {
        for u in 0..k {
            let mut e = vec![0.0; k];
            e[u] = problem.budget;
            starts.push(e);
        }
    }
    let mut best: Option<(Vec<f64>, Vec<f64>)> = None;
    for s in starts {
        let (p, trace) = sca_single(problem, config, s)?;
        let better = match &best {
            None => true,
            Some((_, bt)) => trace.last() > bt.last(),
        };
        if better {
            best = Some((p, trace));
        }
    }
    let (p, trace) = best.expect("at least one start");
    Ok((PowerVector::new(p, problem.budget)?, trace))
}

/// SCA from the equal split.
pub fn optimize_power(problem: &PowerProblem, config: &PowerSolverConfig) -> Result<PowerVector> {
    let init = PowerVector::equal_split(problem.num_users(), problem.budget)?;
    Ok(sca_power_alloc(problem, config, &init)?.0)
}

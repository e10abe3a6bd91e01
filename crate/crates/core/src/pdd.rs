//! Penalty dual decomposition for joint antenna selection and power
//! allocation.
//!
//! The binary masks `v_k` are relaxed to `[0, 1]` with a copy `v~_k` and the
//! equality constraints `sum_n v_k = M_k`, `v = v~`, `v (1 - v~) = 0` moved
//! into an augmented Lagrangian. The inner layer runs block coordinate ascent
//! over `v -> v~ -> M -> P`; the outer layer updates the duals and shrinks
//! the penalty parameter until the largest constraint residual is below the
//! tolerance.

use std::f64::consts::LN_2;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ascent::{project_box, projected_ascent, AscentOptions};
use crate::channel::ChannelVector;
use crate::error::{invalid, Error, Result};
use crate::metrics::{link_gains, mrt_weights, LinkGains, PowerVector, RateReport, SelectionMask};
use crate::power::{sca_power_alloc, PowerProblem, PowerSolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PddConfig {
    pub rho0: f64,
    pub penalty_scale: f64,
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub inner_tol: f64,
    pub min_active: usize,
    /// Lower bound on the relaxed `M_k`.
    pub m_floor: f64,
    /// Iteration cap of each projected-gradient block solve.
    pub block_max_iter: usize,
    /// Relative drop of the penalized objective tolerated per block update.
    pub monotone_tol: f64,
    /// When false, powers stay at the equal split throughout.
    pub optimize_power: bool,
    pub power: PowerSolverConfig,
}

impl Default for PddConfig {
    fn default() -> Self {
        Self {
            rho0: 800.0,
            penalty_scale: 0.6,
            tol: 1e-3,
            max_outer: 150,
            max_inner: 30,
            inner_tol: 1e-5,
            min_active: 1,
            m_floor: 0.5,
            block_max_iter: 200,
            monotone_tol: 1e-8,
            optimize_power: true,
            power: PowerSolverConfig::default(),
        }
    }
}

impl PddConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_scale > 0.0 && self.penalty_scale < 1.0) {
            return Err(invalid("penalty scale must lie in (0, 1)"));
        }
        if !(self.rho0 > 0.0) || !(self.tol > 0.0) || !(self.inner_tol > 0.0) || !(self.m_floor > 0.0) {
            return Err(invalid("rho0, tol, inner_tol and m_floor must be positive"));
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.min_active == 0 {
            return Err(invalid("iteration caps and min_active must be at least 1"));
        }
        self.power.validate()
    }
}

/// `coeff[k][i][n] = conj(h_k[n]) * w_i[n]`, so that `sum_n coeff[k][i][n] v_i[n]`
/// is the amplitude `h_k^H V_i w_i` for any (possibly fractional) `v_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveVectors {
    pub coeff: Vec<Vec<Vec<Complex64>>>,
}

impl EffectiveVectors {
    pub fn num_users(&self) -> usize {
        self.coeff.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.coeff.first().and_then(|r| r.first()).map_or(0, |c| c.len())
    }

    pub fn amplitude(&self, k: usize, i: usize, v: &[f64]) -> Complex64 {
        self.coeff[k][i].iter().zip(v).map(|(c, x)| c * x).sum()
    }

    /// `psi[k][i] = |t_{k,i}^H v_i|^2`.
    pub fn psi(&self, v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = self.num_users();
        (0..k).map(|u| (0..k).map(|i| self.amplitude(u, i, &v[i]).norm_sqr()).collect()).collect()
    }

    pub fn gains(&self, v: &[Vec<f64>], m: &[f64]) -> LinkGains {
        let psi = self.psi(v);
        let gains = psi.iter().map(|row| row.iter().zip(m).map(|(p, mi)| p / mi).collect()).collect();
        LinkGains { gains }
    }
}

pub fn build_effective_vectors(channels: &[ChannelVector]) -> Result<EffectiveVectors> {
    if channels.is_empty() {
        return Err(invalid("need at least one user"));
    }
    let n = channels[0].len();
    if channels.iter().any(|c| c.len() != n) {
        return Err(invalid("channel lengths differ"));
    }
    let w = mrt_weights(channels);
    let coeff = channels
        .iter()
        .map(|h| w.iter().map(|wi| h.entries.iter().zip(wi).map(|(a, b)| a.conj() * b).collect()).collect())
        .collect();
    Ok(EffectiveVectors { coeff })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PddState {
    pub v: Vec<Vec<f64>>,
    pub v_tilde: Vec<Vec<f64>>,
    pub m: Vec<f64>,
    pub p: Vec<f64>,
    pub mu: Vec<f64>,
    pub delta: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub rho: f64,
}

impl PddState {
    /// Full array, equal power, zero duals.
    pub fn initial(num_users: usize, num_antennas: usize, budget: f64, rho: f64) -> Self {
        let (k, n) = (num_users, num_antennas);
        Self {
            v: vec![vec![1.0; n]; k],
            v_tilde: vec![vec![1.0; n]; k],
            m: vec![n as f64; k],
            p: vec![budget / k as f64; k],
            mu: vec![0.0; k],
            delta: vec![vec![0.0; n]; k],
            lambda: vec![vec![0.0; n]; k],
            rho,
        }
    }

    /// Largest residual of `v (1 - v~) = 0`, `v = v~`, `sum v = M`.
    pub fn violation(&self) -> f64 {
        let mut g = 0.0f64;
        for k in 0..self.v.len() {
            for (v, vt) in self.v[k].iter().zip(&self.v_tilde[k]) {
                g = g.max((v * (1.0 - vt)).abs()).max((v - vt).abs());
            }
            g = g.max((self.v[k].iter().sum::<f64>() - self.m[k]).abs());
        }
        g
    }
}

/// `(L1, L2, L3)` at the state's current penalty parameter.
pub fn penalty_terms(state: &PddState) -> Result<(f64, f64, f64)> {
    let rho = state.rho;
    if !(rho > 0.0) {
        return Err(invalid("penalty parameter must be positive"));
    }
    let (mut l1, mut l2, mut l3) = (0.0, 0.0, 0.0);
    for k in 0..state.v.len() {
        let r = state.v[k].iter().sum::<f64>() - state.m[k] + rho * state.mu[k];
        l1 += r * r;
        for n in 0..state.v[k].len() {
            let (v, vt) = (state.v[k][n], state.v_tilde[k][n]);
            let r2 = v - vt + rho * state.delta[k][n];
            let r3 = v * (1.0 - vt) + rho * state.lambda[k][n];
            l2 += r2 * r2;
            l3 += r3 * r3;
        }
    }
    let s = 1.0 / (2.0 * rho);
    Ok((s * l1, s * l2, s * l3))
}

/// Problem data shared by all blocks.
#[derive(Debug, Clone)]
pub struct PddProblem<'a> {
    pub eff: &'a EffectiveVectors,
    pub weights: &'a [f64],
    pub noise: f64,
    pub budget: f64,
}

impl PddProblem<'_> {
    fn check(&self, state: &PddState) -> Result<()> {
        let (k, n) = (self.eff.num_users(), self.eff.num_antennas());
        if self.weights.len() != k || state.v.len() != k || state.m.len() != k || state.p.len() != k {
            return Err(invalid("state dimensions do not match the problem"));
        }
        if state.v.iter().chain(&state.v_tilde).chain(&state.delta).chain(&state.lambda).any(|r| r.len() != n) {
            return Err(invalid("state rows must have N entries"));
        }
        if !(self.noise > 0.0) || !(self.budget > 0.0) {
            return Err(invalid("noise and budget must be positive"));
        }
        Ok(())
    }

    pub fn weighted_rate(&self, state: &PddState) -> f64 {
        self.eff.gains(&state.v, &state.m).weighted_sum_rate(&state.p, self.noise, self.weights)
    }

    pub fn rate_report(&self, state: &PddState) -> RateReport {
        self.eff.gains(&state.v, &state.m).report(&state.p, self.noise).with_weights(self.weights)
    }

    /// Augmented Lagrangian `sum_k w_k R_k - L1 - L2 - L3`.
    pub fn penalized_objective(&self, state: &PddState) -> Result<f64> {
        let (l1, l2, l3) = penalty_terms(state)?;
        Ok(self.weighted_rate(state) - l1 - l2 - l3)
    }
}

/// Concave minorant of the penalized objective in `v` (flattened `k * N + n`),
/// tight at the linearization point.
pub struct VSurrogate<'a> {
    problem: &'a PddProblem<'a>,
    state: &'a PddState,
    y_hat: Vec<Vec<Complex64>>,
    b_hat: Vec<f64>,
}

impl<'a> VSurrogate<'a> {
    pub fn new(problem: &'a PddProblem<'a>, state: &'a PddState) -> Self {
        let k = state.v.len();
        let y_hat: Vec<Vec<Complex64>> =
            (0..k).map(|u| (0..k).map(|i| problem.eff.amplitude(u, i, &state.v[i])).collect()).collect();
        let b_hat = (0..k)
            .map(|u| (0..k).filter(|&i| i != u).map(|i| state.p[i] / state.m[i] * y_hat[u][i].norm_sqr()).sum())
            .collect();
        Self { problem, state, y_hat, b_hat }
    }

    fn amplitudes(&self, v: &[f64]) -> Vec<Vec<Complex64>> {
        let k = self.state.v.len();
        let n = v.len() / k;
        (0..k).map(|u| (0..k).map(|i| self.problem.eff.amplitude(u, i, &v[i * n..(i + 1) * n])).collect()).collect()
    }

    /// `(a_lb, b)` per user.
    fn sums(&self, y: &[Vec<Complex64>]) -> (Vec<f64>, Vec<f64>) {
        let k = y.len();
        let st = self.state;
        let mut a = vec![0.0; k];
        let mut b = vec![0.0; k];
        for u in 0..k {
            for i in 0..k {
                let scale = st.p[i] / st.m[i];
                let yh = self.y_hat[u][i];
                a[u] += scale * (2.0 * (yh.conj() * y[u][i]).re - yh.norm_sqr());
                if i != u {
                    b[u] += scale * y[u][i].norm_sqr();
                }
            }
        }
        (a, b)
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        let pr = self.problem;
        let st = self.state;
        let k = st.v.len();
        let n = v.len() / k;
        let y = self.amplitudes(v);
        let (a, b) = self.sums(&y);
        let mut total = 0.0;
        for u in 0..k {
            if a[u] + pr.noise <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let bh = self.b_hat[u] + pr.noise;
            let zeta_ub = bh.log2() + (b[u] - self.b_hat[u]) / (bh * LN_2);
            total += pr.weights[u] * ((a[u] + pr.noise).log2() - zeta_ub);
        }
        total - v_penalty(st, v, n)
    }

    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let pr = self.problem;
        let st = self.state;
        let k = st.v.len();
        let n = v.len() / k;
        let y = self.amplitudes(v);
        let (a, _) = self.sums(&y);
        let mut g = vec![0.0; v.len()];
        for u in 0..k {
            let ca = pr.weights[u] / ((a[u] + pr.noise) * LN_2);
            let cb = pr.weights[u] / ((self.b_hat[u] + pr.noise) * LN_2);
            for i in 0..k {
                let scale = st.p[i] / st.m[i];
                let yh = self.y_hat[u][i].conj();
                let yc = y[u][i].conj();
                let coeff = &pr.eff.coeff[u][i];
                let gi = &mut g[i * n..(i + 1) * n];
                for (gn, c) in gi.iter_mut().zip(coeff) {
                    let mut d = ca * scale * 2.0 * (yh * c).re;
                    if i != u {
                        d -= cb * scale * 2.0 * (yc * c).re;
                    }
                    *gn += d;
                }
            }
        }
        v_penalty_gradient(st, v, n, &mut g);
        g
    }
}

fn v_penalty(st: &PddState, v: &[f64], n: usize) -> f64 {
    let rho = st.rho;
    let mut total = 0.0;
    for k in 0..st.v.len() {
        let row = &v[k * n..(k + 1) * n];
        let r1 = row.iter().sum::<f64>() - st.m[k] + rho * st.mu[k];
        total += r1 * r1;
        for (j, x) in row.iter().enumerate() {
            let vt = st.v_tilde[k][j];
            let r2 = x - vt + rho * st.delta[k][j];
            let r3 = x * (1.0 - vt) + rho * st.lambda[k][j];
            total += r2 * r2 + r3 * r3;
        }
    }
    total / (2.0 * rho)
}

fn v_penalty_gradient(st: &PddState, v: &[f64], n: usize, g: &mut [f64]) {
    let rho = st.rho;
    for k in 0..st.v.len() {
        let row = &v[k * n..(k + 1) * n];
        let r1 = (row.iter().sum::<f64>() - st.m[k] + rho * st.mu[k]) / rho;
        for (j, x) in row.iter().enumerate() {
            let vt = st.v_tilde[k][j];
            let r2 = (x - vt + rho * st.delta[k][j]) / rho;
            let r3 = (x * (1.0 - vt) + rho * st.lambda[k][j]) / rho;
            g[k * n + j] -= r1 + r2 + r3 * (1.0 - vt);
        }
    }
}

/// Concave minorant of the penalized objective in `M`, tight at the state's `M`.
pub struct MSurrogate<'a> {
    problem: &'a PddProblem<'a>,
    state: &'a PddState,
    psi: Vec<Vec<f64>>,
    b_hat: Vec<f64>,
}

impl<'a> MSurrogate<'a> {
    pub fn new(problem: &'a PddProblem<'a>, state: &'a PddState) -> Self {
        let psi = problem.eff.psi(&state.v);
        let k = psi.len();
        let b_hat =
            (0..k).map(|u| (0..k).filter(|&i| i != u).map(|i| state.p[i] * psi[u][i] / state.m[i]).sum()).collect();
        Self { problem, state, psi, b_hat }
    }

    /// Tangent of `1/M` at the linearization point.
    pub fn xi_lb(&self, i: usize, m: f64) -> f64 {
        let mh = self.state.m[i];
        1.0 / mh - (m - mh) / (mh * mh)
    }

    fn sums(&self, m: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = m.len();
        let p = &self.state.p;
        let mut a = vec![0.0; k];
        let mut b = vec![0.0; k];
        for u in 0..k {
            for i in 0..k {
                a[u] += p[i] * self.psi[u][i] * self.xi_lb(i, m[i]);
                if i != u {
                    b[u] += p[i] * self.psi[u][i] / m[i];
                }
            }
        }
        (a, b)
    }

    pub fn value(&self, m: &[f64]) -> f64 {
        let pr = self.problem;
        let st = self.state;
        let (a, b) = self.sums(m);
        let mut total = 0.0;
        for u in 0..m.len() {
            if a[u] + pr.noise <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let bh = self.b_hat[u] + pr.noise;
            let zeta_ub = bh.log2() + (b[u] - self.b_hat[u]) / (bh * LN_2);
            total += pr.weights[u] * ((a[u] + pr.noise).log2() - zeta_ub);
            let r = st.v[u].iter().sum::<f64>() - m[u] + st.rho * st.mu[u];
            total -= r * r / (2.0 * st.rho);
        }
        total
    }

    pub fn gradient(&self, m: &[f64]) -> Vec<f64> {
        let pr = self.problem;
        let st = self.state;
        let k = m.len();
        let (a, _) = self.sums(m);
        let mut g = vec![0.0; k];
        for u in 0..k {
            let ca = pr.weights[u] / ((a[u] + pr.noise) * LN_2);
            let cb = pr.weights[u] / ((self.b_hat[u] + pr.noise) * LN_2);
            for i in 0..k {
                let mh = st.m[i];
                g[i] -= ca * st.p[i] * self.psi[u][i] / (mh * mh);
                if i != u {
                    g[i] += cb * st.p[i] * self.psi[u][i] / (m[i] * m[i]);
                }
            }
            let r = st.v[u].iter().sum::<f64>() - m[u] + st.rho * st.mu[u];
            g[u] += r / st.rho;
        }
        g
    }
}

fn block_options(config: &PddConfig, scale: f64) -> AscentOptions {
    AscentOptions { max_iter: config.block_max_iter, scale, ..AscentOptions::default() }
}

fn blow_up(context: &'static str, detail: String) -> Error {
    Error::NumericalBlowUp { context, detail }
}

/// Maximizes the `v` surrogate over `[0, 1]^{K x N}`.
pub fn inner_update_v(problem: &PddProblem, state: &mut PddState, config: &PddConfig) -> Result<()> {
    let n = problem.eff.num_antennas();
    let x0: Vec<f64> = state.v.iter().flatten().copied().collect();
    let res = {
        let sur = VSurrogate::new(problem, state);
        let f0 = sur.value(&x0);
        if !f0.is_finite() {
            return Err(blow_up("inner_update_v", format!("surrogate {f0} at the linearization point")));
        }
        projected_ascent(x0, |x| sur.value(x), |x| sur.gradient(x), |x| project_box(x, 0.0, 1.0), &block_options(config, 1.0))
    };
    if !res.value.is_finite() {
        return Err(blow_up("inner_update_v", format!("surrogate {}", res.value)));
    }
    for (k, row) in state.v.iter_mut().enumerate() {
        row.copy_from_slice(&res.x[k * n..(k + 1) * n]);
    }
    Ok(())
}

/// Closed-form minimizer of `L2 + L3` in `v~`.
pub fn inner_update_vtilde(state: &mut PddState) {
    let rho = state.rho;
    for k in 0..state.v.len() {
        for n in 0..state.v[k].len() {
            let v = state.v[k][n];
            state.v_tilde[k][n] =
                (v + v * v + rho * state.delta[k][n] + rho * state.lambda[k][n] * v) / (1.0 + v * v);
        }
    }
}

/// Maximizes the `M` surrogate over `[m_floor, N]^K`.
pub fn inner_update_m(problem: &PddProblem, state: &mut PddState, config: &PddConfig) -> Result<()> {
    let n = problem.eff.num_antennas() as f64;
    let lo = config.m_floor.min(n);
    let x0: Vec<f64> = state.m.iter().map(|m| m.clamp(lo, n)).collect();
    let res = {
        let sur = MSurrogate::new(problem, state);
        projected_ascent(x0, |x| sur.value(x), |x| sur.gradient(x), |x| project_box(x, lo, n), &block_options(config, n))
    };
    if !res.value.is_finite() {
        return Err(blow_up("inner_update_m", format!("surrogate {}", res.value)));
    }
    state.m = res.x;
    Ok(())
}

/// SCA power allocation on the continuous effective gains, started from the
/// current powers.
pub fn inner_update_p(problem: &PddProblem, state: &mut PddState, config: &PddConfig) -> Result<()> {
    let gains = problem.eff.gains(&state.v, &state.m);
    let pp = PowerProblem::new(&gains, problem.noise, problem.budget, problem.weights)?;
    let init = PowerVector::new(state.p.clone(), problem.budget)?;
    let cfg = PowerSolverConfig { multi_start: false, ..config.power.clone() };
    let (p, _) = sca_power_alloc(&pp, &cfg, &init)?;
    state.p = p.powers().to_vec();
    Ok(())
}

/// Dual ascent step and penalty shrink. Returns the violation `g` of the
/// state before the update.
pub fn outer_update(state: &mut PddState, penalty_scale: f64) -> f64 {
    let g = state.violation();
    let inv = 1.0 / state.rho;
    for k in 0..state.v.len() {
        for n in 0..state.v[k].len() {
            let (v, vt) = (state.v[k][n], state.v_tilde[k][n]);
            state.lambda[k][n] += inv * v * (1.0 - vt);
            state.delta[k][n] += inv * (v - vt);
        }
        state.mu[k] += inv * (state.v[k].iter().sum::<f64>() - state.m[k]);
    }
    state.rho *= penalty_scale;
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub outer_iter: usize,
    pub rho: f64,
    pub g: f64,
    pub sum_rate: f64,
    pub weighted_sum_rate: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub inner_sweeps: usize,
    /// Penalized objective after each inner sweep.
    pub inner_objective: Vec<f64>,
    /// Largest relative decrease of the penalized objective across any block
    /// update in this outer iteration (0 when monotone).
    pub max_block_drop: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PddTrace {
    pub outer: Vec<OuterRecord>,
}

impl PddTrace {
    pub fn violations(&self) -> Vec<f64> {
        self.outer.iter().map(|r| r.g).collect()
    }

    pub fn max_block_drop(&self) -> f64 {
        self.outer.iter().map(|r| r.max_block_drop).fold(0.0, f64::max)
    }

    /// CSV with columns `outer_iter,rho,g,sum_rate,L1,L2,L3`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "outer_iter,rho,g,sum_rate,L1,L2,L3")?;
        for r in &self.outer {
            writeln!(
                w,
                "{},{:.6e},{:.6e},{:.9},{:.6e},{:.6e},{:.6e}",
                r.outer_iter, r.rho, r.g, r.sum_rate, r.l1, r.l2, r.l3
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PddResult {
    pub masks: Vec<SelectionMask>,
    pub powers: PowerVector,
    pub state: PddState,
    pub trace: PddTrace,
    pub converged: bool,
    /// Weighted sum rate of the relaxed final state.
    pub relaxed_weighted_sum_rate: f64,
    /// Rates of the binarized masks with re-optimized powers, on the channels
    /// the solver was given.
    pub report: RateReport,
}

/// Thresholds `v` at 0.5; a user left with fewer than `min_active` antennas
/// gets its largest-`v` antennas switched on.
pub fn binarize(v: &[Vec<f64>], min_active: usize) -> Vec<SelectionMask> {
    v.iter()
        .map(|row| {
            let mut mask = SelectionMask::from_bits(row.iter().map(|x| *x >= 0.5).collect());
            let need = min_active.min(row.len());
            if mask.active_count() < need {
                let mut idx: Vec<usize> = (0..row.len()).collect();
                idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
                for &i in &idx {
                    if mask.active_count() >= need {
                        break;
                    }
                    mask.set(i, true);
                }
            }
            mask
        })
        .collect()
}

fn block_drop(before: f64, after: f64) -> f64 {
    ((before - after) / before.abs().max(1.0)).max(0.0)
}

/// One inner sweep `v -> v~ -> M -> P`. Returns the objective after the sweep
/// and the largest relative block-wise decrease.
pub fn inner_sweep(problem: &PddProblem, state: &mut PddState, config: &PddConfig) -> Result<(f64, f64)> {
    let mut f = problem.penalized_objective(state)?;
    let mut drop = 0.0f64;
    inner_update_v(problem, state, config)?;
    let f_v = problem.penalized_objective(state)?;
    drop = drop.max(block_drop(f, f_v));
    f = f_v;
    inner_update_vtilde(state);
    let f_t = problem.penalized_objective(state)?;
    drop = drop.max(block_drop(f, f_t));
    f = f_t;
    inner_update_m(problem, state, config)?;
    let f_m = problem.penalized_objective(state)?;
    drop = drop.max(block_drop(f, f_m));
    f = f_m;
    if config.optimize_power {
        inner_update_p(problem, state, config)?;
        let f_p = problem.penalized_objective(state)?;
        drop = drop.max(block_drop(f, f_p));
        f = f_p;
    }
    if !f.is_finite() {
        return Err(blow_up("inner_sweep", format!("penalized objective {f}")));
    }
    Ok((f, drop))
}

fn final_power(
    gains: &LinkGains,
    noise: f64,
    budget: f64,
    weights: &[f64],
    start: &[f64],
    config: &PddConfig,
) -> Result<PowerVector> {
    if !config.optimize_power {
        return PowerVector::equal_split(weights.len(), budget);
    }
    let pp = PowerProblem::new(gains, noise, budget, weights)?;
    let init = PowerVector::new(start.to_vec(), budget)?;
    Ok(sca_power_alloc(&pp, &config.power, &init)?.0)
}

/// Runs the full two-layer algorithm on `channels` (the channels the
/// transmitter believes in) and returns binary masks with powers.
pub fn pdd_solve(
    channels: &[ChannelVector],
    weights: &[f64],
    budget: f64,
    noise: f64,
    config: &PddConfig,
) -> Result<PddResult> {
    config.validate()?;
    let eff = build_effective_vectors(channels)?;
    let (k, n) = (eff.num_users(), eff.num_antennas());
    let problem = PddProblem { eff: &eff, weights, noise, budget };
    let mut state = PddState::initial(k, n, budget, config.rho0);
    problem.check(&state)?;

    let mut trace = PddTrace::default();
    let mut converged = false;
    let mut best: Option<(f64, Vec<SelectionMask>, Vec<f64>)> = None;
    for outer_iter in 0..config.max_outer {
        let mut inner_objective = Vec::new();
        let mut max_drop = 0.0f64;
        let mut prev = problem.penalized_objective(&state)?;
        for _ in 0..config.max_inner {
            let (f, drop) = inner_sweep(&problem, &mut state, config)?;
            max_drop = max_drop.max(drop);
            inner_objective.push(f);
            let change = (f - prev).abs() / prev.abs().max(1.0);
            prev = f;
            if change < config.inner_tol {
                break;
            }
        }
        let (l1, l2, l3) = penalty_terms(&state)?;
        let report = problem.rate_report(&state);
        let rho = state.rho;
        let g = outer_update(&mut state, config.penalty_scale);
        trace.outer.push(OuterRecord {
            outer_iter,
            rho,
            g,
            sum_rate: report.sum_rate,
            weighted_sum_rate: report.weighted_sum_rate,
            l1,
            l2,
            l3,
            inner_sweeps: inner_objective.len(),
            inner_objective,
            max_block_drop: max_drop,
        });

        let masks = binarize(&state.v, config.min_active);
        let gains = link_gains_checked(channels, &masks)?;
        let wsr = gains.weighted_sum_rate(&state.p, noise, weights);
        if best.as_ref().map_or(true, |(b, _, _)| wsr > *b) {
            best = Some((wsr, masks, state.p.clone()));
        }
        if g <= config.tol {
            converged = true;
            break;
        }
    }

    let relaxed_weighted_sum_rate = problem.weighted_rate(&state);
    let (masks, start) = if converged {
        (binarize(&state.v, config.min_active), state.p.clone())
    } else {
        let (_, m, p) = best.expect("at least one outer iteration");
        (m, p)
    };
    let gains = link_gains_checked(channels, &masks)?;
    let powers = final_power(&gains, noise, budget, weights, &start, config)?;
    let report = gains.report(powers.powers(), noise).with_weights(weights);
    Ok(PddResult { masks, powers, state, trace, converged, relaxed_weighted_sum_rate, report })
}

fn link_gains_checked(channels: &[ChannelVector], masks: &[SelectionMask]) -> Result<LinkGains> {
    link_gains(channels, masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{los_channel, ArrayGeometry, UserSpec};
    use crate::metrics::masked_amplitude;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn channels(n: usize, users: &[(f64, f64)]) -> Vec<ChannelVector> {
        let g = ArrayGeometry::new(n, 30e9).unwrap();
        let beta = g.free_space_reference_gain();
        users.iter().map(|&(t, r)| los_channel(&g, &UserSpec::new(&g, t, r).unwrap(), beta).unwrap()).collect()
    }

    fn random_state(rng: &mut ChaCha8Rng, k: usize, n: usize, budget: f64) -> PddState {
        let mut row = |lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
        let v = (0..k).map(|_| row(0.05, 0.95)).collect();
        let v_tilde = (0..k).map(|_| row(-0.2, 1.2)).collect();
        let delta = (0..k).map(|_| row(-1e-3, 1e-3)).collect();
        let lambda = (0..k).map(|_| row(-1e-3, 1e-3)).collect();
        let m = (0..k).map(|_| rng.gen_range(1.0..n as f64)).collect();
        let mut p: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x *= 0.9 * budget / s);
        let mu = (0..k).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
        PddState { v, v_tilde, m, p, mu, delta, lambda, rho: rng.gen_range(1.0..100.0) }
    }

    #[test]
    fn effective_vectors_match_masked_products() {
        let chans = channels(16, &[(0.1, 3.0), (-0.3, 80.0)]);
        let eff = build_effective_vectors(&chans).unwrap();
        let w = mrt_weights(&chans);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let mask = SelectionMask::from_bits((0..16).map(|_| rng.gen_bool(0.5)).collect());
            for k in 0..2 {
                for i in 0..2 {
                    let direct = masked_amplitude(&chans[k].entries, &mask, &w[i]);
                    let via = eff.amplitude(k, i, &mask.as_f64());
                    assert!((direct - via).norm() <= 1e-14 * direct.norm().max(1e-300) + 1e-20);
                }
            }
        }
        let ones = vec![1.0; 16];
        let full: Complex64 = chans[0].entries.iter().zip(&w[1]).map(|(h, x)| h.conj() * x).sum();
        assert!((eff.amplitude(0, 1, &ones) - full).norm() < 1e-14 * full.norm());
        let mut e = vec![0.0; 16];
        e[5] = 1.0;
        assert_eq!(eff.amplitude(1, 0, &e), chans[1].entries[5].conj() * w[0][5]);
    }

    #[test]
    fn penalty_values() {
        let mut st = PddState::initial(2, 4, 1.0, 800.0);
        st.v[1] = vec![1.0, 0.0, 1.0, 0.0];
        st.v_tilde[1] = st.v[1].clone();
        st.m[1] = 2.0;
        assert_eq!(penalty_terms(&st).unwrap(), (0.0, 0.0, 0.0));
        st.v_tilde[0][2] = 0.0;
        let (l1, l2, _) = penalty_terms(&st).unwrap();
        assert_eq!(l1, 0.0);
        assert!((l2 - 1.0 / 1600.0).abs() < 1e-18);
        st.rho = 0.0;
        assert!(penalty_terms(&st).is_err());
    }

    #[test]
    fn penalty_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let st = random_state(&mut rng, 3, 7, 1.0);
        let (l1, l2, l3) = penalty_terms(&st).unwrap();
        let (mut e1, mut e2, mut e3) = (0.0, 0.0, 0.0);
        for k in 0..3 {
            let mut s = 0.0;
            for n in 0..7 {
                s += st.v[k][n];
                e2 += (st.v[k][n] - st.v_tilde[k][n] + st.rho * st.delta[k][n]).powi(2);
                e3 += (st.v[k][n] * (1.0 - st.v_tilde[k][n]) + st.rho * st.lambda[k][n]).powi(2);
            }
            e1 += (s - st.m[k] + st.rho * st.mu[k]).powi(2);
        }
        let d = 2.0 * st.rho;
        assert!((l1 - e1 / d).abs() < 1e-12 && (l2 - e2 / d).abs() < 1e-12 && (l3 - e3 / d).abs() < 1e-12);
    }

    #[test]
    fn vtilde_closed_form() {
        let mut st = PddState::initial(1, 3, 1.0, 50.0);
        st.v[0] = vec![0.0, 1.0, 0.4];
        st.delta[0] = vec![0.01, 0.0, 0.002];
        inner_update_vtilde(&mut st);
        assert!((st.v_tilde[0][0] - 0.5).abs() < 1e-15);
        assert_eq!(st.v_tilde[0][1], 1.0);
        // numeric minimizer: bisection on the derivative of the scalar quadratic
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (v, d, l, rho) = (rng.gen_range(0.0..1.0), rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01), rng.gen_range(0.1..100.0));
            let deriv = |t: f64| -2.0 * (v - t + rho * d) - 2.0 * v * (v * (1.0 - t) + rho * l);
            let (mut lo, mut hi) = (-10.0, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if deriv(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let mut s = PddState::initial(1, 1, 1.0, rho);
            s.v[0][0] = v;
            s.delta[0][0] = d;
            s.lambda[0][0] = l;
            inner_update_vtilde(&mut s);
            assert!((s.v_tilde[0][0] - 0.5 * (lo + hi)).abs() < 1e-8);
        }
    }

    #[test]
    fn outer_update_rules() {
        let mut st = PddState::initial(2, 4, 1.0, 800.0);
        let before = st.clone();
        let g = outer_update(&mut st, 0.6);
        assert_eq!(g, 0.0);
        assert_eq!((st.mu.clone(), st.delta.clone(), st.lambda.clone()), (before.mu, before.delta, before.lambda));
        assert!((st.rho - 480.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut st = random_state(&mut rng, 3, 5, 1.0);
        let mut scan = 0.0f64;
        for k in 0..3 {
            for n in 0..5 {
                let (v, t) = (st.v[k][n], st.v_tilde[k][n]);
                scan = scan.max((v * (1.0 - t)).abs()).max((v - t).abs());
            }
            scan = scan.max((st.v[k].iter().sum::<f64>() - st.m[k]).abs());
        }
        let old = st.clone();
        assert_eq!(outer_update(&mut st, 0.6), scan);
        let (v, t) = (old.v[1][2], old.v_tilde[1][2]);
        assert!((st.delta[1][2] - old.delta[1][2] - (v - t) / old.rho).abs() < 1e-15);
        assert!((st.lambda[1][2] - old.lambda[1][2] - v * (1.0 - t) / old.rho).abs() < 1e-15);
    }

    fn fd_check(value: &dyn Fn(&[f64]) -> f64, grad: &[f64], x: &[f64]) {
        for j in 0..x.len() {
            let h = 1e-6 * x[j].abs().max(1e-2);
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[j] += h;
            dn[j] -= h;
            let fd = (value(&up) - value(&dn)) / (2.0 * h);
            let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            assert!((fd - grad[j]).abs() <= 1e-5 * scale.max(1e-12), "j={j}: fd {fd} vs {}", grad[j]);
        }
    }

    #[test]
    fn surrogates_tight_and_gradients_match() {
        let chans = channels(12, &[(0.0, 3.0), (0.2, 60.0), (-0.4, 8.0)]);
        let eff = build_effective_vectors(&chans).unwrap();
        let weights = [1.0, 0.7, 1.3];
        let problem = PddProblem { eff: &eff, weights: &weights, noise: 1e-11, budget: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let st = random_state(&mut rng, 3, 12, 1.0);
            let vs = VSurrogate::new(&problem, &st);
            let flat: Vec<f64> = st.v.iter().flatten().copied().collect();
            let exact = problem.penalized_objective(&st).unwrap();
            assert!((vs.value(&flat) - exact).abs() < 1e-9 * exact.abs().max(1.0));
            let x: Vec<f64> = flat.iter().map(|v| (v + rng.gen_range(-0.05..0.05)).clamp(0.01, 0.99)).collect();
            fd_check(&|z| vs.value(z), &vs.gradient(&x), &x);
            let ms = MSurrogate::new(&problem, &st);
            assert!((ms.value(&st.m) - (exact + penalty_terms(&st).unwrap().1 + penalty_terms(&st).unwrap().2)).abs() < 1e-9 * exact.abs().max(1.0));
            assert_eq!(ms.xi_lb(0, st.m[0]), 1.0 / st.m[0]);
            let m: Vec<f64> = st.m.iter().map(|m| m * rng.gen_range(0.8..1.2)).collect();
            fd_check(&|z| ms.value(z), &ms.gradient(&m), &m);
        }
    }

    #[test]
    fn v_block_matches_restricted_grid() {
        let chans = channels(8, &[(0.0, 2.0), (0.15, 40.0)]);
        let eff = build_effective_vectors(&chans).unwrap();
        let weights = [1.0, 1.0];
        let problem = PddProblem { eff: &eff, weights: &weights, noise: 1e-11, budget: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let st = random_state(&mut rng, 2, 8, 1.0);
        let sur = VSurrogate::new(&problem, &st);
        let free = [0usize, 3, 8 + 1, 8 + 6];
        let base: Vec<f64> = st.v.iter().flatten().copied().collect();
        let fixed = base.clone();
        let res = projected_ascent(
            base.clone(),
            |x| sur.value(x),
            |x| sur.gradient(x),
            |x| {
                for (j, xj) in x.iter_mut().enumerate() {
                    *xj = if free.contains(&j) { xj.clamp(0.0, 1.0) } else { fixed[j] };
                }
            },
            &AscentOptions { max_iter: 2000, ..Default::default() },
        );
        let mut best = f64::NEG_INFINITY;
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let mut x = base.clone();
        for a in &grid {
            for b in &grid {
                for c in &grid {
                    for d in &grid {
                        x[free[0]] = *a;
                        x[free[1]] = *b;
                        x[free[2]] = *c;
                        x[free[3]] = *d;
                        best = best.max(sur.value(&x));
                    }
                }
            }
        }
        assert!(res.value >= best - 1e-4, "ascent {} grid {}", res.value, best);
    }

    #[test]
    fn m_block_matches_grid() {
        let chans = channels(16, &[(0.0, 2.0), (0.1, 50.0)]);
        let eff = build_effective_vectors(&chans).unwrap();
        let weights = [1.0, 1.0];
        let problem = PddProblem { eff: &eff, weights: &weights, noise: 1e-11, budget: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut st = random_state(&mut rng, 2, 16, 1.0);
        st.rho = 5.0;
        let sur = MSurrogate::new(&problem, &st);
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        let steps = 1550;
        for i in 0..=steps {
            for j in 0..=steps {
                let m = [0.5 + 15.5 * i as f64 / steps as f64, 0.5 + 15.5 * j as f64 / steps as f64];
                let v = sur.value(&m);
                if v > best.0 {
                    best = (v, m[0], m[1]);
                }
            }
        }
        let mut st2 = st.clone();
        inner_update_m(&problem, &mut st2, &PddConfig::default()).unwrap();
        assert!((st2.m[0] - best.1).abs() < 0.05 && (st2.m[1] - best.2).abs() < 0.05, "{:?} vs {:?}", st2.m, best);
    }

    #[test]
    fn single_user_keeps_full_array() {
        let chans = channels(16, &[(0.1, 5.0)]);
        let res = pdd_solve(&chans, &[1.0], 1.0, 1e-11, &PddConfig::default()).unwrap();
        assert_eq!(res.masks[0], SelectionMask::full(16));
        assert!((res.powers.powers()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_user_run_is_monotone_and_feasible() {
        let chans = channels(12, &[(0.0, 1.5), (0.05, 40.0)]);
        let res = pdd_solve(&chans, &[1.0, 1.0], 1.0, 1e-11, &PddConfig::default()).unwrap();
        assert!(res.trace.max_block_drop() <= 1e-8, "drop {}", res.trace.max_block_drop());
        for m in &res.masks {
            assert!(m.active_count() >= 1);
        }
        assert!(res.powers.total() <= 1.0 + 1e-9);
        let mut buf = Vec::new();
        res.trace.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("outer_iter,rho,g,sum_rate,L1,L2,L3\n"));
    }

    #[test]
    fn binarize_rules() {
        let m = binarize(&[vec![0.2, 0.7, 0.5], vec![0.1, 0.3, 0.2]], 1);
        assert_eq!(m[0].bits(), &[false, true, true]);
        assert_eq!(m[1].bits(), &[false, true, false]);
        let m = binarize(&[vec![0.1, 0.3, 0.2]], 2);
        assert_eq!(m[0].bits(), &[false, true, true]);
    }
}

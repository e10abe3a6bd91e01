//! Quasi-in-phase greedy antenna deactivation.
//!
//! Removing antenna n from user k's beam subtracts its contribution
//! `z_n = conj(h_victim[n]) * w_k[n]` from the aggregate correlation. The
//! greedy rules repeatedly drop the antenna whose contribution best cancels
//! the aggregate, which shrinks the interference coupling roughly linearly
//! in the number of removed antennas until it hits a residual floor.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::ChannelVector;
use crate::error::{invalid, Error, Result};
use crate::metrics::{mrt_weights, SelectionMask};

/// Entrywise `conj(victim[n]) * own[n]`.
pub fn correlation_contributions(victim: &[Complex64], own: &[Complex64]) -> Result<Vec<Complex64>> {
    if victim.len() != own.len() {
        return Err(invalid("contribution vectors must have equal length"));
    }
    Ok(victim.iter().zip(own).map(|(v, w)| v.conj() * w).collect())
}

/// Contributions of user `own`'s unit steering against the other user's
/// channel, normalized so that `|c_n| = 1/N` under LoS. With these,
/// `(N / sqrt(M)) |sum c_n|` is the coupling of `own` divided by `|gain_victim|`.
pub fn two_user_contributions(channels: &[ChannelVector], own: usize) -> Result<Vec<Complex64>> {
    if channels.len() != 2 || own > 1 {
        return Err(invalid("two-user contributions need exactly two channels"));
    }
    let victim = &channels[1 - own];
    let n = victim.len() as f64;
    let scale = n.sqrt() * victim.gain.norm();
    if !(scale > 0.0) {
        return Err(invalid("victim channel has zero gain"));
    }
    let v: Vec<Complex64> = victim.entries.iter().map(|h| h / scale).collect();
    correlation_contributions(&v, &channels[own].steering)
}

/// Greedy removal record. `coupling[l]` is the coupling with `l` antennas
/// removed, i.e. with `order[..l]` deactivated.
#[derive(Debug, Clone, PartialEq)]
pub struct DeactivationTrajectory {
    num_antennas: usize,
    pub order: Vec<usize>,
    pub coupling: Vec<f64>,
    /// Two-user rule only: wrapped phase gap between the aggregate and the
    /// removed contribution at each step.
    pub phase_gaps: Vec<f64>,
}

impl DeactivationTrajectory {
    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    /// Number of removals performed.
    pub fn steps(&self) -> usize {
        self.order.len()
    }

    pub fn mask_at(&self, removed: usize) -> Result<SelectionMask> {
        if removed > self.order.len() {
            return Err(invalid(format!("trajectory has only {} removals", self.order.len())));
        }
        let mut mask = SelectionMask::full(self.num_antennas);
        for &n in &self.order[..removed] {
            mask.set(n, false);
        }
        Ok(mask)
    }

    pub fn final_mask(&self) -> SelectionMask {
        self.mask_at(self.order.len()).expect("in range")
    }

    /// Step with the smallest coupling among those leaving at least
    /// `min_active` antennas; ties go to the fewest removals.
    pub fn best_step(&self, min_active: usize) -> usize {
        let max_removed = self.num_antennas.saturating_sub(min_active.max(1));
        let mut best = 0;
        for l in 1..self.coupling.len().min(max_removed + 1) {
            if self.coupling[l] < self.coupling[best] {
                best = l;
            }
        }
        best
    }

    pub fn min_coupling(&self) -> f64 {
        self.coupling.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// First step whose coupling is at or below `target`.
    pub fn steps_to_reach(&self, target: f64) -> Option<usize> {
        self.coupling.iter().position(|&c| c <= target)
    }

    /// CSV with columns `step,coupling,removed_index`; the removed index is the
    /// antenna dropped after that step (empty on the last row).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,coupling,removed_index")?;
        for (l, c) in self.coupling.iter().enumerate() {
            match self.order.get(l) {
                Some(n) => writeln!(w, "{l},{c:.12e},{n}")?,
                None => writeln!(w, "{l},{c:.12e},")?,
            }
        }
        Ok(())
    }
}

/// Absolute phase difference wrapped to [0, pi].
pub fn phase_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        2.0 * PI - d
    } else {
        d
    }
}

const TIE_TOL: f64 = 1e-12;

/// Two-user rule: remove the active antenna whose contribution phase is
/// closest to the aggregate `s`, until `target_active` antennas remain.
/// Records `I(l) = (N / sqrt(N - l)) |s(l)|`.
pub fn greedy_deactivate_two_user(c: &[Complex64], target_active: usize) -> Result<DeactivationTrajectory> {
    let n = c.len();
    if n == 0 || target_active == 0 || target_active > n {
        return Err(invalid(format!("target_active must lie in [1, {n}], got {target_active}")));
    }
    let nf = n as f64;
    let mut active = vec![true; n];
    let mut s: Complex64 = c.iter().sum();
    let mut order = Vec::with_capacity(n - target_active);
    let mut coupling = Vec::with_capacity(n - target_active + 1);
    let mut phase_gaps = Vec::with_capacity(n - target_active);
    coupling.push(nf / nf.sqrt() * s.norm());

    for l in 0..(n - target_active) {
        let arg_s = s.arg();
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, ci) in c.iter().enumerate() {
            if !active[i] {
                continue;
            }
            let d = phase_distance(arg_s, ci.arg());
            let resid = (s - ci).norm();
            let better = match best {
                None => true,
                Some((_, bd, br)) => d < bd - TIE_TOL || (d <= bd + TIE_TOL && resid < br - TIE_TOL),
            };
            if better {
                best = Some((i, d, resid));
            }
        }
        let (i, d, _) = best.expect("active antenna remains");
        active[i] = false;
        s -= c[i];
        order.push(i);
        phase_gaps.push(d);
        coupling.push(nf / (nf - l as f64 - 1.0).sqrt() * s.norm());
    }
    Ok(DeactivationTrajectory { num_antennas: n, order, coupling, phase_gaps })
}

/// First-order coupling reduction of one greedy step: `cos(gap) / sqrt(N - l)`.
pub fn lemma1_reduction(step: usize, phase_gap: f64, num_antennas: usize) -> Result<f64> {
    if step >= num_antennas {
        return Err(invalid("step must be below N"));
    }
    Ok(phase_gap.cos() / ((num_antennas - step) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub intercept: f64,
    /// Positive when the coupling decreases.
    pub slope: f64,
    /// Steps used, half-open.
    pub fit_range: (usize, usize),
    pub residual_rmse: f64,
}

impl DecayFit {
    pub fn eval(&self, step: f64) -> f64 {
        self.intercept - self.slope * step
    }
}

pub const DEFAULT_FLOOR_FRACTION: f64 = 0.1;

/// Least-squares line through `(l, I(l))` over the steps before the coupling
/// first falls below `floor_fraction * I(0)` (at least two points).
pub fn fit_linear_decay(traj: &DeactivationTrajectory, floor_fraction: f64) -> Result<DecayFit> {
    fit_linear_decay_values(&traj.coupling, floor_fraction)
}

pub fn fit_linear_decay_values(values: &[f64], floor_fraction: f64) -> Result<DecayFit> {
    if !(floor_fraction > 0.0 && floor_fraction <= 1.0) {
        return Err(invalid("floor fraction must lie in (0, 1]"));
    }
    if values.len() < 2 || values.iter().all(|v| *v == 0.0) || !(values[0] > 0.0) {
        return Err(Error::NoDecay);
    }
    let floor = floor_fraction * values[0];
    let end = values.iter().position(|&v| v < floor).unwrap_or(values.len()).max(2);
    let pts = &values[..end];
    let m = pts.len() as f64;
    let mean_x = (m - 1.0) / 2.0;
    let mean_y = pts.iter().sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (l, y) in pts.iter().enumerate() {
        let dx = l as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    let b = sxy / sxx;
    let intercept = mean_y - b * mean_x;
    let sse: f64 = pts.iter().enumerate().map(|(l, y)| (y - intercept - b * l as f64).powi(2)).sum();
    Ok(DecayFit { intercept, slope: -b, fit_range: (0, end), residual_rmse: (sse / m).sqrt() })
}

/// Inputs of the closed-form deactivation counts. Index 0 is user 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormInputs {
    pub num_antennas: usize,
    pub initial_coupling: [f64; 2],
    pub slope: [f64; 2],
    pub power: [f64; 2],
    /// `|h_k|^2`.
    pub gain_sq: [f64; 2],
    pub noise: f64,
}

impl ClosedFormInputs {
    fn validate(&self) -> Result<()> {
        let pos = |x: &[f64; 2]| x.iter().all(|v| *v > 0.0);
        if self.num_antennas == 0 || !pos(&self.slope) || !pos(&self.power) || !pos(&self.gain_sq) {
            return Err(invalid("slopes, powers and gains must be positive"));
        }
        if !(self.noise >= 0.0) || self.initial_coupling.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("noise and initial coupling must be nonnegative"));
        }
        Ok(())
    }

    /// Unrounded stationary points of the high-SINR sum rate.
    pub fn roots(&self) -> Result<[f64; 2]> {
        self.validate()?;
        let n = self.num_antennas as f64;
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            let a = self.slope[k];
            let lin = n - self.initial_coupling[k] / a;
            let victim_gain = self.gain_sq[1 - k];
            *o = n - (lin * lin + self.noise / (a * a * victim_gain * self.power[k])).sqrt();
        }
        Ok(out)
    }

    /// High-SINR sum rate `R1 + R2` with `l1`, `l2` antennas removed.
    pub fn approx_sum_rate(&self, removed: [f64; 2]) -> f64 {
        let n = self.num_antennas as f64;
        (0..2)
            .map(|k| {
                let j = 1 - k;
                let signal = self.power[k] * self.gain_sq[k] * (n - removed[k]);
                let resid = self.initial_coupling[j] - self.slope[j] * removed[j];
                let interf = self.power[j] * self.gain_sq[k] * resid * resid;
                (signal / (interf + self.noise)).log2()
            })
            .sum()
    }
}

/// Floor of the closed-form roots, clamped into `[0, N - 1]`.
pub fn closed_form_counts(inputs: &ClosedFormInputs) -> Result<(usize, usize)> {
    let roots = inputs.roots()?;
    let max = (inputs.num_antennas - 1) as f64;
    let round = |x: f64| x.floor().clamp(0.0, max) as usize;
    Ok((round(roots[0]), round(roots[1])))
}

/// Closed-form count of one user: `own` fit, own power, and the gain of the
/// user it interferes with.
pub fn closed_form_count(
    num_antennas: usize,
    initial_coupling: f64,
    slope: f64,
    own_power: f64,
    victim_gain_sq: f64,
    noise: f64,
) -> Result<usize> {
    let inputs = ClosedFormInputs {
        num_antennas,
        initial_coupling: [initial_coupling, initial_coupling],
        slope: [slope, slope],
        power: [own_power, own_power],
        gain_sq: [victim_gain_sq, victim_gain_sq],
        noise,
    };
    Ok(closed_form_counts(&inputs)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiUserSelection {
    pub mask: SelectionMask,
    pub trajectory: DeactivationTrajectory,
    pub best_step: usize,
}

/// Multi-user rule for user `k`: each step removes the active antenna that
/// minimizes `sum_i |S_i - z_{i,n}|` over the victims i, scanning every
/// candidate. Returns the prefix mask of least coupling with at least
/// `min_active` antennas.
pub fn greedy_deactivate_multi_user(
    k: usize,
    channels: &[ChannelVector],
    min_active: usize,
) -> Result<MultiUserSelection> {
    let users = channels.len();
    if users < 2 {
        return Err(invalid("multi-user greedy needs at least two users"));
    }
    if k >= users {
        return Err(invalid("user index out of range"));
    }
    let n = channels[k].len();
    if n == 0 || channels.iter().any(|c| c.len() != n) {
        return Err(invalid("channel lengths differ"));
    }
    let weights = mrt_weights(&channels[k..=k]);
    let w = &weights[0];
    let victims: Vec<Vec<Complex64>> = (0..users)
        .filter(|&i| i != k)
        .map(|i| correlation_contributions(&channels[i].entries, w))
        .collect::<Result<_>>()?;
    let mut sums: Vec<Complex64> = victims.iter().map(|z| z.iter().sum()).collect();
    let coupling_of = |sums: &[Complex64], m: usize| sums.iter().map(|s| s.norm()).sum::<f64>() / (m as f64).sqrt();

    let mut active = vec![true; n];
    let mut order = Vec::with_capacity(n - 1);
    let mut coupling = Vec::with_capacity(n);
    coupling.push(coupling_of(&sums, n));
    for l in 0..n - 1 {
        let mut best: Option<(usize, f64)> = None;
        for cand in (0..n).filter(|&c| active[c]) {
            let total: f64 = victims.iter().zip(&sums).map(|(z, s)| (s - z[cand]).norm()).sum();
            if best.map_or(true, |(_, b)| total < b) {
                best = Some((cand, total));
            }
        }
        let (cand, _) = best.expect("active antenna remains");
        active[cand] = false;
        for (s, z) in sums.iter_mut().zip(&victims) {
            *s -= z[cand];
        }
        order.push(cand);
        coupling.push(coupling_of(&sums, n - l - 1));
    }
    let trajectory = DeactivationTrajectory { num_antennas: n, order, coupling, phase_gaps: Vec::new() };
    let best_step = trajectory.best_step(min_active);
    let mask = trajectory.mask_at(best_step)?;
    Ok(MultiUserSelection { mask, trajectory, best_step })
}

/// Runs the multi-user rule for every user in parallel.
pub fn greedy_select_all(channels: &[ChannelVector], min_active: usize) -> Result<Vec<MultiUserSelection>> {
    (0..channels.len())
        .into_par_iter()
        .map(|k| greedy_deactivate_multi_user(k, channels, min_active))
        .collect()
}

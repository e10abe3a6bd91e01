//! MRT beams, achievable rates and interference coupling factors.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelVector;
use crate::error::{invalid, Result};

/// Per-user antenna activation vector (diagonal of the selection matrix).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionMask {
    bits: Vec<bool>,
}

impl SelectionMask {
    pub fn full(n: usize) -> Self {
        Self { bits: vec![true; n] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn from_active(n: usize, active: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = vec![false; n];
        for i in active {
            bits[i] = true;
        }
        Self { bits }
    }

    /// Bit `i` of `code` activates antenna `i`.
    pub fn from_code(n: usize, code: u64) -> Self {
        Self { bits: (0..n).map(|i| code >> i & 1 == 1).collect() }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_active(&self, n: usize) -> bool {
        self.bits[n]
    }

    pub fn set(&mut self, n: usize, on: bool) {
        self.bits[n] = on;
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Compact `0`/`1` string, antenna 0 first.
    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerVector {
    powers: Vec<f64>,
    budget: f64,
}

impl PowerVector {
    pub const RELATIVE_SLACK: f64 = 1e-9;

    pub fn new(powers: Vec<f64>, budget: f64) -> Result<Self> {
        if !(budget > 0.0) || !budget.is_finite() {
            return Err(invalid("power budget must be positive and finite"));
        }
        if powers.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(invalid("powers must be finite and nonnegative"));
        }
        let total: f64 = powers.iter().sum();
        if total > budget * (1.0 + Self::RELATIVE_SLACK) {
            return Err(invalid(format!("total power {total} exceeds budget {budget}")));
        }
        Ok(Self { powers, budget })
    }

    pub fn equal_split(num_users: usize, budget: f64) -> Result<Self> {
        if num_users == 0 {
            return Err(invalid("need at least one user"));
        }
        Self::new(vec![budget / num_users as f64; num_users], budget)
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn total(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub per_user_rate: Vec<f64>,
    pub per_user_sinr: Vec<f64>,
    pub sum_rate: f64,
    pub weighted_sum_rate: f64,
    /// `[k][i]`: power user k receives from user i's stream, zero on the diagonal.
    pub interference_matrix: Vec<Vec<f64>>,
}

impl RateReport {
    pub fn with_weights(mut self, weights: &[f64]) -> Self {
        self.weighted_sum_rate = self.per_user_rate.iter().zip(weights).map(|(r, w)| r * w).sum();
        self
    }
}

/// Effective power gains `g[k][i] = |h_k^H V_i w_i|^2 / M_i`: received power
/// at user k per watt allocated to user i.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    pub gains: Vec<Vec<f64>>,
}

impl LinkGains {
    pub fn num_users(&self) -> usize {
        self.gains.len()
    }

    pub fn report(&self, powers: &[f64], noise: f64) -> RateReport {
        let k = self.gains.len();
        let mut per_user_sinr = Vec::with_capacity(k);
        let mut per_user_rate = Vec::with_capacity(k);
        let mut interference_matrix = vec![vec![0.0; k]; k];
        for u in 0..k {
            let mut interf = 0.0;
            for i in 0..k {
                if i != u {
                    let p = powers[i] * self.gains[u][i];
                    interference_matrix[u][i] = p;
                    interf += p;
                }
            }
            let sinr = powers[u] * self.gains[u][u] / (interf + noise);
            per_user_sinr.push(sinr);
            per_user_rate.push((1.0 + sinr).log2());
        }
        let sum_rate = per_user_rate.iter().sum();
        RateReport { per_user_rate, per_user_sinr, sum_rate, weighted_sum_rate: sum_rate, interference_matrix }
    }

    pub fn weighted_sum_rate(&self, powers: &[f64], noise: f64, weights: &[f64]) -> f64 {
        let k = self.gains.len();
        (0..k)
            .map(|u| {
                let total: f64 = (0..k).map(|i| powers[i] * self.gains[u][i]).sum();
                let interf = total - powers[u] * self.gains[u][u];
                weights[u] * ((total + noise) / (interf + noise)).log2()
            })
            .sum()
    }
}

/// `w_k = sqrt(N) * s_k`, matched to the LoS steering component.
pub fn mrt_weights(channels: &[ChannelVector]) -> Vec<Vec<Complex64>> {
    channels
        .iter()
        .map(|ch| {
            let scale = (ch.steering.len() as f64).sqrt();
            ch.steering.iter().map(|s| s * scale).collect()
        })
        .collect()
}

/// `h^H V w` for the active antennas of `mask`.
pub fn masked_amplitude(h: &[Complex64], mask: &SelectionMask, w: &[Complex64]) -> Complex64 {
    h.iter()
        .zip(w)
        .zip(mask.bits())
        .filter(|(_, &on)| on)
        .map(|((a, b), _)| a.conj() * b)
        .sum()
}

fn check_shapes(channels: &[ChannelVector], masks: &[SelectionMask]) -> Result<()> {
    if channels.is_empty() {
        return Err(invalid("need at least one user"));
    }
    if channels.len() != masks.len() {
        return Err(invalid("one mask per user required"));
    }
    let n = channels[0].len();
    if channels.iter().any(|c| c.len() != n || c.steering.len() != n) || masks.iter().any(|m| m.len() != n) {
        return Err(invalid("channel and mask lengths differ"));
    }
    for (k, m) in masks.iter().enumerate() {
        if m.active_count() == 0 {
            return Err(invalid(format!("user {k} has no active antenna")));
        }
    }
    Ok(())
}

pub fn link_gains(channels: &[ChannelVector], masks: &[SelectionMask]) -> Result<LinkGains> {
    check_shapes(channels, masks)?;
    let weights = mrt_weights(channels);
    Ok(link_gains_with_weights(channels, masks, &weights))
}

pub(crate) fn link_gains_with_weights(
    channels: &[ChannelVector],
    masks: &[SelectionMask],
    weights: &[Vec<Complex64>],
) -> LinkGains {
    let k = channels.len();
    let gains = (0..k)
        .map(|u| {
            (0..k)
                .map(|i| {
                    let amp = masked_amplitude(&channels[u].entries, &masks[i], &weights[i]);
                    amp.norm_sqr() / masks[i].active_count() as f64
                })
                .collect()
        })
        .collect();
    LinkGains { gains }
}

fn check_noise(noise: f64) -> Result<()> {
    if !(noise > 0.0) {
        return Err(invalid("noise power must be positive"));
    }
    Ok(())
}

pub fn rate_full_array(channels: &[ChannelVector], powers: &PowerVector, noise: f64) -> Result<RateReport> {
    let n = channels.first().map(|c| c.len()).unwrap_or(0);
    let masks = vec![SelectionMask::full(n); channels.len()];
    rate_with_selection(channels, &masks, powers, noise)
}

pub fn rate_with_selection(
    channels: &[ChannelVector],
    masks: &[SelectionMask],
    powers: &PowerVector,
    noise: f64,
) -> Result<RateReport> {
    check_noise(noise)?;
    if powers.len() != channels.len() {
        return Err(invalid("one power per user required"));
    }
    let gains = link_gains(channels, masks)?;
    Ok(gains.report(powers.powers(), noise))
}

/// Interference coupling factor of user `k`:
/// `I_k = sum_{i != k} |h_i^H V_k w_k| / sqrt(M_k)`, with the per-victim summands.
pub fn interference_coupling(
    k: usize,
    channels: &[ChannelVector],
    masks: &[SelectionMask],
) -> Result<(f64, Vec<(usize, f64)>)> {
    if k >= channels.len() {
        return Err(invalid("user index out of range"));
    }
    check_shapes(channels, masks)?;
    let weights = mrt_weights(channels);
    let m = masks[k].active_count() as f64;
    let terms: Vec<(usize, f64)> = (0..channels.len())
        .filter(|&i| i != k)
        .map(|i| (i, masked_amplitude(&channels[i].entries, &masks[k], &weights[k]).norm() / m.sqrt()))
        .collect();
    Ok((terms.iter().map(|(_, t)| t).sum(), terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{far_field_steering, inner, los_channel, near_field_steering, ArrayGeometry, UserSpec};

    fn two_user(n: usize, far_theta: f64) -> (ArrayGeometry, Vec<ChannelVector>) {
        let g = ArrayGeometry::new(n, 30e9).unwrap();
        let beta = g.free_space_reference_gain();
        let near = UserSpec::new(&g, 0.0, 5.0).unwrap();
        let far = UserSpec::new(&g, far_theta, 150.0).unwrap();
        let chans = vec![los_channel(&g, &near, beta).unwrap(), los_channel(&g, &far, beta).unwrap()];
        (g, chans)
    }

    #[test]
    fn mrt_norms() {
        let (_, chans) = two_user(256, 0.05);
        for w in mrt_weights(&chans) {
            let e: f64 = w.iter().map(|z| z.norm_sqr()).sum();
            assert!((e - 256.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_user_rates() {
        let g = ArrayGeometry::new(32, 30e9).unwrap();
        let beta = g.free_space_reference_gain();
        let u = UserSpec::new(&g, 0.2, 1.0).unwrap();
        let ch = vec![los_channel(&g, &u, beta).unwrap()];
        let p = PowerVector::new(vec![0.5], 1.0).unwrap();
        let noise = 1e-11;
        let full = rate_full_array(&ch, &p, noise).unwrap();
        let hg = ch[0].gain.norm_sqr();
        let expected = (1.0 + 0.5 * hg * 32.0 / noise).log2();
        assert!((full.sum_rate - expected).abs() < 1e-9);
        let mask = SelectionMask::from_active(32, [0, 3, 4, 9, 20]);
        let sel = rate_with_selection(&ch, &[mask], &p, noise).unwrap();
        let expected = (1.0 + 0.5 * hg * 5.0 / noise).log2();
        assert!((sel.sum_rate - expected).abs() < 1e-9);
    }

    #[test]
    fn dirichlet_null_users_do_not_interfere() {
        let g = ArrayGeometry::new(256, 30e9).unwrap();
        let beta = g.free_space_reference_gain();
        let a = UserSpec::new(&g, 0.0, 200.0).unwrap();
        let b = UserSpec::new(&g, 2.0 / 256.0, 300.0).unwrap();
        let chans = vec![los_channel(&g, &a, beta).unwrap(), los_channel(&g, &b, beta).unwrap()];
        let p = PowerVector::new(vec![0.3, 0.7], 1.0).unwrap();
        let both = rate_full_array(&chans, &p, 1e-11).unwrap();
        for k in 0..2 {
            let single = rate_full_array(
                &chans[k..k + 1],
                &PowerVector::new(vec![p.powers()[k]], 1.0).unwrap(),
                1e-11,
            )
            .unwrap();
            assert!((both.per_user_rate[k] - single.sum_rate).abs() < 1e-9);
        }
        let full = vec![SelectionMask::full(256); 2];
        let (i0, _) = interference_coupling(0, &chans, &full).unwrap();
        assert!(i0 < 1e-12 * chans[1].gain.norm() * 256.0 + 1e-15);
    }

    #[test]
    fn loop_oracle_sinr() {
        let (_, chans) = two_user(10, 0.02);
        let masks = vec![
            SelectionMask::from_bits(vec![true, false, true, true, false, true, true, false, true, true]),
            SelectionMask::from_bits(vec![false, true, true, false, true, true, false, true, true, false]),
        ];
        let p = PowerVector::new(vec![0.4, 0.6], 1.0).unwrap();
        let noise = 1e-12;
        let rep = rate_with_selection(&chans, &masks, &p, noise).unwrap();
        let sq = (10f64).sqrt();
        let amp = |h: &ChannelVector, m: &SelectionMask, s: &[Complex64]| {
            let mut acc = Complex64::new(0.0, 0.0);
            for n in 0..10 {
                if m.bits()[n] {
                    acc += h.entries[n].conj() * s[n] * sq;
                }
            }
            acc.norm_sqr()
        };
        for k in 0..2 {
            let i = 1 - k;
            let mk = masks[k].active_count() as f64;
            let mi = masks[i].active_count() as f64;
            let sig = p.powers()[k] / mk * amp(&chans[k], &masks[k], &chans[k].steering);
            let int = p.powers()[i] / mi * amp(&chans[k], &masks[i], &chans[i].steering);
            let sinr = sig / (int + noise);
            assert!((rep.per_user_sinr[k] - sinr).abs() <= 1e-12 * sinr);
        }
    }

    #[test]
    fn two_user_coupling_reduction() {
        let (_, chans) = two_user(64, 0.01);
        let n = 64.0;
        let mask = SelectionMask::from_active(64, (0..64).filter(|i| i % 3 != 0));
        let masks = vec![SelectionMask::full(64), mask.clone()];
        let (i2, terms) = interference_coupling(1, &chans, &masks).unwrap();
        assert_eq!(terms.len(), 1);
        // strip |h_1|: I_2 = N / sqrt(M_2) |b^H V_2 a|
        let b = &chans[0].steering;
        let a = &chans[1].steering;
        let masked_a: Vec<Complex64> =
            a.iter().zip(mask.bits()).map(|(z, &on)| if on { *z } else { Complex64::new(0.0, 0.0) }).collect();
        let reduced = n / (mask.active_count() as f64).sqrt() * inner(b, &masked_a).norm();
        assert!((i2 / chans[0].gain.norm() - reduced).abs() < 1e-10 * reduced);
        let (i_single, t) = interference_coupling(0, &chans[..1], &masks[..1]).unwrap();
        assert_eq!(i_single, 0.0);
        assert!(t.is_empty());
    }

    #[test]
    fn fig2_correlation_by_summation() {
        let g = ArrayGeometry::new(256, 30e9).unwrap();
        let b = near_field_steering(&g, 0.0, 5.0).unwrap();
        for i in 0..5 {
            let a = far_field_steering(&g, 0.02 * i as f64).unwrap();
            let direct: Complex64 = b.iter().zip(&a).map(|(x, y)| x.conj() * y).sum();
            assert!((direct - inner(&b, &a)).norm() < 1e-14);
            assert!(direct.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (_, chans) = two_user(16, 0.1);
        let p = PowerVector::equal_split(2, 1.0).unwrap();
        assert!(rate_full_array(&chans, &p, 0.0).is_err());
        let masks = vec![SelectionMask::full(16), SelectionMask::from_bits(vec![false; 16])];
        assert!(rate_with_selection(&chans, &masks, &p, 1e-11).is_err());
        assert!(interference_coupling(1, &chans, &masks).is_err());
        assert!(PowerVector::new(vec![0.7, 0.7], 1.0).is_err());
        assert!(PowerVector::new(vec![-0.1, 0.5], 1.0).is_err());
    }
}

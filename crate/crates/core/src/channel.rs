//! Array geometry, steering vectors and downlink channel synthesis.
//!
//! Conventions: a steering vector `s` has unit norm, the LoS channel is
//! `h = sqrt(N) * gain * s`, and a received amplitude is the Hermitian inner
//! product `h^H w = sum_n conj(h_n) w_n`. With MRT weights `w = sqrt(N) s`
//! this gives `|h^H w|^2 = N^2 |gain|^2`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const SPEED_OF_LIGHT: f64 = 2.9979e8;
/// Constant in the effective Rayleigh distance `2 eps D^2 (1 - theta^2) / lambda`.
pub const RAYLEIGH_EPS: f64 = 0.367;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    num_antennas: usize,
    carrier_freq: f64,
    element_spacing: f64,
    wavelength: f64,
}

impl ArrayGeometry {
    /// Half-wavelength uniform linear array.
    pub fn new(num_antennas: usize, carrier_freq: f64) -> Result<Self> {
        if !(carrier_freq > 0.0) {
            return Err(invalid("carrier frequency must be positive"));
        }
        let wavelength = SPEED_OF_LIGHT / carrier_freq;
        Self::with_spacing(num_antennas, carrier_freq, wavelength / 2.0)
    }

    pub fn with_spacing(num_antennas: usize, carrier_freq: f64, element_spacing: f64) -> Result<Self> {
        if num_antennas == 0 {
            return Err(invalid("array needs at least one antenna"));
        }
        if !(carrier_freq > 0.0) || !(element_spacing > 0.0) {
            return Err(invalid("carrier frequency and element spacing must be positive"));
        }
        Ok(Self {
            num_antennas,
            carrier_freq,
            element_spacing,
            wavelength: SPEED_OF_LIGHT / carrier_freq,
        })
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn carrier_freq(&self) -> f64 {
        self.carrier_freq
    }

    pub fn element_spacing(&self) -> f64 {
        self.element_spacing
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn aperture(&self) -> f64 {
        (self.num_antennas as f64 - 1.0) * self.element_spacing
    }

    /// Element offsets `(2n - N - 1) / 2` for `n = 1..=N`, in units of the spacing.
    pub fn offsets(&self) -> Vec<f64> {
        let n = self.num_antennas as f64;
        (1..=self.num_antennas).map(|i| (2.0 * i as f64 - n - 1.0) / 2.0).collect()
    }

    /// Free-space reference gain `(lambda / 4 pi)^2` at 1 m.
    pub fn free_space_reference_gain(&self) -> f64 {
        (self.wavelength / (4.0 * PI)).powi(2)
    }

    pub fn rayleigh_distance(&self, theta: f64) -> Result<f64> {
        rayleigh_distance(self, theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldRegion {
    Near,
    Far,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    theta: f64,
    range: f64,
    region: FieldRegion,
    weight: f64,
}

impl UserSpec {
    /// `theta` is the spatial angle `sin(phi)`. The region is fixed here:
    /// near iff `range < Z(theta)`; users on the boundary count as far.
    pub fn new(geom: &ArrayGeometry, theta: f64, range: f64) -> Result<Self> {
        check_theta(theta)?;
        if !(range > 0.0) {
            return Err(invalid(format!("range must be positive, got {range}")));
        }
        let z = rayleigh_distance(geom, theta)?;
        let region = if range < z { FieldRegion::Near } else { FieldRegion::Far };
        Ok(Self { theta, range, region, weight: 1.0 })
    }

    /// Physical angle of departure `phi` in radians.
    pub fn from_polar(geom: &ArrayGeometry, phi: f64, range: f64) -> Result<Self> {
        Self::new(geom, phi.sin(), range)
    }

    pub fn with_weight(mut self, weight: f64) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(invalid("user weight must be finite and nonnegative"));
        }
        self.weight = weight;
        Ok(self)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn region(&self) -> FieldRegion {
        self.region
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn is_near(&self) -> bool {
        self.region == FieldRegion::Near
    }
}

/// Channel of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector {
    /// Full channel `h`, length N.
    pub entries: Vec<Complex64>,
    /// Unit-norm LoS steering vector of the user (what MRT matches).
    pub steering: Vec<Complex64>,
    /// LoS complex gain `sqrt(beta) / r * exp(-j 2 pi r / lambda)`.
    pub gain: Complex64,
}

impl ChannelVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn los_part(&self) -> Vec<Complex64> {
        let scale = (self.steering.len() as f64).sqrt() * self.gain;
        self.steering.iter().map(|s| scale * s).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiNormalization {
    /// Covariance `eps^2 ||h||^2 I_N`, so `E||dh||^2 = eps^2 N ||h||^2`.
    Literal,
    /// Covariance `eps^2 ||h||^2 / N * I_N`, so `E||dh||^2 = eps^2 ||h||^2`.
    #[default]
    PerEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiModel {
    pub eps: Vec<f64>,
    pub normalization: CsiNormalization,
}

impl CsiModel {
    pub fn perfect(num_users: usize) -> Self {
        Self { eps: vec![0.0; num_users], normalization: CsiNormalization::PerEntry }
    }

    pub fn uniform(num_users: usize, eps: f64, normalization: CsiNormalization) -> Self {
        Self { eps: vec![eps; num_users], normalization }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&theta) {
        return Err(invalid(format!("spatial angle {theta} outside [-1, 1]")));
    }
    Ok(())
}

pub fn rayleigh_distance(geom: &ArrayGeometry, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    let d = geom.aperture();
    Ok(2.0 * RAYLEIGH_EPS * d * d * (1.0 - theta * theta) / geom.wavelength())
}

pub fn near_field_steering(geom: &ArrayGeometry, theta: f64, range: f64) -> Result<Vec<Complex64>> {
    check_theta(theta)?;
    if !(range > 0.0) {
        return Err(invalid(format!("range must be positive, got {range}")));
    }
    let n = geom.num_antennas();
    let amp = 1.0 / (n as f64).sqrt();
    let d = geom.element_spacing();
    let k = 2.0 * PI / geom.wavelength();
    Ok(geom
        .offsets()
        .into_iter()
        .map(|delta| {
            let dist = (range * range + delta * delta * d * d - 2.0 * range * theta * delta * d).sqrt();
            Complex64::from_polar(amp, -k * (dist - range))
        })
        .collect())
}

pub fn far_field_steering(geom: &ArrayGeometry, theta: f64) -> Result<Vec<Complex64>> {
    check_theta(theta)?;
    let n = geom.num_antennas();
    let amp = 1.0 / (n as f64).sqrt();
    let phase_step = 2.0 * PI * geom.element_spacing() / geom.wavelength() * theta;
    Ok((0..n).map(|i| Complex64::from_polar(amp, phase_step * i as f64)).collect())
}

pub fn user_steering(geom: &ArrayGeometry, user: &UserSpec) -> Result<Vec<Complex64>> {
    match user.region() {
        FieldRegion::Near => near_field_steering(geom, user.theta(), user.range()),
        FieldRegion::Far => far_field_steering(geom, user.theta()),
    }
}

pub fn los_gain(geom: &ArrayGeometry, range: f64, beta: f64) -> Complex64 {
    Complex64::from_polar(beta.sqrt() / range, -2.0 * PI * range / geom.wavelength())
}

pub fn los_channel(geom: &ArrayGeometry, user: &UserSpec, beta: f64) -> Result<ChannelVector> {
    if !(beta > 0.0) {
        return Err(invalid("reference gain must be positive"));
    }
    let steering = user_steering(geom, user)?;
    let gain = los_gain(geom, user.range(), beta);
    let scale = (geom.num_antennas() as f64).sqrt() * gain;
    let entries = steering.iter().map(|s| scale * s).collect();
    Ok(ChannelVector { entries, steering, gain })
}

fn complex_gaussian(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(sd * re, sd * im)
}

/// LoS plus `num_nlos` scatter paths. Scatterers sit at a uniform spatial
/// angle in [-1, 1] and a uniform range in [0.5 r, 1.5 r]; path gains are
/// i.i.d. CN(0, |gain|^2 / (kappa Q)) so that `E||NLoS||^2 = ||LoS||^2 / kappa`.
pub fn rician_channel(
    geom: &ArrayGeometry,
    user: &UserSpec,
    beta: f64,
    rician_factor: f64,
    num_nlos: usize,
    seed: u64,
) -> Result<ChannelVector> {
    if !(rician_factor > 0.0) {
        return Err(invalid("Rician factor must be positive"));
    }
    if num_nlos == 0 {
        return Err(invalid("need at least one NLoS path"));
    }
    let mut ch = los_channel(geom, user, beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = geom.num_antennas();
    let path_var = ch.gain.norm_sqr() / (rician_factor * num_nlos as f64);
    let sqrt_n = (n as f64).sqrt();
    for _ in 0..num_nlos {
        let theta: f64 = rng.gen_range(-1.0..=1.0);
        let range: f64 = rng.gen_range(0.5 * user.range()..=1.5 * user.range());
        let g = complex_gaussian(&mut rng, path_var);
        let s = near_field_steering(geom, theta, range)?;
        for (h, sv) in ch.entries.iter_mut().zip(&s) {
            *h += sqrt_n * g * sv;
        }
    }
    Ok(ch)
}

/// Returns `h + dh` with `dh ~ CN(0, sigma^2 I)`; `sigma^2` follows `normalization`.
pub fn apply_csi_error(
    channel: &ChannelVector,
    eps: f64,
    normalization: CsiNormalization,
    seed: u64,
) -> Result<ChannelVector> {
    if !(eps >= 0.0) {
        return Err(invalid("CSI uncertainty must be nonnegative"));
    }
    if eps == 0.0 {
        return Ok(channel.clone());
    }
    let n = channel.len() as f64;
    let per_entry = match normalization {
        CsiNormalization::Literal => eps * eps * channel.norm_sqr(),
        CsiNormalization::PerEntry => eps * eps * channel.norm_sqr() / n,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = channel.clone();
    for h in out.entries.iter_mut() {
        *h += complex_gaussian(&mut rng, per_entry);
    }
    Ok(out)
}

/// `x^H y`.
pub fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

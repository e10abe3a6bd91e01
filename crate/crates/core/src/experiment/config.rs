//! Experiment configuration (TOML, schema version 1).
//!
//! ```toml
//! version = 1
//! name = "two_user"
//! kind = "rates"              # rates | trajectory | pdd_trace | correlation
//! seeds = [1, 2, 3]
//! noise_dbm = -80.0
//!
//! [geometry]
//! num_antennas = 64
//! carrier_freq_hz = 30e9
//!
//! [budget]
//! total_w = 1.0               # or total_dbm = 30.0
//!
//! [channel]
//! kind = "rician"             # or "los"
//! factor_db = 10.0
//! num_paths = 4
//!
//! [csi]
//! eps = 0.05
//! normalization = "per_entry" # or "literal"
//!
//! [[users]]
//! angle_rad = 0.0             # physical angle; or spatial = sin(angle)
//! range_rayleigh = 0.05       # fraction of the broadside Rayleigh distance; or range_m
//! weight = 1.0
//! angle_jitter_rad = 0.02     # per-seed uniform perturbation
//! range_jitter = 0.05         # per-seed relative perturbation
//!
//! [[sweep]]
//! target = { kind = "user_angle", user = 1 }
//! values = [0.0, 0.05, 0.1]
//!
//! [[schemes]]
//! kind = "random_as"
//! trials = 200
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{dbm_to_watts, CsiNormalization};
use crate::error::{Error, Result};
use crate::power::PowerSolverConfig;
use crate::scenario::ChannelModel;
use crate::schemes::Scheme;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// One row per seed, sweep point and scheme.
    #[default]
    Rates,
    /// Greedy deactivation trajectories with linear fits.
    Trajectory,
    /// Outer-iteration traces of the PDD solver.
    PddTrace,
    /// Steering correlation of users 0 and 1 and the full-array sum rate.
    Correlation,
}

fn default_freq() -> f64 {
    30e9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub num_antennas: usize,
    #[serde(default = "default_freq")]
    pub carrier_freq_hz: f64,
    /// Defaults to half a wavelength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_spacing_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_dbm: Option<f64>,
}

impl BudgetConfig {
    pub fn watts(&self) -> Result<f64> {
        match (self.total_w, self.total_dbm) {
            (Some(w), None) => Ok(w),
            (None, Some(dbm)) => Ok(dbm_to_watts(dbm)),
            _ => Err(Error::Config("budget needs exactly one of total_w, total_dbm".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsiConfig {
    #[serde(default)]
    pub eps: f64,
    #[serde(default)]
    pub normalization: CsiNormalization,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_rayleigh: Option<f64>,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub angle_jitter_rad: f64,
    #[serde(default)]
    pub range_jitter: f64,
}

impl UserConfig {
    pub fn at(angle_rad: f64, range_m: f64) -> Self {
        Self {
            angle_rad: Some(angle_rad),
            spatial: None,
            range_m: Some(range_m),
            range_rayleigh: None,
            weight: 1.0,
            angle_jitter_rad: 0.0,
            range_jitter: 0.0,
        }
    }

    /// Range given as a fraction of the broadside Rayleigh distance.
    pub fn at_rayleigh(angle_rad: f64, fraction: f64) -> Self {
        Self { range_m: None, range_rayleigh: Some(fraction), ..Self::at(angle_rad, 0.0) }
    }

    pub fn with_jitter(mut self, angle_rad: f64, range: f64) -> Self {
        self.angle_jitter_rad = angle_rad;
        self.range_jitter = range;
        self
    }

    fn validate(&self, k: usize) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("user {k}: {m}")));
        if self.angle_rad.is_some() == self.spatial.is_some() {
            return err("give exactly one of angle_rad, spatial");
        }
        if self.range_m.is_some() == self.range_rayleigh.is_some() {
            return err("give exactly one of range_m, range_rayleigh");
        }
        if !(self.weight > 0.0) || self.angle_jitter_rad < 0.0 || !(0.0..1.0).contains(&self.range_jitter) {
            return err("weight must be positive and jitters nonnegative (range jitter below 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepTarget {
    /// Physical angle of a user in radians.
    UserAngle { user: usize },
    /// Spatial angle `sin(angle)` of a user.
    UserSpatial { user: usize },
    UserRange { user: usize },
    TotalPowerW,
    CsiEps,
    RicianFactorDb,
    /// Weight of every far-field user.
    FarWeight,
}

impl SweepTarget {
    pub fn label(&self) -> String {
        match self {
            SweepTarget::UserAngle { user } => format!("user_angle:{user}"),
            SweepTarget::UserSpatial { user } => format!("user_spatial:{user}"),
            SweepTarget::UserRange { user } => format!("user_range:{user}"),
            SweepTarget::TotalPowerW => "total_power_w".into(),
            SweepTarget::CsiEps => "csi_eps".into(),
            SweepTarget::RicianFactorDb => "rician_factor_db".into(),
            SweepTarget::FarWeight => "far_weight".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub target: SweepTarget,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeEntry {
    /// Name in the output; defaults to the scheme kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub scheme: Scheme,
}

impl SchemeEntry {
    pub fn new(scheme: Scheme) -> Self {
        Self { label: None, scheme }
    }

    pub fn name(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.scheme.name().to_string())
    }
}

fn default_floor() -> f64 {
    crate::greedy::DEFAULT_FLOOR_FRACTION
}

fn default_overlay() -> usize {
    crate::baselines::DEFAULT_ORACLE_MAX_N
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryOptions {
    #[serde(default = "default_floor")]
    pub floor_fraction: f64,
    /// Adds the exhaustive minimum coupling per cardinality when N is at most this.
    #[serde(default = "default_overlay")]
    pub oracle_overlay_max_n: usize,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self { floor_fraction: default_floor(), oracle_overlay_max_n: default_overlay() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub kind: ExperimentKind,
    /// Free-form note on how the setup relates to the full-scale one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub seeds: Vec<u64>,
    pub noise_dbm: f64,
    pub geometry: GeometryConfig,
    pub budget: BudgetConfig,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub csi: CsiConfig,
    pub users: Vec<UserConfig>,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    #[serde(default)]
    pub schemes: Vec<SchemeEntry>,
    #[serde(default)]
    pub power_solver: PowerSolverConfig,
    #[serde(default)]
    pub trajectory: TrajectoryOptions,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(format!("{:x}", Sha256::digest(self.to_toml_string()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return err(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.seeds.is_empty() {
            return err("seed list is empty".into());
        }
        if self.users.is_empty() {
            return err("no users".into());
        }
        if self.geometry.num_antennas == 0 {
            return err("num_antennas must be positive".into());
        }
        self.budget.watts()?;
        for (k, u) in self.users.iter().enumerate() {
            u.validate(k)?;
        }
        for axis in &self.sweep {
            if let SweepTarget::UserAngle { user } | SweepTarget::UserSpatial { user } | SweepTarget::UserRange { user } =
                axis.target
            {
                if user >= self.users.len() {
                    return err(format!("sweep refers to user {user}, but only {} users exist", self.users.len()));
                }
            }
        }
        if self.kind == ExperimentKind::Rates && self.schemes.is_empty() {
            return err("rates experiment needs at least one scheme".into());
        }
        for s in &self.schemes {
            s.scheme.validate()?;
        }
        self.power_solver.validate()?;
        Ok(())
    }
}

//! Named experiment presets.
//!
//! Metric-only and greedy-only presets run at N = 256. Presets that call the
//! PDD solver or the baselines are scaled down to N = 64 (N = 32 for the
//! convergence traces), with ranges given as fractions of the broadside
//! Rayleigh distance so that the near/far split survives the scaling. The
//! `note` field of each preset records the full-scale setup.

use super::config::{
    BudgetConfig, CsiConfig, ExperimentConfig, ExperimentKind, GeometryConfig, SchemeEntry, SweepAxis, SweepTarget,
    TrajectoryOptions, UserConfig, CONFIG_VERSION,
};
use crate::error::{Error, Result};
use crate::pdd::PddConfig;
use crate::power::PowerSolverConfig;
use crate::scenario::ChannelModel;
use crate::schemes::Scheme;

pub const PRESET_NAMES: [&str; 9] = ["fig2", "fig3", "fig4", "fig6", "fig7", "fig8", "fig9", "fig10", "rician"];

const NOISE_DBM: f64 = -80.0;
const FULL_N: usize = 256;
const DESK_N: usize = 64;

/// Five-user placement as (angle in rad, range / Z(0)); the first two users
/// are near-field.
pub const FIVE_USER_PLACEMENT: [(f64, f64); 5] = [(-0.30, 0.0488), (0.17, 0.0521), (-0.22, 1.258), (0.09, 1.468), (0.25, 1.677)];
pub const PLACEMENT_ANGLE_JITTER: f64 = 0.02;
pub const PLACEMENT_RANGE_JITTER: f64 = 0.05;

fn base(name: &str, kind: ExperimentKind, n: usize, users: Vec<UserConfig>, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        version: CONFIG_VERSION,
        name: name.to_string(),
        kind,
        note: None,
        seeds,
        noise_dbm: NOISE_DBM,
        geometry: GeometryConfig { num_antennas: n, carrier_freq_hz: 30e9, element_spacing_m: None },
        budget: BudgetConfig { total_w: Some(1.0), total_dbm: None },
        channel: ChannelModel::Los,
        csi: CsiConfig::default(),
        users,
        sweep: Vec::new(),
        schemes: Vec::new(),
        power_solver: PowerSolverConfig::default(),
        trajectory: TrajectoryOptions::default(),
    }
}

fn spatial_user(spatial: f64, range_m: f64) -> UserConfig {
    UserConfig { angle_rad: None, spatial: Some(spatial), ..UserConfig::at(0.0, range_m) }
}

/// Near user at broadside 5 m, far user at 150 m (spatial angle swept).
fn two_user_pair() -> Vec<UserConfig> {
    vec![spatial_user(0.0, 5.0), spatial_user(0.0, 150.0)]
}

pub fn five_users(count: usize) -> Vec<UserConfig> {
    FIVE_USER_PLACEMENT[..count]
        .iter()
        .map(|&(a, f)| UserConfig::at_rayleigh(a, f).with_jitter(PLACEMENT_ANGLE_JITTER, PLACEMENT_RANGE_JITTER))
        .collect()
}

fn seeds(n: u64) -> Vec<u64> {
    (1..=n).collect()
}

fn grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect()
}

fn entries(schemes: Vec<Scheme>) -> Vec<SchemeEntry> {
    schemes.into_iter().map(SchemeEntry::new).collect()
}

/// Scheme set compared in the multi-user rate presets.
pub fn comparison_schemes() -> Vec<Scheme> {
    vec![
        Scheme::Pdd { config: PddConfig::default() },
        Scheme::PddEqualPower { config: PddConfig::default() },
        Scheme::Greedy { min_active: 1 },
        Scheme::FullArray,
        Scheme::RandomAs { trials: 200, include_full: true },
        Scheme::CommonAs,
        Scheme::Subarray { num_subarrays: 5 },
    ]
}

fn five_user_rates(name: &str) -> ExperimentConfig {
    let mut c = base(name, ExperimentKind::Rates, DESK_N, five_users(5), seeds(5));
    c.note = Some(
        "full-scale setup: N = 256, five users; desk scale N = 64 with ranges as fractions of the broadside Rayleigh distance"
            .into(),
    );
    c
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let c = match name {
        "fig2" => {
            let mut c = base(name, ExperimentKind::Correlation, FULL_N, two_user_pair(), vec![1]);
            c.sweep = vec![SweepAxis { target: SweepTarget::UserSpatial { user: 1 }, values: grid(0.0, 0.5, 50) }];
            c
        }
        "fig3" => {
            let mut users = two_user_pair();
            users[1] = spatial_user(0.0, 150.0);
            let mut c = base(name, ExperimentKind::Trajectory, FULL_N, users, vec![1]);
            c.sweep = vec![
                SweepAxis { target: SweepTarget::UserSpatial { user: 0 }, values: vec![-0.3, 0.0, 0.3] },
                SweepAxis { target: SweepTarget::UserRange { user: 0 }, values: vec![5.0, 10.0, 20.0] },
            ];
            c
        }
        "fig4" => {
            let mut c = base(name, ExperimentKind::Rates, FULL_N, two_user_pair(), vec![1]);
            c.sweep = vec![SweepAxis {
                target: SweepTarget::UserSpatial { user: 1 },
                values: vec![0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5],
            }];
            c.schemes = entries(vec![Scheme::FullArray, Scheme::GreedyClosedForm, Scheme::Greedy { min_active: 1 }]);
            c
        }
        "fig6" => {
            let mut c = base(name, ExperimentKind::Trajectory, DESK_N, five_users(5), seeds(3));
            c.note = Some("full-scale setup: N = 256, five users; desk scale N = 64".into());
            c
        }
        "fig7" => {
            let mut c = base(name, ExperimentKind::PddTrace, 32, five_users(3), seeds(20));
            c.schemes = entries(vec![Scheme::Pdd { config: PddConfig::default() }]);
            c.note = Some("full-scale setup: N = 256; desk scale N = 32 with two near users and one far user".into());
            c
        }
        "fig8" => {
            let mut c = five_user_rates(name);
            c.sweep = vec![SweepAxis { target: SweepTarget::TotalPowerW, values: vec![0.1, 0.3, 1.0] }];
            c.schemes = entries(comparison_schemes());
            c
        }
        "fig9" => {
            let mut c = five_user_rates(name);
            c.sweep = vec![SweepAxis { target: SweepTarget::CsiEps, values: vec![0.0, 0.05, 0.1] }];
            c.schemes = entries(vec![
                Scheme::Pdd { config: PddConfig::default() },
                Scheme::Greedy { min_active: 1 },
                Scheme::FullArray,
            ]);
            c
        }
        "rician" => {
            let mut c = five_user_rates(name);
            c.channel = ChannelModel::Rician { factor_db: f64::INFINITY, num_paths: 4 };
            c.sweep = vec![SweepAxis { target: SweepTarget::RicianFactorDb, values: vec![-10.0, 0.0, 10.0, f64::INFINITY] }];
            c.schemes = entries(vec![
                Scheme::Pdd { config: PddConfig::default() },
                Scheme::Greedy { min_active: 1 },
                Scheme::FullArray,
            ]);
            c
        }
        "fig10" => {
            let mut c = five_user_rates(name);
            c.sweep = vec![SweepAxis { target: SweepTarget::FarWeight, values: vec![1.0, 2.0, 4.0, 8.0] }];
            c.schemes = entries(vec![Scheme::Pdd { config: PddConfig::default() }, Scheme::FullArray]);
            c
        }
        other => return Err(Error::Config(format!("unknown preset `{other}` (known: {})", PRESET_NAMES.join(", ")))),
    };
    c.validate()?;
    Ok(c)
}

//! Named schemes and a single entry point that runs any of them on a scenario.

use serde::{Deserialize, Serialize};

use crate::baselines::{
    common_as_baseline, exhaustive_oracle, finish, full_array_baseline, random_as_baseline, subarray_baseline,
    with_optimized_power, SchemeOutcome, DEFAULT_ORACLE_MAX_N,
};
use crate::error::{invalid, Error, Result};
use crate::greedy::{
    closed_form_count, fit_linear_decay, greedy_deactivate_two_user, greedy_select_all, two_user_contributions,
    DeactivationTrajectory, DEFAULT_FLOOR_FRACTION,
};
use crate::metrics::SelectionMask;
use crate::pdd::{pdd_solve, PddConfig};
use crate::power::PowerSolverConfig;
use crate::scenario::Scenario;

fn default_trials() -> usize {
    200
}

fn default_true() -> bool {
    true
}

fn default_min_active() -> usize {
    1
}

fn default_oracle_n() -> usize {
    DEFAULT_ORACLE_MAX_N
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// Joint selection and power by penalty dual decomposition.
    Pdd {
        #[serde(default)]
        config: PddConfig,
    },
    /// Same, with powers fixed at the equal split.
    PddEqualPower {
        #[serde(default)]
        config: PddConfig,
    },
    /// Per-user multi-user greedy masks, then SCA power.
    Greedy {
        #[serde(default = "default_min_active")]
        min_active: usize,
    },
    /// Two users: greedy trajectories, linear fits and closed-form counts.
    GreedyClosedForm,
    FullArray,
    RandomAs {
        #[serde(default = "default_trials")]
        trials: usize,
        #[serde(default = "default_true")]
        include_full: bool,
    },
    CommonAs,
    Subarray { num_subarrays: usize },
    Oracle {
        #[serde(default = "default_oracle_n")]
        max_n: usize,
    },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Pdd { .. } => "pdd",
            Scheme::PddEqualPower { .. } => "pdd_equal_power",
            Scheme::Greedy { .. } => "greedy",
            Scheme::GreedyClosedForm => "greedy_closed_form",
            Scheme::FullArray => "full_array",
            Scheme::RandomAs { .. } => "random_as",
            Scheme::CommonAs => "common_as",
            Scheme::Subarray { .. } => "subarray",
            Scheme::Oracle { .. } => "oracle",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Scheme::Pdd { config } | Scheme::PddEqualPower { config } => config.validate(),
            Scheme::Greedy { min_active } if *min_active == 0 => Err(invalid("min_active must be at least 1")),
            Scheme::RandomAs { trials, .. } if *trials == 0 => Err(invalid("trials must be at least 1")),
            Scheme::Subarray { num_subarrays } if *num_subarrays == 0 => Err(invalid("num_subarrays must be at least 1")),
            _ => Ok(()),
        }
    }
}

/// Parses a bare scheme name with default parameters.
pub fn scheme_from_name(name: &str) -> Result<Scheme> {
    Ok(match name {
        "pdd" => Scheme::Pdd { config: PddConfig::default() },
        "pdd_equal_power" => Scheme::PddEqualPower { config: PddConfig::default() },
        "greedy" => Scheme::Greedy { min_active: 1 },
        "greedy_closed_form" => Scheme::GreedyClosedForm,
        "full_array" => Scheme::FullArray,
        "random_as" => Scheme::RandomAs { trials: default_trials(), include_full: true },
        "common_as" => Scheme::CommonAs,
        "oracle" => Scheme::Oracle { max_n: DEFAULT_ORACLE_MAX_N },
        other => return Err(Error::UnknownScheme(other.to_string())),
    })
}

/// Two-user trajectories (rule on unit-steering contributions) for both users.
pub fn two_user_trajectories(scenario: &Scenario) -> Result<[DeactivationTrajectory; 2]> {
    if scenario.num_users() != 2 {
        return Err(invalid("two-user rule needs exactly two users"));
    }
    let t0 = greedy_deactivate_two_user(&two_user_contributions(&scenario.design, 0)?, 1)?;
    let t1 = greedy_deactivate_two_user(&two_user_contributions(&scenario.design, 1)?, 1)?;
    Ok([t0, t1])
}

/// Masks from the closed-form deactivation counts at equal power.
pub fn closed_form_masks(scenario: &Scenario) -> Result<Vec<SelectionMask>> {
    let trajs = two_user_trajectories(scenario)?;
    let n = scenario.num_antennas();
    let p = scenario.budget / 2.0;
    let mut counts = [0usize; 2];
    for (k, t) in trajs.iter().enumerate() {
        // no usable fit: keep the full array
        if let Ok(fit) = fit_linear_decay(t, DEFAULT_FLOOR_FRACTION) {
            if fit.slope > 0.0 {
                let victim = scenario.design[1 - k].gain.norm_sqr();
                counts[k] = closed_form_count(n, t.coupling[0], fit.slope, p, victim, scenario.noise)?;
            }
        }
    }
    trajs.iter().zip(counts).map(|(t, l)| t.mask_at(l)).collect()
}

pub fn run_scheme(scenario: &Scenario, scheme: &Scheme, seed: u64, power: &PowerSolverConfig) -> Result<SchemeOutcome> {
    scheme.validate()?;
    match scheme {
        Scheme::Pdd { config } | Scheme::PddEqualPower { config } => {
            let mut cfg = config.clone();
            cfg.optimize_power = matches!(scheme, Scheme::Pdd { .. });
            let res = pdd_solve(&scenario.design, &scenario.weights(), scenario.budget, scenario.noise, &cfg)?;
            let gains = scenario.design_gains(&res.masks)?;
            let mut out = finish(scenario, res.masks, res.powers, &gains)?;
            out.converged = Some(res.converged);
            Ok(out)
        }
        Scheme::Greedy { min_active } => {
            let masks = if scenario.num_users() < 2 {
                vec![SelectionMask::full(scenario.num_antennas())]
            } else {
                greedy_select_all(&scenario.design, *min_active)?.into_iter().map(|s| s.mask).collect()
            };
            with_optimized_power(scenario, masks, power)
        }
        Scheme::GreedyClosedForm => with_optimized_power(scenario, closed_form_masks(scenario)?, power),
        Scheme::FullArray => full_array_baseline(scenario, power),
        Scheme::RandomAs { trials, include_full } => {
            Ok(random_as_baseline(scenario, *trials, seed, *include_full, power)?.best)
        }
        Scheme::CommonAs => common_as_baseline(scenario, power),
        Scheme::Subarray { num_subarrays } => subarray_baseline(scenario, *num_subarrays, power),
        Scheme::Oracle { max_n } => Ok(exhaustive_oracle(scenario, *max_n, power)?.outcome),
    }
}

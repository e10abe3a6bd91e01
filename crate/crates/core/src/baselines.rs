//! Reference schemes and the exhaustive oracle.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::greedy::correlation_contributions;
use crate::metrics::{mrt_weights, LinkGains, PowerVector, RateReport, SelectionMask};
use crate::power::{optimize_power, two_user_power_search, PowerProblem, PowerSolverConfig};
use crate::rng::{stream_rng, Stream};
use crate::scenario::Scenario;

/// Result of running one scheme on one scenario.
#[derive(Debug, Clone)]
pub struct SchemeOutcome {
    pub masks: Vec<SelectionMask>,
    pub powers: PowerVector,
    /// Weighted sum rate the scheme sees on the design channels.
    pub design_weighted_sum_rate: f64,
    /// Rates on the actual channels.
    pub report: RateReport,
    pub converged: Option<bool>,
}

impl SchemeOutcome {
    pub fn sum_rate(&self) -> f64 {
        self.report.sum_rate
    }
}

/// Optimizes powers for fixed masks on the design channels and evaluates.
pub fn with_optimized_power(
    scenario: &Scenario,
    masks: Vec<SelectionMask>,
    config: &PowerSolverConfig,
) -> Result<SchemeOutcome> {
    let gains = scenario.design_gains(&masks)?;
    let weights = scenario.weights();
    let problem = PowerProblem::new(&gains, scenario.noise, scenario.budget, &weights)?;
    let powers = optimize_power(&problem, config)?;
    finish(scenario, masks, powers, &gains)
}

pub(crate) fn finish(
    scenario: &Scenario,
    masks: Vec<SelectionMask>,
    powers: PowerVector,
    design_gains: &LinkGains,
) -> Result<SchemeOutcome> {
    let design_weighted_sum_rate =
        design_gains.weighted_sum_rate(powers.powers(), scenario.noise, &scenario.weights());
    let report = scenario.evaluate(&masks, &powers)?;
    Ok(SchemeOutcome { masks, powers, design_weighted_sum_rate, report, converged: None })
}

pub fn full_array_baseline(scenario: &Scenario, config: &PowerSolverConfig) -> Result<SchemeOutcome> {
    let masks = vec![SelectionMask::full(scenario.num_antennas()); scenario.num_users()];
    with_optimized_power(scenario, masks, config)
}

/// Uniform draw over the nonempty subsets of `n` antennas.
pub fn random_nonempty_mask<R: Rng>(rng: &mut R, n: usize) -> SelectionMask {
    loop {
        let bits: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
        if bits.iter().any(|b| *b) {
            return SelectionMask::from_bits(bits);
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomSearch {
    pub best: SchemeOutcome,
    /// Best design objective after each trial.
    pub running_best: Vec<f64>,
}

/// Best of `trials` random per-user mask draws, each with optimized power.
/// With `include_full` the all-ones masks are evaluated as trial 0.
pub fn random_as_baseline(
    scenario: &Scenario,
    trials: usize,
    seed: u64,
    include_full: bool,
    config: &PowerSolverConfig,
) -> Result<RandomSearch> {
    if trials == 0 {
        return Err(invalid("random selection needs at least one trial"));
    }
    let (n, k) = (scenario.num_antennas(), scenario.num_users());
    let outcomes: Vec<SchemeOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let masks = if include_full && t == 0 {
                vec![SelectionMask::full(n); k]
            } else {
                let mut rng = stream_rng(seed, Stream::RandomSelection, t as u64);
                (0..k).map(|_| random_nonempty_mask(&mut rng, n)).collect()
            };
            with_optimized_power(scenario, masks, config)
        })
        .collect::<Result<_>>()?;
    let mut running_best = Vec::with_capacity(trials);
    let mut best_idx = 0;
    for (t, o) in outcomes.iter().enumerate() {
        if o.design_weighted_sum_rate > outcomes[best_idx].design_weighted_sum_rate {
            best_idx = t;
        }
        running_best.push(outcomes[best_idx].design_weighted_sum_rate);
    }
    let best = outcomes.into_iter().nth(best_idx).expect("nonempty");
    Ok(RandomSearch { best, running_best })
}

/// Greedy on the aggregate coupling `sum_k I_k(S)` with one mask shared by
/// all users. Returns the prefix mask of least aggregate coupling.
pub fn common_greedy_mask(scenario: &Scenario) -> Result<SelectionMask> {
    let n = scenario.num_antennas();
    let k = scenario.num_users();
    if k < 2 {
        return Ok(SelectionMask::full(n));
    }
    let w = mrt_weights(&scenario.design);
    let mut terms: Vec<Vec<Complex64>> = Vec::new();
    for own in 0..k {
        for victim in (0..k).filter(|&i| i != own) {
            terms.push(correlation_contributions(&scenario.design[victim].entries, &w[own])?);
        }
    }
    let mut sums: Vec<Complex64> = terms.iter().map(|z| z.iter().sum()).collect();
    let aggregate = |sums: &[Complex64], m: usize| sums.iter().map(|s| s.norm()).sum::<f64>() / (m as f64).sqrt();
    let mut active = vec![true; n];
    let mut order = Vec::with_capacity(n - 1);
    let mut best = (aggregate(&sums, n), 0usize);
    for l in 0..n - 1 {
        let mut pick: Option<(usize, f64)> = None;
        for cand in (0..n).filter(|&c| active[c]) {
            let total: f64 = terms.iter().zip(&sums).map(|(z, s)| (s - z[cand]).norm()).sum();
            if pick.map_or(true, |(_, b)| total < b) {
                pick = Some((cand, total));
            }
        }
        let (cand, _) = pick.expect("active antenna remains");
        active[cand] = false;
        for (s, z) in sums.iter_mut().zip(&terms) {
            *s -= z[cand];
        }
        order.push(cand);
        let c = aggregate(&sums, n - l - 1);
        if c < best.0 {
            best = (c, l + 1);
        }
    }
    let mut mask = SelectionMask::full(n);
    for &i in &order[..best.1] {
        mask.set(i, false);
    }
    Ok(mask)
}

/// Shared-mask baseline; the greedy mask and the full array compete on the
/// design objective.
pub fn common_as_baseline(scenario: &Scenario, config: &PowerSolverConfig) -> Result<SchemeOutcome> {
    let k = scenario.num_users();
    let greedy = common_greedy_mask(scenario)?;
    let full = full_array_baseline(scenario, config)?;
    if greedy.active_count() == scenario.num_antennas() {
        return Ok(full);
    }
    let shared = with_optimized_power(scenario, vec![greedy; k], config)?;
    Ok(if shared.design_weighted_sum_rate > full.design_weighted_sum_rate { shared } else { full })
}

/// `U` contiguous subarrays of `N / U` antennas, the last one taking the
/// remainder.
pub fn subarray_partition(n: usize, u: usize) -> Result<Vec<SelectionMask>> {
    if u == 0 || u > n {
        return Err(invalid(format!("cannot split {n} antennas into {u} subarrays")));
    }
    let size = n / u;
    Ok((0..u)
        .map(|j| {
            let end = if j + 1 == u { n } else { (j + 1) * size };
            SelectionMask::from_active(n, j * size..end)
        })
        .collect())
}

fn injective_assignments(k: usize, u: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, u: usize, cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in 0..u {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(k, u, cur, used, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(k, u, &mut Vec::new(), &mut vec![false; u], &mut out);
    out
}

pub const MAX_SUBARRAY_USERS: usize = 6;

/// Each user served by its own subarray; the assignment is chosen by
/// exhaustive search on the design objective.
pub fn subarray_baseline(scenario: &Scenario, u: usize, config: &PowerSolverConfig) -> Result<SchemeOutcome> {
    let k = scenario.num_users();
    if k > u {
        return Err(Error::Infeasible(format!("{k} users cannot each get one of {u} subarrays")));
    }
    if k > MAX_SUBARRAY_USERS {
        return Err(Error::TooLarge(format!("subarray assignment search supports K <= {MAX_SUBARRAY_USERS}")));
    }
    let parts = subarray_partition(scenario.num_antennas(), u)?;
    let candidates: Vec<SchemeOutcome> = injective_assignments(k, u)
        .into_par_iter()
        .map(|a| with_optimized_power(scenario, a.iter().map(|&j| parts[j].clone()).collect(), config))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.design_weighted_sum_rate > candidates[best].design_weighted_sum_rate {
            best = i;
        }
    }
    Ok(candidates.into_iter().nth(best).expect("at least one assignment"))
}

pub const DEFAULT_ORACLE_MAX_N: usize = 12;
pub const ORACLE_MAX_USERS: usize = 3;
const ORACLE_MAX_COMBOS: usize = 200_000;

/// Per-mask features for one user: own gain and the gain it leaks to each
/// other user (`leak[i]`, zero at the own index).
#[derive(Debug, Clone)]
struct MaskFeatures {
    code: u64,
    own: f64,
    leak: Vec<f64>,
}

fn dominates(a: &MaskFeatures, b: &MaskFeatures) -> bool {
    a.own >= b.own && a.leak.iter().zip(&b.leak).all(|(x, y)| x <= y)
}

/// Masks of user `k` not dominated in (own gain up, every leak down). A
/// user's mask enters the rates only through these numbers, and every rate
/// is monotone in them, so an optimum always uses frontier masks.
fn pareto_masks(scenario: &Scenario, w: &[Vec<Complex64>], k: usize) -> Vec<MaskFeatures> {
    let n = scenario.num_antennas();
    let users = scenario.num_users();
    let mut feats: Vec<MaskFeatures> = (1u64..(1u64 << n))
        .into_par_iter()
        .map(|code| {
            let m = code.count_ones() as f64;
            let amp = |h: &[Complex64]| -> f64 {
                let mut s = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    if code >> i & 1 == 1 {
                        s += h[i].conj() * w[k][i];
                    }
                }
                s.norm_sqr() / m
            };
            let own = amp(&scenario.design[k].entries);
            let leak = (0..users).map(|i| if i == k { 0.0 } else { amp(&scenario.design[i].entries) }).collect();
            MaskFeatures { code, own, leak }
        })
        .collect();
    feats.sort_by(|a, b| b.own.partial_cmp(&a.own).unwrap_or(std::cmp::Ordering::Equal).then(a.code.cmp(&b.code)));
    let mut front: Vec<MaskFeatures> = Vec::new();
    for f in feats {
        if !front.iter().any(|g| dominates(g, &f)) {
            front.push(f);
        }
    }
    front
}

/// Grid search plus ternary refinement around the best grid point.
fn two_user_power_refined(problem: &PowerProblem, config: &PowerSolverConfig) -> Result<PowerVector> {
    let coarse = two_user_power_search(problem, config)?;
    let t = problem.budget;
    let h = t / (config.grid_points - 1) as f64;
    let f = |p1: f64| problem.objective(&[p1, t - p1]);
    let (mut lo, mut hi) = ((coarse.powers()[0] - h).max(0.0), (coarse.powers()[0] + h).min(t));
    for _ in 0..100 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let p1 = 0.5 * (lo + hi);
    if f(p1) > f(coarse.powers()[0]) {
        PowerVector::new(vec![p1, t - p1], t)
    } else {
        Ok(coarse)
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub outcome: SchemeOutcome,
    /// Design objective of the optimum.
    pub optimum: f64,
    pub combinations: usize,
}

/// Global optimum of the weighted sum rate over all per-user masks (design
/// channels), with powers from a fine scan (two users) or multi-start SCA.
pub fn exhaustive_oracle(scenario: &Scenario, max_n: usize, config: &PowerSolverConfig) -> Result<OracleResult> {
    let n = scenario.num_antennas();
    let k = scenario.num_users();
    if n > max_n || n > 30 {
        return Err(Error::TooLarge(format!("N = {n} exceeds the oracle limit {max_n}")));
    }
    if k > ORACLE_MAX_USERS {
        return Err(Error::TooLarge(format!("K = {k} exceeds the oracle limit {ORACLE_MAX_USERS}")));
    }
    let weights = scenario.weights();
    let w = mrt_weights(&scenario.design);
    let fronts: Vec<Vec<MaskFeatures>> = (0..k).map(|u| pareto_masks(scenario, &w, u)).collect();
    let combos: usize = fronts.iter().map(|f| f.len()).product();
    if combos > ORACLE_MAX_COMBOS {
        return Err(Error::TooLarge(format!("{combos} frontier combinations")));
    }
    let evaluate = |idx: usize| -> Result<(f64, Vec<usize>, PowerVector)> {
        let mut pick = Vec::with_capacity(k);
        let mut rem = idx;
        for f in &fronts {
            pick.push(rem % f.len());
            rem /= f.len();
        }
        let gains = LinkGains {
            gains: (0..k)
                .map(|u| (0..k).map(|i| if u == i { fronts[i][pick[i]].own } else { fronts[i][pick[i]].leak[u] }).collect())
                .collect(),
        };
        let problem = PowerProblem::new(&gains, scenario.noise, scenario.budget, &weights)?;
        let powers = match k {
            1 => PowerVector::new(vec![scenario.budget], scenario.budget)?,
            2 => two_user_power_refined(&problem, config)?,
            _ => optimize_power(&problem, config)?,
        };
        Ok((problem.objective(powers.powers()), pick, powers))
    };
    let results: Vec<(f64, Vec<usize>, PowerVector)> = (0..combos).into_par_iter().map(evaluate).collect::<Result<_>>()?;
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.0 > results[best].0 {
            best = i;
        }
    }
    let (optimum, pick, powers) = results.into_iter().nth(best).expect("at least one combination");
    let masks: Vec<SelectionMask> = pick.iter().enumerate().map(|(u, &j)| SelectionMask::from_code(n, fronts[u][j].code)).collect();
    let gains = scenario.design_gains(&masks)?;
    let outcome = finish(scenario, masks, powers, &gains)?;
    Ok(OracleResult { outcome, optimum, combinations: combos })
}

/// Interference-only oracle: for user `own` and each cardinality M, the mask
/// minimizing its coupling `sum_{i != own} |h_i^H V w_own| / sqrt(M)`.
/// Entry `M - 1` of the result holds that minimum.
pub fn min_coupling_by_cardinality(scenario: &Scenario, own: usize, max_n: usize) -> Result<Vec<(f64, SelectionMask)>> {
    let n = scenario.num_antennas();
    if n > max_n || n > 30 {
        return Err(Error::TooLarge(format!("N = {n} exceeds the oracle limit {max_n}")));
    }
    if own >= scenario.num_users() {
        return Err(invalid("user index out of range"));
    }
    let w = mrt_weights(&scenario.design);
    let victims: Vec<Vec<Complex64>> = (0..scenario.num_users())
        .filter(|&i| i != own)
        .map(|i| correlation_contributions(&scenario.design[i].entries, &w[own]))
        .collect::<Result<_>>()?;
    let per_code: Vec<(u32, f64, u64)> = (1u64..(1u64 << n))
        .into_par_iter()
        .map(|code| {
            let mut total = 0.0;
            for z in &victims {
                let mut s = Complex64::new(0.0, 0.0);
                for (i, zi) in z.iter().enumerate() {
                    if code >> i & 1 == 1 {
                        s += zi;
                    }
                }
                total += s.norm();
            }
            let m = code.count_ones();
            (m, total / (m as f64).sqrt(), code)
        })
        .collect();
    let mut best = vec![(f64::INFINITY, 0u64); n];
    for (m, c, code) in per_code {
        let slot = &mut best[m as usize - 1];
        if c < slot.0 {
            *slot = (c, code);
        }
    }
    Ok(best.into_iter().map(|(c, code)| (c, SelectionMask::from_code(n, code))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineSpec {
    PddEqualPower,
    RandomAs { trials: usize },
    CommonAs,
    Subarray { num_subarrays: usize },
    FullArray,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ArrayGeometry, UserSpec};
    use crate::metrics::rate_with_selection;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scenario(n: usize, users: &[(f64, f64)]) -> Scenario {
        let g = ArrayGeometry::new(n, 30e9).unwrap();
        let us = users.iter().map(|&(t, r)| UserSpec::new(&g, t, r).unwrap()).collect();
        Scenario::los(g, us, 1.0, 1e-11).unwrap()
    }

    fn cfg() -> PowerSolverConfig {
        PowerSolverConfig::default()
    }

    #[test]
    fn full_array_matches_rate_with_selection() {
        let s = scenario(16, &[(0.0, 1.0), (0.3, 30.0)]);
        let o = full_array_baseline(&s, &cfg()).unwrap();
        let direct = rate_with_selection(&s.actual, &o.masks, &o.powers, s.noise).unwrap();
        assert!((direct.sum_rate - o.sum_rate()).abs() < 1e-12);
    }

    #[test]
    fn full_array_orthogonal_users_add_up() {
        // far users on adjacent Dirichlet nulls: 2/N apart in spatial angle
        let s = scenario(16, &[(0.0, 1e6), (0.125, 1e6)]);
        let o = full_array_baseline(&s, &cfg()).unwrap();
        let single: f64 = (0..2)
            .map(|k| (1.0 + o.powers.powers()[k] * s.design[k].gain.norm_sqr() * 16.0 / s.noise).log2())
            .sum();
        assert!((o.sum_rate() - single).abs() < 1e-9 * single);
    }

    #[test]
    fn random_search_properties() {
        let s = scenario(10, &[(0.0, 0.5), (0.1, 20.0)]);
        let a = random_as_baseline(&s, 1, 5, false, &cfg()).unwrap();
        let b = random_as_baseline(&s, 1, 5, false, &cfg()).unwrap();
        assert_eq!(a.best.masks, b.best.masks);
        let r = random_as_baseline(&s, 40, 5, true, &cfg()).unwrap();
        assert!(r.running_best.windows(2).all(|w| w[1] >= w[0]));
        let full = full_array_baseline(&s, &cfg()).unwrap();
        assert!(r.best.design_weighted_sum_rate >= full.design_weighted_sum_rate - 1e-12);
        assert!(r.best.masks.iter().all(|m| m.active_count() >= 1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert!(random_nonempty_mask(&mut rng, 1).active_count() == 1);
        }
    }

    #[test]
    fn common_as_properties() {
        let s1 = scenario(16, &[(0.1, 3.0)]);
        let a = common_as_baseline(&s1, &cfg()).unwrap();
        let f = full_array_baseline(&s1, &cfg()).unwrap();
        assert_eq!(a.masks, f.masks);
        let s = scenario(16, &[(0.0, 0.7), (0.05, 20.0), (-0.2, 2.0)]);
        let a = common_as_baseline(&s, &cfg()).unwrap();
        let f = full_array_baseline(&s, &cfg()).unwrap();
        assert!(a.design_weighted_sum_rate >= f.design_weighted_sum_rate - 1e-12);
        assert!(a.masks.windows(2).all(|m| m[0] == m[1]));
    }

    #[test]
    fn subarray_partition_and_assignment() {
        let parts = subarray_partition(10, 3).unwrap();
        let counts: Vec<usize> = parts.iter().map(|m| m.active_count()).collect();
        assert_eq!(counts, vec![3, 3, 4]);
        assert!(parts[0].is_active(0) && parts[2].is_active(9));
        let s1 = scenario(12, &[(0.0, 2.0)]);
        let o = subarray_baseline(&s1, 1, &cfg()).unwrap();
        assert_eq!(o.masks[0], SelectionMask::full(12));
        let s2 = scenario(12, &[(0.0, 2.0), (0.2, 30.0)]);
        assert!(matches!(subarray_baseline(&s2, 1, &cfg()), Err(Error::Infeasible(_))));
        assert_eq!(injective_assignments(3, 4).len(), 24);
        let o = subarray_baseline(&s2, 2, &cfg()).unwrap();
        assert_ne!(o.masks[0], o.masks[1]);
    }

    #[test]
    fn oracle_trivial_cases() {
        let s = scenario(8, &[(0.1, 2.0)]);
        let o = exhaustive_oracle(&s, 12, &cfg()).unwrap();
        assert_eq!(o.outcome.masks[0], SelectionMask::full(8));
        assert_eq!(o.outcome.powers.powers(), &[1.0]);
        let orth = scenario(8, &[(0.0, 1e6), (0.25, 1e6)]);
        let o = exhaustive_oracle(&orth, 12, &cfg()).unwrap();
        assert!(o.outcome.masks.iter().all(|m| m.active_count() == 8));
        assert!(matches!(exhaustive_oracle(&scenario(14, &[(0.0, 2.0)]), 12, &cfg()), Err(Error::TooLarge(_))));
    }

    /// Brute force over every mask pair and a power grid, without the
    /// frontier reduction.
    #[test]
    fn oracle_matches_brute_force() {
        let s = scenario(6, &[(0.0, 0.3), (0.12, 15.0)]);
        let o = exhaustive_oracle(&s, 12, &cfg()).unwrap();
        let weights = s.weights();
        let mut best = f64::NEG_INFINITY;
        for c1 in 1u64..64 {
            for c2 in 1u64..64 {
                let masks = vec![SelectionMask::from_code(6, c1), SelectionMask::from_code(6, c2)];
                let g = s.design_gains(&masks).unwrap();
                for j in 0..=400 {
                    let p1 = j as f64 / 400.0;
                    best = best.max(g.weighted_sum_rate(&[p1, 1.0 - p1], s.noise, &weights));
                }
            }
        }
        assert!(o.optimum >= best - 1e-9, "oracle {} brute {}", o.optimum, best);
        assert!(o.optimum <= best + 1e-3);
    }

    #[test]
    fn oracle_dominates_heuristics() {
        let s = scenario(10, &[(0.0, 0.4), (0.08, 12.0)]);
        let o = exhaustive_oracle(&s, 12, &cfg()).unwrap();
        let f = full_array_baseline(&s, &cfg()).unwrap();
        let r = random_as_baseline(&s, 50, 1, true, &cfg()).unwrap();
        let c = common_as_baseline(&s, &cfg()).unwrap();
        for x in [&f, &r.best, &c] {
            assert!(o.optimum >= x.design_weighted_sum_rate - 1e-9);
        }
    }

    #[test]
    fn coupling_oracle_by_cardinality() {
        let s = scenario(8, &[(0.0, 0.4), (0.1, 12.0)]);
        let best = min_coupling_by_cardinality(&s, 0, 12).unwrap();
        assert_eq!(best.len(), 8);
        assert_eq!(best[7].1, SelectionMask::full(8));
        for (m, (c, mask)) in best.iter().enumerate() {
            assert_eq!(mask.active_count(), m + 1);
            let (direct, _) =
                crate::metrics::interference_coupling(0, &s.design, &[mask.clone(), SelectionMask::full(8)]).unwrap();
            assert!((direct - c).abs() < 1e-12 * direct.max(1e-300));
        }
    }
}

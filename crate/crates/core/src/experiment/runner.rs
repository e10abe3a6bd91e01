//! Expands a config into work items, runs them and assembles CSV tables.
//!
//! Work items are `(seed, sweep point)` pairs, times schemes for `rates`.
//! They run on a rayon pool; results are collected in item order, so the
//! output does not depend on the number of jobs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind, SweepTarget};
use crate::baselines::{full_array_baseline, min_coupling_by_cardinality};
use crate::channel::{dbm_to_watts, inner, ArrayGeometry, CsiModel, UserSpec};
use crate::error::{invalid, Error, Result};
use crate::greedy::{fit_linear_decay, greedy_deactivate_multi_user, DeactivationTrajectory};
use crate::pdd::{pdd_solve, PddConfig};
use crate::rng::{stream_rng, Stream};
use crate::scenario::{ChannelModel, Scenario};
use crate::schemes::{run_scheme, two_user_trajectories, Scheme};

/// Paths used when a Rician sweep is applied to a LoS config.
pub const DEFAULT_RICIAN_PATHS: usize = 4;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(headers: &[&str]) -> Self {
        Self { headers: headers.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Values of a numeric column; empty cells become NaN.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name).ok_or_else(|| invalid(format!("no column `{name}`")))?;
        Ok(self.rows.iter().map(|r| r[c].parse().unwrap_or(f64::NAN)).collect())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.headers).map_err(csv_err)?;
        for r in &self.rows {
            out.write_record(r).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| invalid(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTable {
    /// File stem of the CSV.
    pub stem: String,
    pub table: Table,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub tables: Vec<NamedTable>,
}

impl ExperimentOutput {
    pub fn main(&self) -> &Table {
        &self.tables[0].table
    }

    pub fn table(&self, stem_suffix: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.stem.ends_with(stem_suffix)).map(|t| &t.table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub name: String,
    pub kind: ExperimentKind,
    pub library_version: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub files: Vec<String>,
    pub rows: Vec<usize>,
}

pub type SweepPoint = Vec<(SweepTarget, f64)>;

/// Cartesian product of the sweep axes, first axis slowest. No axes gives a
/// single empty point; an axis without values gives no points.
pub fn sweep_points(config: &ExperimentConfig) -> Vec<SweepPoint> {
    let mut points: Vec<SweepPoint> = vec![Vec::new()];
    for axis in &config.sweep {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push((axis.target, v));
                    q
                })
            })
            .collect();
    }
    points
}

fn sweep_cells(point: &SweepPoint) -> [String; 2] {
    let names: Vec<String> = point.iter().map(|(t, _)| t.label()).collect();
    let values: Vec<String> = point.iter().map(|(_, v)| v.to_string()).collect();
    [names.join(";"), values.join(";")]
}

/// Realizes the scenario of one seed at one sweep point.
pub fn build_scenario(config: &ExperimentConfig, seed: u64, point: &SweepPoint) -> Result<Scenario> {
    let g = &config.geometry;
    let geom = match g.element_spacing_m {
        Some(d) => ArrayGeometry::with_spacing(g.num_antennas, g.carrier_freq_hz, d)?,
        None => ArrayGeometry::new(g.num_antennas, g.carrier_freq_hz)?,
    };
    let z0 = geom.rayleigh_distance(0.0)?;
    let mut budget = config.budget.watts()?;
    let mut eps = config.csi.eps;
    let mut model = config.channel;
    let mut far_weight = None;

    let mut angles: Vec<f64> = Vec::with_capacity(config.users.len());
    let mut ranges: Vec<f64> = Vec::with_capacity(config.users.len());
    for u in &config.users {
        angles.push(match (u.angle_rad, u.spatial) {
            (Some(a), _) => a,
            (None, Some(s)) => s.clamp(-1.0, 1.0).asin(),
            _ => return Err(Error::Config("user without angle".into())),
        });
        ranges.push(match (u.range_m, u.range_rayleigh) {
            (Some(r), _) => r,
            (None, Some(f)) => f * z0,
            _ => return Err(Error::Config("user without range".into())),
        });
    }
    for &(target, v) in point {
        match target {
            SweepTarget::UserAngle { user } => angles[user] = v,
            SweepTarget::UserSpatial { user } => angles[user] = v.clamp(-1.0, 1.0).asin(),
            SweepTarget::UserRange { user } => ranges[user] = v,
            SweepTarget::TotalPowerW => budget = v,
            SweepTarget::CsiEps => eps = v,
            SweepTarget::RicianFactorDb => {
                let num_paths = match model {
                    ChannelModel::Rician { num_paths, .. } => num_paths,
                    ChannelModel::Los => DEFAULT_RICIAN_PATHS,
                };
                model = ChannelModel::Rician { factor_db: v, num_paths };
            }
            SweepTarget::FarWeight => far_weight = Some(v),
        }
    }

    let mut users = Vec::with_capacity(config.users.len());
    for (k, u) in config.users.iter().enumerate() {
        let mut rng = stream_rng(seed, Stream::Placement, k as u64);
        let da: f64 = rng.gen_range(-1.0..=1.0);
        let dr: f64 = rng.gen_range(-1.0..=1.0);
        let angle = angles[k] + da * u.angle_jitter_rad;
        let range = ranges[k] * (1.0 + dr * u.range_jitter);
        let spec = UserSpec::from_polar(&geom, angle, range)?;
        let weight = match far_weight {
            Some(w) if !spec.is_near() => w,
            _ => u.weight,
        };
        users.push(spec.with_weight(weight)?);
    }
    let csi = CsiModel::uniform(users.len(), eps, config.csi.normalization);
    Scenario::realize(geom, users, model, &csi, budget, dbm_to_watts(config.noise_dbm), seed)
}

fn run_in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| invalid(e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Runs every item of `config`. `jobs` caps the worker threads; `None` uses
/// the global pool.
pub fn run_experiment(config: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentOutput> {
    config.validate()?;
    let points = sweep_points(config);
    let items: Vec<(u64, &SweepPoint)> =
        config.seeds.iter().flat_map(|&s| points.iter().map(move |p| (s, p))).collect();
    run_in_pool(jobs, || match config.kind {
        ExperimentKind::Rates => run_rates(config, &items),
        ExperimentKind::Trajectory => run_trajectory(config, &items),
        ExperimentKind::PddTrace => run_pdd_trace(config, &items),
        ExperimentKind::Correlation => run_correlation(config, &items),
    })?
}

fn prefix(seed: u64, point: &SweepPoint) -> Vec<String> {
    let [p, v] = sweep_cells(point);
    vec![seed.to_string(), p, v]
}

fn run_rates(config: &ExperimentConfig, items: &[(u64, &SweepPoint)]) -> Result<ExperimentOutput> {
    let k = config.users.len();
    let mut headers: Vec<String> = ["seed", "sweep_param", "sweep_value", "scheme"].map(String::from).to_vec();
    headers.extend((0..k).map(|u| format!("rate_u{u}")));
    headers.extend(["sum_rate", "weighted_sum_rate"].map(String::from));
    headers.extend((0..k).map(|u| format!("active_u{u}")));
    headers.extend(["converged", "error"].map(String::from));

    let work: Vec<(u64, &SweepPoint, usize)> = items
        .iter()
        .flat_map(|&(s, p)| (0..config.schemes.len()).map(move |i| (s, p, i)))
        .collect();
    let rows: Vec<Vec<String>> = work
        .par_iter()
        .map(|&(seed, point, i)| {
            let entry = &config.schemes[i];
            let mut row = prefix(seed, point);
            row.push(entry.name());
            let result = build_scenario(config, seed, point)
                .and_then(|sc| run_scheme(&sc, &entry.scheme, seed, &config.power_solver));
            match result {
                Ok(o) => {
                    row.extend(o.report.per_user_rate.iter().map(|r| r.to_string()));
                    row.push(o.report.sum_rate.to_string());
                    row.push(o.report.weighted_sum_rate.to_string());
                    row.extend(o.masks.iter().map(|m| m.active_count().to_string()));
                    row.push(o.converged.map(|c| c.to_string()).unwrap_or_default());
                    row.push(String::new());
                }
                Err(e) => {
                    row.extend(std::iter::repeat(String::new()).take(2 * k + 3));
                    row.push(e.to_string());
                }
            }
            row
        })
        .collect();
    Ok(ExperimentOutput { tables: vec![NamedTable { stem: config.name.clone(), table: Table { headers, rows } }] })
}

struct TrajectoryItem {
    rows: Vec<Vec<String>>,
    fits: Vec<Vec<String>>,
}

fn trajectories(sc: &Scenario) -> Result<(Vec<DeactivationTrajectory>, Vec<f64>)> {
    let k = sc.num_users();
    if k < 2 {
        return Err(invalid("trajectories need at least two users"));
    }
    if k == 2 {
        // two-user rule: coupling per unit victim gain
        let scale = vec![sc.design[1].gain.norm(), sc.design[0].gain.norm()];
        Ok((two_user_trajectories(sc)?.to_vec(), scale))
    } else {
        let t = (0..k)
            .into_par_iter()
            .map(|u| greedy_deactivate_multi_user(u, &sc.design, 1).map(|s| s.trajectory))
            .collect::<Result<Vec<_>>>()?;
        Ok((t, vec![1.0; k]))
    }
}

fn trajectory_item(config: &ExperimentConfig, seed: u64, point: &SweepPoint) -> TrajectoryItem {
    let pre = prefix(seed, point);
    let err_row = |user: String, e: &Error, width: usize| {
        let mut r = pre.clone();
        r.push(user);
        r.extend(std::iter::repeat(String::new()).take(width));
        r.push(e.to_string());
        r
    };
    let (sc, (trajs, scale)) = match build_scenario(config, seed, point).and_then(|sc| {
        let t = trajectories(&sc)?;
        Ok((sc, t))
    }) {
        Ok(x) => x,
        Err(e) => return TrajectoryItem { rows: vec![err_row(String::new(), &e, 4)], fits: vec![err_row(String::new(), &e, 5)] },
    };
    let n = sc.num_antennas();
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for (u, t) in trajs.iter().enumerate() {
        let overlay = if n <= config.trajectory.oracle_overlay_max_n {
            min_coupling_by_cardinality(&sc, u, config.trajectory.oracle_overlay_max_n).ok()
        } else {
            None
        };
        for (l, c) in t.coupling.iter().enumerate() {
            let mut r = pre.clone();
            r.push(u.to_string());
            r.push(l.to_string());
            r.push(c.to_string());
            r.push(t.order.get(l).map(|x| x.to_string()).unwrap_or_default());
            r.push(overlay.as_ref().map(|o| (o[n - l - 1].0 / scale[u]).to_string()).unwrap_or_default());
            r.push(String::new());
            rows.push(r);
        }
        match fit_linear_decay(t, config.trajectory.floor_fraction) {
            Ok(f) => {
                let mut r = pre.clone();
                r.push(u.to_string());
                r.push(f.intercept.to_string());
                r.push(f.slope.to_string());
                r.push((f.slope * (n as f64).sqrt()).to_string());
                r.push(f.fit_range.1.to_string());
                r.push(f.residual_rmse.to_string());
                r.push(String::new());
                fits.push(r);
            }
            Err(e) => fits.push(err_row(u.to_string(), &e, 5)),
        }
    }
    TrajectoryItem { rows, fits }
}

fn run_trajectory(config: &ExperimentConfig, items: &[(u64, &SweepPoint)]) -> Result<ExperimentOutput> {
    let results: Vec<TrajectoryItem> = items.par_iter().map(|&(s, p)| trajectory_item(config, s, p)).collect();
    let mut main =
        Table::new(&["seed", "sweep_param", "sweep_value", "user", "step", "coupling", "removed_index", "oracle_min_coupling", "error"]);
    let mut fits =
        Table::new(&["seed", "sweep_param", "sweep_value", "user", "intercept", "slope", "slope_sqrt_n", "fit_end", "rmse", "error"]);
    for r in results {
        main.rows.extend(r.rows);
        fits.rows.extend(r.fits);
    }
    Ok(ExperimentOutput {
        tables: vec![
            NamedTable { stem: config.name.clone(), table: main },
            NamedTable { stem: format!("{}_fits", config.name), table: fits },
        ],
    })
}

/// PDD settings of the first `pdd` scheme in the config, or the defaults.
pub fn pdd_config_of(config: &ExperimentConfig) -> PddConfig {
    config
        .schemes
        .iter()
        .find_map(|s| match &s.scheme {
            Scheme::Pdd { config } => Some(config.clone()),
            _ => None,
        })
        .unwrap_or_default()
}

fn run_pdd_trace(config: &ExperimentConfig, items: &[(u64, &SweepPoint)]) -> Result<ExperimentOutput> {
    let pdd = pdd_config_of(config);
    let headers = [
        "seed", "sweep_param", "sweep_value", "outer_iter", "rho", "g", "sum_rate", "weighted_sum_rate", "L1", "L2", "L3",
        "inner_sweeps", "max_block_drop", "converged", "error",
    ];
    let chunks: Vec<Vec<Vec<String>>> = items
        .par_iter()
        .map(|&(seed, point)| {
            let pre = prefix(seed, point);
            let res = build_scenario(config, seed, point)
                .and_then(|sc| pdd_solve(&sc.design, &sc.weights(), sc.budget, sc.noise, &pdd));
            match res {
                Ok(r) => r
                    .trace
                    .outer
                    .iter()
                    .map(|o| {
                        let mut row = pre.clone();
                        row.extend([
                            o.outer_iter.to_string(),
                            o.rho.to_string(),
                            o.g.to_string(),
                            o.sum_rate.to_string(),
                            o.weighted_sum_rate.to_string(),
                            o.l1.to_string(),
                            o.l2.to_string(),
                            o.l3.to_string(),
                            o.inner_sweeps.to_string(),
                            o.max_block_drop.to_string(),
                            r.converged.to_string(),
                            String::new(),
                        ]);
                        row
                    })
                    .collect(),
                Err(e) => {
                    let mut row = pre;
                    row.extend(std::iter::repeat(String::new()).take(headers.len() - 4));
                    row.push(e.to_string());
                    vec![row]
                }
            }
        })
        .collect();
    let mut table = Table::new(&headers);
    table.rows = chunks.into_iter().flatten().collect();
    Ok(ExperimentOutput { tables: vec![NamedTable { stem: config.name.clone(), table }] })
}

fn run_correlation(config: &ExperimentConfig, items: &[(u64, &SweepPoint)]) -> Result<ExperimentOutput> {
    let headers = ["seed", "sweep_param", "sweep_value", "correlation", "full_array_sum_rate", "error"];
    let rows: Vec<Vec<String>> = items
        .par_iter()
        .map(|&(seed, point)| {
            let mut row = prefix(seed, point);
            let res = build_scenario(config, seed, point).and_then(|sc| {
                if sc.num_users() < 2 {
                    return Err(invalid("correlation needs at least two users"));
                }
                let c = inner(&sc.design[0].steering, &sc.design[1].steering).norm();
                let full = full_array_baseline(&sc, &config.power_solver)?;
                Ok((c, full.sum_rate()))
            });
            match res {
                Ok((c, r)) => row.extend([c.to_string(), r.to_string(), String::new()]),
                Err(e) => row.extend([String::new(), String::new(), e.to_string()]),
            }
            row
        })
        .collect();
    let mut table = Table::new(&headers);
    table.rows = rows;
    Ok(ExperimentOutput { tables: vec![NamedTable { stem: config.name.clone(), table }] })
}

/// Writes every table as `<stem>.csv`, the config as `<name>.toml` and a
/// `<name>.manifest.json` into `dir`.
pub fn write_outputs(config: &ExperimentConfig, output: &ExperimentOutput, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for t in &output.tables {
        let name = format!("{}.csv", t.stem);
        t.table.write_csv(fs::File::create(dir.join(&name))?)?;
        files.push(name);
        rows.push(t.table.rows.len());
    }
    let toml_name = format!("{}.toml", config.name);
    fs::write(dir.join(&toml_name), config.to_toml_string()?)?;
    files.push(toml_name);
    let manifest = Manifest {
        name: config.name.clone(),
        kind: config.kind,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config.hash()?,
        seeds: config.seeds.clone(),
        files,
        rows,
    };
    let path: PathBuf = dir.join(format!("{}.manifest.json", config.name));
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| invalid(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(manifest)
}

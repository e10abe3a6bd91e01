//! One realized problem instance: geometry, users, channels, budget, noise.
//!
//! Algorithms only see `design` channels (the transmitter's estimates).
//! Achieved rates are always computed on `actual` channels, which differ
//! from `design` by the CSI error.

use serde::{Deserialize, Serialize};

use crate::channel::{apply_csi_error, db_to_linear, los_channel, rician_channel, ArrayGeometry, ChannelVector, CsiModel, UserSpec};
use crate::error::{invalid, Result};
use crate::metrics::{link_gains, LinkGains, PowerVector, RateReport, SelectionMask};
use crate::rng::{derive_seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelModel {
    Los,
    Rician {
        /// LoS-to-NLoS power ratio in dB; `inf` gives pure LoS.
        factor_db: f64,
        num_paths: usize,
    },
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel::Los
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub geometry: ArrayGeometry,
    pub users: Vec<UserSpec>,
    pub design: Vec<ChannelVector>,
    pub actual: Vec<ChannelVector>,
    pub budget: f64,
    pub noise: f64,
}

impl Scenario {
    /// Pure LoS with perfect CSI.
    pub fn los(geometry: ArrayGeometry, users: Vec<UserSpec>, budget: f64, noise: f64) -> Result<Self> {
        let csi = CsiModel::perfect(users.len());
        Self::realize(geometry, users, ChannelModel::Los, &csi, budget, noise, 0)
    }

    /// Draws NLoS paths and CSI errors from streams derived from `seed`.
    pub fn realize(
        geometry: ArrayGeometry,
        users: Vec<UserSpec>,
        model: ChannelModel,
        csi: &CsiModel,
        budget: f64,
        noise: f64,
        seed: u64,
    ) -> Result<Self> {
        if users.is_empty() {
            return Err(invalid("scenario needs at least one user"));
        }
        if !(budget > 0.0) || !(noise > 0.0) {
            return Err(invalid("budget and noise must be positive"));
        }
        if csi.eps.len() != users.len() {
            return Err(invalid("one CSI uncertainty per user required"));
        }
        let beta = geometry.free_space_reference_gain();
        let mut design = Vec::with_capacity(users.len());
        for (k, u) in users.iter().enumerate() {
            let ch = match model {
                ChannelModel::Los => los_channel(&geometry, u, beta)?,
                ChannelModel::Rician { factor_db, .. } if factor_db.is_infinite() && factor_db > 0.0 => {
                    los_channel(&geometry, u, beta)?
                }
                ChannelModel::Rician { factor_db, num_paths } => rician_channel(
                    &geometry,
                    u,
                    beta,
                    db_to_linear(factor_db),
                    num_paths,
                    derive_seed(seed, Stream::Nlos, k as u64),
                )?,
            };
            design.push(ch);
        }
        let actual = design
            .iter()
            .enumerate()
            .map(|(k, h)| apply_csi_error(h, csi.eps[k], csi.normalization, derive_seed(seed, Stream::Csi, k as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { geometry, users, design, actual, budget, noise })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.geometry.num_antennas()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.weight()).collect()
    }

    pub fn design_gains(&self, masks: &[SelectionMask]) -> Result<LinkGains> {
        link_gains(&self.design, masks)
    }

    /// Rates of `masks`/`powers` on the actual channels.
    pub fn evaluate(&self, masks: &[SelectionMask], powers: &PowerVector) -> Result<RateReport> {
        if powers.len() != self.num_users() {
            return Err(invalid("one power per user required"));
        }
        let gains = link_gains(&self.actual, masks)?;
        Ok(gains.report(powers.powers(), self.noise).with_weights(&self.weights()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::CsiNormalization;

    fn users(g: &ArrayGeometry) -> Vec<UserSpec> {
        vec![UserSpec::new(g, 0.0, 5.0).unwrap(), UserSpec::new(g, 0.3, 150.0).unwrap()]
    }

    #[test]
    fn perfect_csi_design_equals_actual() {
        let g = ArrayGeometry::new(32, 30e9).unwrap();
        let s = Scenario::los(g.clone(), users(&g), 1.0, 1e-11).unwrap();
        assert_eq!(s.design, s.actual);
        let inf = ChannelModel::Rician { factor_db: f64::INFINITY, num_paths: 4 };
        let r = Scenario::realize(g.clone(), users(&g), inf, &CsiModel::perfect(2), 1.0, 1e-11, 3).unwrap();
        assert_eq!(r.design, s.design);
    }

    #[test]
    fn seeded_realizations_are_reproducible() {
        let g = ArrayGeometry::new(32, 30e9).unwrap();
        let model = ChannelModel::Rician { factor_db: 0.0, num_paths: 3 };
        let csi = CsiModel::uniform(2, 0.1, CsiNormalization::PerEntry);
        let a = Scenario::realize(g.clone(), users(&g), model, &csi, 1.0, 1e-11, 9).unwrap();
        let b = Scenario::realize(g.clone(), users(&g), model, &csi, 1.0, 1e-11, 9).unwrap();
        let c = Scenario::realize(g.clone(), users(&g), model, &csi, 1.0, 1e-11, 10).unwrap();
        assert_eq!(a.actual, b.actual);
        assert_ne!(a.actual, c.actual);
        assert_ne!(a.design, a.actual);
    }

    #[test]
    fn rejects_bad_setup() {
        let g = ArrayGeometry::new(8, 30e9).unwrap();
        assert!(Scenario::los(g.clone(), vec![], 1.0, 1e-11).is_err());
        assert!(Scenario::los(g.clone(), users(&g), 0.0, 1e-11).is_err());
    }
}

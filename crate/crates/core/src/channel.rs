//! Network scenarios and Monte-Carlo channel draws.
//!
//! A scenario fixes the deterministic side of the model: dimensions,
//! per-link average channel gains, Ricean factor, estimation-error
//! fraction, power budget and user weights. Draws sample the random side:
//! per-transmitter channel estimates and estimation errors whose sum is
//! the true channel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::rng::{complex_gaussian, stream, Domain};

/// Total radiated power budget in mW shared by all users.
pub const DEFAULT_P_SUM_MW: f64 = 100.0;
/// Receiver noise bandwidth in Hz.
pub const BANDWIDTH_HZ: f64 = 20e6;
/// Receiver noise figure in dB.
pub const NOISE_FIGURE_DB: f64 = 7.0;
/// Vertical offset between transmitters and receivers in meters.
pub const HEIGHT_OFFSET_M: f64 = 10.0;

/// Path loss in dB at carrier 2 GHz for a 3D distance in meters.
pub fn path_loss_db(d_m: f64) -> f64 {
    36.7 * d_m.log10() + 22.7 + 26.0 * 2.0f64.log10()
}

/// Thermal noise power in dBm over [`BANDWIDTH_HZ`] with the receiver
/// noise figure applied.
pub fn noise_power_dbm() -> f64 {
    -174.0 + 10.0 * BANDWIDTH_HZ.log10() + NOISE_FIGURE_DB
}

/// Deterministic description of one network.
///
/// `rho2[(l, k)]` is the average channel gain between transmitter `l` and
/// user `k`, normalized by the noise power, in 1/mW: a transmit power of
/// `p` mW into a unit-norm beam yields receive SNR `p * rho2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkScenario {
    pub tx_count: usize,
    pub antennas_per_tx: usize,
    pub user_count: usize,
    #[serde(with = "crate::serde_mat::real_matrix")]
    pub rho2: DMatrix<f64>,
    /// Ricean factor; 0 is Rayleigh fading.
    pub kappa: f64,
    /// Fraction of each entry's variance lost to estimation error.
    pub epsilon: f64,
    /// Per-user power budget in mW, noise-normalized.
    pub per_user_power: f64,
    /// Per-user MSE weights on the scaled simplex (sum = user count).
    #[serde(with = "crate::serde_mat::real_vector")]
    pub weights: DVector<f64>,
}

impl NetworkScenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tx_count: usize,
        antennas_per_tx: usize,
        user_count: usize,
        rho2: DMatrix<f64>,
        kappa: f64,
        epsilon: f64,
        per_user_power: f64,
        weights: DVector<f64>,
    ) -> Result<Self> {
        let s = NetworkScenario {
            tx_count,
            antennas_per_tx,
            user_count,
            rho2,
            kappa,
            epsilon,
            per_user_power,
            weights,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tx_count == 0 || self.antennas_per_tx == 0 || self.user_count == 0 {
            return Err(Error::InvalidScenario("dimensions must be positive".into()));
        }
        if self.user_count <= self.antennas_per_tx {
            return Err(Error::InvalidScenario(format!(
                "user count {} must exceed antennas per TX {}",
                self.user_count, self.antennas_per_tx
            )));
        }
        if self.rho2.nrows() != self.tx_count || self.rho2.ncols() != self.user_count {
            return Err(Error::InvalidScenario("rho2 has wrong dimensions".into()));
        }
        if !self.rho2.iter().all(|g| g.is_finite() && *g > 0.0) {
            return Err(Error::InvalidScenario(
                "rho2 entries must be strictly positive and finite".into(),
            ));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::InvalidScenario(
                "kappa must be finite and >= 0".into(),
            ));
        }
        if self.kappa > 0.0 && self.antennas_per_tx != 1 {
            return Err(Error::InvalidScenario(
                "Ricean fading (kappa > 0) is only modeled for single-antenna TXs".into(),
            ));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidScenario("epsilon must lie in [0, 1)".into()));
        }
        if !(self.per_user_power.is_finite() && self.per_user_power > 0.0) {
            return Err(Error::InvalidScenario(
                "per-user power must be positive".into(),
            ));
        }
        if self.weights.len() != self.user_count {
            return Err(Error::InvalidScenario(
                "weights must have one entry per user".into(),
            ));
        }
        if !self.weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return Err(Error::InvalidScenario("weights must be nonnegative".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - self.user_count as f64).abs() > 1e-9 * self.user_count as f64 {
            return Err(Error::InvalidScenario(format!(
                "weights must sum to the user count, got {sum}"
            )));
        }
        Ok(())
    }

    /// Mean of every antenna entry of the channel between TX `l` and user `k`.
    pub fn mean_entry(&self, l: usize, k: usize) -> f64 {
        (self.kappa / (self.kappa + 1.0) * self.rho2[(l, k)]).sqrt()
    }

    /// Variance of one estimate entry.
    pub fn hhat_entry_var(&self, l: usize, k: usize) -> f64 {
        (1.0 - self.epsilon) * self.rho2[(l, k)] / (self.kappa + 1.0)
    }

    /// Variance of one estimation-error entry.
    pub fn err_entry_var(&self, l: usize, k: usize) -> f64 {
        self.epsilon * self.rho2[(l, k)] / (self.kappa + 1.0)
    }

    /// Scale of the error covariance at TX `l`: `E[E_l^H E_l] = sigma * I`.
    pub fn sigma_scalar(&self, l: usize) -> f64 {
        (0..self.user_count).map(|k| self.err_entry_var(l, k)).sum()
    }

    /// Receive SNR of user 0 in dB when the whole per-user budget is
    /// spent on it: `P * sum_l rho2[l, 0]`.
    pub fn snr_db(&self) -> f64 {
        let gain: f64 = (0..self.tx_count).map(|l| self.rho2[(l, 0)]).sum();
        10.0 * (self.per_user_power * gain).log10()
    }

    pub fn is_uniform_weights(&self) -> bool {
        self.weights.iter().all(|w| (w - 1.0).abs() <= 1e-12)
    }

    /// Scenario whose draws are distributed like `W^{1/2} H` for this one:
    /// user `k`'s gains are scaled by `weights[k]`, and the weights reset
    /// to one. Schemes for a weighted objective run on this scenario.
    pub fn weighted(&self) -> NetworkScenario {
        let mut rho2 = self.rho2.clone();
        for k in 0..self.user_count {
            let w = self.weights[k];
            for l in 0..self.tx_count {
                rho2[(l, k)] *= w;
            }
        }
        NetworkScenario {
            rho2,
            weights: DVector::from_element(self.user_count, 1.0),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: NetworkScenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

/// Scenario with unit gains everywhere, Rayleigh fading and perfect
/// estimates.
pub fn iid_scenario(
    tx_count: usize,
    antennas_per_tx: usize,
    user_count: usize,
    per_user_power: f64,
) -> Result<NetworkScenario> {
    NetworkScenario::new(
        tx_count,
        antennas_per_tx,
        user_count,
        DMatrix::from_element(tx_count, user_count, 1.0),
        0.0,
        0.0,
        per_user_power,
        DVector::from_element(user_count, 1.0),
    )
}

/// Radio-stripe scenario: `tx_count` transmitters equally spaced on a
/// circle of radius `r1_m`, users placed uniformly at random in the
/// concentric disc of radius `r2_m`, 3GPP-style path loss at 2 GHz and a
/// 10 m height offset. The power budget is [`DEFAULT_P_SUM_MW`] split
/// evenly across users.
pub fn build_radio_stripe_scenario(
    tx_count: usize,
    antennas_per_tx: usize,
    user_count: usize,
    r1_m: f64,
    r2_m: f64,
    seed: u64,
) -> Result<NetworkScenario> {
    build_radio_stripe_realization(tx_count, antennas_per_tx, user_count, r1_m, r2_m, seed, 0)
}

/// Same as [`build_radio_stripe_scenario`] but with an explicit placement
/// realization index, so experiments can draw many independent user
/// placements from one seed.
pub fn build_radio_stripe_realization(
    tx_count: usize,
    antennas_per_tx: usize,
    user_count: usize,
    r1_m: f64,
    r2_m: f64,
    seed: u64,
    realization: u64,
) -> Result<NetworkScenario> {
    if !(r1_m.is_finite() && r2_m.is_finite() && r1_m > 0.0 && r2_m >= 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "radii must be finite and positive, got r1 = {r1_m}, r2 = {r2_m}"
        )));
    }
    if r2_m >= r1_m {
        return Err(Error::InvalidGeometry(format!(
            "user disc radius {r2_m} must be smaller than stripe radius {r1_m}"
        )));
    }
    let mut rng = stream(seed, Domain::Placement, realization, 0);
    let noise_dbm = noise_power_dbm();
    let mut users = Vec::with_capacity(user_count);
    for _ in 0..user_count {
        let u: f64 = rand::Rng::gen(&mut rng);
        let theta: f64 = rand::Rng::gen::<f64>(&mut rng) * std::f64::consts::TAU;
        let r = r2_m * u.sqrt();
        users.push((r * theta.cos(), r * theta.sin()));
    }
    let rho2 = DMatrix::from_fn(tx_count, user_count, |l, k| {
        let phi = std::f64::consts::TAU * l as f64 / tx_count as f64;
        let (tx_x, tx_y) = (r1_m * phi.cos(), r1_m * phi.sin());
        let (ux, uy) = users[k];
        let planar2 = (tx_x - ux).powi(2) + (tx_y - uy).powi(2);
        let d = (planar2 + HEIGHT_OFFSET_M * HEIGHT_OFFSET_M).sqrt();
        10f64.powf(-(path_loss_db(d) + noise_dbm) / 10.0)
    });
    NetworkScenario::new(
        tx_count,
        antennas_per_tx,
        user_count,
        rho2,
        0.0,
        0.0,
        DEFAULT_P_SUM_MW / user_count as f64,
        DVector::from_element(user_count, 1.0),
    )
}

/// One joint realization of estimates and estimation errors.
///
/// The true channel to TX `l` is exactly `hhat[l] + err[l]`; both are
/// `K x N` with one row per user.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    pub hhat: Vec<CMat>,
    pub err: Vec<CMat>,
    /// Per-TX error covariance scale: `Sigma_l = sigma[l] * I`.
    pub sigma: Vec<f64>,
}

impl ChannelDraw {
    pub fn tx_count(&self) -> usize {
        self.hhat.len()
    }

    pub fn user_count(&self) -> usize {
        self.hhat[0].nrows()
    }

    pub fn antennas_per_tx(&self) -> usize {
        self.hhat[0].ncols()
    }

    pub fn true_channel(&self, l: usize) -> CMat {
        &self.hhat[l] + &self.err[l]
    }

    /// True channel for all TXs stacked to `K x (L*N)`.
    pub fn stacked_true(&self) -> CMat {
        let (k, n, l) = (self.user_count(), self.antennas_per_tx(), self.tx_count());
        let mut out = CMat::zeros(k, l * n);
        for (i, (h, e)) in self.hhat.iter().zip(&self.err).enumerate() {
            out.view_mut((0, i * n), (k, n)).copy_from(&(h + e));
        }
        out
    }

    /// Estimates for all TXs stacked to `K x (L*N)`.
    pub fn stacked_hhat(&self) -> CMat {
        let (k, n, l) = (self.user_count(), self.antennas_per_tx(), self.tx_count());
        let mut out = CMat::zeros(k, l * n);
        for (i, h) in self.hhat.iter().enumerate() {
            out.view_mut((0, i * n), (k, n)).copy_from(h);
        }
        out
    }

    /// Draw transformed like the user-weighted channel `W^{1/2} H`:
    /// user rows scaled by `sqrt(w_k)`, covariance scales replaced.
    pub fn row_scaled(&self, sqrt_w: &DVector<f64>, sigma: &[f64]) -> ChannelDraw {
        let scale = |m: &CMat| {
            let mut out = m.clone();
            for k in 0..out.nrows() {
                let w = sqrt_w[k];
                for c in 0..out.ncols() {
                    out[(k, c)] *= w;
                }
            }
            out
        };
        ChannelDraw {
            hhat: self.hhat.iter().map(scale).collect(),
            err: self.err.iter().map(scale).collect(),
            sigma: sigma.to_vec(),
        }
    }
}

/// Samples the estimate and error blocks of a single TX for draw number
/// `index`. Equal to the corresponding blocks of [`draw_channel`] with
/// the same arguments; statistics that need only one TX per draw use
/// this directly.
pub fn draw_tx_channel(
    scenario: &NetworkScenario,
    seed: u64,
    domain: Domain,
    index: u64,
    l: usize,
) -> (CMat, CMat) {
    let (n, k_count) = (scenario.antennas_per_tx, scenario.user_count);
    let mut rng = stream(seed, domain, index, l as u64);
    let mut h = CMat::zeros(k_count, n);
    let mut e = CMat::zeros(k_count, n);
    for k in 0..k_count {
        let mean = scenario.mean_entry(l, k);
        let sd_h = scenario.hhat_entry_var(l, k).sqrt();
        let sd_e = scenario.err_entry_var(l, k).sqrt();
        for a in 0..n {
            let g1 = complex_gaussian(&mut rng);
            let g2 = complex_gaussian(&mut rng);
            h[(k, a)] = g1 * sd_h + mean;
            e[(k, a)] = g2 * sd_e;
        }
    }
    (h, e)
}

/// Samples draw number `index` of the given stream domain.
///
/// Entries are independent complex Gaussians: the estimate carries the
/// Ricean mean and `(1 - epsilon)` of the fading variance, the error is
/// zero-mean with the remaining `epsilon` share, so their sum has the
/// full model distribution.
pub fn draw_channel(
    scenario: &NetworkScenario,
    seed: u64,
    domain: Domain,
    index: u64,
) -> ChannelDraw {
    let l_count = scenario.tx_count;
    let mut hhat = Vec::with_capacity(l_count);
    let mut err = Vec::with_capacity(l_count);
    let mut sigma = Vec::with_capacity(l_count);
    for l in 0..l_count {
        let (h, e) = draw_tx_channel(scenario, seed, domain, index, l);
        hhat.push(h);
        err.push(e);
        sigma.push(scenario.sigma_scalar(l));
    }
    ChannelDraw { hhat, err, sigma }
}

//! Rate evaluation through the dual-uplink route.
//!
//! For each scheme the pipeline is: Monte-Carlo channel/precoder moments,
//! per-user self-interference-aware SINR, a downlink power allocation
//! solved from a K x K linear system, and finally channel-hardening rates
//! that provably coincide with the dual SINRs. The objective value
//! (weighted MSE plus power penalty) is computed from the same moments.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_channel, NetworkScenario};
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::precoding::{SchemeEngine, SchemeKind};
use crate::rng::Domain;

/// Number of interleaved accumulation batches used for standard errors.
pub const BATCH_COUNT: usize = 10;

const BLOCK: u64 = 512;

/// Sample moments of the effective channel-precoder products for one
/// scheme: `y_{j,k} = g_j^H t_k` over the true channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCore {
    /// Per user `k`: sample mean of the own-channel gain `y_{k,k}`.
    pub mean_gain: Vec<Complex64>,
    /// `[(j, k)]`: sample mean of `|y_{j,k}|^2`.
    #[serde(with = "crate::serde_mat::real_matrix")]
    pub second_moments: DMatrix<f64>,
    /// Per user `k`: sample mean of the network-wide precoder power.
    pub power: Vec<f64>,
    pub sample_count: usize,
}

impl MomentCore {
    fn zeros(k: usize) -> MomentCore {
        MomentCore {
            mean_gain: vec![Complex64::new(0.0, 0.0); k],
            second_moments: DMatrix::zeros(k, k),
            power: vec![0.0; k],
            sample_count: 0,
        }
    }

    fn absorb(&mut self, y: &CMat, power: &[f64]) {
        let k = power.len();
        for u in 0..k {
            self.mean_gain[u] += y[(u, u)];
            self.power[u] += power[u];
            for j in 0..k {
                self.second_moments[(j, u)] += y[(j, u)].norm_sqr();
            }
        }
        self.sample_count += 1;
    }

    fn merge(&mut self, other: &MomentCore) {
        for u in 0..self.mean_gain.len() {
            self.mean_gain[u] += other.mean_gain[u];
            self.power[u] += other.power[u];
        }
        self.second_moments += &other.second_moments;
        self.sample_count += other.sample_count;
    }

    fn finalize(mut self) -> MomentCore {
        let m = self.sample_count as f64;
        if self.sample_count > 0 {
            for u in 0..self.mean_gain.len() {
                self.mean_gain[u] /= m;
                self.power[u] /= m;
            }
            self.second_moments /= m;
        }
        self
    }

    pub fn user_count(&self) -> usize {
        self.mean_gain.len()
    }

    /// Bias-corrected per-user variance of the own-channel gain.
    pub fn gain_variances(&self) -> Vec<f64> {
        let m = self.sample_count as f64;
        let factor = if self.sample_count >= 2 {
            m / (m - 1.0)
        } else {
            0.0
        };
        (0..self.user_count())
            .map(|u| factor * (self.second_moments[(u, u)] - self.mean_gain[u].norm_sqr()).max(0.0))
            .collect()
    }
}

/// Moments plus interleaved batch splits for uncertainty estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentEstimates {
    pub core: MomentCore,
    /// Draw `i` lands in batch `i mod BATCH_COUNT`; batch spread yields
    /// standard errors for every derived quantity.
    pub batches: Vec<MomentCore>,
    pub seed: u64,
}

/// Accumulates the evaluation moments of `engine` over `m_eval` draws of
/// a dedicated stream. The precoders see the engine's (possibly
/// weight-folded) view of each draw; the moments always use the raw true
/// channel, with weights applied later in the rate formulas.
pub fn estimate_moments(
    scenario: &NetworkScenario,
    engine: &SchemeEngine,
    m_eval: usize,
    seed: u64,
) -> Result<MomentEstimates> {
    if m_eval == 0 {
        return Err(Error::StatsOutOfRange(
            "evaluation needs at least 1 draw".into(),
        ));
    }
    let k = scenario.user_count;
    let m = m_eval as u64;
    let blocks = m.div_ceil(BLOCK);
    let partials: Vec<Result<Vec<MomentCore>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut accs = vec![MomentCore::zeros(k); BATCH_COUNT];
            for i in b * BLOCK..((b + 1) * BLOCK).min(m) {
                let draw = draw_channel(scenario, seed, Domain::Eval, i);
                let set = engine.precode(&draw)?;
                let y = draw.stacked_true() * set.stacked();
                let power: Vec<f64> = (0..k).map(|u| set.user_power(u)).collect();
                accs[(i % BATCH_COUNT as u64) as usize].absorb(&y, &power);
            }
            Ok(accs)
        })
        .collect();
    let mut batches = vec![MomentCore::zeros(k); BATCH_COUNT];
    for p in partials {
        let p = p?;
        for (acc, part) in batches.iter_mut().zip(&p) {
            acc.merge(part);
        }
    }
    let mut core = MomentCore::zeros(k);
    for b in &batches {
        core.merge(b);
    }
    Ok(MomentEstimates {
        core: core.finalize(),
        batches: batches.into_iter().map(MomentCore::finalize).collect(),
        seed,
    })
}

/// Weighted objective per user:
/// `sum_j w_j E|y_{j,k}|^2 - 2 sqrt(w_k) Re E[y_{k,k}] + 1 + E[norm(t_k)^2]/P`.
pub fn evaluate_mse(core: &MomentCore, weights: &DVector<f64>, power: f64) -> DVector<f64> {
    let k = core.user_count();
    DVector::from_fn(k, |u, _| {
        let mut acc = 1.0 + core.power[u] / power;
        for j in 0..k {
            acc += weights[j] * core.second_moments[(j, u)];
        }
        acc - 2.0 * weights[u].sqrt() * core.mean_gain[u].re
    })
}

/// Lowest objective user `k` can reach by rescaling its precoder alone;
/// equals `1 / (1 + SINR)` with the uncorrected variance.
pub fn min_scaled_mse(
    core: &MomentCore,
    weights: &DVector<f64>,
    power: f64,
    k: usize,
) -> Result<f64> {
    let mut total = core.power[k] / power;
    for j in 0..core.user_count() {
        total += weights[j] * core.second_moments[(j, k)];
    }
    if total <= 0.0 {
        return Err(Error::DegenerateDenominator {
            user: k,
            value: total,
        });
    }
    Ok(1.0 - weights[k] * core.mean_gain[k].norm_sqr() / total)
}

/// Dual-uplink SINR per user:
/// `w_k |m_k|^2 / (w_k var_k + sum_{j != k} w_j E|y_{j,k}|^2 + E[norm(t_k)^2]/P)`.
pub fn uatf_sinr(core: &MomentCore, weights: &DVector<f64>, power: f64) -> Result<DVector<f64>> {
    let k = core.user_count();
    let var = core.gain_variances();
    let mut out = DVector::zeros(k);
    for u in 0..k {
        let mut denom = weights[u] * var[u] + core.power[u] / power;
        for j in 0..k {
            if j != u {
                denom += weights[j] * core.second_moments[(j, u)];
            }
        }
        if denom <= 0.0 {
            return Err(Error::DegenerateDenominator {
                user: u,
                value: denom,
            });
        }
        out[u] = weights[u] * core.mean_gain[u].norm_sqr() / denom;
    }
    Ok(out)
}

fn solve_real(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    if !a.iter().all(|x| x.is_finite()) || !b.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularMatrix { context });
    }
    let sol = a
        .clone()
        .lu()
        .solve(b)
        .ok_or(Error::SingularMatrix { context })?;
    if !sol.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularMatrix { context });
    }
    Ok(sol)
}

/// Downlink power allocation realizing the dual-uplink SINRs under the
/// total budget `P * sum_k w_k`: solves the K x K system
/// `(D^{-1} - B) p~ = (D^{-1} - B^T) w`, then `p_k = p~_k P / E[norm(t_k)^2]`.
pub fn dl_power_allocation(
    core: &MomentCore,
    weights: &DVector<f64>,
    power: f64,
) -> Result<DVector<f64>> {
    let k = core.user_count();
    let sinr = uatf_sinr(core, weights, power)?;
    let var = core.gain_variances();
    let mut system = DMatrix::zeros(k, k);
    for u in 0..k {
        let gain2 = core.mean_gain[u].norm_sqr();
        if gain2 <= 0.0 || core.power[u] <= 0.0 {
            return Err(Error::DegenerateDenominator {
                user: u,
                value: gain2,
            });
        }
        let d = sinr[u] * core.power[u] / gain2;
        for j in 0..k {
            let b = if j == u {
                var[u]
            } else {
                core.second_moments[(j, u)]
            };
            system[(j, u)] -= b / core.power[u];
        }
        system[(u, u)] += 1.0 / d;
    }
    let rhs = &system.transpose() * weights;
    let p_tilde = solve_real(&system, &rhs, "power allocation system")?;
    let sum_w: f64 = weights.iter().sum();
    let sum_p: f64 = p_tilde.iter().sum();
    if (sum_p - sum_w).abs() > 1e-6 * sum_w.max(1.0) {
        return Err(Error::SingularMatrix {
            context: "power allocation sum check",
        });
    }
    let mut p = DVector::zeros(k);
    for u in 0..k {
        let value = p_tilde[u] * power / core.power[u];
        if value < -1e-9 {
            return Err(Error::NegativePower { user: u, value });
        }
        p[u] = value.max(0.0);
    }
    Ok(p)
}

/// Downlink hardening rate per user under explicit transmit powers:
/// `log2(1 + p_k |m_k|^2 / (p_k var_k + sum_{j != k} p_j E|y_{k,j}|^2 + 1))`.
/// Interference indexes row `k` of the second moments (who user `k`
/// hears), transposed relative to the dual-uplink expression.
pub fn hardening_rate(core: &MomentCore, p: &DVector<f64>) -> DVector<f64> {
    let k = core.user_count();
    let var = core.gain_variances();
    DVector::from_fn(k, |u, _| {
        let mut denom = 1.0 + p[u] * var[u];
        for j in 0..k {
            if j != u {
                denom += p[j] * core.second_moments[(u, j)];
            }
        }
        (1.0 + p[u] * core.mean_gain[u].norm_sqr() / denom).log2()
    })
}

/// Per-user rate summary for one scheme.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserRate {
    pub user: usize,
    pub mse: f64,
    /// `-log2(MSE)`; coincides with `rate_bits` for schemes that are
    /// stationary points of the objective.
    pub rate_dual_bits: f64,
    pub sinr_uatf: f64,
    /// Hardening rate under the dual power allocation, bits/channel use.
    pub rate_bits: f64,
    /// Batch-spread standard error of `rate_bits`.
    pub rate_se: f64,
    /// Allocated transmit power in mW.
    pub p_mw: f64,
}

/// Full rate evaluation of one scheme on one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    pub scheme: SchemeKind,
    pub users: Vec<UserRate>,
    /// Total radiated power `sum_k p_k E[norm(t_k)^2]` in mW.
    pub radiated_power_mw: f64,
    /// Budget `P * sum_k w_k` the allocation must exhaust, in mW.
    pub power_budget_mw: f64,
    pub m_eval: usize,
    pub seed: u64,
    /// Optional pointer to a residual/diagnostics artifact.
    pub diagnostics_ref: Option<String>,
}

pub const RATE_CSV_HEADER: &str = "scheme,user,MSE,SINR_uatf_dB,rate_bits,p_mW,M_eval,seed";

impl RateReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(RATE_CSV_HEADER);
        out.push('\n');
        for u in &self.users {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.scheme,
                u.user,
                u.mse,
                10.0 * u.sinr_uatf.log10(),
                u.rate_bits,
                u.p_mw,
                self.m_eval,
                self.seed
            ));
        }
        out
    }
}

/// Per-user columns (MSE, SINR, allocated power, rate) from one pass of
/// the moment-to-rate pipeline.
type PipelineColumns = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

fn pipeline(core: &MomentCore, weights: &DVector<f64>, power: f64) -> Result<PipelineColumns> {
    let mse = evaluate_mse(core, weights, power);
    let sinr = uatf_sinr(core, weights, power)?;
    let p = dl_power_allocation(core, weights, power)?;
    let rates = hardening_rate(core, &p);
    for u in 0..core.user_count() {
        let dual = (1.0 + sinr[u]).log2();
        if (rates[u] - dual).abs() > 1e-6 * dual.abs().max(1.0) {
            return Err(Error::StatsOutOfRange(format!(
                "duality identity violated for user {u}: hardening {} vs dual {}",
                rates[u], dual
            )));
        }
    }
    Ok((mse, sinr, p, rates))
}

/// Runs the full moment-to-rate pipeline for one prepared scheme.
pub fn evaluate_rates(
    scenario: &NetworkScenario,
    engine: &SchemeEngine,
    m_eval: usize,
    seed: u64,
) -> Result<RateReport> {
    let estimates = estimate_moments(scenario, engine, m_eval, seed)?;
    rates_from_moments(scenario, engine.kind(), &estimates)
}

/// Same as [`evaluate_rates`] but starting from precomputed moments.
pub fn rates_from_moments(
    scenario: &NetworkScenario,
    scheme: SchemeKind,
    estimates: &MomentEstimates,
) -> Result<RateReport> {
    let weights = &scenario.weights;
    let power = scenario.per_user_power;
    let k = scenario.user_count;
    let (mse, sinr, p, rates) = pipeline(&estimates.core, weights, power)?;
    let mut batch_rates = Vec::with_capacity(BATCH_COUNT);
    for b in &estimates.batches {
        if b.sample_count >= 2 {
            batch_rates.push(pipeline(b, weights, power)?.3);
        }
    }
    let se = DVector::from_fn(k, |u, _| {
        if batch_rates.len() < 2 {
            return 0.0;
        }
        let j = batch_rates.len() as f64;
        let mean = batch_rates.iter().map(|r| r[u]).sum::<f64>() / j;
        let var = batch_rates
            .iter()
            .map(|r| (r[u] - mean).powi(2))
            .sum::<f64>()
            / (j - 1.0);
        (var / j).sqrt()
    });
    let users = (0..k)
        .map(|u| UserRate {
            user: u,
            mse: mse[u],
            rate_dual_bits: -mse[u].log2(),
            sinr_uatf: sinr[u],
            rate_bits: rates[u],
            rate_se: se[u],
            p_mw: p[u],
        })
        .collect();
    let radiated: f64 = (0..k).map(|u| p[u] * estimates.core.power[u]).sum();
    let budget = power * weights.iter().sum::<f64>();
    Ok(RateReport {
        scheme,
        users,
        radiated_power_mw: radiated,
        power_budget_mw: budget,
        m_eval: estimates.core.sample_count,
        seed: estimates.seed,
        diagnostics_ref: None,
    })
}

//! Per-draw precoder construction for every supported scheme.
//!
//! Each scheme maps one channel realization to a set of per-TX precoding
//! matrices under that scheme's information constraint: local schemes see
//! only the own-TX estimate, serial schemes see everything up to their
//! position in the chain, centralized schemes see all estimates. Schemes
//! that coordinate through long-term statistics take a prepared
//! statistics or coefficient object; [`SchemeEngine`] bundles the
//! preparation and the per-draw call behind one interface.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_tx_channel, ChannelDraw, NetworkScenario};
use crate::error::{Error, Result};
use crate::linalg::{eye, guarded_solve, hermitianize, max_abs, CMat};
use crate::rng::Domain;
use crate::stats::{
    estimate_local_pi, estimate_unidirectional_pi, local_mmse_stage, parallel_moments,
    LongTermStats, StatsKind,
};

/// Tag carried by a [`PrecoderSet`] identifying the scheme that built it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "local_tmmse")]
    LocalTmmse,
    #[serde(rename = "uni_tmmse")]
    UnidirectionalTmmse,
    #[serde(rename = "centralized_recursive")]
    CentralizedRecursive,
    #[serde(rename = "centralized_direct")]
    CentralizedDirect,
    #[serde(rename = "mrt")]
    Mrt,
    #[serde(rename = "obe")]
    Obe,
    #[serde(rename = "local_mmse_lsfd")]
    LocalMmseLsfd,
    #[serde(rename = "sgd")]
    Sgd,
    #[serde(rename = "seq_zf")]
    SequentialZf,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::LocalTmmse => "local_tmmse",
            Scheme::UnidirectionalTmmse => "uni_tmmse",
            Scheme::CentralizedRecursive => "centralized_recursive",
            Scheme::CentralizedDirect => "centralized_direct",
            Scheme::Mrt => "mrt",
            Scheme::Obe => "obe",
            Scheme::LocalMmseLsfd => "local_mmse_lsfd",
            Scheme::Sgd => "sgd",
            Scheme::SequentialZf => "seq_zf",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Selectable engine configurations. `SgdRobust` is the tuned-step
/// variant of [`Scheme::Sgd`] and emits precoders under that tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    #[serde(rename = "local_tmmse")]
    LocalTmmse,
    #[serde(rename = "uni_tmmse")]
    UnidirectionalTmmse,
    #[serde(rename = "centralized_recursive")]
    CentralizedRecursive,
    #[serde(rename = "centralized_direct")]
    CentralizedDirect,
    #[serde(rename = "mrt")]
    Mrt,
    #[serde(rename = "obe")]
    Obe,
    #[serde(rename = "local_mmse_lsfd")]
    LocalMmseLsfd,
    #[serde(rename = "sgd")]
    Sgd,
    #[serde(rename = "sgd_robust")]
    SgdRobust,
    #[serde(rename = "seq_zf")]
    SequentialZf,
}

pub const ALL_SCHEME_KINDS: [SchemeKind; 10] = [
    SchemeKind::LocalTmmse,
    SchemeKind::UnidirectionalTmmse,
    SchemeKind::CentralizedRecursive,
    SchemeKind::CentralizedDirect,
    SchemeKind::Mrt,
    SchemeKind::Obe,
    SchemeKind::LocalMmseLsfd,
    SchemeKind::Sgd,
    SchemeKind::SgdRobust,
    SchemeKind::SequentialZf,
];

impl SchemeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeKind::SgdRobust => "sgd_robust",
            other => other.tag().as_str(),
        }
    }

    /// The scheme tag this engine stamps on its output.
    pub fn tag(&self) -> Scheme {
        match self {
            SchemeKind::LocalTmmse => Scheme::LocalTmmse,
            SchemeKind::UnidirectionalTmmse => Scheme::UnidirectionalTmmse,
            SchemeKind::CentralizedRecursive => Scheme::CentralizedRecursive,
            SchemeKind::CentralizedDirect => Scheme::CentralizedDirect,
            SchemeKind::Mrt => Scheme::Mrt,
            SchemeKind::Obe => Scheme::Obe,
            SchemeKind::LocalMmseLsfd => Scheme::LocalMmseLsfd,
            SchemeKind::Sgd | SchemeKind::SgdRobust => Scheme::Sgd,
            SchemeKind::SequentialZf => Scheme::SequentialZf,
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_SCHEME_KINDS
            .iter()
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| Error::UnsupportedScheme(s.to_string()))
    }
}

/// Precoders of all TXs for one channel realization: `per_tx[l]` is
/// `N x K` with column `k` the beam TX `l` dedicates to user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub scheme_tag: Scheme,
    pub per_tx: Vec<CMat>,
}

impl PrecoderSet {
    pub fn tx_count(&self) -> usize {
        self.per_tx.len()
    }

    pub fn user_count(&self) -> usize {
        self.per_tx[0].ncols()
    }

    /// All precoders stacked to `(L*N) x K`.
    pub fn stacked(&self) -> CMat {
        let (n, k) = (self.per_tx[0].nrows(), self.user_count());
        let mut out = CMat::zeros(self.tx_count() * n, k);
        for (l, t) in self.per_tx.iter().enumerate() {
            out.view_mut((l * n, 0), (n, k)).copy_from(t);
        }
        out
    }

    /// Squared norm of user `k`'s network-wide precoder.
    pub fn user_power(&self, k: usize) -> f64 {
        self.per_tx.iter().map(|t| t.column(k).norm_squared()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.per_tx {
            crate::linalg::ensure_finite(t, "precoder entries")?;
        }
        Ok(())
    }
}

/// Per-TX combining matrices for the statistics-coordinated local scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCoefficients {
    pub c: Vec<CMat>,
}

/// Solves the coupled system `C_l + sum_{j != l} pi_j C_j = I` for all
/// TXs at once.
///
/// The stacked system is block-diagonal `diag(I - pi_l)` plus a rank-K
/// coupling, so instead of a dense `LK x LK` solve it reduces to the per-
/// block resolvents `Y_l = (I - pi_l)^{-1}` and one shared `K x K`
/// correction: `C_l = Y_l * (I + sum_j pi_j Y_j)^{-1}`.
pub fn solve_local_coefficients(stats: &LongTermStats) -> Result<LocalCoefficients> {
    if stats.kind != StatsKind::Local {
        return Err(Error::StatsOutOfRange(
            "local coefficient solve needs per-TX local statistics".into(),
        ));
    }
    let k = stats.pi[0].nrows();
    let mut resolvents = Vec::with_capacity(stats.pi.len());
    let mut coupling = eye(k);
    for pi in &stats.pi {
        let y = guarded_solve(&(eye(k) - pi), &eye(k), "local coefficient resolvent")?;
        coupling += pi * &y;
        resolvents.push(y);
    }
    let correction = guarded_solve(&coupling, &eye(k), "local coefficient coupling")?;
    let c: Vec<CMat> = resolvents.into_iter().map(|y| y * &correction).collect();
    let scale = 1.0 + c.iter().map(max_abs).fold(0.0, f64::max);
    for l in 0..c.len() {
        let mut residual = &c[l] - eye(k);
        for (j, cj) in c.iter().enumerate() {
            if j != l {
                residual += &stats.pi[j] * cj;
            }
        }
        if max_abs(&residual) > 1e-9 * scale {
            return Err(Error::SingularMatrix {
                context: "local coefficient system residual",
            });
        }
    }
    Ok(LocalCoefficients { c })
}

/// Statistics-coordinated local scheme: `t_{l,k} = F_l C_l e_k`, each TX
/// using only its own estimate plus the precomputed coefficients.
pub fn local_tmmse(
    draw: &ChannelDraw,
    coeffs: &LocalCoefficients,
    power: f64,
) -> Result<PrecoderSet> {
    let per_tx = draw
        .hhat
        .iter()
        .zip(&draw.sigma)
        .zip(&coeffs.c)
        .map(|((hhat, &sigma), c)| Ok(local_mmse_stage(hhat, sigma, power)? * c))
        .collect::<Result<Vec<_>>>()?;
    Ok(PrecoderSet {
        scheme_tag: Scheme::LocalTmmse,
        per_tx,
    })
}

pub(crate) fn serial_stage(
    hhat: &CMat,
    sigma: f64,
    power: f64,
    pi: &CMat,
    context: &'static str,
) -> Result<(CMat, CMat, CMat)> {
    let k = hhat.nrows();
    let f = local_mmse_stage(hhat, sigma, power)?;
    let p_mat = hhat * &f;
    let v = guarded_solve(&(eye(k) - pi * &p_mat), &(eye(k) - pi), context)?;
    let v_bar = eye(k) - &p_mat * &v;
    Ok((f, v, v_bar))
}

/// Serial scheme with statistics of the downstream chain: TX `l` applies
/// `t_{l,k} = F_l V_l A_{l-1} e_k` where `A_{l-1}` accumulates the
/// pass-through factors of all earlier TXs.
pub fn unidirectional_tmmse(
    draw: &ChannelDraw,
    stats: &LongTermStats,
    power: f64,
) -> Result<PrecoderSet> {
    let (l_count, k) = (draw.tx_count(), draw.user_count());
    if stats.kind != StatsKind::Unidirectional || stats.pi.len() != l_count + 1 {
        return Err(Error::StatsOutOfRange(format!(
            "serial scheme needs chain statistics with {} blocks, got {} of kind {:?}",
            l_count + 1,
            stats.pi.len(),
            stats.kind
        )));
    }
    let mut a = eye(k);
    let mut per_tx = Vec::with_capacity(l_count);
    for l in 0..l_count {
        let (f, v, v_bar) = serial_stage(
            &draw.hhat[l],
            draw.sigma[l],
            power,
            &stats.pi[l + 1],
            "serial combining stage",
        )?;
        per_tx.push(&f * (&v * &a));
        a = v_bar * a;
    }
    Ok(PrecoderSet {
        scheme_tag: Scheme::UnidirectionalTmmse,
        per_tx,
    })
}

/// Centralized optimum built by the same two-pass chain as the serial
/// scheme, with the statistics replaced by per-draw aggregates from a
/// backward pass.
pub fn centralized_mmse_recursive(draw: &ChannelDraw, power: f64) -> Result<PrecoderSet> {
    let (l_count, k) = (draw.tx_count(), draw.user_count());
    let mut p_bar = CMat::zeros(k, k);
    let mut stages = Vec::with_capacity(l_count);
    for l in (0..l_count).rev() {
        let (f, v, v_bar) = serial_stage(
            &draw.hhat[l],
            draw.sigma[l],
            power,
            &p_bar,
            "centralized recursion stage",
        )?;
        p_bar = &draw.hhat[l] * &f * &v + p_bar * &v_bar;
        stages.push((f, v, v_bar));
    }
    stages.reverse();
    let mut a = eye(k);
    let mut per_tx = Vec::with_capacity(l_count);
    for (f, v, v_bar) in &stages {
        per_tx.push(f * (v * &a));
        a = v_bar * &a;
    }
    Ok(PrecoderSet {
        scheme_tag: Scheme::CentralizedRecursive,
        per_tx,
    })
}

/// Centralized optimum as one stacked regularized solve
/// `T = (Hhat^H Hhat + blockdiag(Sigma_l) + P^{-1} I)^{-1} Hhat^H`.
pub fn centralized_mmse_direct(draw: &ChannelDraw, power: f64) -> Result<PrecoderSet> {
    if !(power.is_finite() && power > 0.0) {
        return Err(Error::DivisionByZero {
            context: "centralized solve power",
        });
    }
    let (l_count, n) = (draw.tx_count(), draw.antennas_per_tx());
    let hhat = draw.stacked_hhat();
    let mut q = hhat.adjoint() * &hhat;
    for l in 0..l_count {
        for a in 0..n {
            q[(l * n + a, l * n + a)] += Complex64::new(draw.sigma[l] + 1.0 / power, 0.0);
        }
    }
    let chol = nalgebra::linalg::Cholesky::new(q).ok_or(Error::SingularMatrix {
        context: "centralized stacked solve",
    })?;
    let t = chol.solve(&hhat.adjoint());
    let per_tx = (0..l_count)
        .map(|l| t.rows(l * n, n).into_owned())
        .collect();
    Ok(PrecoderSet {
        scheme_tag: Scheme::CentralizedDirect,
        per_tx,
    })
}

/// Conjugate beamforming `t_{l,k} = Hhat_l^H e_k`, unnormalized; the
/// downstream power allocation is scale-invariant per user.
pub fn mrt(draw: &ChannelDraw) -> PrecoderSet {
    PrecoderSet {
        scheme_tag: Scheme::Mrt,
        per_tx: draw.hhat.iter().map(|h| h.adjoint()).collect(),
    }
}

/// Coefficients of the bilinear scheme `t_{l,k} = Hhat_l^H C_l e_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObeCoefficients {
    pub c: Vec<CMat>,
    pub sample_count: usize,
    pub seed: u64,
}

/// Estimates the moment matrices of each TX's raw channel outer product
/// and solves the normal equations of the bilinear class: block row `l`
/// reads `G_l C_l + Omega_l sum_{j != l} Omega_j C_j = Omega_l` with
/// `Omega_l = E[W_l]`, `G_l = E[W_l^2] + (sigma_l + 1/P) Omega_l`,
/// `W_l = Hhat_l Hhat_l^H`.
pub fn estimate_obe_coefficients(
    scenario: &NetworkScenario,
    sample_count: usize,
    seed: u64,
) -> Result<ObeCoefficients> {
    let (l_count, k) = (scenario.tx_count, scenario.user_count);
    let power = scenario.per_user_power;
    let shapes: Vec<(usize, usize)> = vec![(k, k); 2 * l_count];
    let (means, _) = parallel_moments(sample_count, &shapes, |i| {
        let mut out = Vec::with_capacity(2 * l_count);
        for l in 0..l_count {
            let (hhat, _) = draw_tx_channel(scenario, seed, Domain::StatsObe, i, l);
            let w = &hhat * hhat.adjoint();
            out.push(&w * &w);
            out.push(w);
        }
        Ok(out)
    })?;
    let mut system = CMat::zeros(l_count * k, l_count * k);
    let mut rhs = CMat::zeros(l_count * k, k);
    let omega: Vec<CMat> = (0..l_count)
        .map(|l| hermitianize(&means[2 * l + 1]))
        .collect();
    for l in 0..l_count {
        let g =
            hermitianize(&means[2 * l]) + omega[l].scale(scenario.sigma_scalar(l) + 1.0 / power);
        for j in 0..l_count {
            let block = if j == l {
                g.clone()
            } else {
                &omega[l] * &omega[j]
            };
            system.view_mut((l * k, j * k), (k, k)).copy_from(&block);
        }
        rhs.view_mut((l * k, 0), (k, k)).copy_from(&omega[l]);
    }
    let stacked = guarded_solve(&system, &rhs, "bilinear coefficient system")?;
    let c = (0..l_count)
        .map(|l| stacked.rows(l * k, k).into_owned())
        .collect();
    Ok(ObeCoefficients {
        c,
        sample_count,
        seed,
    })
}

/// Bilinear scheme: each TX applies the raw adjoint estimate shaped by
/// its precomputed coefficient matrix.
pub fn obe(draw: &ChannelDraw, coeffs: &ObeCoefficients) -> PrecoderSet {
    PrecoderSet {
        scheme_tag: Scheme::Obe,
        per_tx: draw
            .hhat
            .iter()
            .zip(&coeffs.c)
            .map(|(h, c)| h.adjoint() * c)
            .collect(),
    }
}

/// Monte-Carlo moments behind the scalar-coefficient local scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct LsfdMoments {
    /// Per user `k`: `cross[k][(l, j)] = E[(H_l F_l e_k)^H (H_j F_j e_k)]`
    /// over the true channel.
    pub cross: Vec<CMat>,
    /// `gain[(l, k)] = E[e_k^T H_l F_l e_k]`.
    pub gain: CMat,
    /// `beam_power[(l, k)] = E[norm(F_l e_k)^2]`.
    pub beam_power: DMatrix<f64>,
    pub sample_count: usize,
    pub seed: u64,
}

/// Per-user scalar weights applied to each TX's local MMSE beam.
#[derive(Debug, Clone, PartialEq)]
pub struct LsfdCoefficients {
    /// `c[(l, k)]` scales TX `l`'s beam for user `k`.
    pub c: CMat,
}

pub fn estimate_lsfd_moments(
    scenario: &NetworkScenario,
    sample_count: usize,
    seed: u64,
) -> Result<LsfdMoments> {
    let (l_count, k) = (scenario.tx_count, scenario.user_count);
    let power = scenario.per_user_power;
    let mut shapes: Vec<(usize, usize)> = vec![(l_count, l_count); k];
    shapes.push((l_count, k));
    shapes.push((l_count, k));
    let (means, _) = parallel_moments(sample_count, &shapes, |i| {
        // effective[l] = H_l F_l over the true channel of this draw
        let mut effective = Vec::with_capacity(l_count);
        let mut gain = CMat::zeros(l_count, k);
        let mut beam = CMat::zeros(l_count, k);
        for l in 0..l_count {
            let (hhat, err) = draw_tx_channel(scenario, seed, Domain::StatsLsfd, i, l);
            let f = local_mmse_stage(&hhat, scenario.sigma_scalar(l), power)?;
            for u in 0..k {
                beam[(l, u)] = Complex64::new(f.column(u).norm_squared(), 0.0);
            }
            let a = (hhat + err) * f;
            for u in 0..k {
                gain[(l, u)] = a[(u, u)];
            }
            effective.push(a);
        }
        let mut out: Vec<CMat> = (0..k)
            .map(|u| {
                CMat::from_fn(l_count, l_count, |l, j| {
                    effective[l].column(u).dotc(&effective[j].column(u))
                })
            })
            .collect();
        out.push(gain);
        out.push(beam);
        Ok(out)
    })?;
    let beam_power = DMatrix::from_fn(l_count, k, |l, u| means[k + 1][(l, u)].re);
    Ok(LsfdMoments {
        cross: means[..k].to_vec(),
        gain: means[k].clone(),
        beam_power,
        sample_count,
        seed,
    })
}

/// Per-user normal equations over the scalar coefficients: user `k`'s
/// weights solve `(cross_k + diag(beam_power_k) / P) c = conj(gain_k)`.
pub fn solve_lsfd_coefficients(
    scenario: &NetworkScenario,
    moments: &LsfdMoments,
) -> Result<LsfdCoefficients> {
    let (l_count, k) = (scenario.tx_count, scenario.user_count);
    let power = scenario.per_user_power;
    let mut c = CMat::zeros(l_count, k);
    for u in 0..k {
        let mut system = moments.cross[u].clone();
        for l in 0..l_count {
            system[(l, l)] += Complex64::new(moments.beam_power[(l, u)] / power, 0.0);
        }
        let rhs = CMat::from_fn(l_count, 1, |l, _| moments.gain[(l, u)].conj());
        let sol = guarded_solve(&system, &rhs, "scalar-coefficient normal equations")?;
        c.set_column(u, &sol.column(0));
    }
    Ok(LsfdCoefficients { c })
}

/// Scalar-weighted local MMSE beams: `t_{l,k} = c_{l,k} F_l e_k`.
pub fn local_mmse_lsfd(
    draw: &ChannelDraw,
    coeffs: &LsfdCoefficients,
    power: f64,
) -> Result<PrecoderSet> {
    let k = draw.user_count();
    let per_tx = draw
        .hhat
        .iter()
        .zip(&draw.sigma)
        .enumerate()
        .map(|(l, (hhat, &sigma))| {
            let mut f = local_mmse_stage(hhat, sigma, power)?;
            for u in 0..k {
                let scaled = f.column(u) * coeffs.c[(l, u)];
                f.set_column(u, &scaled);
            }
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrecoderSet {
        scheme_tag: Scheme::LocalMmseLsfd,
        per_tx,
    })
}

/// Single-antenna sequential scheme: each TX takes a per-user gradient
/// step on the running residual, `t_{l,k} = mu_k hhat_l^H r_k / norm^2`.
pub fn sgd_precoder(draw: &ChannelDraw, mu: &[f64]) -> Result<PrecoderSet> {
    let (l_count, k) = (draw.tx_count(), draw.user_count());
    if draw.antennas_per_tx() != 1 {
        return Err(Error::UnsupportedScheme(format!(
            "sgd needs single-antenna TXs, got N = {}",
            draw.antennas_per_tx()
        )));
    }
    if mu.len() != k {
        return Err(Error::UnsupportedScheme(format!(
            "sgd needs one step size per user, got {} for K = {k}",
            mu.len()
        )));
    }
    let mut r = eye(k);
    let mut per_tx = Vec::with_capacity(l_count);
    for l in 0..l_count {
        let h = &draw.hhat[l];
        let norm2 = h.norm_squared();
        if norm2 == 0.0 {
            return Err(Error::DivisionByZero {
                context: "sgd beam normalization",
            });
        }
        let mut t = h.adjoint() * &r;
        for u in 0..k {
            t[(0, u)] *= Complex64::new(mu[u] / norm2, 0.0);
        }
        r -= h * &t;
        per_tx.push(t);
    }
    Ok(PrecoderSet {
        scheme_tag: Scheme::Sgd,
        per_tx,
    })
}

/// Sequential zero-forcing: each TX projects the running residual onto
/// its estimated channel columns and removes what it covered.
pub fn sequential_zf(draw: &ChannelDraw) -> Result<PrecoderSet> {
    let (l_count, k) = (draw.tx_count(), draw.user_count());
    let mut r = eye(k);
    let mut per_tx = Vec::with_capacity(l_count);
    for l in 0..l_count {
        let h = &draw.hhat[l];
        let t = guarded_solve(
            &(h.adjoint() * h),
            &(h.adjoint() * &r),
            "sequential ZF Gram matrix",
        )?;
        r -= h * &t;
        per_tx.push(t);
    }
    Ok(PrecoderSet {
        scheme_tag: Scheme::SequentialZf,
        per_tx,
    })
}

/// Per-user realized objective on one draw: for the set's user `k`,
/// `sum_j w_j |y_{j,k}|^2 - 2 sqrt(w_k) Re(y_{k,k}) + 1 + norm(t_k)^2 / P`
/// with `y = H t_k` over the true stacked channel.
pub fn realized_cost(
    h_true: &CMat,
    set: &PrecoderSet,
    weights: &DVector<f64>,
    power: f64,
) -> DVector<f64> {
    let k = set.user_count();
    let y = h_true * set.stacked();
    DVector::from_fn(k, |u, _| {
        let mut acc = 1.0 + set.user_power(u) / power;
        for j in 0..k {
            acc += weights[j] * y[(j, u)].norm_sqr();
        }
        acc - 2.0 * weights[u].sqrt() * y[(u, u)].re
    })
}

fn sgd_mse_pass(
    scenario: &NetworkScenario,
    sample_count: usize,
    seed: u64,
    mu: &[f64],
) -> Result<DVector<f64>> {
    let (l_count, k) = (scenario.tx_count, scenario.user_count);
    let power = scenario.per_user_power;
    let shapes = [(1, k)];
    let (means, _) = parallel_moments(sample_count, &shapes, |i| {
        let mut r = eye(k);
        let mut y = CMat::zeros(k, k);
        let mut t_norm2 = vec![0.0f64; k];
        for l in 0..l_count {
            let (hhat, err) = draw_tx_channel(scenario, seed, Domain::Tuning, i, l);
            let norm2 = hhat.norm_squared();
            if norm2 == 0.0 {
                return Err(Error::DivisionByZero {
                    context: "sgd beam normalization",
                });
            }
            let mut t = hhat.adjoint() * &r;
            for u in 0..k {
                t[(0, u)] *= Complex64::new(mu[u] / norm2, 0.0);
                t_norm2[u] += t[(0, u)].norm_sqr();
            }
            r -= &hhat * &t;
            y += (hhat + err) * &t;
        }
        let cost = CMat::from_fn(1, k, |_, u| {
            let mut acc = 1.0 + t_norm2[u] / power - 2.0 * y[(u, u)].re;
            for j in 0..k {
                acc += y[(j, u)].norm_sqr();
            }
            Complex64::new(acc, 0.0)
        });
        Ok(vec![cost])
    })?;
    Ok(DVector::from_fn(k, |u, _| means[0][(0, u)].re))
}

/// Tunes the per-user step sizes of the sequential gradient scheme by
/// golden-section search on [0, 2], minimizing the Monte-Carlo objective
/// over a dedicated stream of tuning draws. All users share the draws
/// and advance in lockstep; user `k`'s objective depends only on `mu_k`.
pub fn tune_sgd_mu(scenario: &NetworkScenario, sample_count: usize, seed: u64) -> Result<Vec<f64>> {
    if scenario.antennas_per_tx != 1 {
        return Err(Error::UnsupportedScheme(format!(
            "sgd needs single-antenna TXs, got N = {}",
            scenario.antennas_per_tx
        )));
    }
    let k = scenario.user_count;
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut lo = vec![0.0f64; k];
    let mut hi = vec![2.0f64; k];
    let x1: Vec<f64> = (0..k).map(|u| hi[u] - inv_phi * (hi[u] - lo[u])).collect();
    let x2: Vec<f64> = (0..k).map(|u| lo[u] + inv_phi * (hi[u] - lo[u])).collect();
    let mut x = [x1, x2];
    let mut f = [
        sgd_mse_pass(scenario, sample_count, seed, &x[0])?,
        sgd_mse_pass(scenario, sample_count, seed, &x[1])?,
    ];
    while (0..k).any(|u| hi[u] - lo[u] > 1e-3) {
        // shrink every user's bracket, then refresh the single per-user
        // point that moved (gathered into one shared evaluation pass)
        let mut probe = vec![0.0f64; k];
        let mut fresh_is_x1 = vec![false; k];
        for u in 0..k {
            if f[0][u] <= f[1][u] {
                hi[u] = x[1][u];
                x[1][u] = x[0][u];
                f[1][u] = f[0][u];
                x[0][u] = hi[u] - inv_phi * (hi[u] - lo[u]);
                probe[u] = x[0][u];
                fresh_is_x1[u] = true;
            } else {
                lo[u] = x[0][u];
                x[0][u] = x[1][u];
                f[0][u] = f[1][u];
                x[1][u] = lo[u] + inv_phi * (hi[u] - lo[u]);
                probe[u] = x[1][u];
            }
        }
        let fp = sgd_mse_pass(scenario, sample_count, seed, &probe)?;
        for u in 0..k {
            let slot = if fresh_is_x1[u] { 0 } else { 1 };
            f[slot][u] = fp[u];
        }
    }
    Ok((0..k).map(|u| 0.5 * (lo[u] + hi[u])).collect())
}

enum EngineState {
    LocalTmmse {
        stats: LongTermStats,
        coeffs: LocalCoefficients,
    },
    UnidirectionalTmmse {
        stats: LongTermStats,
    },
    CentralizedRecursive,
    CentralizedDirect,
    Mrt,
    Obe {
        coeffs: ObeCoefficients,
    },
    LocalMmseLsfd {
        coeffs: LsfdCoefficients,
    },
    Sgd {
        mu: Vec<f64>,
    },
    SequentialZf,
}

/// A scheme prepared for one scenario: long-term statistics or
/// coefficients are estimated once, then applied draw by draw.
///
/// When the scenario carries non-uniform user weights, the engine folds
/// them into an equivalent unweighted problem (user rows of every draw
/// scaled by `sqrt(w_k)`) and prepares on that form; incoming raw draws
/// are rescaled transparently in [`SchemeEngine::precode`].
pub struct SchemeEngine {
    kind: SchemeKind,
    work: NetworkScenario,
    sqrt_w: Option<DVector<f64>>,
    work_sigma: Vec<f64>,
    state: EngineState,
}

impl SchemeEngine {
    pub fn prepare(
        kind: SchemeKind,
        scenario: &NetworkScenario,
        m_stats: usize,
        seed: u64,
    ) -> Result<SchemeEngine> {
        scenario.validate()?;
        let uniform = scenario.is_uniform_weights();
        let work = if uniform {
            scenario.clone()
        } else {
            scenario.weighted()
        };
        let sqrt_w = (!uniform).then(|| {
            DVector::from_iterator(work.user_count, scenario.weights.iter().map(|w| w.sqrt()))
        });
        let work_sigma: Vec<f64> = (0..work.tx_count).map(|l| work.sigma_scalar(l)).collect();
        let state = match kind {
            SchemeKind::LocalTmmse => {
                let stats = estimate_local_pi(&work, m_stats, seed)?;
                let coeffs = solve_local_coefficients(&stats)?;
                EngineState::LocalTmmse { stats, coeffs }
            }
            SchemeKind::UnidirectionalTmmse => EngineState::UnidirectionalTmmse {
                stats: estimate_unidirectional_pi(&work, m_stats, seed)?,
            },
            SchemeKind::CentralizedRecursive => EngineState::CentralizedRecursive,
            SchemeKind::CentralizedDirect => EngineState::CentralizedDirect,
            SchemeKind::Mrt => EngineState::Mrt,
            SchemeKind::Obe => EngineState::Obe {
                coeffs: estimate_obe_coefficients(&work, m_stats, seed)?,
            },
            SchemeKind::LocalMmseLsfd => {
                let moments = estimate_lsfd_moments(&work, m_stats, seed)?;
                EngineState::LocalMmseLsfd {
                    coeffs: solve_lsfd_coefficients(&work, &moments)?,
                }
            }
            SchemeKind::Sgd => {
                if work.antennas_per_tx != 1 {
                    return Err(Error::UnsupportedScheme(format!(
                        "sgd needs single-antenna TXs, got N = {}",
                        work.antennas_per_tx
                    )));
                }
                EngineState::Sgd {
                    mu: vec![1.0; work.user_count],
                }
            }
            SchemeKind::SgdRobust => EngineState::Sgd {
                mu: tune_sgd_mu(&work, m_stats, seed)?,
            },
            SchemeKind::SequentialZf => EngineState::SequentialZf,
        };
        Ok(SchemeEngine {
            kind,
            work,
            sqrt_w,
            work_sigma,
            state,
        })
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn scheme_tag(&self) -> Scheme {
        self.kind.tag()
    }

    /// The scenario the engine actually precodes for (weight-folded form).
    pub fn working_scenario(&self) -> &NetworkScenario {
        &self.work
    }

    /// A raw draw transformed the way [`SchemeEngine::precode`] sees it.
    pub fn working_draw<'a>(&self, draw: &'a ChannelDraw) -> Cow<'a, ChannelDraw> {
        match &self.sqrt_w {
            None => Cow::Borrowed(draw),
            Some(w) => Cow::Owned(draw.row_scaled(w, &self.work_sigma)),
        }
    }

    pub fn stats(&self) -> Option<&LongTermStats> {
        match &self.state {
            EngineState::LocalTmmse { stats, .. } => Some(stats),
            EngineState::UnidirectionalTmmse { stats } => Some(stats),
            _ => None,
        }
    }

    pub fn local_coefficients(&self) -> Option<&LocalCoefficients> {
        match &self.state {
            EngineState::LocalTmmse { coeffs, .. } => Some(coeffs),
            _ => None,
        }
    }

    pub fn obe_coefficients(&self) -> Option<&ObeCoefficients> {
        match &self.state {
            EngineState::Obe { coeffs } => Some(coeffs),
            _ => None,
        }
    }

    pub fn lsfd_coefficients(&self) -> Option<&LsfdCoefficients> {
        match &self.state {
            EngineState::LocalMmseLsfd { coeffs } => Some(coeffs),
            _ => None,
        }
    }

    pub fn sgd_mu(&self) -> Option<&[f64]> {
        match &self.state {
            EngineState::Sgd { mu } => Some(mu),
            _ => None,
        }
    }

    /// Precoders for one raw draw of the original scenario.
    pub fn precode(&self, draw: &ChannelDraw) -> Result<PrecoderSet> {
        let d = self.working_draw(draw);
        let power = self.work.per_user_power;
        let mut set = match &self.state {
            EngineState::LocalTmmse { coeffs, .. } => local_tmmse(&d, coeffs, power)?,
            EngineState::UnidirectionalTmmse { stats } => unidirectional_tmmse(&d, stats, power)?,
            EngineState::CentralizedRecursive => centralized_mmse_recursive(&d, power)?,
            EngineState::CentralizedDirect => centralized_mmse_direct(&d, power)?,
            EngineState::Mrt => mrt(&d),
            EngineState::Obe { coeffs } => obe(&d, coeffs),
            EngineState::LocalMmseLsfd { coeffs } => local_mmse_lsfd(&d, coeffs, power)?,
            EngineState::Sgd { mu } => sgd_precoder(&d, mu)?,
            EngineState::SequentialZf => sequential_zf(&d)?,
        };
        set.scheme_tag = self.scheme_tag();
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_channel, iid_scenario};
    use crate::linalg::CVec;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn test_rng(tag: u64) -> impl Rng {
        crate::rng::stream(900 + tag, Domain::Eval, 0, 0)
    }

    fn random_cmat<R: Rng>(rng: &mut R, r: usize, c: usize) -> CMat {
        CMat::from_fn(r, c, |_, _| crate::rng::complex_gaussian(rng))
    }

    /// Hermitian PSD matrices with spectrum well inside [0, 1), suitable
    /// as synthetic statistics for an L-TX chain.
    fn random_contractions<R: Rng>(rng: &mut R, l: usize, k: usize) -> Vec<CMat> {
        (0..l)
            .map(|_| {
                let a = random_cmat(rng, k, k);
                let g = a.adjoint() * &a;
                let scale = 0.8 / (l as f64 * max_abs(&g).max(1e-9));
                g.scale(scale)
            })
            .collect()
    }

    fn local_stats_from(pi: Vec<CMat>) -> LongTermStats {
        let k = pi[0].nrows();
        let var = vec![DMatrix::zeros(k, k); pi.len()];
        LongTermStats {
            kind: StatsKind::Local,
            pi,
            pi_entry_var: var,
            sample_count: 0,
            seed: 0,
            standard_error_estimate: 0.0,
        }
    }

    fn uni_stats_from(pi: Vec<CMat>) -> LongTermStats {
        let k = pi[0].nrows();
        let var = vec![DMatrix::zeros(k, k); pi.len()];
        LongTermStats {
            kind: StatsKind::Unidirectional,
            pi,
            pi_entry_var: var,
            sample_count: 0,
            seed: 0,
            standard_error_estimate: 0.0,
        }
    }

    #[test]
    fn scheme_tags_round_trip() {
        for kind in ALL_SCHEME_KINDS {
            assert_eq!(kind.as_str().parse::<SchemeKind>().unwrap(), kind);
        }
        assert!("nonsense".parse::<SchemeKind>().is_err());
        assert_eq!(SchemeKind::SgdRobust.tag(), Scheme::Sgd);
        assert_eq!(
            serde_json::to_string(&SchemeKind::SequentialZf).unwrap(),
            "\"seq_zf\""
        );
    }

    #[test]
    fn single_tx_coefficients_are_identity() {
        let mut rng = test_rng(1);
        let pi = random_contractions(&mut rng, 1, 4);
        let coeffs = solve_local_coefficients(&local_stats_from(pi)).unwrap();
        assert!(max_abs(&(&coeffs.c[0] - eye(4))) < 1e-12);
    }

    #[test]
    fn zero_statistics_give_identity_coefficients() {
        let pi = vec![CMat::zeros(3, 3); 4];
        let coeffs = solve_local_coefficients(&local_stats_from(pi)).unwrap();
        for c in &coeffs.c {
            assert!(max_abs(&(c - eye(3))) < 1e-12);
        }
    }

    #[test]
    fn structured_solve_matches_naive_stacked_solve() {
        let (l, k) = (3, 4);
        let mut rng = test_rng(2);
        let pi = random_contractions(&mut rng, l, k);
        let coeffs = solve_local_coefficients(&local_stats_from(pi.clone())).unwrap();
        let mut system = CMat::zeros(l * k, l * k);
        let mut rhs = CMat::zeros(l * k, k);
        for bl in 0..l {
            for (bj, pj) in pi.iter().enumerate() {
                let block = if bl == bj { eye(k) } else { pj.clone() };
                system.view_mut((bl * k, bj * k), (k, k)).copy_from(&block);
            }
            rhs.view_mut((bl * k, 0), (k, k)).copy_from(&eye(k));
        }
        let naive = guarded_solve(&system, &rhs, "test").unwrap();
        for bl in 0..l {
            let diff = &coeffs.c[bl] - naive.rows(bl * k, k);
            assert!(
                max_abs(&diff) < 1e-9,
                "block {bl} differs by {}",
                max_abs(&diff)
            );
        }
    }

    #[test]
    fn diagonal_statistics_give_scaled_beams() {
        let (l, k) = (3, 4);
        let mut rng = test_rng(3);
        let pi: Vec<CMat> = (0..l)
            .map(|_| {
                CMat::from_fn(k, k, |r, c| {
                    if r == c {
                        Complex64::new(rng.gen::<f64>() * 0.2, 0.0)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
            })
            .collect();
        let coeffs = solve_local_coefficients(&local_stats_from(pi)).unwrap();
        let s = iid_scenario(l, 1, k, 2.0).unwrap();
        let draw = draw_channel(&s, 4, Domain::Eval, 0);
        let set = local_tmmse(&draw, &coeffs, 2.0).unwrap();
        for bl in 0..l {
            for c in 0..k {
                for r in 0..k {
                    if r != c {
                        assert!(coeffs.c[bl][(r, c)].norm() < 1e-12);
                    }
                }
            }
            let f = local_mmse_stage(&draw.hhat[bl], 0.0, 2.0).unwrap();
            for u in 0..k {
                let expect = f.column(u) * coeffs.c[bl][(u, u)];
                let diff = set.per_tx[bl].column(u) - expect;
                assert!(diff.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn local_zero_estimate_gives_zero_beams() {
        let s = iid_scenario(2, 1, 3, 1.0).unwrap();
        let mut draw = draw_channel(&s, 4, Domain::Eval, 0);
        draw.hhat[1] = CMat::zeros(3, 1);
        let coeffs = LocalCoefficients {
            c: vec![eye(3), eye(3)],
        };
        let set = local_tmmse(&draw, &coeffs, 1.0).unwrap();
        assert_eq!(max_abs(&set.per_tx[1]), 0.0);
        assert!(max_abs(&set.per_tx[0]) > 0.0);
    }

    #[test]
    fn serial_single_tx_is_centralized() {
        let s = iid_scenario(1, 1, 3, 5.0).unwrap();
        let draw = draw_channel(&s, 8, Domain::Eval, 0);
        let stats = uni_stats_from(vec![CMat::zeros(3, 3); 2]);
        let uni = unidirectional_tmmse(&draw, &stats, 5.0).unwrap();
        let cent = centralized_mmse_direct(&draw, 5.0).unwrap();
        let diff = &uni.per_tx[0] - &cent.per_tx[0];
        assert!(max_abs(&diff) < 1e-12);
    }

    #[test]
    fn serial_zero_statistics_collapse_to_projection_chain() {
        let (l, k) = (3, 4);
        let s = iid_scenario(l, 1, k, 3.0).unwrap();
        let draw = draw_channel(&s, 12, Domain::Eval, 1);
        let stats = uni_stats_from(vec![CMat::zeros(k, k); l + 1]);
        let set = unidirectional_tmmse(&draw, &stats, 3.0).unwrap();
        let mut a = eye(k);
        for bl in 0..l {
            let f = local_mmse_stage(&draw.hhat[bl], 0.0, 3.0).unwrap();
            let p = &draw.hhat[bl] * &f;
            let expect = &f * &a;
            assert!(max_abs(&(&set.per_tx[bl] - expect)) < 1e-12);
            a = (eye(k) - p) * a;
        }
    }

    #[test]
    fn serial_identity_holds_per_stage() {
        let (l, k) = (3, 4);
        let s = iid_scenario(l, 1, k, 3.0).unwrap();
        let draw = draw_channel(&s, 13, Domain::Eval, 2);
        let mut rng = test_rng(5);
        let mut pi = random_contractions(&mut rng, l, k);
        pi.push(CMat::zeros(k, k));
        for bl in 0..l {
            let (_, v, v_bar) =
                serial_stage(&draw.hhat[bl], draw.sigma[bl], 3.0, &pi[bl + 1], "test").unwrap();
            let identity = &v + &pi[bl + 1] * &v_bar;
            assert!(max_abs(&(identity - eye(k))) < 1e-11);
        }
    }

    #[test]
    fn stats_kind_mismatch_is_rejected() {
        let s = iid_scenario(2, 1, 3, 1.0).unwrap();
        let draw = draw_channel(&s, 4, Domain::Eval, 0);
        let wrong = local_stats_from(vec![CMat::zeros(3, 3); 2]);
        assert!(matches!(
            unidirectional_tmmse(&draw, &wrong, 1.0),
            Err(Error::StatsOutOfRange(_))
        ));
        let uni = uni_stats_from(vec![CMat::zeros(3, 3); 3]);
        assert!(matches!(
            solve_local_coefficients(&uni),
            Err(Error::StatsOutOfRange(_))
        ));
    }

    #[test]
    fn centralized_recursive_matches_direct() {
        for (seed, epsilon) in [(31u64, 0.0), (32u64, 0.2)] {
            let mut s = iid_scenario(4, 2, 5, 7.0).unwrap();
            s.epsilon = epsilon;
            s.validate().unwrap();
            for i in 0..20 {
                let draw = draw_channel(&s, seed, Domain::Eval, i);
                let rec = centralized_mmse_recursive(&draw, 7.0).unwrap();
                let dir = centralized_mmse_direct(&draw, 7.0).unwrap();
                let scale = max_abs(&dir.stacked());
                let diff = max_abs(&(rec.stacked() - dir.stacked()));
                assert!(diff <= 1e-9 * scale, "draw {i}: rel diff {}", diff / scale);
            }
        }
    }

    #[test]
    fn centralized_two_tx_expansion() {
        // L = 2, K = 2, N = 1 unrolled by hand:
        //   t_1 = F_1 (I - P_2 P_1)^{-1} (I - P_2) e_k
        //   t_2 = F_2 (I - P_1 (I - P_2 P_1)^{-1} (I - P_2)) e_k
        let s = iid_scenario(2, 1, 2, 4.0).unwrap();
        let draw = draw_channel(&s, 44, Domain::Eval, 3);
        let f1 = local_mmse_stage(&draw.hhat[0], 0.0, 4.0).unwrap();
        let f2 = local_mmse_stage(&draw.hhat[1], 0.0, 4.0).unwrap();
        let p1 = &draw.hhat[0] * &f1;
        let p2 = &draw.hhat[1] * &f2;
        let v1 = guarded_solve(&(eye(2) - &p2 * &p1), &(eye(2) - &p2), "test").unwrap();
        let t1 = &f1 * &v1;
        let t2 = &f2 * (eye(2) - &p1 * &v1);
        let set = centralized_mmse_recursive(&draw, 4.0).unwrap();
        assert!(max_abs(&(&set.per_tx[0] - t1)) < 1e-11);
        assert!(max_abs(&(&set.per_tx[1] - t2)) < 1e-11);
    }

    #[test]
    fn centralized_direct_reaches_zero_forcing_limit() {
        // K < L*N and a huge power budget: the stacked channel is
        // invertible from the TX side, so Hhat * t_k -> e_k.
        let s = iid_scenario(3, 2, 4, 1e9).unwrap();
        let draw = draw_channel(&s, 17, Domain::Eval, 0);
        let set = centralized_mmse_direct(&draw, 1e9).unwrap();
        let y = draw.stacked_hhat() * set.stacked();
        assert!(max_abs(&(y - eye(4))) < 1e-3);
    }

    #[test]
    fn centralized_single_tx_is_local_stage() {
        let s = iid_scenario(1, 2, 4, 2.0).unwrap();
        let draw = draw_channel(&s, 18, Domain::Eval, 0);
        let set = centralized_mmse_direct(&draw, 2.0).unwrap();
        let f = local_mmse_stage(&draw.hhat[0], 0.0, 2.0).unwrap();
        assert!(max_abs(&(&set.per_tx[0] - f)) < 1e-12);
    }

    #[test]
    fn mrt_is_adjoint_estimate() {
        let mut rng = test_rng(6);
        let u = random_cmat(&mut rng, 3, 1);
        let mut hhat = CMat::zeros(4, 3);
        hhat.view_mut((0, 0), (1, 3)).copy_from(&u.adjoint());
        let draw = ChannelDraw {
            hhat: vec![hhat],
            err: vec![CMat::zeros(4, 3)],
            sigma: vec![0.0],
        };
        let set = mrt(&draw);
        let diff = set.per_tx[0].column(0) - u.column(0);
        assert!(diff.norm() < 1e-15);
        let zero = mrt(&ChannelDraw {
            hhat: vec![CMat::zeros(4, 3)],
            err: vec![CMat::zeros(4, 3)],
            sigma: vec![0.0],
        });
        assert_eq!(max_abs(&zero.per_tx[0]), 0.0);
    }

    // Single-TX iid fading: the bilinear coefficient system reduces to
    // G c = omega with omega = N I and G = N (N + K + 1/P) I, so the
    // coefficients are the scaled identity I / (N + K + 1/P).
    #[test]
    fn obe_single_tx_coefficients_are_scaled_identity() {
        let s = iid_scenario(1, 1, 3, 2.0).unwrap();
        let coeffs = estimate_obe_coefficients(&s, 100_000, 55).unwrap();
        let expect = 1.0 / (1.0 + 3.0 + 0.5);
        let c = &coeffs.c[0];
        for r in 0..3 {
            for q in 0..3 {
                if r == q {
                    assert_relative_eq!(c[(r, q)].re, expect, max_relative = 0.03);
                    assert!(c[(r, q)].im.abs() < 0.01);
                } else {
                    assert!(c[(r, q)].norm() < 0.01);
                }
            }
        }
    }

    #[test]
    fn obe_zero_draw_gives_zero_precoder() {
        let coeffs = ObeCoefficients {
            c: vec![eye(3)],
            sample_count: 0,
            seed: 0,
        };
        let draw = ChannelDraw {
            hhat: vec![CMat::zeros(3, 1)],
            err: vec![CMat::zeros(3, 1)],
            sigma: vec![0.0],
        };
        let set = obe(&draw, &coeffs);
        assert_eq!(max_abs(&set.per_tx[0]), 0.0);
    }

    // The estimated coefficients should beat nearby alternatives on
    // average cost: the class objective is quadratic, so any perturbation
    // of the minimizer costs a positive quadratic term that dominates the
    // Monte-Carlo noise on a common-draw comparison.
    #[test]
    fn obe_coefficients_beat_perturbations() {
        let s = iid_scenario(2, 1, 3, 5.0).unwrap();
        let coeffs = estimate_obe_coefficients(&s, 30_000, 70).unwrap();
        let weights = DVector::from_element(3, 1.0);
        let m_eval = 10_000;
        let mut rng = test_rng(7);
        for trial in 0..2 {
            let perturbed = ObeCoefficients {
                c: coeffs
                    .c
                    .iter()
                    .map(|c| c + random_cmat(&mut rng, 3, 3).scale(0.3))
                    .collect(),
                sample_count: coeffs.sample_count,
                seed: coeffs.seed,
            };
            let mut base = 0.0;
            let mut other = 0.0;
            for i in 0..m_eval {
                let draw = draw_channel(&s, 71, Domain::Eval, i);
                let h = draw.stacked_true();
                base += realized_cost(&h, &obe(&draw, &coeffs), &weights, 5.0).sum();
                other += realized_cost(&h, &obe(&draw, &perturbed), &weights, 5.0).sum();
            }
            assert!(
                base < other,
                "trial {trial}: base {base} not below perturbed {other}"
            );
        }
    }

    #[test]
    fn lsfd_single_tx_matches_scalar_formula() {
        let s = iid_scenario(1, 1, 3, 2.0).unwrap();
        let moments = estimate_lsfd_moments(&s, 5_000, 77).unwrap();
        let coeffs = solve_lsfd_coefficients(&s, &moments).unwrap();
        for u in 0..3 {
            let expect = moments.gain[(0, u)].conj()
                / (moments.cross[u][(0, 0)]
                    + Complex64::new(moments.beam_power[(0, u)] / 2.0, 0.0));
            assert!((coeffs.c[(0, u)] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn lsfd_symmetric_txs_get_equal_coefficients() {
        let s = iid_scenario(2, 1, 3, 2.0).unwrap();
        let moments = estimate_lsfd_moments(&s, 50_000, 78).unwrap();
        let coeffs = solve_lsfd_coefficients(&s, &moments).unwrap();
        for u in 0..3 {
            let (a, b) = (coeffs.c[(0, u)], coeffs.c[(1, u)]);
            assert!(
                (a - b).norm() <= 0.05 * a.norm() + 0.01,
                "user {u}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn lsfd_beats_unit_coefficients_on_average() {
        let s = iid_scenario(3, 1, 4, 5.0).unwrap();
        let moments = estimate_lsfd_moments(&s, 30_000, 79).unwrap();
        let coeffs = solve_lsfd_coefficients(&s, &moments).unwrap();
        let unit = LsfdCoefficients {
            c: CMat::from_element(3, 4, Complex64::new(1.0, 0.0)),
        };
        let weights = DVector::from_element(4, 1.0);
        let mut opt = 0.0;
        let mut ones = 0.0;
        for i in 0..10_000 {
            let draw = draw_channel(&s, 80, Domain::Eval, i);
            let h = draw.stacked_true();
            opt += realized_cost(
                &h,
                &local_mmse_lsfd(&draw, &coeffs, 5.0).unwrap(),
                &weights,
                5.0,
            )
            .sum();
            ones += realized_cost(
                &h,
                &local_mmse_lsfd(&draw, &unit, 5.0).unwrap(),
                &weights,
                5.0,
            )
            .sum();
        }
        assert!(opt < ones, "optimal {opt} not below all-ones {ones}");
    }

    #[test]
    fn unit_lsfd_is_plain_local_stage() {
        let s = iid_scenario(2, 1, 3, 2.0).unwrap();
        let draw = draw_channel(&s, 81, Domain::Eval, 0);
        let unit = LsfdCoefficients {
            c: CMat::from_element(2, 3, Complex64::new(1.0, 0.0)),
        };
        let set = local_mmse_lsfd(&draw, &unit, 2.0).unwrap();
        for l in 0..2 {
            let f = local_mmse_stage(&draw.hhat[l], 0.0, 2.0).unwrap();
            assert!(max_abs(&(&set.per_tx[l] - f)) < 1e-14);
        }
    }

    #[test]
    fn sgd_matches_sequential_zf_at_unit_step() {
        let s = iid_scenario(3, 1, 4, 2.0).unwrap();
        for i in 0..10 {
            let draw = draw_channel(&s, 90, Domain::Eval, i);
            let a = sgd_precoder(&draw, &[1.0; 4]).unwrap();
            let b = sequential_zf(&draw).unwrap();
            let diff = max_abs(&(a.stacked() - b.stacked()));
            assert!(diff < 1e-13, "draw {i}: diff {diff}");
        }
    }

    #[test]
    fn sgd_zero_step_gives_zero_precoders() {
        let s = iid_scenario(3, 1, 4, 2.0).unwrap();
        let draw = draw_channel(&s, 91, Domain::Eval, 0);
        let set = sgd_precoder(&draw, &[0.0; 4]).unwrap();
        assert_eq!(max_abs(&set.stacked()), 0.0);
    }

    #[test]
    fn sgd_single_link_inverts_the_channel() {
        let h = CMat::from_element(1, 1, Complex64::new(0.3, -0.4));
        let draw = ChannelDraw {
            hhat: vec![h.clone()],
            err: vec![CMat::zeros(1, 1)],
            sigma: vec![0.0],
        };
        let set = sgd_precoder(&draw, &[1.0]).unwrap();
        let gain = h[(0, 0)] * set.per_tx[0][(0, 0)];
        assert!((gain - Complex64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn sgd_guards_zero_channel_and_multi_antenna() {
        let zero = ChannelDraw {
            hhat: vec![CMat::zeros(3, 1)],
            err: vec![CMat::zeros(3, 1)],
            sigma: vec![0.0],
        };
        assert!(matches!(
            sgd_precoder(&zero, &[1.0; 3]),
            Err(Error::DivisionByZero { .. })
        ));
        let s = iid_scenario(2, 2, 3, 1.0).unwrap();
        let draw = draw_channel(&s, 92, Domain::Eval, 0);
        assert!(matches!(
            sgd_precoder(&draw, &[1.0; 3]),
            Err(Error::UnsupportedScheme(_))
        ));
    }

    #[test]
    fn sequential_zf_residual_decays_geometrically() {
        let (l, k) = (3usize, 4usize);
        let s = iid_scenario(l, 1, k, 1e6).unwrap();
        let m = 20_000;
        let mut residual = 0.0;
        let mut t_norm = vec![0.0f64; l];
        for i in 0..m {
            let draw = draw_channel(&s, 93, Domain::Eval, i as u64);
            let set = sequential_zf(&draw).unwrap();
            let y = draw.stacked_hhat() * set.stacked();
            residual += (eye(k) - y).norm_squared() / k as f64;
            for (acc, t) in t_norm.iter_mut().zip(&set.per_tx) {
                *acc += t.norm_squared() / k as f64;
            }
        }
        let mf = m as f64;
        assert_relative_eq!(residual / mf, 0.421875, max_relative = 0.02);
        for (bl, acc) in t_norm.iter().enumerate() {
            let expect = (1.0 / 12.0) * 0.75f64.powi(bl as i32);
            assert_relative_eq!(acc / mf, expect, max_relative = 0.05);
        }
    }

    #[test]
    fn sequential_zf_orthonormal_chain_zeroes_residual() {
        // K single-antenna TXs whose estimates are the K canonical basis
        // vectors: after the K-th projection nothing remains.
        let k = 3;
        let hhat: Vec<CMat> = (0..k)
            .map(|l| {
                CMat::from_fn(k, 1, |r, _| {
                    Complex64::new(if r == l { 1.0 } else { 0.0 }, 0.0)
                })
            })
            .collect();
        let draw = ChannelDraw {
            err: hhat.iter().map(|_| CMat::zeros(k, 1)).collect(),
            sigma: vec![0.0; k],
            hhat,
        };
        let set = sequential_zf(&draw).unwrap();
        let y = draw.stacked_hhat() * set.stacked();
        assert!(max_abs(&(y - eye(k))) < 1e-12);
    }

    #[test]
    fn sequential_zf_rejects_rank_deficient_gram() {
        let draw = ChannelDraw {
            hhat: vec![CMat::zeros(3, 1)],
            err: vec![CMat::zeros(3, 1)],
            sigma: vec![0.0],
        };
        assert!(matches!(
            sequential_zf(&draw),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn centralized_cost_dominates_every_other_scheme() {
        let (l, k, p) = (3usize, 4usize, 5.0);
        let s = iid_scenario(l, 1, k, p).unwrap();
        let weights = DVector::from_element(k, 1.0);
        let local_eye = LocalCoefficients { c: vec![eye(k); l] };
        let zero_stats = uni_stats_from(vec![CMat::zeros(k, k); l + 1]);
        for i in 0..25 {
            let draw = draw_channel(&s, 95, Domain::Eval, i);
            let h = draw.stacked_true();
            let best = realized_cost(&h, &centralized_mmse_direct(&draw, p).unwrap(), &weights, p);
            let contenders = [
                realized_cost(&h, &mrt(&draw), &weights, p),
                realized_cost(&h, &sequential_zf(&draw).unwrap(), &weights, p),
                realized_cost(&h, &sgd_precoder(&draw, &[1.0; 4]).unwrap(), &weights, p),
                realized_cost(&h, &local_tmmse(&draw, &local_eye, p).unwrap(), &weights, p),
                realized_cost(
                    &h,
                    &unidirectional_tmmse(&draw, &zero_stats, p).unwrap(),
                    &weights,
                    p,
                ),
                realized_cost(
                    &h,
                    &centralized_mmse_recursive(&draw, p).unwrap(),
                    &weights,
                    p,
                ),
            ];
            for (ci, cost) in contenders.iter().enumerate() {
                for u in 0..k {
                    assert!(
                        best[u] <= cost[u] + 1e-12,
                        "draw {i}, contender {ci}, user {u}: {} > {}",
                        best[u],
                        cost[u]
                    );
                }
            }
        }
    }

    #[test]
    fn realized_cost_of_zero_precoder_is_one() {
        let s = iid_scenario(2, 1, 3, 4.0).unwrap();
        let draw = draw_channel(&s, 96, Domain::Eval, 0);
        let set = PrecoderSet {
            scheme_tag: Scheme::Mrt,
            per_tx: vec![CMat::zeros(1, 3); 2],
        };
        let cost = realized_cost(
            &draw.stacked_true(),
            &set,
            &DVector::from_element(3, 1.0),
            4.0,
        );
        for u in 0..3 {
            assert_relative_eq!(cost[u], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn forwarding_a_symbol_vector_matches_explicit_precoders() {
        // Feeding a symbol vector through the serial chain (each TX
        // transmits F_l V_l u and forwards V-bar_l u) must equal applying
        // the explicitly formed per-user precoders to the same vector.
        let (l, k) = (4, 3);
        let s = iid_scenario(l, 1, k, 3.0).unwrap();
        let draw = draw_channel(&s, 97, Domain::Eval, 2);
        let mut rng = test_rng(8);
        let mut pi = random_contractions(&mut rng, l, k);
        pi.push(CMat::zeros(k, k));
        let stats = uni_stats_from(pi.clone());
        let set = unidirectional_tmmse(&draw, &stats, 3.0).unwrap();
        let u_sym: CVec = random_cmat(&mut rng, k, 1).column(0).into_owned();
        let mut forwarded = u_sym.clone();
        for bl in 0..l {
            let (f, v, v_bar) =
                serial_stage(&draw.hhat[bl], draw.sigma[bl], 3.0, &pi[bl + 1], "test").unwrap();
            let x_seq = &f * (&v * &forwarded);
            let x_explicit = &set.per_tx[bl] * &u_sym;
            assert!((x_seq - x_explicit).norm() < 1e-10, "TX {bl}");
            forwarded = v_bar * forwarded;
        }
    }

    #[test]
    fn tuned_steps_approach_one_at_high_power() {
        let s = iid_scenario(4, 1, 3, 1e6).unwrap();
        let mu = tune_sgd_mu(&s, 4_000, 100).unwrap();
        for (u, m) in mu.iter().enumerate() {
            assert!((m - 1.0).abs() < 0.08, "user {u}: mu = {m}");
        }
    }

    #[test]
    fn tuned_steps_vanish_at_low_power() {
        let s = iid_scenario(4, 1, 3, 1e-6).unwrap();
        let mu = tune_sgd_mu(&s, 2_000, 101).unwrap();
        for (u, m) in mu.iter().enumerate() {
            assert!(*m < 0.05, "user {u}: mu = {m}");
        }
    }

    #[test]
    fn tuned_steps_do_not_lose_to_unit_steps() {
        let mut s = iid_scenario(4, 1, 3, 1.0).unwrap();
        s.epsilon = 0.2;
        s.validate().unwrap();
        let m = 8_000;
        let mu = tune_sgd_mu(&s, m, 102).unwrap();
        let tuned = sgd_mse_pass(&s, m, 102, &mu).unwrap();
        let unit = sgd_mse_pass(&s, m, 102, &[1.0; 3]).unwrap();
        for u in 0..3 {
            assert!(
                tuned[u] <= unit[u] + 1e-9,
                "user {u}: tuned {} vs unit {}",
                tuned[u],
                unit[u]
            );
        }
    }

    #[test]
    fn engine_is_deterministic_and_tags_output() {
        let s = iid_scenario(2, 1, 3, 2.0).unwrap();
        let draw = draw_channel(&s, 103, Domain::Eval, 0);
        for kind in ALL_SCHEME_KINDS {
            let a = SchemeEngine::prepare(kind, &s, 2_000, 5).unwrap();
            let b = SchemeEngine::prepare(kind, &s, 2_000, 5).unwrap();
            let sa = a.precode(&draw).unwrap();
            let sb = b.precode(&draw).unwrap();
            assert_eq!(sa.per_tx, sb.per_tx, "{kind} not deterministic");
            assert_eq!(sa.scheme_tag, kind.tag());
            sa.validate().unwrap();
        }
    }

    #[test]
    fn engine_folds_weights_into_draws() {
        let mut s = iid_scenario(2, 1, 2, 2.0).unwrap();
        s.weights = DVector::from_vec(vec![0.5, 1.5]);
        s.validate().unwrap();
        let engine = SchemeEngine::prepare(SchemeKind::Mrt, &s, 2_000, 5).unwrap();
        let draw = draw_channel(&s, 104, Domain::Eval, 0);
        let set = engine.precode(&draw).unwrap();
        let scaled = engine.working_draw(&draw);
        let expect = mrt(&scaled);
        assert_eq!(set.per_tx, expect.per_tx);
        assert!(engine.working_scenario().is_uniform_weights());
    }

    #[test]
    fn engine_rejects_sgd_on_multi_antenna() {
        let s = iid_scenario(2, 2, 3, 1.0).unwrap();
        assert!(matches!(
            SchemeEngine::prepare(SchemeKind::Sgd, &s, 2_000, 5),
            Err(Error::UnsupportedScheme(_))
        ));
        assert!(matches!(
            SchemeEngine::prepare(SchemeKind::SgdRobust, &s, 2_000, 5),
            Err(Error::UnsupportedScheme(_))
        ));
    }
}

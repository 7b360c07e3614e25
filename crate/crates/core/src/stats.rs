//! Long-term channel statistics consumed by the distributed precoders.
//!
//! Each scheme that coordinates transmitters through statistics rather
//! than instantaneous channel sharing needs one matrix per TX describing
//! the average effect of other TXs' precoding stages. These are plain
//! Monte-Carlo estimates over dedicated random-stream domains, kept
//! separate from evaluation draws so that estimation noise and
//! evaluation noise never correlate.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_tx_channel, NetworkScenario};
use crate::error::{Error, Result};
use crate::linalg::{eye, guarded_solve, hermitianize, psd_check, CMat};
use crate::rng::Domain;

/// Which estimator produced a [`LongTermStats`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatsKind {
    /// One average emission matrix per TX.
    Local,
    /// Backward-recursive statistics for serial processing; entry `l`
    /// describes the TXs strictly after position `l` in the chain.
    Unidirectional,
}

/// Estimated long-term statistics with per-entry uncertainty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LongTermStats {
    pub kind: StatsKind,
    /// `Local`: `pi[l]` for each of the L TXs. `Unidirectional`: L + 1
    /// entries; `pi[L]` is zero and TX `l` (0-based) consumes `pi[l + 1]`.
    #[serde(with = "crate::serde_mat::complex_matrix_list")]
    pub pi: Vec<CMat>,
    /// Entrywise variance of the estimated mean in `pi`.
    #[serde(with = "crate::serde_mat::real_matrix_list")]
    pub pi_entry_var: Vec<DMatrix<f64>>,
    pub sample_count: usize,
    pub seed: u64,
    /// Largest per-entry standard error across all blocks.
    pub standard_error_estimate: f64,
}

impl LongTermStats {
    fn finish(kind: StatsKind, pi: Vec<CMat>, var: Vec<DMatrix<f64>>, m: usize, seed: u64) -> Self {
        let se = var
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |a, b| a.max(*b))
            .sqrt();
        LongTermStats {
            kind,
            pi,
            pi_entry_var: var,
            sample_count: m,
            seed,
            standard_error_estimate: se,
        }
    }
}

/// Regularized least-squares stage `F = (H^H H + (sigma + 1/p) I)^{-1} H^H`
/// built from one TX's estimate. Every distributed scheme that starts
/// from a per-TX MMSE filter shares this stage.
pub fn local_mmse_stage(hhat: &CMat, sigma: f64, power: f64) -> Result<CMat> {
    if !(power.is_finite() && power > 0.0) {
        return Err(Error::DivisionByZero {
            context: "local MMSE stage power",
        });
    }
    let n = hhat.ncols();
    let q = hhat.adjoint() * hhat + eye(n).scale(sigma + 1.0 / power);
    let chol = nalgebra::linalg::Cholesky::new(q).ok_or(Error::SingularMatrix {
        context: "local MMSE stage",
    })?;
    Ok(chol.solve(&hhat.adjoint()))
}

struct MomentAcc {
    sum: Vec<CMat>,
    sumsq: Vec<DMatrix<f64>>,
}

impl MomentAcc {
    fn absorb(&mut self, mats: &[CMat]) {
        for (i, m) in mats.iter().enumerate() {
            self.sum[i] += m;
            for (s, z) in self.sumsq[i].iter_mut().zip(m.iter()) {
                *s += z.norm_sqr();
            }
        }
    }

    fn merge(&mut self, other: &MomentAcc) {
        for i in 0..self.sum.len() {
            self.sum[i] += &other.sum[i];
            self.sumsq[i] += &other.sumsq[i];
        }
    }
}

const BLOCK: u64 = 512;

/// Entrywise sample means and variances-of-the-mean of a family of
/// per-draw matrices, accumulated in fixed blocks so the result does not
/// depend on the number of worker threads.
pub(crate) fn parallel_moments<F>(
    sample_count: usize,
    shapes: &[(usize, usize)],
    compute: F,
) -> Result<(Vec<CMat>, Vec<DMatrix<f64>>)>
where
    F: Fn(u64) -> Result<Vec<CMat>> + Sync,
{
    if sample_count < 2 {
        return Err(Error::StatsOutOfRange(format!(
            "need at least 2 samples, got {sample_count}"
        )));
    }
    let m = sample_count as u64;
    let blocks = m.div_ceil(BLOCK);
    let fresh = || MomentAcc {
        sum: shapes.iter().map(|&(r, c)| CMat::zeros(r, c)).collect(),
        sumsq: shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect(),
    };
    let partials: Vec<Result<MomentAcc>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = fresh();
            for i in b * BLOCK..((b + 1) * BLOCK).min(m) {
                acc.absorb(&compute(i)?);
            }
            Ok(acc)
        })
        .collect();
    let mut total = fresh();
    for p in partials {
        total.merge(&p?);
    }
    let mf = m as f64;
    let mut means = Vec::with_capacity(shapes.len());
    let mut vars = Vec::with_capacity(shapes.len());
    for (sum, sumsq) in total.sum.into_iter().zip(total.sumsq) {
        let mean = sum.unscale(mf);
        let var = DMatrix::from_fn(mean.nrows(), mean.ncols(), |r, c| {
            let central = (sumsq[(r, c)] - mf * mean[(r, c)].norm_sqr()).max(0.0);
            central / ((mf - 1.0) * mf)
        });
        means.push(mean);
        vars.push(var);
    }
    Ok((means, vars))
}

/// Variance bound for the Hermitian-symmetrized mean `(A + A^H) / 2`.
fn hermitian_var_bound(v: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(v.nrows(), v.ncols(), |r, c| 0.5 * (v[(r, c)] + v[(c, r)]))
}

fn check_contraction(pi: &CMat, what: &str) -> Result<()> {
    let report = psd_check(pi, true)?;
    if !report.pass {
        return Err(Error::StatsOutOfRange(format!(
            "{what}: eigenvalues [{:.3e}, {:.6}] outside the contraction range [0, 1)",
            report.min_eig, report.max_eig
        )));
    }
    Ok(())
}

/// Average emission matrix `pi[l] = E[Hhat_l F_l]` of every TX's local
/// MMSE stage. Each is Hermitian PSD with spectrum strictly below one.
pub fn estimate_local_pi(
    scenario: &NetworkScenario,
    sample_count: usize,
    seed: u64,
) -> Result<LongTermStats> {
    let (l_count, k) = (scenario.tx_count, scenario.user_count);
    let p = scenario.per_user_power;
    let shapes = vec![(k, k); l_count];
    let (raw, raw_var) = parallel_moments(sample_count, &shapes, |i| {
        (0..l_count)
            .map(|l| {
                let (hhat, _) = draw_tx_channel(scenario, seed, Domain::StatsLocal, i, l);
                let f = local_mmse_stage(&hhat, scenario.sigma_scalar(l), p)?;
                Ok(&hhat * f)
            })
            .collect()
    })?;
    let mut pi = Vec::with_capacity(l_count);
    let mut var = Vec::with_capacity(l_count);
    for (l, (mean, v)) in raw.into_iter().zip(raw_var).enumerate() {
        let sym = hermitianize(&mean);
        check_contraction(&sym, &format!("local statistics for TX {l}"))?;
        pi.push(sym);
        var.push(hermitian_var_bound(&v));
    }
    Ok(LongTermStats::finish(
        StatsKind::Local,
        pi,
        var,
        sample_count,
        seed,
    ))
}

/// Backward-recursive statistics for the serial (unidirectional) scheme.
///
/// `pi[l]` summarizes the average response of TXs `l+1..L` of the chain
/// to what reaches them, so `pi[L]` is zero and `pi[0]` covers the whole
/// network. Each backward step redraws only the channel of the TX being
/// absorbed and propagates both the mean and a first-order variance
/// estimate.
pub fn estimate_unidirectional_pi(
    scenario: &NetworkScenario,
    sample_count: usize,
    seed: u64,
) -> Result<LongTermStats> {
    let (l_count, k) = (scenario.tx_count, scenario.user_count);
    let p = scenario.per_user_power;
    let mut pi = vec![CMat::zeros(k, k); l_count + 1];
    let mut var = vec![DMatrix::zeros(k, k); l_count + 1];
    let shapes = [(k, k), (k, k)];
    for m in (1..=l_count).rev() {
        let pi_next = pi[m].clone();
        let tx = m - 1;
        let sigma = scenario.sigma_scalar(tx);
        let (means, mean_vars) = parallel_moments(sample_count, &shapes, |i| {
            let (hhat, _) = draw_tx_channel(scenario, seed, Domain::StatsUni, i, tx);
            let f = local_mmse_stage(&hhat, sigma, p)?;
            let p_mat = &hhat * f;
            let v = guarded_solve(
                &(eye(k) - &pi_next * &p_mat),
                &(eye(k) - &pi_next),
                "serial statistics stage",
            )?;
            let v_bar = eye(k) - &p_mat * &v;
            Ok(vec![p_mat * v, v_bar])
        })?;
        let (mean_pv, mean_vbar) = (&means[0], &means[1]);
        let (var_pv, var_vbar) = (&mean_vars[0], &mean_vars[1]);
        let combined = hermitianize(&(mean_pv + &pi_next * mean_vbar));
        let mut v_prop = DMatrix::zeros(k, k);
        for r in 0..k {
            for s in 0..k {
                let mut acc = var_pv[(r, s)];
                for c in 0..k {
                    acc += pi_next[(r, c)].norm_sqr() * var_vbar[(c, s)]
                        + var[m][(r, c)] * mean_vbar[(c, s)].norm_sqr();
                }
                v_prop[(r, s)] = acc;
            }
        }
        check_contraction(
            &combined,
            &format!("serial statistics at position {}", m - 1),
        )?;
        pi[m - 1] = combined;
        var[m - 1] = hermitian_var_bound(&v_prop);
    }
    Ok(LongTermStats::finish(
        StatsKind::Unidirectional,
        pi,
        var,
        sample_count,
        seed,
    ))
}

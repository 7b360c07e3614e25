//! Experiment configuration and the three batch experiment runners.
//!
//! One JSON document describes one experiment: the scenario family, the
//! schemes to compare, Monte-Carlo sample counts, a seed and an optional
//! sweep axis. Runners expand that into a flat result table with one row
//! per (experiment, scheme, user, realization) and write it as CSV or
//! JSON. Realizations and grid points run in parallel; rows are buffered
//! and emitted in a fixed order so identical configs produce identical
//! bytes.

use std::fs;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{build_radio_stripe_realization, iid_scenario, NetworkScenario};
use crate::error::{Error, Result};
use crate::precoding::{SchemeEngine, SchemeKind};
use crate::rates::{evaluate_rates, RateReport};

/// Smallest accepted Monte-Carlo sample count; anything below this gives
/// estimates too noisy to compare schemes.
pub const MIN_SAMPLES: usize = 1_000;

/// Scenario family an experiment draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioConfig {
    /// Transmitters equally spaced on a circle, users placed uniformly at
    /// random in a concentric disc. A disc radius of zero puts every user
    /// at the center, which equalizes all path losses.
    RadioStripe {
        tx_count: usize,
        antennas_per_tx: usize,
        user_count: usize,
        stripe_radius_m: f64,
        user_disc_radius_m: f64,
        #[serde(default)]
        kappa: f64,
        #[serde(default)]
        epsilon: f64,
    },
    /// Unit average gains on every link; no placement randomness.
    Iid {
        tx_count: usize,
        antennas_per_tx: usize,
        user_count: usize,
        per_user_power: f64,
        #[serde(default)]
        epsilon: f64,
    },
}

#[allow(clippy::too_many_arguments)]
fn build_stripe(
    tx_count: usize,
    antennas_per_tx: usize,
    user_count: usize,
    r1_m: f64,
    r2_m: f64,
    kappa: f64,
    epsilon: f64,
    seed: u64,
    realization: u64,
) -> Result<NetworkScenario> {
    let mut s = build_radio_stripe_realization(
        tx_count,
        antennas_per_tx,
        user_count,
        r1_m,
        r2_m,
        seed,
        realization,
    )?;
    s.kappa = kappa;
    s.epsilon = epsilon;
    s.validate()?;
    Ok(s)
}

impl ScenarioConfig {
    /// Instantiates the scenario. For the radio stripe, `realization`
    /// selects an independent user placement; the iid family ignores it.
    pub fn build(&self, seed: u64, realization: u64) -> Result<NetworkScenario> {
        match *self {
            ScenarioConfig::RadioStripe {
                tx_count,
                antennas_per_tx,
                user_count,
                stripe_radius_m,
                user_disc_radius_m,
                kappa,
                epsilon,
            } => build_stripe(
                tx_count,
                antennas_per_tx,
                user_count,
                stripe_radius_m,
                user_disc_radius_m,
                kappa,
                epsilon,
                seed,
                realization,
            ),
            ScenarioConfig::Iid {
                tx_count,
                antennas_per_tx,
                user_count,
                per_user_power,
                epsilon,
            } => {
                let mut s = iid_scenario(tx_count, antennas_per_tx, user_count, per_user_power)?;
                s.epsilon = epsilon;
                s.validate()?;
                Ok(s)
            }
        }
    }

    pub fn user_count(&self) -> usize {
        match *self {
            ScenarioConfig::RadioStripe { user_count, .. } => user_count,
            ScenarioConfig::Iid { user_count, .. } => user_count,
        }
    }

    pub fn antennas_per_tx(&self) -> usize {
        match *self {
            ScenarioConfig::RadioStripe {
                antennas_per_tx, ..
            } => antennas_per_tx,
            ScenarioConfig::Iid {
                antennas_per_tx, ..
            } => antennas_per_tx,
        }
    }

    fn has_placements(&self) -> bool {
        matches!(self, ScenarioConfig::RadioStripe { .. })
    }
}

/// Axis an experiment iterates over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepAxis {
    /// Receive-SNR grid in dB; the per-user power is rescaled at each
    /// point so user 0 sees exactly this SNR.
    SnrDb { points: Vec<f64> },
    /// Ricean-factor grid.
    Kappa { points: Vec<f64> },
    /// Number of independent user placements.
    Placements { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

fn default_format() -> OutputFormat {
    OutputFormat::Csv
}

/// Where and how a runner writes its table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: String,
    #[serde(default = "default_format")]
    pub format: OutputFormat,
}

/// One experiment, described by one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub schemes: Vec<SchemeKind>,
    /// Draws for long-term statistics estimation.
    pub m_stats: usize,
    /// Draws for rate evaluation.
    pub m_eval: usize,
    /// Draws for stationarity diagnostics.
    pub m_res: usize,
    pub seed: u64,
    #[serde(default)]
    pub sweep: Option<SweepAxis>,
    #[serde(default)]
    pub output: Option<OutputConfig>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("scheme list must not be empty".into()));
        }
        for (i, a) in self.schemes.iter().enumerate() {
            if self.schemes[..i].contains(a) {
                return Err(Error::Config(format!("scheme {a} listed twice")));
            }
        }
        for (name, m) in [
            ("m_stats", self.m_stats),
            ("m_eval", self.m_eval),
            ("m_res", self.m_res),
        ] {
            if m < MIN_SAMPLES {
                return Err(Error::Config(format!(
                    "{name} = {m} is below the minimum sample count {MIN_SAMPLES}"
                )));
            }
        }
        match &self.sweep {
            Some(SweepAxis::SnrDb { points }) | Some(SweepAxis::Kappa { points }) => {
                if points.is_empty() {
                    return Err(Error::Config("sweep grid must not be empty".into()));
                }
                if !points.iter().all(|p| p.is_finite()) {
                    return Err(Error::Config("sweep grid entries must be finite".into()));
                }
            }
            Some(SweepAxis::Placements { count }) => {
                if *count == 0 {
                    return Err(Error::Config("placement count must be positive".into()));
                }
                if !self.scenario.has_placements() {
                    return Err(Error::Config(
                        "placement sweep needs the radio-stripe scenario".into(),
                    ));
                }
            }
            None => {}
        }
        self.scenario
            .build(self.seed, 0)
            .map_err(|e| Error::Config(format!("scenario: {e}")))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a config document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &str) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {path}: {e}")))?;
        Self::from_json(&text)
    }
}

/// One evaluated (experiment, scheme, user, realization) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub scheme: SchemeKind,
    pub user: usize,
    pub realization: usize,
    pub snr_db: f64,
    pub kappa: f64,
    pub rate_bits: f64,
    /// Batch-spread standard error of `rate_bits`; carried in JSON output
    /// only, the CSV column set is fixed.
    pub rate_se: f64,
    pub mse: f64,
    pub sinr_db: f64,
    pub p_mw: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics_ref: Option<String>,
}

/// Run parameters recorded next to the rows in JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub m_stats: usize,
    pub m_eval: usize,
    pub seed: u64,
    pub realizations: usize,
}

pub const RESULT_CSV_HEADER: &str =
    "experiment,scheme,user,realization,snr_db,kappa,rate_bits,mse,sinr_db,p_mw,seed";

/// Flat result table produced by one runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub meta: RunMetadata,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RESULT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.experiment,
                r.scheme,
                r.user,
                r.realization,
                r.snr_db,
                r.kappa,
                r.rate_bits,
                r.mse,
                r.sinr_db,
                r.p_mw,
                r.seed,
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Csv => Ok(self.to_csv()),
            OutputFormat::Json => self.to_json(),
        }
    }

    pub fn write(&self, output: &OutputConfig) -> Result<()> {
        fs::write(&output.path, self.render(output.format)?)?;
        Ok(())
    }
}

fn rows_from_report(
    experiment: &str,
    realization: usize,
    snr_db: f64,
    kappa: f64,
    seed: u64,
    report: &RateReport,
) -> Vec<ResultRow> {
    report
        .users
        .iter()
        .map(|u| ResultRow {
            experiment: experiment.to_string(),
            scheme: report.scheme,
            user: u.user,
            realization,
            snr_db,
            kappa,
            rate_bits: u.rate_bits,
            rate_se: u.rate_se,
            mse: u.mse,
            sinr_db: 10.0 * u.sinr_uatf.log10(),
            p_mw: u.p_mw,
            seed,
            diagnostics_ref: None,
        })
        .collect()
}

/// Prepares and evaluates every scheme on one scenario, all from the same
/// seed so scheme comparisons share their random draws.
#[allow(clippy::too_many_arguments)]
fn evaluate_schemes(
    experiment: &str,
    scenario: &NetworkScenario,
    schemes: &[SchemeKind],
    m_stats: usize,
    m_eval: usize,
    seed: u64,
    realization: usize,
    snr_db: f64,
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::with_capacity(schemes.len() * scenario.user_count);
    for &kind in schemes {
        let at = || format!("{experiment}, realization {realization}, scheme {kind}");
        let engine =
            SchemeEngine::prepare(kind, scenario, m_stats, seed).map_err(|e| e.context(at()))?;
        let report =
            evaluate_rates(scenario, &engine, m_eval, seed).map_err(|e| e.context(at()))?;
        rows.extend(rows_from_report(
            experiment,
            realization,
            snr_db,
            scenario.kappa,
            seed,
            &report,
        ));
    }
    Ok(rows)
}

fn collect_table(
    config: &ExperimentConfig,
    realizations: usize,
    chunks: Vec<Result<Vec<ResultRow>>>,
) -> Result<ResultTable> {
    let mut rows = Vec::new();
    for chunk in chunks {
        rows.extend(chunk?);
    }
    Ok(ResultTable {
        meta: RunMetadata {
            m_stats: config.m_stats,
            m_eval: config.m_eval,
            seed: config.seed,
            realizations,
        },
        rows,
    })
}

/// Rate CDF over user placements: every configured scheme on every
/// placement realization, one row per user. Without a sweep the scenario
/// is evaluated once; a `placements` sweep draws that many independent
/// placements in parallel.
pub fn run_cdf_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let realizations = match &config.sweep {
        None => 1,
        Some(SweepAxis::Placements { count }) => *count,
        Some(_) => {
            return Err(Error::Config(
                "the cdf experiment only sweeps placements".into(),
            ))
        }
    };
    let chunks: Vec<Result<Vec<ResultRow>>> = (0..realizations)
        .into_par_iter()
        .map(|r| {
            let scenario = config.scenario.build(config.seed, r as u64)?;
            evaluate_schemes(
                "cdf",
                &scenario,
                &config.schemes,
                config.m_stats,
                config.m_eval,
                config.seed,
                r,
                scenario.snr_db(),
            )
        })
        .collect();
    collect_table(config, realizations, chunks)
}

const SWEEP_SCHEMES: [SchemeKind; 3] = [
    SchemeKind::UnidirectionalTmmse,
    SchemeKind::Sgd,
    SchemeKind::SgdRobust,
];

/// Rate versus SNR for serial schemes, in three variants of the
/// radio-stripe scenario: (a) equal path loss with perfect estimates,
/// (b) equal path loss with 20% estimation-error variance, (c) the
/// configured geometry with perfect estimates, single placement. The
/// scheme set is fixed to the serial trio; at each grid point the
/// per-user power is rescaled to hit the target SNR at user 0. The grid
/// index is recorded as the realization.
pub fn run_snr_sweep(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let points = match &config.sweep {
        Some(SweepAxis::SnrDb { points }) => points.clone(),
        _ => {
            return Err(Error::Config(
                "the SNR sweep needs an snr_db sweep axis".into(),
            ))
        }
    };
    let (tx_count, antennas_per_tx, user_count, r1_m, r2_m) = match config.scenario {
        ScenarioConfig::RadioStripe {
            tx_count,
            antennas_per_tx,
            user_count,
            stripe_radius_m,
            user_disc_radius_m,
            ..
        } => (
            tx_count,
            antennas_per_tx,
            user_count,
            stripe_radius_m,
            user_disc_radius_m,
        ),
        ScenarioConfig::Iid { .. } => {
            return Err(Error::Config(
                "the SNR sweep needs the radio-stripe scenario".into(),
            ))
        }
    };
    if antennas_per_tx != 1 {
        return Err(Error::Config(
            "the SNR sweep compares gradient schemes, which need single-antenna transmitters"
                .into(),
        ));
    }
    let cases: [(&str, f64, f64); 3] = [
        ("snr_sweep_a", 0.0, 0.0),
        ("snr_sweep_b", 0.0, 0.2),
        ("snr_sweep_c", r2_m, 0.0),
    ];
    let mut tasks = Vec::with_capacity(cases.len() * points.len());
    for (name, r2, eps) in cases {
        for (i, &snr) in points.iter().enumerate() {
            tasks.push((name, r2, eps, i, snr));
        }
    }
    let chunks: Vec<Result<Vec<ResultRow>>> = tasks
        .into_par_iter()
        .map(|(name, r2, eps, i, snr)| {
            let mut scenario = build_stripe(
                tx_count,
                antennas_per_tx,
                user_count,
                r1_m,
                r2,
                0.0,
                eps,
                config.seed,
                0,
            )?;
            let gain: f64 = (0..tx_count).map(|l| scenario.rho2[(l, 0)]).sum();
            scenario.per_user_power = 10f64.powf(snr / 10.0) / gain;
            scenario.validate()?;
            evaluate_schemes(
                name,
                &scenario,
                &SWEEP_SCHEMES,
                config.m_stats,
                config.m_eval,
                config.seed,
                i,
                snr,
            )
        })
        .collect();
    collect_table(config, points.len(), chunks)
}

const LOCAL_SCHEMES: [SchemeKind; 4] = [
    SchemeKind::LocalTmmse,
    SchemeKind::Mrt,
    SchemeKind::Obe,
    SchemeKind::LocalMmseLsfd,
];

/// Local-information schemes across Ricean factors. The scheme set is
/// fixed to the four single-TX-information designs. A `kappa` sweep
/// selects the factor grid (single placement); a `placements` sweep keeps
/// the default grid {0, 1} and draws that many placements; no sweep means
/// one placement on {0, 1}. Rows are grouped by factor, then placement.
pub fn run_local_comparison(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let (tx_count, antennas_per_tx, user_count, r1_m, r2_m, epsilon) = match config.scenario {
        ScenarioConfig::RadioStripe {
            tx_count,
            antennas_per_tx,
            user_count,
            stripe_radius_m,
            user_disc_radius_m,
            epsilon,
            ..
        } => (
            tx_count,
            antennas_per_tx,
            user_count,
            stripe_radius_m,
            user_disc_radius_m,
            epsilon,
        ),
        ScenarioConfig::Iid { .. } => {
            return Err(Error::Config(
                "the local comparison needs the radio-stripe scenario".into(),
            ))
        }
    };
    let (kappas, realizations) = match &config.sweep {
        Some(SweepAxis::Kappa { points }) => (points.clone(), 1),
        Some(SweepAxis::Placements { count }) => (vec![0.0, 1.0], *count),
        None => (vec![0.0, 1.0], 1),
        Some(SweepAxis::SnrDb { .. }) => {
            return Err(Error::Config(
                "the local comparison does not sweep SNR".into(),
            ))
        }
    };
    if antennas_per_tx != 1 && kappas.iter().any(|k| *k > 0.0) {
        return Err(Error::Config(
            "line-of-sight factors need single-antenna transmitters".into(),
        ));
    }
    let mut tasks = Vec::with_capacity(kappas.len() * realizations);
    for &kappa in &kappas {
        for r in 0..realizations {
            tasks.push((kappa, r));
        }
    }
    let chunks: Vec<Result<Vec<ResultRow>>> = tasks
        .into_par_iter()
        .map(|(kappa, r)| {
            let scenario = build_stripe(
                tx_count,
                antennas_per_tx,
                user_count,
                r1_m,
                r2_m,
                kappa,
                epsilon,
                config.seed,
                r as u64,
            )?;
            evaluate_schemes(
                &format!("local_compare_kappa{kappa}"),
                &scenario,
                &LOCAL_SCHEMES,
                config.m_stats,
                config.m_eval,
                config.seed,
                r,
                scenario.snr_db(),
            )
        })
        .collect();
    collect_table(config, realizations, chunks)
}

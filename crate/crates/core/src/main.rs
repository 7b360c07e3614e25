use clap::{Args, Parser, Subcommand};

use tmmse::channel::{draw_channel, iid_scenario};
use tmmse::diagnostics::stationarity_residual;
use tmmse::experiment::{
    run_cdf_experiment, run_local_comparison, run_snr_sweep, ExperimentConfig, OutputConfig,
    OutputFormat, ResultTable, ScenarioConfig, SweepAxis,
};
use tmmse::precoding::{SchemeEngine, SchemeKind};
use tmmse::rates::evaluate_rates;
use tmmse::rng::Domain;
use tmmse::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tmmse",
    version,
    about = "Distributed precoding simulator for cell-free networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rate CDF across user placements for the configured schemes.
    Cdf(RunArgs),
    /// Rate versus SNR for the serial schemes in three scenario variants.
    SnrSweep(RunArgs),
    /// Local-information schemes with and without a line-of-sight component.
    LocalCompare(RunArgs),
    /// Quick internal consistency checks.
    Selftest {
        /// Seed for the checks' random draws.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; a built-in desk-scale config when omitted.
    #[arg(long)]
    config: Option<String>,
    /// Output file; stdout when omitted. A .json extension selects JSON.
    #[arg(long)]
    out: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Full-size scenario dimensions instead of the quick desk scale.
    #[arg(long, default_value_t = false)]
    full_scale: bool,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cdf(args) => {
            let cfg = load_config(&args, default_cdf)?;
            emit(run_cdf_experiment(&cfg)?, &args, &cfg)
        }
        Command::SnrSweep(args) => {
            let cfg = load_config(&args, default_snr_sweep)?;
            emit(run_snr_sweep(&cfg)?, &args, &cfg)
        }
        Command::LocalCompare(args) => {
            let cfg = load_config(&args, default_local_compare)?;
            emit(run_local_comparison(&cfg)?, &args, &cfg)
        }
        Command::Selftest { seed } => selftest(seed),
    }
}

fn load_config(
    args: &RunArgs,
    default_fn: fn(bool) -> ExperimentConfig,
) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            if args.full_scale {
                return Err(Error::Config(
                    "--full-scale only applies to the built-in config; edit the config file instead"
                        .into(),
                ));
            }
            ExperimentConfig::from_json_file(path)?
        }
        None => default_fn(args.full_scale),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(table: ResultTable, args: &RunArgs, cfg: &ExperimentConfig) -> Result<()> {
    if let Some(path) = &args.out {
        let format = if path.ends_with(".json") {
            OutputFormat::Json
        } else {
            OutputFormat::Csv
        };
        table.write(&OutputConfig {
            path: path.clone(),
            format,
        })
    } else if let Some(out) = &cfg.output {
        table.write(out)
    } else {
        print!("{}", table.to_csv());
        Ok(())
    }
}

fn stripe(tx_count: usize, antennas_per_tx: usize, user_count: usize) -> ScenarioConfig {
    ScenarioConfig::RadioStripe {
        tx_count,
        antennas_per_tx,
        user_count,
        stripe_radius_m: 60.0,
        user_disc_radius_m: 50.0,
        kappa: 0.0,
        epsilon: 0.0,
    }
}

const DESK_SAMPLES: usize = 20_000;
const DESK_PLACEMENTS: usize = 20;

fn default_cdf(full_scale: bool) -> ExperimentConfig {
    let scenario = if full_scale {
        stripe(30, 2, 7)
    } else {
        stripe(10, 1, 4)
    };
    ExperimentConfig {
        scenario,
        schemes: vec![
            SchemeKind::LocalTmmse,
            SchemeKind::UnidirectionalTmmse,
            SchemeKind::CentralizedRecursive,
        ],
        m_stats: DESK_SAMPLES,
        m_eval: DESK_SAMPLES,
        m_res: DESK_SAMPLES,
        seed: 1,
        sweep: Some(SweepAxis::Placements {
            count: DESK_PLACEMENTS,
        }),
        output: None,
    }
}

fn default_snr_sweep(full_scale: bool) -> ExperimentConfig {
    let scenario = if full_scale {
        stripe(30, 1, 7)
    } else {
        stripe(10, 1, 4)
    };
    ExperimentConfig {
        scenario,
        schemes: vec![
            SchemeKind::UnidirectionalTmmse,
            SchemeKind::Sgd,
            SchemeKind::SgdRobust,
        ],
        m_stats: DESK_SAMPLES,
        m_eval: DESK_SAMPLES,
        m_res: DESK_SAMPLES,
        seed: 1,
        sweep: Some(SweepAxis::SnrDb {
            points: vec![-10.0, 0.0, 10.0, 20.0, 30.0, 40.0],
        }),
        output: None,
    }
}

fn default_local_compare(full_scale: bool) -> ExperimentConfig {
    let scenario = if full_scale {
        stripe(30, 1, 7)
    } else {
        stripe(10, 1, 4)
    };
    ExperimentConfig {
        scenario,
        schemes: vec![
            SchemeKind::LocalTmmse,
            SchemeKind::Mrt,
            SchemeKind::Obe,
            SchemeKind::LocalMmseLsfd,
        ],
        m_stats: DESK_SAMPLES,
        m_eval: DESK_SAMPLES,
        m_res: DESK_SAMPLES,
        seed: 1,
        sweep: Some(SweepAxis::Placements {
            count: DESK_PLACEMENTS,
        }),
        output: None,
    }
}

fn check(name: &str, outcome: Result<()>) -> Result<()> {
    outcome.map_err(|e| e.context(format!("selftest check '{name}'")))?;
    println!("ok - {name}");
    Ok(())
}

fn selftest(seed: u64) -> Result<()> {
    check(
        "centralized solver routes agree",
        || -> Result<()> {
            let s = iid_scenario(3, 2, 4, 50.0)?;
            let recursive =
                SchemeEngine::prepare(SchemeKind::CentralizedRecursive, &s, 1_000, seed)?;
            let direct = SchemeEngine::prepare(SchemeKind::CentralizedDirect, &s, 1_000, seed)?;
            for i in 0..50 {
                let draw = draw_channel(&s, seed, Domain::Eval, i);
                let a = recursive.precode(&draw)?.stacked();
                let b = direct.precode(&draw)?.stacked();
                let scale = a.iter().map(|x| x.norm()).fold(0.0f64, f64::max);
                let diff = (&a - &b).iter().map(|x| x.norm()).fold(0.0f64, f64::max);
                if diff > 1e-9 * scale.max(1.0) {
                    return Err(Error::StatsOutOfRange(format!(
                        "solver routes differ by {diff:.3e} on draw {i}"
                    )));
                }
            }
            Ok(())
        }(),
    )?;

    check(
        "interference-free objective hits its analytic value",
        || -> Result<()> {
            let s = iid_scenario(3, 1, 4, 1e6)?;
            let engine = SchemeEngine::prepare(SchemeKind::SequentialZf, &s, 1_000, seed)?;
            let report = evaluate_rates(&s, &engine, 20_000, seed)?;
            for u in &report.users {
                let rel = (u.mse - 0.421875).abs() / 0.421875;
                if rel > 0.05 {
                    return Err(Error::StatsOutOfRange(format!(
                        "user {} objective {:.6} is {rel:.3} away from 0.421875",
                        u.user, u.mse
                    )));
                }
            }
            Ok(())
        }(),
    )?;

    check(
        "power allocation exhausts the budget",
        || -> Result<()> {
            let s = iid_scenario(4, 1, 3, 10.0)?;
            let engine = SchemeEngine::prepare(SchemeKind::Mrt, &s, 1_000, seed)?;
            let report = evaluate_rates(&s, &engine, 5_000, seed)?;
            let rel =
                (report.radiated_power_mw - report.power_budget_mw).abs() / report.power_budget_mw;
            if rel > 1e-6 {
                return Err(Error::StatsOutOfRange(format!(
                    "radiated {:.6} mW vs budget {:.6} mW",
                    report.radiated_power_mw, report.power_budget_mw
                )));
            }
            Ok(())
        }(),
    )?;

    check(
        "local scheme passes its stationarity test",
        || -> Result<()> {
            let s = iid_scenario(3, 1, 4, 10.0)?;
            let engine = SchemeEngine::prepare(SchemeKind::LocalTmmse, &s, 20_000, seed)?;
            let report = stationarity_residual(&s, &engine, 5_000, seed)?;
            if !report.is_statistically_null() {
                return Err(Error::StatsOutOfRange(format!(
                    "residual power {:?} above its sampling floor {:?}",
                    report.user_z2, report.noise_floor
                )));
            }
            Ok(())
        }(),
    )?;

    println!("all checks passed");
    Ok(())
}

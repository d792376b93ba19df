use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use ltc_core::harness::{self, RunConfig, Summary};
use ltc_core::meta::estimation_rounds;
use ltc_core::{saddle_check, AuctionConfig, InstanceSpec};
use serde_json::json;

/// Online learning with long-term constraints: simulator and certifier.
#[derive(Parser)]
#[command(name = "ltc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a configuration, writing traces and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Margin estimates over the first ceil(sqrt(T)) rounds of each seed.
    EstimateRho {
        #[arg(long)]
        config: PathBuf,
    },
    /// Optimum and feasibility margin of an instance.
    Oracle {
        #[arg(long)]
        instance: PathBuf,
        /// Horizon over which scripted sources are averaged.
        #[arg(long = "T", default_value_t = 1000)]
        horizon: usize,
        /// Finest dual grid step of the saddle-point check.
        #[arg(long, default_value_t = 1e-3)]
        grid_step: f64,
    },
    /// Run a repeated-auction configuration and certify it.
    Auction {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Rerun a configuration at several horizons and fit growth exponents.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "T", value_delimiter = ',', required = true)]
        horizons: Vec<usize>,
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Check a summary against the applicable guarantees.
    Certify {
        #[arg(long)]
        summary: PathBuf,
    },
}

enum Outcome {
    Ok,
    CertificationFailed,
}

fn print(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

fn certify(summary: &Summary) -> Result<Outcome> {
    let report = harness::certify_bounds(summary)?;
    let passed = report.passed();
    print(&json!({ "certification": report, "passed": passed }));
    Ok(if passed { Outcome::Ok } else { Outcome::CertificationFailed })
}

fn execute(command: Command) -> Result<Outcome> {
    match command {
        Command::Run { config, out, parallel } => {
            let cfg = RunConfig::load(&config)?;
            let spec = cfg.load_instance()?;
            let summary = harness::run_experiment(&spec, &cfg.settings(), Some(&out), parallel)?;
            print(&json!({
                "out": out,
                "seeds": summary.seeds.len(),
                "aggregates": summary.aggregates,
            }));
            Ok(Outcome::Ok)
        }
        Command::EstimateRho { config } => {
            let cfg = RunConfig::load(&config)?;
            let spec = cfg.load_instance()?;
            let settings = cfg.settings();
            let estimates = harness::estimate_rho_seeds(&spec, &settings)?;
            let baseline = harness::instance_baseline(&spec, settings.horizon)?;
            print(&json!({
                "T0": estimation_rounds(settings.horizon),
                "rho": baseline.rho.map(|r| r.value),
                "estimates": estimates
                    .iter()
                    .map(|(seed, rho_hat)| json!({ "seed": seed, "rho_hat": rho_hat }))
                    .collect::<Vec<_>>(),
            }));
            Ok(Outcome::Ok)
        }
        Command::Oracle {
            instance,
            horizon,
            grid_step,
        } => {
            let spec = InstanceSpec::load(&instance)?;
            let mut report = serde_json::to_value(harness::instance_baseline(&spec, horizon)?)?;
            // The gap is only defined for mean tables with a positive margin.
            let saddle_gap = spec
                .mean_functions(horizon)
                .ok()
                .and_then(|means| saddle_check(&means.f_bar, &means.g_bar, grid_step).ok());
            report["saddle_gap"] = json!(saddle_gap);
            print(&report);
            Ok(Outcome::Ok)
        }
        Command::Auction { config, out, parallel } => {
            let cfg = AuctionConfig::load(&config)?;
            let summary = harness::run_auction(&cfg, out.as_deref(), parallel)?;
            print(&json!({ "seeds": summary.seeds, "aggregates": summary.aggregates }));
            certify(&summary)
        }
        Command::Sweep { config, horizons, parallel } => {
            let cfg = RunConfig::load(&config)?;
            let spec = cfg.load_instance()?;
            let report = harness::sweep(&spec, &cfg.settings(), &horizons, parallel)?;
            print(&serde_json::to_value(report)?);
            Ok(Outcome::Ok)
        }
        Command::Certify { summary } => {
            let summary = Summary::load(&summary)?;
            certify(&summary)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CertificationFailed) => ExitCode::from(3),
        Err(err) => {
            eprintln!("error: {err}");
            let validation = err
                .chain()
                .any(|e| e.downcast_ref::<ltc_core::Error>().is_some_and(|e| e.is_validation()));
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}

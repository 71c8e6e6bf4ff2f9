//! Config-driven command-line front end: simulate data, fit one model, run
//! penalized selection, evaluate prediction error, and run the full rate
//! experiment.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use hmmsel::config::ExperimentConfig;
use hmmsel::experiment;
use hmmsel::model::PenaltyConfig;

#[derive(Parser)]
#[command(
    name = "hmmsel",
    about = "Penalized likelihood model selection for mixture-emission HMMs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the theory-grade penalty (c_pen = 1, exponent 15) instead of the
    /// configured one.
    #[arg(long)]
    paper_faithful_penalty: bool,
    /// Override the output directory from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if self.paper_faithful_penalty {
            cfg.penalty = PenaltyConfig::paper_faithful();
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate observation files, one CSV per replicate.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the single model named by fit.num_states / fit.mixture_size.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Observation CSV (header `y`).
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit every grid model and select by penalized likelihood.
    Select {
        #[command(flatten)]
        common: Common,
        /// Observation CSV (header `y`).
        #[arg(long)]
        data: PathBuf,
    },
    /// Estimate the prediction error of fitted parameters against the truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// A fit or selection report (JSON).
        #[arg(long)]
        params: PathBuf,
    },
    /// Full rate experiment over the configured n-grid.
    Rate {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Simulate { common } => {
            let cfg = common.load()?;
            let paths = experiment::run_simulate(&cfg)?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Fit { common, data } => {
            let cfg = common.load()?;
            let path = experiment::run_fit(&cfg, &data)?;
            println!("{}", path.display());
        }
        Command::Select { common, data } => {
            let cfg = common.load()?;
            let out = experiment::run_select(&cfg, &data)?;
            println!(
                "chosen K={} M={}",
                out.report.chosen.num_states, out.report.chosen.mixture_size
            );
            println!("{}", out.json_path.display());
            println!("{}", out.csv_path.display());
        }
        Command::Evaluate { common, params } => {
            let cfg = common.load()?;
            let path = experiment::run_evaluate(&cfg, &params)?;
            println!("{}", path.display());
        }
        Command::Rate { common } => {
            let cfg = common.load()?;
            let out = experiment::run_rate(&cfg)?;
            println!("slope {}", out.slope);
            println!("{}", out.csv_path.display());
            println!("{}", out.summary_path.display());
        }
    }
    Ok(())
}

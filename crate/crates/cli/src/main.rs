mod commands;
mod config;
mod failure;
mod output;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latmom::simstudy::{Estimator, Scenario};
use std::path::PathBuf;
use std::process::ExitCode;

/// Latent-moment threshold models for recurrent binary outcomes.
#[derive(Parser)]
#[command(name = "latmom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON run configuration; every section is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; files appear only if the command succeeds.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed of the configuration section the command uses.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
pub struct SamplerArgs {
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Blas,
    Quad,
    Gee,
    Glmm,
}

impl From<ModelArg> for Estimator {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Blas => Estimator::Blas,
            ModelArg::Quad => Estimator::Quad,
            ModelArg::Gee => Estimator::Gee,
            ModelArg::Glmm => Estimator::Glmm,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Sas,
    SkewT,
    Mixture,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Sas => Scenario::Sas,
            ScenarioArg::SkewT => Scenario::SkewT,
            ScenarioArg::Mixture => Scenario::Mixture,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel: panel.csv, holdout.csv, truth.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_subjects: Option<usize>,
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
    },
    /// Simulate event probabilities over a moment grid and fit the surface:
    /// surface.bin.
    BuildSurface {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a model: draws.csv or estimates.csv, and probs.csv.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Panel CSV: subject_id,time,y,<covariates...>.
        #[arg(long)]
        panel: PathBuf,
        /// Surface artifact from `build-surface`; required for quad.
        #[arg(long)]
        surface: Option<PathBuf>,
        /// Membership CSV: subject_id,group_id,weight.
        #[arg(long)]
        membership: Option<PathBuf>,
        /// Predict this panel instead of the fitted one. For the Bayesian
        /// models it must contain the fitted subjects.
        #[arg(long)]
        predict: Option<PathBuf>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Score a probs.csv: metrics.json and metrics_by_time.csv.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the simulation study: report.csv and summary.json.
    Replicate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        surface: Option<PathBuf>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        n_subjects: Option<usize>,
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
        #[arg(long, value_enum, value_delimiter = ',')]
        estimators: Option<Vec<ModelArg>>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Posterior-mean latent densities of one subject over time:
    /// trajectory.csv.
    Report {
        #[command(flatten)]
        common: Common,
        /// Output directory of a `fit --model blas|quad` run.
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        membership: Option<PathBuf>,
        #[arg(long)]
        subject: String,
    },
    /// Print the full default configuration.
    DefaultConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { common, n_subjects, scenario } => {
            commands::simulate(&common, n_subjects, scenario.map(Into::into))
        }
        Command::BuildSurface { common } => commands::build_surface(&common),
        Command::Fit { common, model, panel, surface, membership, predict, sampler } => commands::fit(
            &common,
            model.into(),
            &panel,
            surface.as_deref(),
            membership.as_deref(),
            predict.as_deref(),
            &sampler,
        ),
        Command::Evaluate { config, probs, out } => commands::evaluate(config.as_deref(), &probs, &out),
        Command::Replicate { common, surface, replications, n_subjects, scenario, estimators, sampler } => {
            commands::replicate(
                &common,
                surface.as_deref(),
                replications,
                n_subjects,
                scenario.map(Into::into),
                estimators.map(|v| v.into_iter().map(Into::into).collect()),
                &sampler,
            )
        }
        Command::Report { common, fit, panel, membership, subject } => {
            commands::report(&common, &fit, &panel, membership.as_deref(), &subject)
        }
        Command::DefaultConfig => commands::default_config(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("latmom: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

use crate::model_file::Kind;
use clap::{Parser, Subcommand, ValueEnum};
use lvm_core::glm::GlimFamily;
use lvm_core::ica::Nonlinearity;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "lvm", version, about = "Fit, query and sample latent-variable models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV file; writes the model file and fit metrics.
    Fit(Args),
    /// Per-sample recognition moments or responsibilities under a fitted model.
    Infer(Args),
    /// Seeded draws from a fitted model.
    Sample(Args),
    /// Mean log-likelihood of a CSV file under a fitted model.
    Eval(Args),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Infer(_) => "infer",
            Command::Sample(_) => "sample",
            Command::Eval(_) => "eval",
        }
    }

    pub fn args(&self) -> &Args {
        match self {
            Command::Fit(a) | Command::Infer(a) | Command::Sample(a) | Command::Eval(a) => a,
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
#[command(allow_negative_numbers = true)]
pub struct Args {
    #[arg(long, value_enum)]
    pub model: Kind,
    /// CSV input with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Components, factors, atoms, states, state dimension, hidden units or classes.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    /// Response family of a generalized linear model.
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: Family,
    /// Known scale of the gamma family.
    #[arg(long, default_value_t = 1.0)]
    pub gamma_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Model file (fit) or CSV output (infer, sample); standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Metrics JSON destination (fit, eval); standard output when absent.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Fitted model file read by infer, sample and eval.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Model file whose parameters start the fit instead of a random initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Number of draws (per sequence for hmm and ssm).
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of sequences drawn by `sample` for hmm and ssm.
    #[arg(long, default_value_t = 1)]
    pub sequences: usize,
    /// Column grouping rows into sequences; `seq_id` is used when present.
    #[arg(long)]
    pub sequence_column: Option<String>,
    /// Data columns to model; all remaining numeric columns by default.
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    /// Response columns of a generalized linear model; the last column by default.
    #[arg(long, value_delimiter = ',')]
    pub target: Option<Vec<String>>,
    /// Control-input columns of a state-space model.
    #[arg(long, value_delimiter = ',')]
    pub controls: Option<Vec<String>>,
    /// Independent EM restarts; the lowest final free energy wins.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub restarts: u64,
    /// Hold every mixture covariance at this multiple of the identity.
    #[arg(long)]
    pub isotropic: Option<f64>,
    /// Sparse coding: observation noise precision.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Sparse coding: Laplace rate shared by all sources.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Sparse coding: sharpness of the smooth surrogate in the Hessian.
    #[arg(long, default_value_t = lvm_core::sparse::DEFAULT_BETA)]
    pub beta: f64,
    /// Learning rate for rbm and ica.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Gibbs sweeps per contrastive-divergence chain.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub cd_steps: u64,
    /// Gibbs sweeps per independent chain when sampling an rbm.
    #[arg(long, default_value_t = 1000)]
    pub gibbs_sweeps: usize,
    #[arg(long, value_enum, default_value = "logistic")]
    pub nonlinearity: NonlinearityArg,
    /// Fit a generalized linear model without the constant input.
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Gaussian,
    #[value(name = "bernoulli-logit", alias = "bernoulli")]
    Bernoulli,
    #[value(name = "poisson-log", alias = "poisson")]
    Poisson,
    #[value(name = "gamma-shape-log", alias = "gamma")]
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NonlinearityArg {
    #[value(name = "logistic", alias = "logistic-cdf")]
    Logistic,
    #[value(name = "gaussian-cdf")]
    GaussianCdf,
}

impl Args {
    pub fn k(&self) -> Option<usize> {
        self.k.map(|k| k as usize)
    }

    pub fn glim_family(&self) -> GlimFamily {
        match self.family {
            Family::Gaussian => GlimFamily::Gaussian,
            Family::Bernoulli => GlimFamily::BernoulliLogit,
            Family::Poisson => GlimFamily::PoissonLog,
            Family::Gamma => GlimFamily::GammaShapeLog {
                scale: self.gamma_scale,
            },
        }
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        match self.nonlinearity {
            NonlinearityArg::Logistic => Nonlinearity::Logistic,
            NonlinearityArg::GaussianCdf => Nonlinearity::GaussianCdf,
        }
    }
}

//! Command-line flags and the JSON config file they override.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::CliError;

/// Environment variable holding the default quadrature node count.
pub const NODES_ENV: &str = "SCOREDRIVE_QUAD_NODES";

#[derive(Debug, Parser)]
#[command(
    name = "scoredrive",
    version,
    about = "Score-driven filters and Tweedie identity checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a filter over the `y` column of a CSV file.
    Filter(FilterArgs),
    /// Check the posterior-mean identities against quadrature.
    VerifyIdentities(VerifyArgs),
    /// Error of the leading-order correction over a grid of predictive variances.
    ExpansionStudy(ExpansionArgs),
    /// Simulate a series and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit (omega, beta, alpha) by maximum likelihood.
    Fit(FitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Discounted conjugate updating of `(tau, n)`.
    Conjugate,
    /// Score-driven recursion.
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpKind {
    Garch11,
    NefConstant,
    NefRandomWalkMean,
    GaussianLocalLevel,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON object of option values; flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FilterArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Input CSV with a header and a `y` column.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub family: Option<String>,
    /// Dispersion for the Gaussian-location and Gamma families.
    #[arg(long)]
    pub dispersion: Option<f64>,
    /// Discount factor.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Initial predictive mean.
    #[arg(long)]
    pub mu0: Option<f64>,
    /// Initial prior strength (conjugate mode); defaults to the steady value.
    #[arg(long)]
    pub n0: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Score scaling exponent.
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub link: Option<String>,
    /// Initial link-scale parameter (score mode).
    #[arg(long)]
    pub theta1: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct VerifyArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// all, gaussian, nef-natural, nef-expectation or parameter-space.
    #[arg(long)]
    pub suite: Option<String>,
    /// Quadrature node count.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// auto, gauss-hermite or adaptive-trapezoid.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Finite-difference step for marginal scores.
    #[arg(long)]
    pub fd_step: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExpansionArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub dispersion: Option<f64>,
    /// Predictive mean.
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub y: Option<f64>,
    /// Comma-separated, strictly decreasing predictive variances.
    #[arg(long, value_delimiter = ',')]
    pub pgrid: Option<Vec<f64>>,
    /// Quadrature node count.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// auto, gauss-hermite or adaptive-trapezoid.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Finite-difference step for marginal scores.
    #[arg(long)]
    pub fd_step: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub dgp: Option<DgpKind>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// GARCH(1,1) intercept.
    #[arg(long)]
    pub omega: Option<f64>,
    /// GARCH(1,1) coefficient on the squared observation.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// GARCH(1,1) coefficient on the lagged variance.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub dispersion: Option<f64>,
    #[arg(long)]
    pub step_sd: Option<f64>,
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long)]
    pub state_var: Option<f64>,
    #[arg(long)]
    pub obs_var: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub dispersion: Option<f64>,
    #[arg(long)]
    pub link: Option<String>,
    #[arg(long)]
    pub d: Option<f64>,
    /// Starting values.
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub theta1: Option<f64>,
}

/// Field-wise `flag.or(config)`.
pub trait Merge: Sized {
    fn merge(self, config: Self) -> Self;
}

macro_rules! merge_fields {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl Merge for $ty {
            fn merge(self, config: Self) -> Self {
                Self {
                    $($field: self.$field.or(config.$field),)*
                    ..self
                }
            }
        }
    };
}

merge_fields!(FilterArgs {
    input,
    mode,
    family,
    dispersion,
    delta,
    mu0,
    n0,
    omega,
    beta,
    alpha,
    d,
    link,
    theta1
});
merge_fields!(VerifyArgs {
    suite,
    nodes,
    scheme,
    fd_step
});
merge_fields!(ExpansionArgs {
    family,
    dispersion,
    a,
    y,
    pgrid,
    nodes,
    scheme,
    fd_step
});
merge_fields!(SimulateArgs {
    dgp,
    length,
    seed,
    burn_in,
    omega,
    alpha,
    beta,
    family,
    mu,
    dispersion,
    step_sd,
    mu0,
    state_var,
    obs_var
});
merge_fields!(FitArgs {
    input,
    family,
    dispersion,
    link,
    d,
    omega,
    beta,
    alpha,
    theta1
});

/// Reads the config file named in `common`, if any, and lets flags override it.
pub fn resolve<T>(flags: T, common: &Common) -> Result<T, CliError>
where
    T: Merge + DeserializeOwned + Default,
{
    let Some(path) = &common.config else {
        return Ok(flags);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let config: T = serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))?;
    Ok(flags.merge(config))
}

//! Seeded data generators.
//!
//! Every generator draws from a single [`Stream`](crate::rng::Stream) seeded
//! from the configuration, so identical configurations give bit-identical
//! series.

use serde::{Deserialize, Serialize};

use crate::edm::{EdmSpec, Family};
use crate::error::{Error, Result};
use crate::rng::Stream;

pub const DEFAULT_BURN_IN: usize = 500;

/// Data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Dgp {
    /// `y_t = sqrt(h_t) z_t`, `h_{t+1} = omega + alpha y_t^2 + beta h_t`,
    /// started at the unconditional variance.
    Garch11 { omega: f64, alpha: f64, beta: f64 },
    /// Independent draws at a fixed mean.
    NefConstant {
        family: Family,
        mu: f64,
        #[serde(default = "unit")]
        dispersion: f64,
    },
    /// Mean follows a Gaussian random walk, on the log scale for
    /// positive-mean families.
    NefRandomWalkMean {
        family: Family,
        step_sd: f64,
        mu0: f64,
        #[serde(default = "unit")]
        dispersion: f64,
    },
    /// `mu_{t+1} = mu_t + N(0, state_var)`, `y_t = mu_t + N(0, obs_var)`, `mu_1 = 0`.
    GaussianLocalLevel { state_var: f64, obs_var: f64 },
}

fn unit() -> f64 {
    1.0
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dgp: Dgp,
    pub length: usize,
    pub seed: u64,
    /// Discarded GARCH steps before recording; ignored by other processes.
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

impl SimConfig {
    pub fn new(dgp: Dgp, length: usize, seed: u64) -> Self {
        SimConfig {
            dgp,
            length,
            seed,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::Config(
                "simulation length must be at least 1".to_string(),
            ));
        }
        let positive = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive, got {v}")))
            }
        };
        match &self.dgp {
            Dgp::Garch11 { omega, alpha, beta } => {
                positive(*omega, "garch omega")?;
                if !(*alpha >= 0.0 && *beta >= 0.0) {
                    return Err(Error::Config(
                        "garch alpha and beta must be nonnegative".to_string(),
                    ));
                }
                if !(alpha + beta < 1.0) {
                    return Err(Error::Config(format!(
                        "garch alpha + beta must be below 1 for a stationary start, got {}",
                        alpha + beta
                    )));
                }
            }
            Dgp::NefConstant {
                family,
                mu,
                dispersion,
            } => {
                let spec = EdmSpec::for_family(*family, *dispersion)?;
                spec.check_mean(*mu)?;
            }
            Dgp::NefRandomWalkMean {
                family,
                step_sd,
                mu0,
                dispersion,
            } => {
                let spec = EdmSpec::for_family(*family, *dispersion)?;
                spec.check_mean(*mu0)?;
                if !(step_sd.is_finite() && *step_sd >= 0.0) {
                    return Err(Error::Config(format!(
                        "random-walk step sd must be nonnegative, got {step_sd}"
                    )));
                }
            }
            Dgp::GaussianLocalLevel { state_var, obs_var } => {
                positive(*state_var, "state variance")?;
                positive(*obs_var, "observation variance")?;
            }
        }
        Ok(())
    }
}

/// Simulated observations and, where defined, the latent path.
///
/// The latent column is the conditional variance for GARCH and the mean for
/// the random-walk and local-level processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub y: Vec<f64>,
    pub latent: Option<Vec<f64>>,
}

pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let mut rng = Stream::new(cfg.seed);
    let n = cfg.length;
    let mut y = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    match &cfg.dgp {
        Dgp::Garch11 { omega, alpha, beta } => {
            let mut h = omega / (1.0 - alpha - beta);
            for t in 0..cfg.burn_in + n {
                let obs = h.sqrt() * rng.standard_normal();
                if t >= cfg.burn_in {
                    y.push(obs);
                    latent.push(h);
                }
                h = omega + alpha * obs * obs + beta * h;
            }
            Ok(SimOutput {
                y,
                latent: Some(latent),
            })
        }
        Dgp::NefConstant {
            family,
            mu,
            dispersion,
        } => {
            let spec = EdmSpec::for_family(*family, *dispersion)?;
            for _ in 0..n {
                y.push(rng.observation(&spec, *mu));
            }
            Ok(SimOutput { y, latent: None })
        }
        Dgp::NefRandomWalkMean {
            family,
            step_sd,
            mu0,
            dispersion,
        } => {
            let spec = EdmSpec::for_family(*family, *dispersion)?;
            let log_scale = spec.mean_domain().0.is_finite();
            let mut mu = *mu0;
            for _ in 0..n {
                y.push(rng.observation(&spec, mu));
                latent.push(mu);
                let step = step_sd * rng.standard_normal();
                if log_scale {
                    mu *= step.exp();
                } else {
                    mu += step;
                }
            }
            Ok(SimOutput {
                y,
                latent: Some(latent),
            })
        }
        Dgp::GaussianLocalLevel { state_var, obs_var } => {
            let (q, r) = (state_var.sqrt(), obs_var.sqrt());
            let mut mu = 0.0;
            for _ in 0..n {
                y.push(mu + r * rng.standard_normal());
                latent.push(mu);
                mu += q * rng.standard_normal();
            }
            Ok(SimOutput {
                y,
                latent: Some(latent),
            })
        }
    }
}

//! Tweedie posterior-mean identities.
//!
//! Three static identities relate posterior means to scores:
//!
//! * Gaussian location: `E[mu | y] = y + sigma^2 d/dy log f(y)`.
//! * Natural exponential family: `E[theta | y] = d/dy log f(y) - d/dy log h(y)`.
//! * Expectation parameter: `E[mu | y] = y + E[d/dtheta log pi(theta) | y]`,
//!   which under a conjugate prior `pi ∝ exp{tau theta - n psi(theta)}` is
//!   `(tau + y) / (n + 1)`.
//!
//! Marginal scores are always supplied by [`crate::quadrature::marginal_score`];
//! base-measure scores are closed forms so the natural-parameter correction
//! carries no finite-difference noise.

use serde::{Deserialize, Serialize};

use crate::edm::EdmSpec;
use crate::error::{Error, Result};
use crate::quadrature::{self, PriorSpec, QuadratureConfig};

/// Which identity a report checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentityId {
    GaussianTweedie,
    NefNatural,
    NefExpectation,
    /// Posterior correction of a Gaussian predictive law as a scaled marginal score.
    ParameterSpaceTweedie,
}

/// One identity evaluated both ways.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub identity_id: IdentityId,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityReport {
    pub fn new(identity_id: IdentityId, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let abs_gap = (lhs - rhs).abs();
        IdentityReport {
            identity_id,
            lhs,
            rhs,
            abs_gap,
            tolerance,
            // NaN gaps fail
            pass: abs_gap <= tolerance,
        }
    }
}

fn check_variance(sigma2: f64) -> Result<()> {
    if sigma2.is_finite() && sigma2 > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "noise variance must be positive, got {sigma2}"
        )))
    }
}

/// Posterior mean of the Gaussian location from the marginal score at `y`.
pub fn tweedie_gaussian(y: f64, sigma2: f64, marginal_score_at_y: f64) -> Result<f64> {
    check_variance(sigma2)?;
    Ok(y + sigma2 * marginal_score_at_y)
}

/// Posterior mean of the Gaussian noise, `-sigma^2 d/dy log f(y)`.
pub fn gaussian_noise_posterior_mean(sigma2: f64, marginal_score_at_y: f64) -> Result<f64> {
    check_variance(sigma2)?;
    Ok(-sigma2 * marginal_score_at_y)
}

/// Posterior mean of the natural parameter from the marginal score.
///
/// The score must be taken in the observation statistic (`y^2` for the
/// variance model). Discrete families are rejected.
pub fn tweedie_nef_natural(spec: &EdmSpec, y: f64, marginal_score_at_y: f64) -> Result<f64> {
    if spec.is_discrete() {
        return Err(Error::Unsupported(format!(
            "the natural-parameter identity needs a continuous observation, not {}",
            spec.family()
        )));
    }
    Ok(marginal_score_at_y - spec.base_measure_score(y)?)
}

/// Closed-form conjugate posterior mean `(tau + x) / (n + 1)`.
pub fn conjugate_posterior_mean(tau: f64, n: f64, x: f64) -> f64 {
    (tau + x) / (n + 1.0)
}

/// Posterior mean of the expectation parameter.
///
/// Conjugate priors use the closed form. Other priors must live on the
/// natural parameter with a differentiable log density; the posterior mean
/// of the prior score is then computed by quadrature.
pub fn nef_expectation_posterior(
    prior: &PriorSpec,
    spec: &EdmSpec,
    y: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    match prior {
        PriorSpec::ConjugateNef { tau, n } => {
            prior.validate(spec)?;
            let x = spec.check_statistic(spec.statistic(y))?;
            Ok(conjugate_posterior_mean(*tau, *n, x))
        }
        _ => nef_expectation_by_quadrature(prior, spec, y, cfg),
    }
}

/// General form `x + E[d/dtheta log pi | y]`, by quadrature, for any
/// natural-parameter prior (conjugate priors included).
pub fn nef_expectation_by_quadrature(
    prior: &PriorSpec,
    spec: &EdmSpec,
    y: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let x = spec.statistic(y);
    Ok(x + quadrature::posterior_natural_prior_score(spec, prior, y, cfg)?)
}

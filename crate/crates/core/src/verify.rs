//! Identity suites: each identity evaluated in closed or score form (`lhs`)
//! against direct quadrature (`rhs`) over a fixed grid of cases.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::edm::EdmSpec;
use crate::error::{Error, Result};
use crate::local::{exact_correction_forms, PredictiveState};
use crate::quadrature::{
    marginal_score, posterior_mean_oracle, PriorSpec, QuadratureConfig, Target,
};
use crate::tweedie::{
    nef_expectation_by_quadrature, nef_expectation_posterior, tweedie_gaussian,
    tweedie_nef_natural, IdentityId, IdentityReport,
};

/// Tolerance used by every suite.
pub const IDENTITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    #[default]
    All,
    Gaussian,
    NefNatural,
    NefExpectation,
    ParameterSpace,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::All => "all",
            Suite::Gaussian => "gaussian",
            Suite::NefNatural => "nef-natural",
            Suite::NefExpectation => "nef-expectation",
            Suite::ParameterSpace => "parameter-space",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "all" => Ok(Suite::All),
            "gaussian" => Ok(Suite::Gaussian),
            "nef-natural" => Ok(Suite::NefNatural),
            "nef-expectation" => Ok(Suite::NefExpectation),
            "parameter-space" => Ok(Suite::ParameterSpace),
            other => Err(Error::Config(format!("unknown suite '{other}'"))),
        }
    }
}

fn report(id: IdentityId, lhs: f64, rhs: f64) -> IdentityReport {
    IdentityReport::new(id, lhs, rhs, IDENTITY_TOLERANCE)
}

fn bimodal() -> PriorSpec {
    PriorSpec::mixture(vec![0.5, 0.5], vec![-2.0, 2.0], vec![0.25, 0.25])
}

/// Gaussian likelihood with Gaussian and bimodal-mixture priors.
pub fn gaussian_suite(cfg: &QuadratureConfig) -> Result<Vec<IdentityReport>> {
    let mut out = Vec::new();
    for sigma2 in [1.0, 0.5] {
        let spec = EdmSpec::gaussian_location(sigma2)?;
        for prior in [PriorSpec::gaussian(0.5, 2.0), bimodal()] {
            for y in [-2.0, 0.0, 1.0, 3.0] {
                let score = marginal_score(&spec, &prior, y, cfg)?;
                let lhs = tweedie_gaussian(y, sigma2, score)?;
                let rhs = posterior_mean_oracle(&spec, &prior, y, cfg, Target::Mu)?;
                out.push(report(IdentityId::GaussianTweedie, lhs, rhs));
            }
        }
    }
    Ok(out)
}

/// Natural-parameter posterior mean from the marginal score, for the
/// continuous families.
pub fn nef_natural_suite(cfg: &QuadratureConfig) -> Result<Vec<IdentityReport>> {
    let cases: Vec<(EdmSpec, PriorSpec, Vec<f64>)> = vec![
        (
            EdmSpec::gaussian_location(4.0)?,
            PriorSpec::gaussian(0.0, 1.0),
            vec![-1.0, 2.0],
        ),
        (EdmSpec::gaussian_location(1.0)?, bimodal(), vec![0.5, 2.5]),
        (
            EdmSpec::gamma(0.5)?,
            PriorSpec::conjugate(3.0, 2.0),
            vec![0.5, 2.0],
        ),
        (
            EdmSpec::gamma(0.5)?,
            PriorSpec::gaussian(1.5, 0.1),
            vec![1.0, 3.0],
        ),
        (
            EdmSpec::gaussian_variance(),
            PriorSpec::conjugate(4.0, 3.0),
            vec![0.7, -1.5],
        ),
    ];
    let mut out = Vec::new();
    for (spec, prior, ys) in cases {
        for y in ys {
            let score = marginal_score(&spec, &prior, y, cfg)?;
            let lhs = tweedie_nef_natural(&spec, y, score)?;
            let rhs = posterior_mean_oracle(&spec, &prior, y, cfg, Target::Theta)?;
            out.push(report(IdentityId::NefNatural, lhs, rhs));
        }
    }
    Ok(out)
}

/// Expectation-parameter posterior mean: closed form under conjugate priors
/// and the general prior-score form, both against quadrature.
pub fn nef_expectation_suite(cfg: &QuadratureConfig) -> Result<Vec<IdentityReport>> {
    let cases: Vec<(EdmSpec, f64, f64, Vec<f64>)> = vec![
        (EdmSpec::poisson(), 2.0, 1.0, vec![0.0, 3.0, 7.0]),
        (EdmSpec::gamma(0.5)?, 3.0, 2.0, vec![0.5, 2.0]),
        (EdmSpec::gamma(2.0)?, 1.0, 4.0, vec![0.1, 1.0]),
        (EdmSpec::gaussian_variance(), 4.0, 3.0, vec![0.7, -1.5]),
        (EdmSpec::gaussian_location(1.0)?, 0.5, 2.0, vec![-1.0, 2.0]),
    ];
    let mut out = Vec::new();
    for (spec, tau, n, ys) in cases {
        let prior = PriorSpec::conjugate(tau, n);
        for y in ys {
            let closed = nef_expectation_posterior(&prior, &spec, y, cfg)?;
            let rhs = posterior_mean_oracle(&spec, &prior, y, cfg, Target::Mu)?;
            out.push(report(IdentityId::NefExpectation, closed, rhs));
            let general = nef_expectation_by_quadrature(&prior, &spec, y, cfg)?;
            out.push(report(IdentityId::NefExpectation, general, closed));
        }
    }
    Ok(out)
}

/// Mean shift of a Gaussian predictive law against the scaled marginal
/// score in the predictive mean.
pub fn parameter_space_suite(cfg: &QuadratureConfig) -> Result<Vec<IdentityReport>> {
    let cases: Vec<(EdmSpec, Vec<f64>, Vec<f64>)> = vec![
        (
            EdmSpec::gaussian_location(1.0)?,
            vec![-1.0, 0.5],
            vec![-2.0, 0.0, 3.0],
        ),
        (EdmSpec::poisson(), vec![2.0, 5.0], vec![1.0, 3.0, 6.0]),
        (EdmSpec::gamma(0.5)?, vec![1.0, 2.0], vec![0.5, 2.0]),
        (
            EdmSpec::gaussian_variance(),
            vec![1.0, 2.0],
            vec![0.5, -1.5],
        ),
    ];
    let mut out = Vec::new();
    for (spec, a_grid, y_grid) in cases {
        for &a in &a_grid {
            for &y in &y_grid {
                for p in [0.01, 0.1, 0.5] {
                    let forms = exact_correction_forms(&spec, PredictiveState::new(a, p)?, y, cfg)?;
                    out.push(report(
                        IdentityId::ParameterSpaceTweedie,
                        forms.score_form,
                        forms.mean_shift,
                    ));
                }
            }
        }
    }
    Ok(out)
}

pub fn run_suite(suite: Suite, cfg: &QuadratureConfig) -> Result<Vec<IdentityReport>> {
    Ok(match suite {
        Suite::Gaussian => gaussian_suite(cfg)?,
        Suite::NefNatural => nef_natural_suite(cfg)?,
        Suite::NefExpectation => nef_expectation_suite(cfg)?,
        Suite::ParameterSpace => parameter_space_suite(cfg)?,
        Suite::All => {
            let mut all = gaussian_suite(cfg)?;
            all.extend(nef_natural_suite(cfg)?);
            all.extend(nef_expectation_suite(cfg)?);
            all.extend(parameter_space_suite(cfg)?);
            all
        }
    })
}

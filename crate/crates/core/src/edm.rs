//! Exponential dispersion model families and their score calculus.
//!
//! Every family here is a one-parameter natural exponential family once the
//! dispersion `phi` is fixed:
//!
//! ```text
//! p(x | theta) = h(x) exp{theta x - psi(theta)},   mu = psi'(theta),   var = phi V(mu)
//! ```
//!
//! with the Tweedie power variance function `V(mu) = mu^p`. The natural
//! parameter absorbs `phi` (so the Gaussian location model has
//! `theta = mu / sigma^2`).
//!
//! `GaussianVariance` models `Y ~ N(0, h)` through its sufficient statistic
//! `X = Y^2`, which is Gamma with shape 1/2 and mean `h`. Functions that take
//! an observation accept the raw `y` and square it internally; derivatives
//! "in the observation" are taken with respect to `X`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Built-in observation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `Y ~ N(mu, sigma^2)` with known `sigma^2`.
    GaussianLocation,
    /// `Y ~ N(0, h)`, handled through `X = Y^2 ~ Gamma(1/2, mean h)`.
    GaussianVariance,
    /// `Y ~ Poisson(mu)`.
    Poisson,
    /// `Y ~ Gamma` with mean `mu` and fixed shape `1/phi`.
    Gamma,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::GaussianLocation,
        Family::GaussianVariance,
        Family::Poisson,
        Family::Gamma,
    ];

    /// Tweedie index implied by the family.
    pub fn tweedie_index(self) -> f64 {
        match self {
            Family::GaussianLocation => 0.0,
            Family::Poisson => 1.0,
            Family::Gamma | Family::GaussianVariance => 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::GaussianLocation => "gaussian-location",
            Family::GaussianVariance => "gaussian-variance",
            Family::Poisson => "poisson",
            Family::Gamma => "gamma",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "gaussian-location" | "gaussian" | "normal" => Ok(Family::GaussianLocation),
            "gaussian-variance" | "variance" | "garch" => Ok(Family::GaussianVariance),
            "poisson" => Ok(Family::Poisson),
            "gamma" => Ok(Family::Gamma),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }
}

/// Parameterization used for the time-varying parameter of a recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    #[default]
    Identity,
    Log,
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Link::Identity),
            "log" => Ok(Link::Log),
            other => Err(Error::Config(format!("unknown link '{other}'"))),
        }
    }
}

/// Expectation parameter `mu = psi'(theta)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MeanParam(pub f64);

/// Natural parameter `theta`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NaturalParam(pub f64);

impl MeanParam {
    pub fn get(self) -> f64 {
        self.0
    }
}

impl NaturalParam {
    pub fn get(self) -> f64 {
        self.0
    }
}

/// An exponential dispersion model with known dispersion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdmSpec {
    family: Family,
    dispersion: f64,
    tweedie_index: f64,
}

impl EdmSpec {
    /// Builds a family, cross-checking the Tweedie index against the family.
    pub fn new(family: Family, dispersion: f64, tweedie_index: f64) -> Result<Self> {
        if !(dispersion.is_finite() && dispersion > 0.0) {
            return Err(Error::Config(format!(
                "dispersion must be positive and finite, got {dispersion}"
            )));
        }
        if tweedie_index != family.tweedie_index() {
            return Err(Error::Config(format!(
                "tweedie index {tweedie_index} does not match {family} (expected {})",
                family.tweedie_index()
            )));
        }
        match family {
            Family::Poisson if dispersion != 1.0 => Err(Error::Config(
                "poisson dispersion is fixed at 1".to_string(),
            )),
            Family::GaussianVariance if dispersion != 2.0 => Err(Error::Config(
                "gaussian-variance dispersion is fixed at 2 (var(Y^2 | h) = 2 h^2)".to_string(),
            )),
            _ => Ok(EdmSpec {
                family,
                dispersion,
                tweedie_index,
            }),
        }
    }

    /// Family with its canonical dispersion; `dispersion` is used only where it is free.
    pub fn for_family(family: Family, dispersion: f64) -> Result<Self> {
        let phi = match family {
            Family::Poisson => 1.0,
            Family::GaussianVariance => 2.0,
            _ => dispersion,
        };
        Self::new(family, phi, family.tweedie_index())
    }

    pub fn gaussian_location(sigma2: f64) -> Result<Self> {
        Self::new(Family::GaussianLocation, sigma2, 0.0)
    }

    pub fn gaussian_variance() -> Self {
        EdmSpec {
            family: Family::GaussianVariance,
            dispersion: 2.0,
            tweedie_index: 2.0,
        }
    }

    pub fn poisson() -> Self {
        EdmSpec {
            family: Family::Poisson,
            dispersion: 1.0,
            tweedie_index: 1.0,
        }
    }

    /// Gamma with mean `mu` and shape `1 / phi`.
    pub fn gamma(phi: f64) -> Result<Self> {
        Self::new(Family::Gamma, phi, 2.0)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    pub fn tweedie_index(&self) -> f64 {
        self.tweedie_index
    }

    /// Only Poisson observations are discrete.
    pub fn is_discrete(&self) -> bool {
        self.family == Family::Poisson
    }

    /// Gamma shape `1/phi` for the Gamma-type families.
    fn shape(&self) -> f64 {
        1.0 / self.dispersion
    }

    /// Sufficient statistic entering the exponential family: `y^2` for the
    /// variance model, `y` otherwise.
    pub fn statistic(&self, y: f64) -> f64 {
        match self.family {
            Family::GaussianVariance => y * y,
            _ => y,
        }
    }

    /// Open interval of valid means.
    pub fn mean_domain(&self) -> (f64, f64) {
        match self.family {
            Family::GaussianLocation => (f64::NEG_INFINITY, f64::INFINITY),
            _ => (0.0, f64::INFINITY),
        }
    }

    /// Open interval of valid natural parameters.
    pub fn natural_domain(&self) -> (f64, f64) {
        match self.family {
            Family::GaussianLocation | Family::Poisson => (f64::NEG_INFINITY, f64::INFINITY),
            Family::Gamma | Family::GaussianVariance => (f64::NEG_INFINITY, 0.0),
        }
    }

    pub fn mean_in_domain(&self, mu: f64) -> bool {
        let (lo, hi) = self.mean_domain();
        mu.is_finite() && mu > lo && mu < hi
    }

    pub fn natural_in_domain(&self, theta: f64) -> bool {
        let (lo, hi) = self.natural_domain();
        theta.is_finite() && theta > lo && theta < hi
    }

    pub(crate) fn check_mean(&self, mu: f64) -> Result<f64> {
        if self.mean_in_domain(mu) {
            Ok(mu)
        } else {
            Err(Error::Domain(format!(
                "mean {mu} outside the {} mean domain",
                self.family
            )))
        }
    }

    fn check_natural(&self, theta: f64) -> Result<f64> {
        if self.natural_in_domain(theta) {
            Ok(theta)
        } else {
            Err(Error::Domain(format!(
                "natural parameter {theta} outside the {} natural space",
                self.family
            )))
        }
    }

    /// Checks the sufficient statistic against the family support.
    pub(crate) fn check_statistic(&self, x: f64) -> Result<f64> {
        let ok = x.is_finite()
            && match self.family {
                Family::GaussianLocation => true,
                Family::Poisson => x >= 0.0 && x.fract() == 0.0,
                Family::Gamma | Family::GaussianVariance => x > 0.0,
            };
        if ok {
            Ok(x)
        } else {
            Err(Error::Support {
                family: self.family.name(),
                value: x,
            })
        }
    }

    /// Variance function `V(mu) = mu^p`, with `0^0 = 1`.
    pub fn variance_function(&self, mu: f64) -> f64 {
        match self.family {
            Family::GaussianLocation => 1.0,
            Family::Poisson => mu,
            Family::Gamma | Family::GaussianVariance => mu * mu,
        }
    }

    /// Cumulant function `psi(theta)`.
    pub fn cumulant(&self, theta: NaturalParam) -> Result<f64> {
        let t = self.check_natural(theta.0)?;
        Ok(match self.family {
            Family::GaussianLocation => 0.5 * self.dispersion * t * t,
            Family::Poisson => t.exp(),
            Family::Gamma | Family::GaussianVariance => -self.shape() * (-t).ln(),
        })
    }

    /// `mu = psi'(theta)`.
    pub fn mean_from_natural(&self, theta: NaturalParam) -> Result<MeanParam> {
        let t = self.check_natural(theta.0)?;
        let mu = match self.family {
            Family::GaussianLocation => self.dispersion * t,
            Family::Poisson => t.exp(),
            Family::Gamma | Family::GaussianVariance => -self.shape() / t,
        };
        Ok(MeanParam(mu))
    }

    /// Inverse of [`EdmSpec::mean_from_natural`].
    pub fn natural_from_mean(&self, mu: MeanParam) -> Result<NaturalParam> {
        let m = self.check_mean(mu.0)?;
        let theta = match self.family {
            Family::GaussianLocation => m / self.dispersion,
            Family::Poisson => m.ln(),
            Family::Gamma | Family::GaussianVariance => -self.shape() / m,
        };
        Ok(NaturalParam(theta))
    }

    /// Conditional score in mean parameterization, `(x - mu) / (phi V(mu))`.
    pub fn score_mean(&self, y: f64, mu: MeanParam) -> Result<f64> {
        let m = self.check_mean(mu.0)?;
        let x = self.statistic(y);
        Ok((x - m) / (self.dispersion * self.variance_function(m)))
    }

    /// Fisher information in mean parameterization, `1 / (phi V(mu))`.
    pub fn fisher_mean(&self, mu: MeanParam) -> Result<f64> {
        let m = self.check_mean(mu.0)?;
        Ok(1.0 / (self.dispersion * self.variance_function(m)))
    }

    /// Inverse-Fisher-scaled mean score. Equals the raw innovation `x - mu`.
    pub fn innovation(&self, y: f64, mu: MeanParam) -> Result<f64> {
        Ok(self.score_mean(y, mu)? / self.fisher_mean(mu)?)
    }

    /// Mean score scaled by `I(mu)^{-d}`.
    ///
    /// `d = 0` keeps the variance-normalized score, `d = 1/2` standardizes it
    /// and `d = 1` returns the raw innovation.
    pub fn scaled_score(&self, y: f64, mu: MeanParam, d: f64) -> Result<f64> {
        let score = self.score_mean(y, mu)?;
        let info = self.fisher_mean(mu)?;
        Ok(if d == 1.0 {
            score / info
        } else if d == 0.0 {
            score
        } else {
            info.powf(-d) * score
        })
    }

    /// Score with respect to the link-scale parameter.
    pub fn score_link(&self, y: f64, mu: MeanParam, link: Link) -> Result<f64> {
        let score = self.score_mean(y, mu)?;
        match link {
            Link::Identity => Ok(score),
            Link::Log => {
                if mu.0 <= 0.0 {
                    return Err(Error::Domain(format!(
                        "log link requires a positive mean, got {}",
                        mu.0
                    )));
                }
                Ok(mu.0 * score)
            }
        }
    }

    /// Fisher information with respect to the link-scale parameter.
    pub fn fisher_link(&self, mu: MeanParam, link: Link) -> Result<f64> {
        let info = self.fisher_mean(mu)?;
        match link {
            Link::Identity => Ok(info),
            Link::Log => {
                if mu.0 <= 0.0 {
                    return Err(Error::Domain(format!(
                        "log link requires a positive mean, got {}",
                        mu.0
                    )));
                }
                Ok(mu.0 * mu.0 * info)
            }
        }
    }

    /// Exact log density of the observation given its mean.
    ///
    /// For `GaussianVariance` this is the Gamma(1/2, mean h) density of `X = y^2`.
    pub fn log_density(&self, y: f64, mu: MeanParam) -> Result<f64> {
        let m = self.check_mean(mu.0)?;
        let x = self.check_statistic(self.statistic(y))?;
        Ok(self.log_density_stat(x, m))
    }

    /// Log density of an already validated statistic.
    pub(crate) fn log_density_stat(&self, x: f64, mu: f64) -> f64 {
        match self.family {
            Family::GaussianLocation => {
                let s2 = self.dispersion;
                let r = x - mu;
                -0.5 * (2.0 * PI * s2).ln() - 0.5 * r * r / s2
            }
            Family::Poisson => {
                if x == 0.0 {
                    -mu
                } else {
                    x * mu.ln() - mu - ln_gamma(x + 1.0)
                }
            }
            Family::Gamma | Family::GaussianVariance => {
                let k = self.shape();
                k * (k / mu).ln() + (k - 1.0) * x.ln() - k * x / mu - ln_gamma(k)
            }
        }
    }

    /// `d/dx log h(x)` for the base measure of the continuous families.
    pub fn base_measure_score(&self, y: f64) -> Result<f64> {
        let x = self.check_statistic(self.statistic(y))?;
        match self.family {
            Family::GaussianLocation => Ok(-x / self.dispersion),
            Family::Gamma | Family::GaussianVariance => Ok((self.shape() - 1.0) / x),
            Family::Poisson => Err(Error::Unsupported(
                "base-measure score is not defined for discrete observations".to_string(),
            )),
        }
    }
}

/// Conditional variance of a score scaled by `I^{-d}`, up to proportionality:
/// `var(I^{-d} s) = I^{1 - 2d}`.
///
/// With observation-specific information (binomial counts, shrinking risk
/// sets) `d = 1` amplifies the least informative observations.
pub fn scaled_score_variance(information: f64, d: f64) -> f64 {
    information.powf(1.0 - 2.0 * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn natural_mean_examples() {
        let p = EdmSpec::poisson();
        assert_eq!(p.mean_from_natural(NaturalParam(0.0)).unwrap().0, 1.0);
        assert_eq!(p.natural_from_mean(MeanParam(1.0)).unwrap().0, 0.0);
        assert_relative_eq!(
            p.natural_from_mean(MeanParam(std::f64::consts::E))
                .unwrap()
                .0,
            1.0,
            epsilon = 1e-15
        );

        let g1 = EdmSpec::gaussian_location(1.0).unwrap();
        assert_eq!(g1.mean_from_natural(NaturalParam(1.5)).unwrap().0, 1.5);
        let g4 = EdmSpec::gaussian_location(4.0).unwrap();
        assert_eq!(g4.natural_from_mean(MeanParam(2.0)).unwrap().0, 0.5);

        let gam = EdmSpec::gamma(0.5).unwrap();
        let mu = gam.mean_from_natural(NaturalParam(-2.0)).unwrap();
        assert_relative_eq!(gam.natural_from_mean(mu).unwrap().0, -2.0, epsilon = 1e-15);
    }

    #[test]
    fn domain_errors() {
        let p = EdmSpec::poisson();
        assert!(matches!(
            p.natural_from_mean(MeanParam(0.0)),
            Err(Error::Domain(_))
        ));
        assert!(p.fisher_mean(MeanParam(-1.0)).is_err());
        let gam = EdmSpec::gamma(1.0).unwrap();
        assert!(gam.mean_from_natural(NaturalParam(0.0)).is_err());
        assert!(gam.mean_from_natural(NaturalParam(0.5)).is_err());
        assert!(p.log_density(2.5, MeanParam(1.0)).is_err());
        assert!(p.log_density(-1.0, MeanParam(1.0)).is_err());
        assert!(gam.log_density(0.0, MeanParam(1.0)).is_err());
    }

    #[test]
    fn construction_cross_checks_index() {
        assert!(EdmSpec::new(Family::Poisson, 1.0, 2.0).is_err());
        assert!(EdmSpec::new(Family::Gamma, 0.0, 2.0).is_err());
        assert!(EdmSpec::new(Family::Poisson, 2.0, 1.0).is_err());
        assert!(EdmSpec::new(Family::GaussianVariance, 1.0, 2.0).is_err());
        assert_eq!(
            EdmSpec::new(Family::GaussianVariance, 2.0, 2.0).unwrap(),
            EdmSpec::gaussian_variance()
        );
    }

    #[test]
    fn score_and_fisher_examples() {
        let p = EdmSpec::poisson();
        assert_eq!(p.score_mean(3.0, MeanParam(2.0)).unwrap(), 0.5);
        assert_eq!(p.fisher_mean(MeanParam(2.0)).unwrap(), 0.5);

        let g4 = EdmSpec::gaussian_location(4.0).unwrap();
        assert_eq!(g4.score_mean(1.0, MeanParam(0.0)).unwrap(), 0.25);

        let gam = EdmSpec::gamma(0.5).unwrap();
        assert_eq!(gam.score_mean(2.0, MeanParam(1.0)).unwrap(), 2.0);
        assert_eq!(gam.fisher_mean(MeanParam(1.0)).unwrap(), 2.0);

        let gv = EdmSpec::gaussian_variance();
        assert_eq!(gv.fisher_mean(MeanParam(1.0)).unwrap(), 0.5);
    }

    #[test]
    fn scaled_score_examples() {
        let p = EdmSpec::poisson();
        assert_eq!(p.scaled_score(3.0, MeanParam(2.0), 1.0).unwrap(), 1.0);
        assert_eq!(p.scaled_score(6.0, MeanParam(4.0), 0.5).unwrap(), 1.0);
        let gam = EdmSpec::gamma(0.5).unwrap();
        assert_eq!(gam.scaled_score(2.0, MeanParam(1.0), 0.0).unwrap(), 2.0);
        let g = EdmSpec::gaussian_location(2.5).unwrap();
        assert_eq!(g.scaled_score(3.0, MeanParam(2.0), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn link_scores() {
        let gv = EdmSpec::gaussian_variance();
        assert_eq!(gv.score_link(2.0, MeanParam(1.0), Link::Log).unwrap(), 1.5);
        // I_eta = 1/2 for the log variance
        assert_eq!(gv.fisher_link(MeanParam(1.0), Link::Log).unwrap(), 0.5);
        assert_eq!(gv.fisher_link(MeanParam(3.7), Link::Log).unwrap(), 0.5);

        let p = EdmSpec::poisson();
        assert_eq!(p.score_link(3.0, MeanParam(2.0), Link::Log).unwrap(), 1.0);
        assert_eq!(
            p.score_link(3.0, MeanParam(2.0), Link::Identity).unwrap(),
            0.5
        );

        let g = EdmSpec::gaussian_location(1.0).unwrap();
        assert!(g.score_link(1.0, MeanParam(-1.0), Link::Log).is_err());
    }

    #[test]
    fn log_density_examples() {
        let g = EdmSpec::gaussian_location(1.0).unwrap();
        assert_relative_eq!(
            g.log_density(0.0, MeanParam(0.0)).unwrap(),
            -0.5 * (2.0 * PI).ln(),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            EdmSpec::poisson().log_density(0.0, MeanParam(1.0)).unwrap(),
            -1.0
        );
        // shape 2, rate 2 at 1: 2^2 * 1 * e^{-2} / Gamma(2)
        let gam = EdmSpec::gamma(0.5).unwrap();
        assert_relative_eq!(
            gam.log_density(1.0, MeanParam(1.0)).unwrap(),
            (4.0 * (-2.0f64).exp()).ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn variance_statistic_is_squared() {
        let gv = EdmSpec::gaussian_variance();
        assert_eq!(gv.statistic(-3.0), 9.0);
        assert_eq!(gv.innovation(-3.0, MeanParam(2.0)).unwrap(), 7.0);
        // N(0, h) log density differs from the Gamma(1/2) density of y^2 by log|y|
        let y: f64 = 1.3;
        let h = 0.8;
        let normal = -0.5 * (2.0 * PI * h).ln() - 0.5 * y * y / h;
        // f_X(x) = f_Y(sqrt x) / sqrt x, counting both signs of y
        let stat = gv.log_density(y, MeanParam(h)).unwrap();
        assert_relative_eq!(stat, normal - y.abs().ln(), epsilon = 1e-13);
    }

    #[test]
    fn base_measure_scores() {
        let g = EdmSpec::gaussian_location(2.0).unwrap();
        assert_eq!(g.base_measure_score(3.0).unwrap(), -1.5);
        let gam = EdmSpec::gamma(0.5).unwrap();
        assert_eq!(gam.base_measure_score(2.0).unwrap(), 0.5);
        assert!(matches!(
            EdmSpec::poisson().base_measure_score(2.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn cumulant_derivative_is_mean() {
        for spec in [
            EdmSpec::gaussian_location(1.7).unwrap(),
            EdmSpec::poisson(),
            EdmSpec::gamma(0.3).unwrap(),
            EdmSpec::gaussian_variance(),
        ] {
            let theta = spec.natural_from_mean(MeanParam(1.4)).unwrap().0;
            let h = 1e-6;
            let fd = (spec.cumulant(NaturalParam(theta + h)).unwrap()
                - spec.cumulant(NaturalParam(theta - h)).unwrap())
                / (2.0 * h);
            assert_relative_eq!(fd, 1.4, max_relative = 1e-8);
        }
    }

    #[test]
    fn binomial_style_diagnostic() {
        assert_eq!(scaled_score_variance(4.0, 0.5), 1.0);
        assert_eq!(scaled_score_variance(4.0, 0.0), 4.0);
        assert_eq!(scaled_score_variance(4.0, 1.0), 0.25);
    }
}

//! Observation-driven score recursion
//!
//! ```text
//! theta_{t+1} = omega + beta theta_t + alpha I_t^{-d} s_t
//! ```
//!
//! with score and information taken in the link parameterization. Under the
//! identity link with `d = 1` the scaled score is the raw innovation `x - mu`.
//! The log-likelihood is the prediction-error decomposition
//! `sum_t log p(y_t | theta_t)`; for the variance model the density is that
//! of `y_t^2`.
//!
//! `alpha` can be read either as a posterior learning rate (`1 - δ`) or as a
//! predictive variance scale (`κ`); the recursion does not privilege one.

use std::thread;

use serde::{Deserialize, Serialize};

use crate::edm::{EdmSpec, Link, MeanParam};
use crate::error::{Error, Result};
use crate::optim::NelderMead;
use crate::rng::Stream;

/// Floor applied to identity-link positive-domain parameters.
pub const POSITIVITY_FLOOR: f64 = 1e-10;

/// Seed of the restart generator used by [`fit_params`].
pub const FIT_SEED: u64 = 0x5C0_4ED;

/// Number of random restarts after the initial simplex run.
pub const FIT_RESTARTS: usize = 3;

/// Minimum series length accepted by [`fit_params`].
pub const MIN_FIT_LENGTH: usize = 20;

/// Named scaling presets.
pub mod scaling {
    /// Unscaled score.
    pub const NONE: f64 = 0.0;
    /// Score standardized to unit conditional variance.
    pub const ROOT_INVERSE_FISHER: f64 = 0.5;
    /// Inverse-Fisher scaling.
    pub const INVERSE_FISHER: f64 = 1.0;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecursionParams {
    pub omega: f64,
    pub beta: f64,
    pub alpha: f64,
    #[serde(default = "default_d")]
    pub d: f64,
    #[serde(default)]
    pub link: Link,
    /// Initial predictive parameter on the link scale; derived when absent.
    #[serde(default)]
    pub theta1: Option<f64>,
}

fn default_d() -> f64 {
    1.0
}

impl RecursionParams {
    /// Identity link with `d = 1`.
    pub fn new(omega: f64, beta: f64, alpha: f64) -> Self {
        RecursionParams {
            omega,
            beta,
            alpha,
            d: 1.0,
            link: Link::Identity,
            theta1: None,
        }
    }

    pub fn with_d(mut self, d: f64) -> Self {
        self.d = d;
        self
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    pub fn with_theta1(mut self, theta1: f64) -> Self {
        self.theta1 = Some(theta1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.omega, self.beta, self.alpha, self.d];
        if all.iter().any(|v| !v.is_finite()) || self.theta1.is_some_and(|t| !t.is_finite()) {
            return Err(Error::Config(
                "recursion coefficients must be finite".to_string(),
            ));
        }
        Ok(())
    }

    /// `omega > 0, alpha >= 0, beta >= alpha`, required for identity-link
    /// recursions on a positive mean to stay positive. Other models have no
    /// such restriction.
    pub fn in_nonnegativity_region(&self, spec: &EdmSpec) -> bool {
        !needs_positivity(spec, self.link)
            || (self.omega > 0.0 && self.alpha >= 0.0 && self.beta >= self.alpha)
    }
}

fn needs_positivity(spec: &EdmSpec, link: Link) -> bool {
    link == Link::Identity && spec.mean_domain().0.is_finite()
}

/// Mean implied by a link-scale parameter.
pub fn mean_from_link(spec: &EdmSpec, theta: f64, link: Link) -> Result<MeanParam> {
    let mu = match link {
        Link::Identity => theta,
        Link::Log => theta.exp(),
    };
    spec.check_mean(mu).map(MeanParam)
}

/// Link-scale parameter implied by a mean.
pub fn link_from_mean(spec: &EdmSpec, mu: MeanParam, link: Link) -> Result<f64> {
    let m = spec.check_mean(mu.0)?;
    Ok(match link {
        Link::Identity => m,
        Link::Log => m.ln(),
    })
}

/// Score, scaling, innovation and next parameter for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
struct StepParts {
    mu: f64,
    score: f64,
    scaling: f64,
    innovation: f64,
    info: f64,
    next: f64,
    floored: bool,
}

fn step_parts(spec: &EdmSpec, params: &RecursionParams, theta: f64, y: f64) -> Result<StepParts> {
    let mu = mean_from_link(spec, theta, params.link)?;
    let score = spec.score_link(y, mu, params.link)?;
    let info = spec.fisher_link(mu, params.link)?;
    let innovation = score / info;
    let (scaling, scaled) = if params.d == 1.0 {
        (1.0 / info, innovation)
    } else if params.d == 0.0 {
        (1.0, score)
    } else {
        let s = info.powf(-params.d);
        (s, s * score)
    };
    let mut next = params.omega + params.beta * theta + params.alpha * scaled;
    let mut floored = false;
    if needs_positivity(spec, params.link) && !(next > 0.0) && !next.is_nan() {
        next = POSITIVITY_FLOOR;
        floored = true;
    }
    if !next.is_finite() {
        return Err(Error::Domain(format!(
            "next parameter is not finite ({next})"
        )));
    }
    Ok(StepParts {
        mu: mu.0,
        score,
        scaling,
        innovation,
        info,
        next,
        floored,
    })
}

/// One step of the recursion; returns `theta_{t+1}`.
///
/// Identity-link positive-domain parameters that would leave the domain are
/// floored at [`POSITIVITY_FLOOR`]; [`run_recursion`] flags such steps.
pub fn recursion_step(spec: &EdmSpec, params: &RecursionParams, theta: f64, y: f64) -> Result<f64> {
    params.validate()?;
    Ok(step_parts(spec, params, theta, y)?.next)
}

/// Initial predictive parameter: `theta1` if given, else `omega / (1 - beta)`
/// when `|beta| < 1`, else the value implied by the first observation.
pub fn initial_theta(spec: &EdmSpec, params: &RecursionParams, ys: &[f64]) -> Result<f64> {
    if let Some(t) = params.theta1 {
        return Ok(t);
    }
    if params.beta.abs() < 1.0 {
        return Ok(params.omega / (1.0 - params.beta));
    }
    let first = *ys
        .first()
        .ok_or_else(|| Error::Config("empty series".to_string()))?;
    let mut x = spec.statistic(first);
    if spec.mean_domain().0.is_finite() {
        x = x.max(POSITIVITY_FLOOR);
    }
    link_from_mean(spec, MeanParam(x), params.link)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterStep {
    /// 1-based time index.
    pub t: usize,
    pub y: f64,
    /// Predictive parameter on the link scale.
    pub theta: f64,
    pub mu: f64,
    /// Score in the link parameterization.
    pub score: f64,
    /// `I^{-d}` in the link parameterization.
    pub scaling: f64,
    /// `I^{-1} s`.
    pub innovation: f64,
    pub loglik: f64,
    pub theta_next: f64,
    /// Whether `theta_next` was floored.
    pub floored: bool,
    /// Conditional variance of the scaled score, `S^2 I`.
    pub scaled_score_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTrace {
    pub params: RecursionParams,
    pub steps: Vec<FilterStep>,
    pub loglik: f64,
}

impl FilterTrace {
    pub fn floored_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.floored).count()
    }

    /// Whether the mapped GARCH persistence `alpha_G + beta_G = beta` is below one.
    pub fn persistence_below_one(&self) -> bool {
        self.params.beta.abs() < 1.0
    }
}

pub fn run_recursion(spec: &EdmSpec, params: &RecursionParams, ys: &[f64]) -> Result<FilterTrace> {
    params.validate()?;
    if ys.is_empty() {
        return Err(Error::Config("empty series".to_string()));
    }
    let mut theta = initial_theta(spec, params, ys)?;
    let mut steps = Vec::with_capacity(ys.len());
    let mut total = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let at = |e| Error::at_step(i, e);
        let parts = step_parts(spec, params, theta, y).map_err(at)?;
        let ll = spec.log_density(y, MeanParam(parts.mu)).map_err(at)?;
        if !ll.is_finite() {
            return Err(at(Error::Domain(format!(
                "log density is not finite ({ll})"
            ))));
        }
        total += ll;
        steps.push(FilterStep {
            t: i + 1,
            y,
            theta,
            mu: parts.mu,
            score: parts.score,
            scaling: parts.scaling,
            innovation: parts.innovation,
            loglik: ll,
            theta_next: parts.next,
            floored: parts.floored,
            scaled_score_variance: parts.scaling * parts.scaling * parts.info,
        });
        theta = parts.next;
    }
    Ok(FilterTrace {
        params: *params,
        steps,
        loglik: total,
    })
}

/// Textbook GARCH(1,1) coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchCoefficients {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl GarchCoefficients {
    pub fn is_nonnegative(&self) -> bool {
        self.omega > 0.0 && self.alpha >= 0.0 && self.beta >= 0.0
    }

    /// `h_{t+1} = omega + alpha y_t^2 + beta h_t`, started at `h1`.
    pub fn variance_path(&self, ys: &[f64], h1: f64) -> Vec<f64> {
        let mut h = h1;
        ys.iter()
            .map(|y| {
                let cur = h;
                h = self.omega + self.alpha * y * y + self.beta * h;
                cur
            })
            .collect()
    }
}

/// Score coefficients `(omega, beta, alpha)` of the `d = 1` identity-link
/// variance recursion to GARCH `(omega, alpha, beta - alpha)`.
pub fn garch_map(omega: f64, beta: f64, alpha: f64) -> GarchCoefficients {
    GarchCoefficients {
        omega,
        alpha,
        beta: beta - alpha,
    }
}

/// Inverse of [`garch_map`]: returns `(omega, beta, alpha)`.
pub fn garch_unmap(g: GarchCoefficients) -> (f64, f64, f64) {
    (g.omega, g.beta + g.alpha, g.alpha)
}

/// Box constraints for [`fit_params`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitBounds {
    pub omega: (f64, f64),
    pub beta: (f64, f64),
    pub alpha: (f64, f64),
}

impl FitBounds {
    /// Defaults scaled to the data: `omega` within ten times the mean
    /// statistic, `|beta| < 1`, `alpha` in `[0, 1]`. Identity-link positive
    /// models keep `omega` and `beta` nonnegative.
    pub fn default_for(spec: &EdmSpec, link: Link, ys: &[f64]) -> Self {
        let n = ys.len().max(1) as f64;
        let m = ys.iter().map(|y| spec.statistic(*y)).sum::<f64>() / n;
        let scale = match link {
            Link::Identity => m.abs().max(1.0),
            Link::Log => m.abs().max(1.0).ln().max(1.0),
        };
        if needs_positivity(spec, link) {
            FitBounds {
                omega: (1e-8, 10.0 * scale),
                beta: (0.0, 0.9999),
                alpha: (0.0, 1.0),
            }
        } else {
            FitBounds {
                omega: (-10.0 * scale, 10.0 * scale),
                beta: (-0.9999, 0.9999),
                alpha: (0.0, 1.0),
            }
        }
    }

    fn as_vec(&self) -> [(f64, f64); 3] {
        [self.omega, self.beta, self.alpha]
    }

    fn validate(&self) -> Result<()> {
        for (lo, hi) in self.as_vec() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("invalid bound ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: RecursionParams,
    pub loglik: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// Maximizes the prediction-error log-likelihood over `(omega, beta, alpha)`
/// with `d`, link and `theta1` held fixed.
///
/// A simplex run from `init` is followed by [`FIT_RESTARTS`] runs from points
/// drawn uniformly in the bounds with seed [`FIT_SEED`]; the runs execute on
/// separate threads and the best is returned. Identity-link positive models
/// are restricted to the nonnegativity region.
pub fn fit_params(
    spec: &EdmSpec,
    ys: &[f64],
    link: Link,
    d: f64,
    init: &RecursionParams,
    bounds: &FitBounds,
) -> Result<FitResult> {
    if ys.len() < MIN_FIT_LENGTH {
        return Err(Error::Config(format!(
            "fitting needs at least {MIN_FIT_LENGTH} observations, got {}",
            ys.len()
        )));
    }
    bounds.validate()?;
    let template = RecursionParams { d, link, ..*init };
    template.validate()?;
    let make = |x: &[f64]| RecursionParams {
        omega: x[0],
        beta: x[1],
        alpha: x[2],
        ..template
    };
    let objective = |x: &[f64]| -> f64 {
        let p = make(x);
        if !p.in_nonnegativity_region(spec) {
            return f64::INFINITY;
        }
        match run_recursion(spec, &p, ys) {
            Ok(trace) => -trace.loglik,
            Err(_) => f64::INFINITY,
        }
    };

    let box_ = bounds.as_vec();
    let mut starts = vec![vec![init.omega, init.beta, init.alpha]];
    let mut rng = Stream::new(FIT_SEED);
    for _ in 0..FIT_RESTARTS {
        let mut candidate = Vec::new();
        for _ in 0..100 {
            candidate = box_
                .iter()
                .map(|(lo, hi)| lo + (hi - lo) * rng.uniform())
                .collect();
            if make(&candidate).in_nonnegativity_region(spec) {
                break;
            }
        }
        starts.push(candidate);
    }

    let nm = NelderMead::default();
    let runs: Vec<_> = thread::scope(|scope| {
        let handles: Vec<_> = starts
            .iter()
            .map(|s| scope.spawn(|| nm.minimize(&objective, s, &box_)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simplex run panicked"))
            .collect()
    });
    let evaluations = runs.iter().map(|r| r.evals).sum();
    // first minimum wins ties, so the result does not depend on scheduling
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.f < a.f { b } else { a })
        .expect("at least one run");
    if !best.f.is_finite() {
        return Err(Error::Domain(
            "no parameter value in the bounds gives a finite likelihood".to_string(),
        ));
    }
    Ok(FitResult {
        params: make(&best.x),
        loglik: -best.f,
        converged: best.converged,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::filter_step_score_form;
    use approx::assert_relative_eq;

    #[test]
    fn step_examples() {
        let gv = EdmSpec::gaussian_variance();
        let p = RecursionParams::new(0.1, 0.95, 0.05);
        assert_relative_eq!(
            recursion_step(&gv, &p, 1.0, 2.0).unwrap(),
            1.2,
            epsilon = 1e-15
        );

        let pois = EdmSpec::poisson();
        let p = RecursionParams::new(0.0, 1.0, 0.2);
        assert_relative_eq!(
            recursion_step(&pois, &p, 2.0, 3.0).unwrap(),
            2.2,
            epsilon = 1e-15
        );

        let p = RecursionParams::new(0.0, 0.0, 1.0).with_link(Link::Log);
        assert_relative_eq!(
            recursion_step(&gv, &p, 0.0, 2.0).unwrap(),
            3.0,
            epsilon = 1e-15
        );
        let p = RecursionParams::new(0.01, 0.9, 0.05).with_link(Link::Log);
        assert_relative_eq!(
            recursion_step(&gv, &p, 0.0, 2.0).unwrap(),
            0.01 + 0.05 * 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn alpha_zero_is_deterministic_ar1() {
        let g = EdmSpec::gaussian_location(1.0).unwrap();
        let p = RecursionParams::new(0.5, 0.8, 0.0).with_theta1(0.0);
        let trace = run_recursion(&g, &p, &[3.0, -7.0, 1.0, 100.0]).unwrap();
        let mut theta = 0.0;
        for s in &trace.steps {
            assert_eq!(s.theta, theta);
            theta = 0.5 + 0.8 * theta;
        }
    }

    #[test]
    fn martingale_case_matches_score_form_filter() {
        let g = EdmSpec::gaussian_location(2.0).unwrap();
        // dyadic alpha so that 1 - (1 - alpha) is exact
        let alpha = 0.25;
        let p = RecursionParams::new(0.0, 1.0, alpha).with_theta1(0.3);
        let ys = [1.0, -0.5, 2.5, 0.0, 1.2];
        let trace = run_recursion(&g, &p, &ys).unwrap();
        let mut mu = MeanParam(0.3);
        for (s, y) in trace.steps.iter().zip(ys) {
            mu = filter_step_score_form(&g, mu, y, 1.0 - alpha).unwrap();
            assert_eq!(s.theta_next, mu.0);
        }
    }

    #[test]
    fn identity_link_innovation_is_raw_residual() {
        for spec in [
            EdmSpec::gaussian_location(0.7).unwrap(),
            EdmSpec::poisson(),
            EdmSpec::gamma(0.4).unwrap(),
        ] {
            let p = RecursionParams::new(0.1, 0.5, 0.1).with_theta1(1.3);
            let trace = run_recursion(&spec, &p, &[2.0, 1.0, 4.0]).unwrap();
            for s in &trace.steps {
                assert!((s.innovation - (spec.statistic(s.y) - s.mu)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn floor_is_applied_and_flagged() {
        let pois = EdmSpec::poisson();
        let p = RecursionParams::new(0.0, 1.0, 1.5).with_theta1(2.0);
        let trace = run_recursion(&pois, &p, &[0.0, 1.0]).unwrap();
        assert!(trace.steps[0].floored);
        assert_eq!(trace.steps[0].theta_next, POSITIVITY_FLOOR);
        assert_eq!(trace.floored_steps(), 1);
    }

    #[test]
    fn loglik_is_sum_of_contributions() {
        let pois = EdmSpec::poisson();
        let p = RecursionParams::new(0.2, 0.8, 0.1);
        let ys = [1.0, 0.0, 2.0, 1.0];
        let trace = run_recursion(&pois, &p, &ys).unwrap();
        assert_relative_eq!(trace.steps[0].theta, 1.0, epsilon = 1e-15);
        let sum: f64 = trace.steps.iter().map(|s| s.loglik).sum();
        assert_eq!(sum, trace.loglik);
        let direct = pois.log_density(1.0, MeanParam(trace.steps[0].mu)).unwrap();
        assert_eq!(trace.steps[0].loglik, direct);
    }

    #[test]
    fn support_error_carries_step() {
        let pois = EdmSpec::poisson();
        let p = RecursionParams::new(0.2, 0.8, 0.1);
        let err = run_recursion(&pois, &p, &[1.0, 2.0, -1.0]).unwrap_err();
        assert!(matches!(err, Error::AtStep { step: 2, .. }), "{err:?}");
    }

    #[test]
    fn theta1_defaults() {
        let gv = EdmSpec::gaussian_variance();
        let p = RecursionParams::new(0.1, 0.95, 0.05);
        assert_relative_eq!(
            initial_theta(&gv, &p, &[3.0]).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        let unit = RecursionParams::new(0.0, 1.0, 0.1);
        assert_eq!(initial_theta(&gv, &unit, &[3.0]).unwrap(), 9.0);
        let log = unit.with_link(Link::Log);
        assert_relative_eq!(initial_theta(&gv, &log, &[3.0]).unwrap(), 9f64.ln());
    }

    #[test]
    fn garch_map_examples() {
        let g = garch_map(0.1, 0.95, 0.05);
        assert_eq!((g.omega, g.alpha), (0.1, 0.05));
        assert_relative_eq!(g.beta, 0.90, epsilon = 1e-15);
        let g = garch_map(0.3, 0.7, 0.0);
        assert_eq!((g.omega, g.alpha, g.beta), (0.3, 0.0, 0.7));
        let (o, b, a) = garch_unmap(garch_map(0.2, 0.9, 0.1));
        assert_relative_eq!(o, 0.2);
        assert_relative_eq!(b, 0.9, epsilon = 1e-15);
        assert_relative_eq!(a, 0.1);
        assert!(!garch_map(0.1, 0.05, 0.1).is_nonnegative());
    }

    #[test]
    fn garch_path_equivalence() {
        let gv = EdmSpec::gaussian_variance();
        let p = RecursionParams::new(0.1, 0.95, 0.05);
        let ys: Vec<f64> = (0..500)
            .map(|i| ((i * 37 % 101) as f64 - 50.0) / 20.0)
            .collect();
        let ys: Vec<f64> = ys
            .into_iter()
            .map(|y| if y == 0.0 { 0.01 } else { y })
            .collect();
        let trace = run_recursion(&gv, &p, &ys).unwrap();
        let path = garch_map(0.1, 0.95, 0.05).variance_path(&ys, trace.steps[0].theta);
        for (s, h) in trace.steps.iter().zip(path) {
            assert!((s.theta - h).abs() <= 1e-10 * h.max(1.0));
        }
    }

    #[test]
    fn constant_information_has_constant_scaled_variance() {
        let g = EdmSpec::gaussian_location(2.0).unwrap();
        for d in [0.0, 0.5, 1.0] {
            let p = RecursionParams::new(0.0, 0.9, 0.1).with_d(d);
            let trace = run_recursion(&g, &p, &[1.0, 5.0, -3.0]).unwrap();
            let v0 = trace.steps[0].scaled_score_variance;
            assert_relative_eq!(v0, 0.5f64.powf(1.0 - 2.0 * d), max_relative = 1e-14);
            assert!(trace.steps.iter().all(|s| s.scaled_score_variance == v0));
        }
    }

    #[test]
    fn fit_rejects_short_series_and_respects_bounds() {
        let pois = EdmSpec::poisson();
        let init = RecursionParams::new(0.5, 0.5, 0.1);
        let b = FitBounds::default_for(&pois, Link::Identity, &[1.0; 30]);
        assert!(fit_params(&pois, &[1.0; 10], Link::Identity, 1.0, &init, &b).is_err());

        let ys: Vec<f64> = (0..60).map(|i| (i % 4) as f64).collect();
        let b = FitBounds {
            omega: (0.1, 2.0),
            beta: (0.2, 0.6),
            alpha: (0.0, 0.2),
        };
        let at_edge = RecursionParams::new(0.1, 0.2, 0.2);
        let fit = fit_params(&pois, &ys, Link::Identity, 1.0, &at_edge, &b).unwrap();
        let q = fit.params;
        assert!((0.1..=2.0).contains(&q.omega));
        assert!((0.2..=0.6).contains(&q.beta));
        assert!((0.0..=0.2).contains(&q.alpha));
        assert!(q.beta >= q.alpha);
    }
}

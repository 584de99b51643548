//! Exact conjugate filtering in expectation space under precision discounting.
//!
//! With a conjugate predictive prior `π(θ) ∝ exp{τθ − nψ(θ)}` the posterior
//! after observing `x` is conjugate with `(τ + x, n + 1)` and its mean
//! parameter is `(τ + x) / (n + 1)`. Discounting the filtered strength,
//! `n_pred = δ n_filt`, has the fixed point `n_pred = δ / (1 − δ)`, at which
//! the update is exactly
//!
//! ```text
//! mu_filt = mu_pred + (1 − δ) I(mu_pred)^{-1} score(y; mu_pred) = mu_pred + (1 − δ)(x − mu_pred).
//! ```
//!
//! The filter stops at the filtered mean; there is no transition step. Adding
//! one (see [`crate::recursion`]) gives a recursion that is no longer a
//! posterior mean.

use serde::{Deserialize, Serialize};

use crate::edm::{EdmSpec, MeanParam};
use crate::error::{Error, Result};

/// Conjugate hyperparameters `(τ, n)`; the mean parameter is `τ / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateState {
    pub tau: f64,
    pub n: f64,
}

impl ConjugateState {
    pub fn new(tau: f64, n: f64) -> Result<Self> {
        if !(n > 0.0 && n.is_finite() && tau.is_finite()) {
            return Err(Error::Config(format!(
                "conjugate state needs finite tau and n > 0, got ({tau}, {n})"
            )));
        }
        Ok(ConjugateState { tau, n })
    }

    /// Prior of strength `n` centred on `mu`.
    pub fn from_mean(mu: f64, n: f64) -> Result<Self> {
        Self::new(n * mu, n)
    }

    pub fn mean(&self) -> f64 {
        self.tau / self.n
    }
}

/// Discount factor `δ ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountConfig {
    delta: f64,
}

impl DiscountConfig {
    pub fn new(delta: f64) -> Result<Self> {
        if delta > 0.0 && delta < 1.0 {
            Ok(DiscountConfig { delta })
        } else {
            Err(Error::Config(format!(
                "discount factor must lie in (0, 1), got {delta}"
            )))
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Fixed point of `n -> δ (n + 1)`.
    pub fn steady_strength(&self) -> f64 {
        self.delta / (1.0 - self.delta)
    }

    /// Posterior learning rate at the fixed point.
    pub fn gain(&self) -> f64 {
        1.0 - self.delta
    }
}

/// Conjugate update with the sufficient statistic `x` (the squared
/// observation for the variance model).
pub fn conjugate_update(state: ConjugateState, x: f64) -> Result<ConjugateState> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("observation {x} is not finite")));
    }
    ConjugateState::new(state.tau + x, state.n + 1.0)
}

/// `n_pred = δ n_filt`.
pub fn discount_precision(n_filtered: f64, delta: f64) -> Result<f64> {
    let cfg = DiscountConfig::new(delta)?;
    if !(n_filtered > 0.0) {
        return Err(Error::Domain(format!(
            "filtered strength must be positive, got {n_filtered}"
        )));
    }
    Ok(cfg.delta * n_filtered)
}

/// Discounts both hyperparameters so the mean is carried over unchanged.
pub fn discount_state(state: ConjugateState, delta: f64) -> Result<ConjugateState> {
    let n = discount_precision(state.n, delta)?;
    ConjugateState::new(delta * state.tau, n)
}

/// One filtering step written as an inverse-Fisher-scaled score correction.
pub fn filter_step_score_form(
    spec: &EdmSpec,
    mu_pred: MeanParam,
    y: f64,
    delta: f64,
) -> Result<MeanParam> {
    let cfg = DiscountConfig::new(delta)?;
    let correction = spec.scaled_score(y, mu_pred, 1.0)?;
    let mu = mu_pred.0 + cfg.gain() * correction;
    if spec.mean_in_domain(mu) {
        Ok(MeanParam(mu))
    } else {
        Err(Error::Domain(format!(
            "filtered mean {mu} left the {} mean domain",
            spec.family()
        )))
    }
}

/// Default predictive state for the first step: strength at the discount
/// fixed point, centred on `mu0` or the mean of the sufficient statistics.
pub fn default_init(
    spec: &EdmSpec,
    ys: &[f64],
    delta: f64,
    mu0: Option<f64>,
) -> Result<ConjugateState> {
    let cfg = DiscountConfig::new(delta)?;
    let mu0 = match mu0 {
        Some(m) => m,
        None => {
            if ys.is_empty() {
                return Err(Error::Config("empty series".to_string()));
            }
            ys.iter().map(|y| spec.statistic(*y)).sum::<f64>() / ys.len() as f64
        }
    };
    spec.check_mean(mu0)?;
    ConjugateState::from_mean(mu0, cfg.steady_strength())
}

/// One row of a conjugate filtering run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateStep {
    /// 1-based time index.
    pub t: usize,
    /// Observation as supplied (raw `y`, also for the variance model).
    pub y: f64,
    pub mu_pred: f64,
    pub mu_filt: f64,
    /// Filtered hyperparameters.
    pub tau: f64,
    pub n: f64,
    /// Predictive strength used for this step.
    pub n_pred: f64,
    /// Conditional mean score at `mu_pred`.
    pub score: f64,
    /// `I(mu_pred)^{-1} score = x - mu_pred`.
    pub innovation: f64,
    /// Filtered mean from the score-form recursion run alongside.
    pub mu_score_form: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugateTrace {
    pub delta: f64,
    /// True when the filter squared the observations (variance model).
    pub squared_observations: bool,
    pub steps: Vec<ConjugateStep>,
}

impl ConjugateTrace {
    /// Largest gap between the `(τ, n)` and score-form filtered means.
    pub fn max_form_gap(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| (s.mu_filt - s.mu_score_form).abs())
            .fold(0.0, f64::max)
    }
}

/// Runs discount → predict → update over a series, carrying the score-form
/// recursion alongside.
///
/// When `init.n` sits at the discount fixed point the two forms must agree;
/// a disagreement beyond round-off is reported as a consistency error.
pub fn run_conjugate_filter(
    spec: &EdmSpec,
    ys: &[f64],
    delta: f64,
    init: ConjugateState,
) -> Result<ConjugateTrace> {
    let cfg = DiscountConfig::new(delta)?;
    if ys.is_empty() {
        return Err(Error::Config("empty series".to_string()));
    }
    spec.check_mean(init.mean())?;
    let at_fixed_point =
        (init.n - cfg.steady_strength()).abs() <= 1e-12 * cfg.steady_strength().max(1.0);

    let mut state = init;
    let mut mu_sf = MeanParam(init.mean());
    let mut steps = Vec::with_capacity(ys.len());
    for (i, &y) in ys.iter().enumerate() {
        let step = || -> Result<(ConjugateStep, ConjugateState, MeanParam)> {
            let x = spec.check_statistic(spec.statistic(y))?;
            let mu_pred = MeanParam(state.mean());
            let score = spec.score_mean(y, mu_pred)?;
            let innovation = spec.innovation(y, mu_pred)?;
            let filtered = conjugate_update(state, x)?;
            let mu_filt = filtered.mean();
            spec.check_mean(mu_filt)?;
            let next_sf = filter_step_score_form(spec, mu_sf, y, delta)?;
            let row = ConjugateStep {
                t: i + 1,
                y,
                mu_pred: mu_pred.0,
                mu_filt,
                tau: filtered.tau,
                n: filtered.n,
                n_pred: state.n,
                score,
                innovation,
                mu_score_form: next_sf.0,
            };
            Ok((row, discount_state(filtered, delta)?, next_sf))
        };
        let (row, next, next_sf) = step().map_err(|e| Error::at_step(i, e))?;
        if at_fixed_point {
            let gap = (row.mu_filt - row.mu_score_form).abs();
            if gap > 1e-9 * (1.0 + row.mu_filt.abs()) {
                return Err(Error::at_step(
                    i,
                    Error::Consistency(format!(
                        "conjugate mean {} and score-form mean {} differ by {gap:e}",
                        row.mu_filt, row.mu_score_form
                    )),
                ));
            }
        }
        steps.push(row);
        state = next;
        mu_sf = next_sf;
    }
    Ok(ConjugateTrace {
        delta,
        squared_observations: spec.family() == crate::edm::Family::GaussianVariance,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn update_examples() {
        let s = conjugate_update(ConjugateState::new(18.0, 9.0).unwrap(), 5.0).unwrap();
        assert_eq!((s.tau, s.n), (23.0, 10.0));
        assert_relative_eq!(s.mean(), 2.3, epsilon = 1e-15);

        let s = conjugate_update(ConjugateState::new(0.0, 1.0).unwrap(), 0.0).unwrap();
        assert_eq!((s.tau, s.n, s.mean()), (0.0, 2.0, 0.0));

        let s = conjugate_update(ConjugateState::new(2.0, 1.0).unwrap(), 3.0).unwrap();
        assert_eq!(s.mean(), 2.5);
        assert!(conjugate_update(s, f64::NAN).is_err());
    }

    #[test]
    fn discount_examples() {
        assert_relative_eq!(discount_precision(10.0, 0.9).unwrap(), 9.0, epsilon = 1e-14);
        let cfg = DiscountConfig::new(0.9).unwrap();
        assert_relative_eq!(cfg.steady_strength(), 9.0, epsilon = 1e-14);
        assert_relative_eq!(
            discount_precision(9.0 + 1.0, 0.9).unwrap(),
            9.0,
            epsilon = 1e-14
        );
        let half = DiscountConfig::new(0.5).unwrap();
        assert_eq!(half.steady_strength(), 1.0);
        assert_eq!(half.gain(), 0.5);
        assert!(discount_precision(1.0, 1.0).is_err());
        assert!(discount_precision(1.0, 0.0).is_err());
        assert!(DiscountConfig::new(-0.1).is_err());
    }

    #[test]
    fn score_form_examples() {
        let g = EdmSpec::gaussian_location(1.0).unwrap();
        let mu = filter_step_score_form(&g, MeanParam(2.0), 5.0, 0.9).unwrap();
        assert_relative_eq!(mu.0, 2.3, epsilon = 1e-15);
        for delta in [0.1, 0.5, 0.99] {
            assert_eq!(
                filter_step_score_form(&g, MeanParam(2.0), 2.0, delta)
                    .unwrap()
                    .0,
                2.0
            );
        }
    }

    #[test]
    fn score_form_matches_conjugate_poisson() {
        let p = EdmSpec::poisson();
        let sf = filter_step_score_form(&p, MeanParam(2.0), 3.0, 0.9)
            .unwrap()
            .0;
        let cj = conjugate_update(ConjugateState::new(18.0, 9.0).unwrap(), 3.0)
            .unwrap()
            .mean();
        assert_relative_eq!(sf, 2.1, epsilon = 1e-15);
        assert!((sf - cj).abs() < 1e-15);
    }

    #[test]
    fn poisson_three_steps_by_hand() {
        // delta = 0.5: n_pred = 1, start at mu = 2 -> (tau, n) = (2, 1)
        let p = EdmSpec::poisson();
        let init = ConjugateState::new(2.0, 1.0).unwrap();
        let trace = run_conjugate_filter(&p, &[4.0, 0.0, 1.0], 0.5, init).unwrap();
        // step 1: (2 + 4, 2) -> mean 3, discount -> (3, 1)
        // step 2: (3 + 0, 2) -> mean 1.5, discount -> (1.5, 1)
        // step 3: (1.5 + 1, 2) -> mean 1.25
        let expect = [
            (2.0, 3.0, 6.0, 2.0),
            (3.0, 1.5, 3.0, 2.0),
            (1.5, 1.25, 2.5, 2.0),
        ];
        for (s, (mp, mf, tau, n)) in trace.steps.iter().zip(expect) {
            assert_eq!((s.mu_pred, s.mu_filt, s.tau, s.n), (mp, mf, tau, n));
            assert_eq!(s.mu_score_form, mf);
            assert_eq!(s.n_pred, 1.0);
        }
        assert_eq!(trace.steps[0].score, (4.0 - 2.0) / 2.0);
        assert_eq!(trace.steps[1].innovation, -3.0);
    }

    #[test]
    fn constant_series_converges_geometrically() {
        let p = EdmSpec::gamma(0.5).unwrap();
        let delta = 0.8;
        let c = 3.0;
        let init = ConjugateState::from_mean(1.0, 4.0).unwrap();
        let trace = run_conjugate_filter(&p, &vec![c; 60], delta, init).unwrap();
        let gaps: Vec<f64> = trace.steps.iter().map(|s| (s.mu_filt - c).abs()).collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]));
        for w in gaps.windows(2).skip(5).take(20) {
            assert_relative_eq!(w[1] / w[0], delta, max_relative = 1e-9);
        }
    }

    #[test]
    fn variance_filter_is_smoothing_of_squares() {
        let gv = EdmSpec::gaussian_variance();
        let ys = [0.5, -1.2, 2.0, 0.1, -0.7];
        let init = default_init(&gv, &ys, 0.9, Some(1.0)).unwrap();
        let trace = run_conjugate_filter(&gv, &ys, 0.9, init).unwrap();
        assert!(trace.squared_observations);
        let mut h = 1.0;
        for (s, y) in trace.steps.iter().zip(ys) {
            h += 0.1 * (y * y - h);
            assert_relative_eq!(s.mu_filt, h, max_relative = 1e-13);
            assert_eq!(s.y, y);
        }
    }

    #[test]
    fn support_violation_reports_step() {
        let p = EdmSpec::poisson();
        let init = ConjugateState::from_mean(1.0, 9.0).unwrap();
        let err = run_conjugate_filter(&p, &[1.0, 2.0, 0.5, 1.0], 0.9, init).unwrap_err();
        match err {
            Error::AtStep { step, source } => {
                assert_eq!(step, 2);
                assert!(matches!(*source, Error::Support { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn default_init_uses_fixed_point_and_mean() {
        let p = EdmSpec::poisson();
        let init = default_init(&p, &[1.0, 2.0, 3.0], 0.75, None).unwrap();
        assert_relative_eq!(init.n, 3.0, epsilon = 1e-15);
        assert_relative_eq!(init.mean(), 2.0, epsilon = 1e-15);
        assert!(default_init(&p, &[0.0, 0.0], 0.75, None).is_err());
    }
}

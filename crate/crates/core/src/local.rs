//! Small-variance score approximations to the posterior correction.
//!
//! With a Gaussian predictive law `N(a, P)` on the mean parameter, the exact
//! posterior correction satisfies
//!
//! ```text
//! E[mu | y] - a = P d/da log f(y; a)
//! ```
//!
//! and for small `P` it is `P s(a) + O(P^2)`, where `s` is the conditional
//! score in the mean. Choosing `P = (1 - δ)/δ · I(a)^{-1}` turns the leading
//! term into an inverse-Fisher-scaled score.
//!
//! For positive-mean families the Gaussian law is restricted to `(ε, ∞)` with
//! `ε = max(1e-8, a - 12 √P)`. The restricted kernel is left unnormalized, so
//! the identity above still holds exactly for the restricted posterior; the
//! guard only rejects points where the discarded part of the posterior is
//! not negligible.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::conjugate::DiscountConfig;
use crate::edm::{EdmSpec, MeanParam};
use crate::error::{Error, Result};
use crate::quadrature::{
    self, log_normal_pdf, CustomPrior, ParamSpace, PriorSpec, QuadratureConfig, Target,
};

/// Largest posterior mass the positivity restriction may discard.
pub const TRUNCATION_LIMIT: f64 = 1e-10;

/// Tolerance for the agreement of the two exact forms.
pub const EXACT_FORM_TOLERANCE: f64 = 1e-6;

/// Errors below this are treated as round-off and dropped from order fits.
pub const ERROR_FLOOR: f64 = 1e-13;

/// Smallest predictive variance accepted by the order study.
pub const MIN_STUDY_VARIANCE: f64 = 1e-5;

/// Gaussian predictive law `N(a, P)` on the mean parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveState {
    pub a: f64,
    pub p: f64,
}

impl PredictiveState {
    pub fn new(a: f64, p: f64) -> Result<Self> {
        if !(a.is_finite() && p.is_finite() && p > 0.0) {
            return Err(Error::Config(format!(
                "predictive state needs finite a and P > 0, got ({a}, {p})"
            )));
        }
        Ok(PredictiveState { a, p })
    }
}

/// Both exact forms of the posterior correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactCorrection {
    /// `E[mu | y] - a` by direct quadrature.
    pub mean_shift: f64,
    /// `P d/da log f(y; a)` by central differences in `a`.
    pub score_form: f64,
}

impl ExactCorrection {
    pub fn gap(&self) -> f64 {
        (self.mean_shift - self.score_form).abs()
    }
}

fn lower_cut(spec: &EdmSpec, pred: &PredictiveState) -> Option<f64> {
    spec.mean_domain()
        .0
        .is_finite()
        .then(|| (pred.a - 12.0 * pred.p.sqrt()).max(1e-8))
}

fn predictive_prior(spec: &EdmSpec, a: f64, p: f64, cut: Option<f64>) -> PriorSpec {
    match cut {
        None => PriorSpec::gaussian(a, p),
        Some(eps) => PriorSpec::Custom(CustomPrior {
            space: ParamSpace::Mean,
            log_density: Arc::new(move |v| log_normal_pdf(v, a, p)),
            log_density_derivative: None,
            center: a,
            scale: p.sqrt(),
            support: (eps, spec.mean_domain().1),
        }),
    }
}

fn log_normal_cdf(z: f64) -> f64 {
    (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
}

/// Bound on the posterior mass below the cut: prior mass below `ε` times the
/// largest likelihood on `(0, ε]`, over the marginal. The likelihood in the
/// mean is unimodal with mode at the statistic, which gives the supremum.
fn truncated_posterior_mass(
    spec: &EdmSpec,
    pred: &PredictiveState,
    x: f64,
    eps: f64,
    log_f: f64,
) -> f64 {
    let log_prior_mass = log_normal_cdf((eps - pred.a) / pred.p.sqrt());
    let mode = x.max(1e-300).min(eps);
    let log_sup = spec.log_density_stat(x, mode);
    (log_prior_mass + log_sup - log_f).exp()
}

/// Exact posterior correction in both forms.
pub fn exact_correction_forms(
    spec: &EdmSpec,
    pred: PredictiveState,
    y: f64,
    cfg: &QuadratureConfig,
) -> Result<ExactCorrection> {
    let pred = PredictiveState::new(pred.a, pred.p)?;
    spec.check_mean(pred.a)?;
    let x = spec.check_statistic(spec.statistic(y))?;
    let cut = lower_cut(spec, &pred);
    let prior = predictive_prior(spec, pred.a, pred.p, cut);

    let log_f = quadrature::log_marginal_density(spec, &prior, y, cfg)?;
    if let Some(eps) = cut {
        let mass = truncated_posterior_mass(spec, &pred, x, eps, log_f);
        if !(mass < TRUNCATION_LIMIT) {
            return Err(Error::Truncation {
                mass,
                limit: TRUNCATION_LIMIT,
            });
        }
    }

    let post = quadrature::posterior_mean_oracle(spec, &prior, y, cfg, Target::Mu)?;
    let h = (pred.p.sqrt() * 1e-3).min(1e-5);
    let up = quadrature::log_marginal_density(
        spec,
        &predictive_prior(spec, pred.a + h, pred.p, cut),
        y,
        cfg,
    )?;
    let down = quadrature::log_marginal_density(
        spec,
        &predictive_prior(spec, pred.a - h, pred.p, cut),
        y,
        cfg,
    )?;
    Ok(ExactCorrection {
        mean_shift: post - pred.a,
        score_form: pred.p * (up - down) / (2.0 * h),
    })
}

/// Exact posterior correction `E[mu | y] - a`, cross-checked against the
/// marginal-score form.
pub fn exact_correction(
    spec: &EdmSpec,
    pred: PredictiveState,
    y: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let forms = exact_correction_forms(spec, pred, y, cfg)?;
    if !(forms.gap() <= EXACT_FORM_TOLERANCE) {
        return Err(Error::Consistency(format!(
            "posterior mean shift {} and scaled marginal score {} differ by {:e}",
            forms.mean_shift,
            forms.score_form,
            forms.gap()
        )));
    }
    Ok(forms.mean_shift)
}

/// Leading term `P s(a)`.
pub fn leading_correction(spec: &EdmSpec, pred: PredictiveState, y: f64) -> Result<f64> {
    let pred = PredictiveState::new(pred.a, pred.p)?;
    Ok(pred.p * spec.score_mean(y, MeanParam(pred.a))?)
}

/// Remainder of the leading term on a grid of predictive variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionStudy {
    pub p_grid: Vec<f64>,
    pub errors: Vec<f64>,
    /// Grid points whose error fell below [`ERROR_FLOOR`].
    pub dropped: Vec<f64>,
    pub fitted_slope: f64,
    pub intercept: f64,
}

/// Least-squares slope and intercept of `ys` on `xs`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits `log |exact - leading|` against `log P`.
pub fn expansion_order_study(
    spec: &EdmSpec,
    a: f64,
    y: f64,
    p_grid: &[f64],
    cfg: &QuadratureConfig,
) -> Result<ExpansionStudy> {
    if p_grid.len() < 2 {
        return Err(Error::Config(
            "the P grid needs at least two points".to_string(),
        ));
    }
    if p_grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config(
            "the P grid must be strictly decreasing".to_string(),
        ));
    }
    if !(p_grid[p_grid.len() - 1] >= MIN_STUDY_VARIANCE) {
        return Err(Error::Config(format!(
            "P grid values below {MIN_STUDY_VARIANCE:e} are beneath quadrature resolution"
        )));
    }
    let mut kept = Vec::new();
    let mut errors = Vec::new();
    let mut dropped = Vec::new();
    for &p in p_grid {
        let pred = PredictiveState::new(a, p)?;
        let exact = exact_correction(spec, pred, y, cfg)?;
        let err = (exact - leading_correction(spec, pred, y)?).abs();
        if err < ERROR_FLOOR {
            dropped.push(p);
        } else {
            kept.push(p);
            errors.push(err);
        }
    }
    if kept.len() < 2 {
        return Err(Error::Underflow(
            "fewer than two grid points carry a measurable error".to_string(),
        ));
    }
    let lx: Vec<f64> = kept.iter().map(|p| p.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (fitted_slope, intercept) = least_squares(&lx, &ly);
    Ok(ExpansionStudy {
        p_grid: kept,
        errors,
        dropped,
        fitted_slope,
        intercept,
    })
}

/// `P = (1 - δ)/δ · I(a)^{-1}`.
pub fn info_matched_covariance(spec: &EdmSpec, a: MeanParam, delta: f64) -> Result<f64> {
    let (kappa, _) = scale_reconciliation(delta)?;
    Ok(kappa / spec.fisher_mean(a)?)
}

/// `(P^{-1} + I)^{-1}`.
pub fn filtered_precision(p_pred: f64, fisher_at_a: f64) -> Result<f64> {
    if !(p_pred > 0.0 && fisher_at_a > 0.0) {
        return Err(Error::Domain(format!(
            "predictive variance and information must be positive, got ({p_pred}, {fisher_at_a})"
        )));
    }
    Ok(1.0 / (1.0 / p_pred + fisher_at_a))
}

/// Predictive scale `κ = (1 - δ)/δ` and posterior learning rate `1 - δ`,
/// which satisfy `1 - δ = κ / (1 + κ)`.
pub fn scale_reconciliation(delta: f64) -> Result<(f64, f64)> {
    let cfg = DiscountConfig::new(delta)?;
    let rate = cfg.gain();
    let kappa = rate / delta;
    let gap = (kappa / (1.0 + kappa) - rate).abs();
    if gap > 1e-15 {
        return Err(Error::Consistency(format!(
            "kappa / (1 + kappa) misses 1 - delta by {gap:e}"
        )));
    }
    Ok((kappa, rate))
}

/// One row of a discount-scale study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaPoint {
    pub delta: f64,
    pub kappa: f64,
    pub p: f64,
    pub exact: f64,
    /// `κ I^{-1} s`.
    pub approx: f64,
    pub error: f64,
    /// `error / κ^2`.
    pub ratio: f64,
}

/// Compares the exact correction with `κ I^{-1} s` at the information-matched
/// predictive variance, for each discount factor.
pub fn kappa_study(
    spec: &EdmSpec,
    a: f64,
    y: f64,
    deltas: &[f64],
    cfg: &QuadratureConfig,
) -> Result<Vec<KappaPoint>> {
    deltas
        .iter()
        .map(|&delta| {
            let (kappa, _) = scale_reconciliation(delta)?;
            let p = info_matched_covariance(spec, MeanParam(a), delta)?;
            let pred = PredictiveState::new(a, p)?;
            let exact = exact_correction(spec, pred, y, cfg)?;
            let approx = kappa * spec.innovation(y, MeanParam(a))?;
            let error = (exact - approx).abs();
            Ok(KappaPoint {
                delta,
                kappa,
                p,
                exact,
                approx,
                error,
                ratio: error / (kappa * kappa),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn gaussian_exact_is_kalman_gain() {
        let g = EdmSpec::gaussian_location(1.0).unwrap();
        let pred = PredictiveState::new(0.0, 0.1).unwrap();
        let forms = exact_correction_forms(&g, pred, 1.0, &cfg()).unwrap();
        assert!((forms.mean_shift - 1.0 / 11.0).abs() < 1e-12);
        assert!((forms.score_form - 1.0 / 11.0).abs() < 1e-8);
        let at_a =
            exact_correction(&g, PredictiveState::new(0.7, 0.1).unwrap(), 0.7, &cfg()).unwrap();
        assert!(at_a.abs() < 1e-12);
    }

    #[test]
    fn poisson_exact_forms_agree() {
        let p = EdmSpec::poisson();
        let pred = PredictiveState::new(2.0, 0.05).unwrap();
        let forms = exact_correction_forms(&p, pred, 3.0, &cfg()).unwrap();
        assert!(forms.gap() < 1e-8, "{forms:?}");
        // close to the leading term 0.025
        assert!((forms.mean_shift - 0.025).abs() < 0.05 * 0.025);
    }

    #[test]
    fn truncation_guard_rejects_wide_laws() {
        let p = EdmSpec::poisson();
        let err =
            exact_correction(&p, PredictiveState::new(0.5, 4.0).unwrap(), 0.0, &cfg()).unwrap_err();
        assert!(matches!(err, Error::Truncation { .. }), "{err:?}");
    }

    #[test]
    fn leading_examples() {
        let g = EdmSpec::gaussian_location(1.0).unwrap();
        let pred = PredictiveState::new(0.0, 0.1).unwrap();
        assert_relative_eq!(
            leading_correction(&g, pred, 1.0).unwrap(),
            0.1,
            epsilon = 1e-16
        );
        let p = EdmSpec::poisson();
        let pred = PredictiveState::new(2.0, 0.05).unwrap();
        assert_relative_eq!(
            leading_correction(&p, pred, 3.0).unwrap(),
            0.025,
            epsilon = 1e-16
        );
        assert_eq!(leading_correction(&p, pred, 2.0).unwrap(), 0.0);
        assert!(leading_correction(&p, PredictiveState { a: -1.0, p: 0.1 }, 1.0).is_err());
    }

    #[test]
    fn gaussian_study_matches_closed_form() {
        let g = EdmSpec::gaussian_location(1.0).unwrap();
        let grid = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
        let study = expansion_order_study(&g, 0.0, 1.0, &grid, &cfg()).unwrap();
        for (p, e) in study.p_grid.iter().zip(&study.errors) {
            assert!((e - p * p / (p + 1.0)).abs() < 1e-12);
        }
        assert!((study.fitted_slope - 2.0).abs() < 0.05);
        let fine = expansion_order_study(&g, 0.0, 1.0, &[1e-2, 3e-3, 1e-3], &cfg()).unwrap();
        assert!((fine.fitted_slope - 2.0).abs() < 0.02);
    }

    #[test]
    fn poisson_second_order_term_vanishes_at_y_equal_a_plus_one() {
        // the P^2 coefficient is (y / a^3)(1 + a - y)
        let p = EdmSpec::poisson();
        let grid = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
        let generic = expansion_order_study(&p, 2.0, 5.0, &grid, &cfg()).unwrap();
        assert!((generic.fitted_slope - 2.0).abs() < 0.2);
        let degenerate = expansion_order_study(&p, 2.0, 3.0, &grid, &cfg()).unwrap();
        assert!((degenerate.fitted_slope - 3.0).abs() < 0.2);
        // leading remainder coefficient: error / P^2 -> |y/a^3 (1 + a - y)| = 1.25
        let e = generic.errors[4] / (1e-3 * 1e-3);
        assert!((e - 1.25).abs() < 0.01, "{e}");
    }

    #[test]
    fn study_rejects_bad_grids() {
        let g = EdmSpec::gaussian_location(1.0).unwrap();
        assert!(expansion_order_study(&g, 0.0, 1.0, &[1e-2, 1e-1], &cfg()).is_err());
        assert!(expansion_order_study(&g, 0.0, 1.0, &[1e-2, 1e-6], &cfg()).is_err());
        assert!(expansion_order_study(&g, 0.0, 1.0, &[1e-2], &cfg()).is_err());
    }

    #[test]
    fn study_drops_underflowing_points() {
        // y = a: every error is zero
        let g = EdmSpec::gaussian_location(1.0).unwrap();
        let err = expansion_order_study(&g, 0.5, 0.5, &[1e-1, 1e-2], &cfg()).unwrap_err();
        assert!(matches!(err, Error::Underflow(_)));
    }

    #[test]
    fn covariance_examples() {
        let g = EdmSpec::gaussian_location(0.25).unwrap();
        assert_relative_eq!(
            info_matched_covariance(&g, MeanParam(0.0), 0.8).unwrap(),
            0.0625,
            epsilon = 1e-16
        );
        let g1 = EdmSpec::gaussian_location(1.0).unwrap();
        assert_eq!(
            info_matched_covariance(&g1, MeanParam(3.0), 0.5).unwrap(),
            1.0
        );
        let p = EdmSpec::poisson();
        assert_relative_eq!(
            info_matched_covariance(&p, MeanParam(2.0), 0.9).unwrap(),
            2.0 / 9.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn filtered_precision_examples() {
        assert_eq!(filtered_precision(0.25, 4.0).unwrap(), 0.125);
        assert_relative_eq!(
            filtered_precision(1e12, 4.0).unwrap(),
            0.25,
            max_relative = 1e-11
        );
        let p = EdmSpec::poisson();
        for delta in [0.5, 0.75, 0.9] {
            let info = p.fisher_mean(MeanParam(2.0)).unwrap();
            let pp = info_matched_covariance(&p, MeanParam(2.0), delta).unwrap();
            let pf = filtered_precision(pp, info).unwrap();
            assert!((pf - (1.0 - delta) / info).abs() < 1e-15);
        }
        assert!(filtered_precision(0.0, 1.0).is_err());
    }

    #[test]
    fn reconciliation_examples() {
        let (k, r) = scale_reconciliation(0.9).unwrap();
        assert_relative_eq!(k, 1.0 / 9.0, epsilon = 1e-16);
        assert_relative_eq!(r, 0.1, epsilon = 1e-16);
        assert_eq!(scale_reconciliation(0.5).unwrap(), (1.0, 0.5));
        let (k, r) = scale_reconciliation(0.99).unwrap();
        assert_relative_eq!(k, 0.010101010101010102, epsilon = 1e-16);
        assert_relative_eq!(r, 0.01, epsilon = 1e-16);
        assert!(scale_reconciliation(1.0).is_err());
    }

    #[test]
    fn gaussian_kappa_ratio_is_analytic() {
        // error / κ² = (y - a) / (1 + κ) when σ² = 1
        let g = EdmSpec::gaussian_location(1.0).unwrap();
        let pts = kappa_study(&g, 0.0, 1.0, &[0.9, 0.99], &cfg()).unwrap();
        for pt in pts {
            assert!((pt.ratio - 1.0 / (1.0 + pt.kappa)).abs() < 1e-6, "{pt:?}");
        }
    }
}

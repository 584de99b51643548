//! Brute-force integration over a scalar latent parameter.
//!
//! This is the numerical oracle behind every identity check: marginal
//! densities `f(y) = ∫ p(y | v) π(v) dv`, their finite-difference scores in the
//! observation, and posterior means `E[g(v) | y]`.
//!
//! Two schemes are available:
//!
//! * Gauss–Hermite in the prior measure, for Gaussian and Gaussian-mixture
//!   priors on the real line (`GaussianLocation`).
//! * An adaptive trapezoid rule for everything else. The window starts at the
//!   prior center ± `domain_halfwidth_sigmas` prior scales, is widened until
//!   the log integrand at both ends sits more than [`LOG_CUTOFF`] below its
//!   maximum, and is then narrowed to the region above that cutoff. For
//!   integrands that are analytic and decay on both sides the trapezoid rule
//!   converges geometrically, so 4096 nodes put the discretization error far
//!   below double-precision round-off on the posterior scale.
//!
//! All accumulations are done on the log scale relative to the largest term, so
//! extreme observations do not underflow.
//!
//! Regularity conditions (domination for differentiation under the integral,
//! vanishing boundary terms) are assumed, not checked. They hold for the
//! Gaussian, mixture and conjugate priors built in here; for
//! [`PriorSpec::Custom`] they are the caller's responsibility.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::edm::{EdmSpec, Family, MeanParam, NaturalParam};
use crate::error::{Error, Result};

/// Log-integrand values this far below the maximum are treated as zero.
pub const LOG_CUTOFF: f64 = 46.0;

const DEFAULT_GH_NODES: usize = 128;
const DEFAULT_TRAPEZOID_NODES: usize = 4096;
const COARSE_GRID: usize = 257;
const MAX_GH_NODES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Gauss–Hermite when the prior is Gaussian on the real line, trapezoid otherwise.
    #[default]
    Auto,
    GaussHermite,
    AdaptiveTrapezoid,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "auto" => Ok(Scheme::Auto),
            "gauss-hermite" | "gh" => Ok(Scheme::GaussHermite),
            "adaptive-trapezoid" | "trapezoid" => Ok(Scheme::AdaptiveTrapezoid),
            other => Err(Error::Config(format!(
                "unknown quadrature scheme '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    pub scheme: Scheme,
    /// Node count; `None` selects 128 for Gauss–Hermite and 4096 for the trapezoid rule.
    pub node_count: Option<usize>,
    /// Initial trapezoid half-width in prior standard deviations.
    pub domain_halfwidth_sigmas: f64,
    /// Central finite-difference step for scores of the marginal density;
    /// scaled by `min(x, 1)` for positive statistics.
    pub fd_step: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            scheme: Scheme::Auto,
            node_count: None,
            domain_halfwidth_sigmas: 12.0,
            fd_step: 1e-5,
        }
    }
}

impl QuadratureConfig {
    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.node_count = Some(nodes);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(n) = self.node_count {
            if n < 16 {
                return Err(Error::Config(format!("node_count must be >= 16, got {n}")));
            }
        }
        if !(self.fd_step > 0.0 && self.fd_step <= 1e-2) {
            return Err(Error::Config(format!(
                "fd_step must lie in (0, 1e-2], got {}",
                self.fd_step
            )));
        }
        if !(self.domain_halfwidth_sigmas.is_finite() && self.domain_halfwidth_sigmas > 0.0) {
            return Err(Error::Config(format!(
                "domain_halfwidth_sigmas must be positive, got {}",
                self.domain_halfwidth_sigmas
            )));
        }
        Ok(())
    }
}

/// Which parameterization a prior density lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamSpace {
    Mean,
    Natural,
}

/// Posterior-mean target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Theta,
    Mu,
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied prior density.
#[derive(Clone)]
pub struct CustomPrior {
    pub space: ParamSpace,
    /// Log density of the prior (normalized if marginal densities are wanted).
    pub log_density: ScalarFn,
    /// Derivative of the log density, needed only for the expectation-parameter identity.
    pub log_density_derivative: Option<ScalarFn>,
    /// Location and scale hints for the integration window.
    pub center: f64,
    pub scale: f64,
    /// Support of the prior; intersected with the family's parameter domain.
    pub support: (f64, f64),
}

impl fmt::Debug for CustomPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPrior")
            .field("space", &self.space)
            .field("center", &self.center)
            .field("scale", &self.scale)
            .field("support", &self.support)
            .field("has_derivative", &self.log_density_derivative.is_some())
            .finish()
    }
}

/// Prior on the latent parameter.
///
/// Gaussian and mixture priors live on the mean `mu`; conjugate priors
/// `π(θ) ∝ exp{τθ − nψ(θ)}` live on the natural parameter.
#[derive(Debug, Clone)]
pub enum PriorSpec {
    Gaussian {
        mean: f64,
        variance: f64,
    },
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
    },
    ConjugateNef {
        tau: f64,
        n: f64,
    },
    Custom(CustomPrior),
}

impl PriorSpec {
    pub fn gaussian(mean: f64, variance: f64) -> Self {
        PriorSpec::Gaussian { mean, variance }
    }

    pub fn conjugate(tau: f64, n: f64) -> Self {
        PriorSpec::ConjugateNef { tau, n }
    }

    pub fn mixture(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Self {
        PriorSpec::GaussianMixture {
            weights,
            means,
            variances,
        }
    }

    pub fn space(&self) -> ParamSpace {
        match self {
            PriorSpec::Gaussian { .. } | PriorSpec::GaussianMixture { .. } => ParamSpace::Mean,
            PriorSpec::ConjugateNef { .. } => ParamSpace::Natural,
            PriorSpec::Custom(c) => c.space,
        }
    }

    /// Checks the prior against itself and against the observation family.
    pub fn validate(&self, spec: &EdmSpec) -> Result<()> {
        match self {
            PriorSpec::Gaussian { mean, variance } => {
                if !(mean.is_finite() && variance.is_finite() && *variance > 0.0) {
                    return Err(Error::Config(format!(
                        "gaussian prior needs finite mean and positive variance, got ({mean}, {variance})"
                    )));
                }
            }
            PriorSpec::GaussianMixture {
                weights,
                means,
                variances,
            } => {
                if weights.is_empty()
                    || weights.len() != means.len()
                    || weights.len() != variances.len()
                {
                    return Err(Error::Config(
                        "mixture weights, means and variances must be non-empty and equally long"
                            .to_string(),
                    ));
                }
                if weights.iter().any(|w| !(*w > 0.0)) || variances.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Config(
                        "mixture weights and variances must be positive".to_string(),
                    ));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "mixture weights must sum to 1, got {total}"
                    )));
                }
            }
            PriorSpec::ConjugateNef { tau, n } => {
                if !(*n > 0.0 && n.is_finite() && tau.is_finite()) {
                    return Err(Error::Config(format!(
                        "conjugate prior needs n > 0 and finite tau, got (tau={tau}, n={n})"
                    )));
                }
                if spec.family() != Family::GaussianLocation && *tau <= 0.0 {
                    return Err(Error::Config(format!(
                        "conjugate prior for {} needs tau > 0, got {tau}",
                        spec.family()
                    )));
                }
            }
            PriorSpec::Custom(c) => {
                if !(c.scale > 0.0 && c.scale.is_finite() && c.center.is_finite()) {
                    return Err(Error::Config(
                        "custom prior needs a finite center and positive scale".to_string(),
                    ));
                }
                if !(c.support.0 < c.support.1) {
                    return Err(Error::Config("custom prior support is empty".to_string()));
                }
            }
        }
        Ok(())
    }

    /// Log prior density at `v` (in the prior's own space).
    fn log_density(&self, spec: &EdmSpec, v: f64) -> f64 {
        match self {
            PriorSpec::Gaussian { mean, variance } => log_normal_pdf(v, *mean, *variance),
            PriorSpec::GaussianMixture {
                weights,
                means,
                variances,
            } => {
                let terms: Vec<f64> = weights
                    .iter()
                    .zip(means)
                    .zip(variances)
                    .map(|((w, m), s2)| w.ln() + log_normal_pdf(v, *m, *s2))
                    .collect();
                log_sum_exp(&terms)
            }
            PriorSpec::ConjugateNef { tau, n } => match spec.cumulant(NaturalParam(v)) {
                Ok(psi) => tau * v - n * psi - log_conjugate_normalizer(spec, *tau, *n),
                Err(_) => f64::NEG_INFINITY,
            },
            PriorSpec::Custom(c) => (c.log_density)(v),
        }
    }

    /// Derivative of the log prior density with respect to the natural parameter.
    pub fn natural_score(&self, spec: &EdmSpec, theta: f64) -> Result<f64> {
        match self {
            PriorSpec::ConjugateNef { tau, n } => {
                let mu = spec.mean_from_natural(NaturalParam(theta))?.0;
                Ok(tau - n * mu)
            }
            PriorSpec::Custom(CustomPrior {
                space: ParamSpace::Natural,
                log_density_derivative: Some(d),
                ..
            }) => Ok(d(theta)),
            _ => Err(Error::Unsupported(
                "prior has no natural-parameter log-density derivative".to_string(),
            )),
        }
    }

    /// Window hints: center, scale, support (in the prior's own space).
    fn window_hint(&self, spec: &EdmSpec, halfwidth: f64) -> Result<(f64, f64, (f64, f64))> {
        let domain = match self.space() {
            ParamSpace::Mean => spec.mean_domain(),
            ParamSpace::Natural => spec.natural_domain(),
        };
        let (center, scale, support) = match self {
            PriorSpec::Gaussian { mean, variance } => {
                let sd = variance.sqrt();
                (*mean, sd, truncated_support(domain, *mean - halfwidth * sd))
            }
            PriorSpec::GaussianMixture {
                means, variances, ..
            } => {
                let lo = means
                    .iter()
                    .zip(variances)
                    .map(|(m, v)| m - halfwidth * v.sqrt())
                    .fold(f64::INFINITY, f64::min);
                let hi = means
                    .iter()
                    .zip(variances)
                    .map(|(m, v)| m + halfwidth * v.sqrt())
                    .fold(f64::NEG_INFINITY, f64::max);
                (
                    0.5 * (lo + hi),
                    (hi - lo) / (2.0 * halfwidth),
                    truncated_support(domain, lo),
                )
            }
            PriorSpec::ConjugateNef { tau, n } => {
                let mu0 = tau / n;
                let theta0 = spec.natural_from_mean(MeanParam(mu0))?.0;
                // Laplace scale: psi''(theta) = phi V(mu)
                let curvature = n * spec.dispersion() * spec.variance_function(mu0);
                (theta0, 1.0 / curvature.sqrt(), domain)
            }
            PriorSpec::Custom(c) => (
                c.center,
                c.scale,
                (c.support.0.max(domain.0), c.support.1.min(domain.1)),
            ),
        };
        Ok((center, scale, support))
    }
}

/// Gaussian priors on a positive mean are truncated at `max(1e-8, lo)`.
fn truncated_support(domain: (f64, f64), lo: f64) -> (f64, f64) {
    if domain.0.is_finite() {
        (lo.max(domain.0 + 1e-8), domain.1)
    } else {
        domain
    }
}

/// `log ∫ exp{τθ − nψ(θ)} dθ` in closed form.
pub fn log_conjugate_normalizer(spec: &EdmSpec, tau: f64, n: f64) -> f64 {
    let phi = spec.dispersion();
    match spec.family() {
        Family::GaussianLocation => 0.5 * (2.0 * PI / (n * phi)).ln() + tau * tau / (2.0 * n * phi),
        Family::Poisson => ln_gamma(tau) - tau * n.ln(),
        Family::Gamma | Family::GaussianVariance => {
            let a = n / phi + 1.0;
            ln_gamma(a) - a * tau.ln()
        }
    }
}

pub(crate) fn log_normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let r = x - mean;
    -0.5 * (2.0 * PI * variance).ln() - 0.5 * r * r / variance
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

// ---------------------------------------------------------------------------
// Gauss–Hermite rule

/// Gauss–Hermite nodes and weights for the weight function `exp(-x^2)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Computes the rule by the Golub–Welsch method: nodes are the eigenvalues
    /// of the Jacobi matrix of the Hermite recurrence, weights come from the
    /// first eigenvector components. Each node is then polished by Newton steps
    /// on the orthonormal recurrence.
    pub fn new(n: usize) -> Result<Self> {
        if !(2..=MAX_GH_NODES).contains(&n) {
            return Err(Error::Config(format!(
                "gauss-hermite node count must lie in [2, {MAX_GH_NODES}], got {n}"
            )));
        }
        let mut diag = vec![0.0; n];
        let mut off: Vec<f64> = (0..n)
            .map(|i| {
                if i + 1 < n {
                    ((i + 1) as f64 / 2.0).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let mut first_row = vec![0.0; n];
        first_row[0] = 1.0;
        tridiagonal_ql(&mut diag, &mut off, &mut first_row)?;

        let mut rule: Vec<(f64, f64)> = diag
            .iter()
            .zip(&first_row)
            .map(|(x, z)| {
                let mut x = *x;
                let mut w = PI.sqrt() * z * z;
                for _ in 0..3 {
                    let (p, dp) = orthonormal_hermite(n, x);
                    if dp == 0.0 || !dp.is_finite() {
                        break;
                    }
                    x -= p / dp;
                    w = 2.0 / (dp * dp);
                }
                (x, w)
            })
            .collect();
        rule.sort_by(|a, b| a.0.total_cmp(&b.0));
        // enforce exact symmetry
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (rule[j].0 - rule[i].0);
            let w = 0.5 * (rule[i].1 + rule[j].1);
            rule[i] = (-x, w);
            rule[j] = (x, w);
        }
        if n % 2 == 1 {
            rule[n / 2].0 = 0.0;
        }
        Ok(GaussHermite {
            nodes: rule.iter().map(|r| r.0).collect(),
            weights: rule.iter().map(|r| r.1).collect(),
        })
    }

    /// Shared rule from a process-wide cache.
    pub fn cached(n: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<RwLock<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
        if let Some(rule) = cache.read().expect("gh cache poisoned").get(&n) {
            return Ok(Arc::clone(rule));
        }
        let rule = Arc::new(GaussHermite::new(n)?);
        cache
            .write()
            .expect("gh cache poisoned")
            .entry(n)
            .or_insert_with(|| Arc::clone(&rule));
        Ok(rule)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫ f(x) exp(-x^2) dx`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(*x))
            .sum()
    }
}

/// Orthonormal Hermite value `p_n(x)` and the derivative scale `sqrt(2n) p_{n-1}(x)`.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64) {
    let mut p1 = PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = x * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

/// Implicit QL on a symmetric tridiagonal matrix, tracking only the first
/// row of the eigenvector matrix. `off[i]` couples entries `i` and `i + 1`.
fn tridiagonal_ql(diag: &mut [f64], off: &mut [f64], first_row: &mut [f64]) -> Result<()> {
    let n = diag.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 100 {
                return Err(Error::Config(
                    "tridiagonal eigenvalue iteration did not converge".to_string(),
                ));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                let z = first_row[i + 1];
                first_row[i + 1] = s * first_row[i] + c * z;
                first_row[i] = c * first_row[i] - s * z;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Integration plans

/// Weighted nodes in the prior's space, with log prior weights folded in.
struct Plan {
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
}

/// Result of integrating the posterior kernel.
struct Moments {
    log_mass: f64,
    means: Vec<f64>,
}

/// Maps a prior-space point to the mean parameter.
fn to_mean(spec: &EdmSpec, space: ParamSpace, v: f64) -> Option<f64> {
    match space {
        ParamSpace::Mean => spec.mean_in_domain(v).then_some(v),
        ParamSpace::Natural => spec.mean_from_natural(NaturalParam(v)).ok().map(|m| m.0),
    }
}

fn log_lik(spec: &EdmSpec, space: ParamSpace, x: f64, v: f64) -> f64 {
    match to_mean(spec, space, v) {
        Some(mu) => spec.log_density_stat(x, mu),
        None => f64::NEG_INFINITY,
    }
}

fn resolve_scheme(spec: &EdmSpec, prior: &PriorSpec, cfg: &QuadratureConfig) -> Result<Scheme> {
    let gaussian_on_line = matches!(
        prior,
        PriorSpec::Gaussian { .. } | PriorSpec::GaussianMixture { .. }
    ) && spec.family() == Family::GaussianLocation;
    match cfg.scheme {
        Scheme::Auto if gaussian_on_line => Ok(Scheme::GaussHermite),
        Scheme::Auto => Ok(Scheme::AdaptiveTrapezoid),
        Scheme::GaussHermite if !gaussian_on_line => Err(Error::Config(
            "gauss-hermite needs a gaussian or mixture prior on an unbounded mean".to_string(),
        )),
        s => Ok(s),
    }
}

fn gh_plan(prior: &PriorSpec, nodes: usize) -> Result<Plan> {
    let rule = GaussHermite::cached(nodes)?;
    let components: Vec<(f64, f64, f64)> = match prior {
        PriorSpec::Gaussian { mean, variance } => vec![(1.0, *mean, *variance)],
        PriorSpec::GaussianMixture {
            weights,
            means,
            variances,
        } => weights
            .iter()
            .zip(means)
            .zip(variances)
            .map(|((w, m), v)| (*w, *m, *v))
            .collect(),
        _ => unreachable!("gauss-hermite plans are only built for gaussian priors"),
    };
    let mut plan = Plan {
        nodes: Vec::with_capacity(components.len() * nodes),
        log_weights: Vec::with_capacity(components.len() * nodes),
    };
    let norm = -0.5 * PI.ln();
    for (w, m, v) in components {
        let s = (2.0 * v).sqrt();
        for (t, gw) in rule.nodes().iter().zip(rule.weights()) {
            if *gw > 0.0 {
                plan.nodes.push(m + s * t);
                plan.log_weights.push(w.ln() + gw.ln() + norm);
            }
        }
    }
    Ok(plan)
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    let h = (b - a) / (n - 1) as f64;
    (0..n).map(move |i| if i + 1 == n { b } else { a + h * i as f64 })
}

/// Finds a finite window carrying all non-negligible mass of `exp(logf)`.
fn adaptive_window(
    logf: &dyn Fn(f64) -> f64,
    center: f64,
    scale: f64,
    halfwidth: f64,
    support: (f64, f64),
) -> Result<(f64, f64)> {
    let (lo_b, hi_b) = support;

    let c = center.clamp(lo_b, hi_b);
    let mut a = (c - halfwidth * scale).max(lo_b);
    let mut b = (c + halfwidth * scale).min(hi_b);
    if !(a < b) {
        return Err(Error::Config("integration window is empty".to_string()));
    }

    let eval = |a: f64, b: f64| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let xs: Vec<f64> = linspace(a, b, COARSE_GRID).collect();
        let mut ls = Vec::with_capacity(xs.len());
        for &x in &xs {
            let l = logf(x);
            if l.is_nan() || l == f64::INFINITY {
                return Err(Error::Domain(format!("integrand is not finite at {x}")));
            }
            ls.push(l);
        }
        let m = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((xs, ls, m))
    };

    // widen
    let mut grid = eval(a, b)?;
    for _ in 0..64 {
        let (_, ls, m) = &grid;
        let widen_lo = m.is_finite() && ls[0] > m - LOG_CUTOFF && a > lo_b;
        let widen_hi = m.is_finite() && ls[ls.len() - 1] > m - LOG_CUTOFF && b < hi_b;
        let dead = *m == f64::NEG_INFINITY;
        if !(widen_lo || widen_hi || dead) {
            break;
        }
        let w = b - a;
        if widen_lo || dead {
            a = (a - w).max(lo_b);
        }
        if widen_hi || dead {
            b = (b + w).min(hi_b);
        }
        grid = eval(a, b)?;
    }
    if grid.2 == f64::NEG_INFINITY {
        return Err(Error::Underflow(
            "integrand has no representable mass".to_string(),
        ));
    }

    // narrow, repeating while the live region is a small part of the window
    for _ in 0..6 {
        let (xs, ls, m) = &grid;
        let first = ls.iter().position(|l| *l > m - LOG_CUTOFF).unwrap_or(0);
        let last = ls
            .iter()
            .rposition(|l| *l > m - LOG_CUTOFF)
            .unwrap_or(ls.len() - 1);
        let na = xs[first.saturating_sub(1)];
        let nb = xs[(last + 1).min(xs.len() - 1)];
        let shrunk = (nb - na) < 0.5 * (b - a);
        a = na;
        b = nb;
        if !shrunk {
            break;
        }
        grid = eval(a, b)?;
    }
    Ok((a, b))
}

/// Integration variable for the trapezoid rule. Supports with an open bound
/// at zero are integrated in `s = ln|v|`, where the kernel decays smoothly;
/// a kernel that reaches the bound linearly would leave an `O(h^2)` endpoint
/// error.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Map {
    Linear,
    /// `v = sign * exp(s)`.
    Log {
        sign: f64,
    },
}

impl Map {
    fn choose(support: (f64, f64)) -> Map {
        if support.0 == 0.0 {
            Map::Log { sign: 1.0 }
        } else if support.1 == 0.0 {
            Map::Log { sign: -1.0 }
        } else {
            Map::Linear
        }
    }

    fn to_v(self, s: f64) -> f64 {
        match self {
            Map::Linear => s,
            Map::Log { sign } => sign * s.exp(),
        }
    }

    /// `ln |dv/ds|`.
    fn log_jacobian(self, s: f64) -> f64 {
        match self {
            Map::Linear => 0.0,
            Map::Log { .. } => s,
        }
    }

    fn window(self, center: f64, scale: f64, support: (f64, f64)) -> (f64, f64, (f64, f64)) {
        match self {
            Map::Linear => (center, scale, support),
            Map::Log { sign } => {
                let c = (sign * center).max(f64::MIN_POSITIVE);
                let (lo, hi) = if sign > 0.0 {
                    (support.0, support.1)
                } else {
                    (-support.1, -support.0)
                };
                let ln_or = |v: f64| if v <= 0.0 { f64::NEG_INFINITY } else { v.ln() };
                // delta-method scale, capped so the first window stays finite
                ((c).ln(), (scale / c).min(50.0), (ln_or(lo), ln_or(hi)))
            }
        }
    }
}

fn trapezoid_plan(
    spec: &EdmSpec,
    prior: &PriorSpec,
    x: f64,
    cfg: &QuadratureConfig,
    nodes: usize,
) -> Result<Plan> {
    let (center, scale, support) = prior.window_hint(spec, cfg.domain_halfwidth_sigmas)?;
    let map = Map::choose(support);
    let (s_center, s_scale, s_support) = map.window(center, scale, support);
    let space = prior.space();
    let kernel = |s: f64| {
        let v = map.to_v(s);
        prior.log_density(spec, v) + log_lik(spec, space, x, v) + map.log_jacobian(s)
    };
    let (a, b) = adaptive_window(
        &kernel,
        s_center,
        s_scale,
        cfg.domain_halfwidth_sigmas,
        s_support,
    )?;
    let h = (b - a) / (nodes - 1) as f64;
    let mut plan = Plan {
        nodes: Vec::with_capacity(nodes),
        log_weights: Vec::with_capacity(nodes),
    };
    for (i, s) in linspace(a, b, nodes).enumerate() {
        let w = if i == 0 || i + 1 == nodes { 0.5 * h } else { h };
        let v = map.to_v(s);
        plan.nodes.push(v);
        plan.log_weights
            .push(w.ln() + map.log_jacobian(s) + prior.log_density(spec, v));
    }
    Ok(plan)
}

/// Builds the node set once so that finite differences in `x` reuse it.
fn build_plan(spec: &EdmSpec, prior: &PriorSpec, x: f64, cfg: &QuadratureConfig) -> Result<Plan> {
    cfg.validate()?;
    prior.validate(spec)?;
    match resolve_scheme(spec, prior, cfg)? {
        Scheme::GaussHermite => gh_plan(prior, cfg.node_count.unwrap_or(DEFAULT_GH_NODES)),
        _ => trapezoid_plan(
            spec,
            prior,
            x,
            cfg,
            cfg.node_count.unwrap_or(DEFAULT_TRAPEZOID_NODES),
        ),
    }
}

fn integrate_plan(
    spec: &EdmSpec,
    space: ParamSpace,
    plan: &Plan,
    x: f64,
    funcs: &[&dyn Fn(f64) -> f64],
) -> Result<Moments> {
    let logs: Vec<f64> = plan
        .nodes
        .iter()
        .zip(&plan.log_weights)
        .map(|(v, lw)| lw + log_lik(spec, space, x, *v))
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Underflow(format!(
            "posterior kernel carries no mass at observation statistic {x}"
        )));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; funcs.len()];
    for (v, l) in plan.nodes.iter().zip(&logs) {
        let w = (l - m).exp();
        if w == 0.0 {
            continue;
        }
        total += w;
        for (s, g) in sums.iter_mut().zip(funcs) {
            *s += w * g(*v);
        }
    }
    Ok(Moments {
        log_mass: m + total.ln(),
        means: sums.into_iter().map(|s| s / total).collect(),
    })
}

fn observation_statistic(spec: &EdmSpec, y: f64) -> Result<f64> {
    spec.check_statistic(spec.statistic(y))
}

/// Log of the marginal density (or mass) of the observation.
pub fn log_marginal_density(
    spec: &EdmSpec,
    prior: &PriorSpec,
    y: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let x = observation_statistic(spec, y)?;
    let plan = build_plan(spec, prior, x, cfg)?;
    Ok(integrate_plan(spec, prior.space(), &plan, x, &[])?.log_mass)
}

/// Marginal density `f(y) = ∫ p(y | v) π(v) dv`.
///
/// For `GaussianVariance` this is the density of the statistic `y^2`.
pub fn marginal_density(
    spec: &EdmSpec,
    prior: &PriorSpec,
    y: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let log_f = log_marginal_density(spec, prior, y, cfg)?;
    let f = log_f.exp();
    if f == 0.0 {
        return Err(Error::Underflow(format!(
            "marginal density underflows (log f = {log_f})"
        )));
    }
    Ok(f)
}

/// Central finite difference of `log f` in the observation statistic.
pub fn marginal_score(
    spec: &EdmSpec,
    prior: &PriorSpec,
    y: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if spec.is_discrete() {
        return Err(Error::Unsupported(format!(
            "marginal score in the observation is not defined for the discrete {} family",
            spec.family()
        )));
    }
    let x = observation_statistic(spec, y)?;
    // positive statistics use a step proportional to x near the boundary
    let h = if spec.is_discrete() || spec.family() == Family::GaussianLocation {
        cfg.fd_step
    } else {
        cfg.fd_step * x.min(1.0)
    };
    spec.check_statistic(x - h)?;
    let plan = build_plan(spec, prior, x, cfg)?;
    let up = integrate_plan(spec, prior.space(), &plan, x + h, &[])?.log_mass;
    let down = integrate_plan(spec, prior.space(), &plan, x - h, &[])?.log_mass;
    Ok((up - down) / (2.0 * h))
}

/// Posterior mean of `theta` or `mu` by direct quadrature.
pub fn posterior_mean_oracle(
    spec: &EdmSpec,
    prior: &PriorSpec,
    y: f64,
    cfg: &QuadratureConfig,
    target: Target,
) -> Result<f64> {
    let x = observation_statistic(spec, y)?;
    let plan = build_plan(spec, prior, x, cfg)?;
    let space = prior.space();
    let g = |v: f64| -> f64 {
        match (space, target) {
            (ParamSpace::Mean, Target::Mu) | (ParamSpace::Natural, Target::Theta) => v,
            (ParamSpace::Mean, Target::Theta) => spec
                .natural_from_mean(MeanParam(v))
                .map(|t| t.0)
                .unwrap_or(f64::NAN),
            (ParamSpace::Natural, Target::Mu) => spec
                .mean_from_natural(NaturalParam(v))
                .map(|m| m.0)
                .unwrap_or(f64::NAN),
        }
    };
    let m = integrate_plan(spec, space, &plan, x, &[&g])?;
    finite(m.means[0], "posterior mean")
}

/// Posterior expectation of `∂θ log π(θ)` for priors on the natural parameter.
pub fn posterior_natural_prior_score(
    spec: &EdmSpec,
    prior: &PriorSpec,
    y: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if prior.space() != ParamSpace::Natural {
        return Err(Error::Unsupported(
            "the expectation-parameter identity needs a prior on the natural parameter".to_string(),
        ));
    }
    // probe once so unsupported priors fail before integrating
    let probe = match prior {
        PriorSpec::ConjugateNef { tau, n } => spec.natural_from_mean(MeanParam(tau / n))?.0,
        PriorSpec::Custom(c) => c.center,
        _ => unreachable!(),
    };
    prior.natural_score(spec, probe)?;
    let x = observation_statistic(spec, y)?;
    let plan = build_plan(spec, prior, x, cfg)?;
    let g = |v: f64| prior.natural_score(spec, v).unwrap_or(f64::NAN);
    let m = integrate_plan(spec, ParamSpace::Natural, &plan, x, &[&g])?;
    finite(m.means[0], "posterior prior score")
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("{what} is not finite")))
    }
}

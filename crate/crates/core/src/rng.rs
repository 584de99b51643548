//! Portable seeded variates.
//!
//! The generator is ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64`, whose output stream is fixed by the algorithm. Uniforms
//! take the top 53 bits of a `u64`. Variates use deterministic transforms:
//!
//! * normal: Box–Muller, both outputs used in order;
//! * Poisson: sequential inversion for means below 30, Hörmann's PTRS above;
//! * gamma: Marsaglia–Tsang, with the `U^{1/k}` boost for shape below one.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::function::gamma::ln_gamma;

use crate::edm::{EdmSpec, Family};

/// Means at or above this use the PTRS sampler.
pub const POISSON_INVERSION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct Stream {
    inner: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream {
            inner: ChaCha20Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`.
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    pub fn poisson(&mut self, mu: f64) -> f64 {
        if mu <= 0.0 {
            return 0.0;
        }
        if mu < POISSON_INVERSION_LIMIT {
            let u = self.uniform();
            let mut k = 0.0;
            let mut p = (-mu).exp();
            let mut cdf = p;
            while u >= cdf {
                k += 1.0;
                p *= mu / k;
                cdf += p;
                if p == 0.0 && cdf < u {
                    // round-off left the tail short of u
                    break;
                }
            }
            k
        } else {
            self.poisson_ptrs(mu)
        }
    }

    /// Transformed rejection with squeeze (Hörmann 1993).
    fn poisson_ptrs(&mut self, mu: f64) -> f64 {
        let slam = mu.sqrt();
        let loglam = mu.ln();
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let vr = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.uniform() - 0.5;
            let v = self.uniform();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + mu + 0.43).floor();
            if us >= 0.07 && v <= vr {
                return k;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
            let rhs = -mu + k * loglam - ln_gamma(k + 1.0);
            if lhs <= rhs {
                return k;
            }
        }
    }

    /// Gamma with the given shape and unit scale.
    pub fn standard_gamma(&mut self, shape: f64) -> f64 {
        if shape < 1.0 {
            let g = self.standard_gamma(shape + 1.0);
            return g * self.uniform_open0().powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let z = self.standard_normal();
            let v = 1.0 + c * z;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform_open0();
            if u.ln() < 0.5 * z * z + d - d * v + d * v.ln() {
                return d * v;
            }
        }
    }

    /// One observation `y` from the family at mean `mu` (raw `y` for the
    /// variance model, where `mu` is the variance).
    pub fn observation(&mut self, spec: &EdmSpec, mu: f64) -> f64 {
        match spec.family() {
            Family::GaussianLocation => self.normal(mu, spec.dispersion().sqrt()),
            Family::GaussianVariance => mu.sqrt() * self.standard_normal(),
            Family::Poisson => self.poisson(mu),
            Family::Gamma => {
                let shape = 1.0 / spec.dispersion();
                self.standard_gamma(shape) * mu / shape
            }
        }
    }
}

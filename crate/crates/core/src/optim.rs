//! Box-constrained Nelder–Mead.
//!
//! Points are clamped into the box after every reflection, expansion and
//! contraction. Non-finite objective values are treated as `+∞`.

#[derive(Debug, Clone, Copy)]
pub(crate) struct NelderMead {
    pub max_evals: usize,
    /// Stop when the spread of objective values falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter (relative to the box) falls below this.
    pub x_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            max_evals: 4000,
            f_tol: 1e-9,
            x_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

fn clamp(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

fn sanitize(f: f64) -> f64 {
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

impl NelderMead {
    pub fn minimize(
        &self,
        f: &dyn Fn(&[f64]) -> f64,
        start: &[f64],
        bounds: &[(f64, f64)],
    ) -> Minimum {
        let n = start.len();
        let eval = |x: &[f64]| sanitize(f(x));
        let widths: Vec<f64> = bounds
            .iter()
            .map(|(lo, hi)| if (hi - lo).is_finite() { hi - lo } else { 1.0 })
            .collect();

        let mut x0 = start.to_vec();
        clamp(&mut x0, bounds);
        let mut simplex = vec![x0.clone()];
        for i in 0..n {
            let mut v = x0.clone();
            let step = 0.05 * widths[i];
            v[i] += if v[i] + step <= bounds[i].1 {
                step
            } else {
                -step
            };
            clamp(&mut v, bounds);
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();
        let mut evals = n + 1;
        let mut converged = false;

        while evals < self.max_evals {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
            simplex = order.iter().map(|i| simplex[*i].clone()).collect();
            values = order.iter().map(|i| values[*i]).collect();

            let spread = values[n] - values[0];
            let diameter = simplex[1..]
                .iter()
                .map(|v| {
                    v.iter()
                        .zip(&simplex[0])
                        .zip(&widths)
                        .map(|((a, b), w)| ((a - b) / w).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if values[0].is_finite()
                && spread.abs() <= self.f_tol
                && diameter <= self.x_tol.max(1e-12)
                || values[0].is_finite() && spread.abs() <= self.f_tol * 1e-3
            {
                converged = true;
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
                .collect();
            let toward = |coef: f64| -> Vec<f64> {
                let mut p: Vec<f64> = centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + coef * (c - w))
                    .collect();
                clamp(&mut p, bounds);
                p
            };

            let xr = toward(1.0);
            let fr = eval(&xr);
            evals += 1;
            if fr < values[0] {
                let xe = toward(2.0);
                let fe = eval(&xe);
                evals += 1;
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
                continue;
            }
            let (xc, fc) = if fr < values[n] {
                let xc = toward(0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = toward(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
                continue;
            }
            // shrink toward the best vertex
            for i in 1..=n {
                let mut v: Vec<f64> = simplex[0]
                    .iter()
                    .zip(&simplex[i])
                    .map(|(b, x)| b + 0.5 * (x - b))
                    .collect();
                clamp(&mut v, bounds);
                values[i] = eval(&v);
                simplex[i] = v;
            }
            evals += n;
        }

        let best = (0..=n)
            .min_by(|a, b| values[*a].total_cmp(&values[*b]))
            .unwrap_or(0);
        Minimum {
            x: simplex[best].clone(),
            f: values[best],
            evals,
            converged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = NelderMead {
            max_evals: 20_000,
            f_tol: 1e-14,
            x_tol: 1e-10,
        }
        .minimize(&f, &[-1.2, 1.0], &[(-5.0, 5.0), (-5.0, 5.0)]);
        assert!(m.converged);
        assert!(
            (m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4,
            "{m:?}"
        );
    }

    #[test]
    fn active_bound() {
        let f = |x: &[f64]| (x[0] + 3.0).powi(2) + (x[1] - 0.5).powi(2);
        let m = NelderMead::default().minimize(&f, &[0.5, 0.5], &[(0.0, 1.0), (0.0, 1.0)]);
        assert_eq!(m.x[0], 0.0);
        assert!((m.x[1] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn infinite_regions_are_avoided() {
        let f = |x: &[f64]| {
            if x[0] < 0.2 {
                f64::NAN
            } else {
                (x[0] - 0.3).powi(2)
            }
        };
        let m = NelderMead::default().minimize(&f, &[0.9], &[(0.0, 1.0)]);
        assert!((m.x[0] - 0.3).abs() < 1e-4);
    }
}

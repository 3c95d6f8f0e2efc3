//! Gamma–Poisson (negative binomial) empirical Bayes.

use log::warn;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::model::{ln_factorial, CountHistogram};

/// Shape used when the data show no overdispersion and the fit runs off to `a → ∞`.
pub const BOUNDARY_SHAPE: f64 = 1e8;

/// Gamma prior in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaHyper {
    pub shape: f64,
    pub rate: f64,
}

impl GammaHyper {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite() {
            Ok(GammaHyper { shape, rate })
        } else {
            Err(Error::Config(format!("gamma hyperparameters must be positive, got ({shape}, {rate})")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct PebFit {
    pub hyper: GammaHyper,
    pub log_likelihood: f64,
    /// The optimum lies at the Poisson boundary; `hyper` is a finite stand-in.
    pub boundary: bool,
    pub iterations: usize,
}

/// Posterior mean `(y + a) / (1 + b)`.
pub fn peb_gamma_estimate(hyper: &GammaHyper, y: u64) -> f64 {
    (y as f64 + hyper.shape) / (1.0 + hyper.rate)
}

/// `Σ_y n_y log NB(y; a, p = b/(1+b))`.
pub fn nb_log_likelihood(h: &CountHistogram, shape: f64, rate: f64) -> f64 {
    let (lb, lb1, lg) = (rate.ln(), rate.ln_1p(), ln_gamma(shape));
    h.iter()
        .map(|(y, n)| {
            let yf = y as f64;
            n as f64 * (ln_gamma(yf + shape) - lg - ln_factorial(y) + shape * lb - (shape + yf) * lb1)
        })
        .sum()
}

/// Gradient of [`nb_log_likelihood`] in `(ln a, ln b)`.
pub fn nb_gradient_log_params(h: &CountHistogram, shape: f64, rate: f64) -> [f64; 2] {
    let (dg, lp) = (digamma(shape), rate.ln() - rate.ln_1p());
    let mut ga = 0.0;
    let mut gb = 0.0;
    for (y, n) in h.iter() {
        let (yf, n) = (y as f64, n as f64);
        ga += n * (digamma(yf + shape) - dg + lp);
        gb += n * (shape / rate - (shape + yf) / (1.0 + rate));
    }
    [shape * ga, rate * gb]
}

/// Maximum marginal likelihood for the Gamma prior.
///
/// BFGS in `(ln a, ln b)` with backtracking, started from the method of moments.
/// Data that are not overdispersed have their supremum at the Poisson limit; those
/// return a flagged boundary fit with shape [`BOUNDARY_SHAPE`] and matching mean.
pub fn peb_gamma_fit(h: &CountHistogram) -> Result<PebFit> {
    if h.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mean = h.mean();
    if mean <= 0.0 {
        return Err(Error::Config("all counts are zero; the Gamma prior is not identifiable".into()));
    }
    let var = h.variance();
    if h.distinct() < 2 || var <= mean {
        return Ok(boundary_fit(h, mean, 0));
    }
    let b0 = mean / (var - mean);
    let mut x = [(mean * b0).ln(), b0.ln()];
    let objective = |x: &[f64; 2]| -nb_log_likelihood(h, x[0].exp(), x[1].exp());
    let gradient = |x: &[f64; 2]| {
        let g = nb_gradient_log_params(h, x[0].exp(), x[1].exp());
        [-g[0], -g[1]]
    };
    let scale = h.total() as f64;
    let mut f = objective(&x);
    let mut g = gradient(&x);
    let mut hinv = [[1.0 / scale, 0.0], [0.0, 1.0 / scale]];
    let mut trace = Vec::new();
    let max_shape = BOUNDARY_SHAPE.ln();
    let mut stalled = false;
    for iter in 1..=200 {
        let gnorm = g[0].hypot(g[1]);
        trace.push((x[0].exp(), x[1].exp(), -f, gnorm));
        if gnorm <= 1e-7 * scale || stalled {
            return Ok(PebFit {
                hyper: GammaHyper::new(x[0].exp(), x[1].exp())?,
                log_likelihood: -f,
                boundary: false,
                iterations: iter - 1,
            });
        }
        if x[0] >= max_shape {
            warn!("gamma shape diverging; treating the data as Poisson");
            return Ok(boundary_fit(h, mean, iter));
        }
        let mut dir = [
            -(hinv[0][0] * g[0] + hinv[0][1] * g[1]),
            -(hinv[1][0] * g[0] + hinv[1][1] * g[1]),
        ];
        let mut slope = dir[0] * g[0] + dir[1] * g[1];
        if !(slope < 0.0) {
            // curvature information went bad; fall back to steepest descent
            hinv = [[1.0 / scale, 0.0], [0.0, 1.0 / scale]];
            dir = [-g[0] / scale, -g[1] / scale];
            slope = dir[0] * g[0] + dir[1] * g[1];
        }
        // keep each step inside a trust box so the log-parameters cannot explode
        let longest = dir[0].abs().max(dir[1].abs());
        let mut t = if longest > 2.0 { 2.0 / longest } else { 1.0 };
        let (xn, fnew) = loop {
            let xn = [x[0] + t * dir[0], x[1] + t * dir[1]];
            let fnew = objective(&xn);
            if fnew.is_finite() && fnew <= f + 1e-4 * t * slope {
                break (xn, fnew);
            }
            t *= 0.5;
            if t < 1e-16 {
                return Err(Error::NonConvergence(format!(
                    "line search failed at iteration {iter}; last iterates (a, b, loglik, |grad|): {:?}",
                    tail(&trace)
                )));
            }
        };
        // no representable progress left: the gradient is at its rounding floor
        stalled = (f - fnew).abs() <= 1e-15 * f.abs() && (xn[0] - x[0]).abs().max((xn[1] - x[1]).abs()) < 1e-12;
        let gn = gradient(&xn);
        let s = [xn[0] - x[0], xn[1] - x[1]];
        let yv = [gn[0] - g[0], gn[1] - g[1]];
        let sy = s[0] * yv[0] + s[1] * yv[1];
        if sy > 1e-12 * (s[0].hypot(s[1]) * yv[0].hypot(yv[1])) {
            let hy = [hinv[0][0] * yv[0] + hinv[0][1] * yv[1], hinv[1][0] * yv[0] + hinv[1][1] * yv[1]];
            let yhy = yv[0] * hy[0] + yv[1] * hy[1];
            let rho = 1.0 / sy;
            for i in 0..2 {
                for j in 0..2 {
                    hinv[i][j] += (1.0 + yhy * rho) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
        x = xn;
        f = fnew;
        g = gn;
    }
    Err(Error::NonConvergence(format!(
        "BFGS did not converge in 200 iterations; last iterates (a, b, loglik, |grad|): {:?}",
        tail(&trace)
    )))
}

fn tail<T>(trace: &[T]) -> &[T] {
    &trace[trace.len().saturating_sub(5)..]
}

fn boundary_fit(h: &CountHistogram, mean: f64, iterations: usize) -> PebFit {
    warn!("counts are not overdispersed (variance <= mean); using the Poisson-limit gamma prior");
    let shape = BOUNDARY_SHAPE;
    let rate = shape / mean;
    PebFit {
        hyper: GammaHyper { shape, rate },
        log_likelihood: nb_log_likelihood(h, shape, rate),
        boundary: true,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{poisson_pmf, sample_poisson, PriorSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gamma_poisson(n: usize, shape: f64, rate: f64, seed: u64) -> CountHistogram {
        let prior = PriorSpec::gamma(shape, rate).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CountHistogram::from_counts((0..n).map(|_| {
            let t = prior.sample(&mut rng);
            sample_poisson(&mut rng, t)
        }))
    }

    #[test]
    fn estimate_arithmetic() {
        assert_eq!(peb_gamma_estimate(&GammaHyper::new(1.0, 1.0).unwrap(), 0), 0.5);
        let flat = GammaHyper::new(2.5, 1e-12).unwrap();
        assert_relative_eq!(peb_gamma_estimate(&flat, 7), 9.5, max_relative = 1e-10);
        assert!(GammaHyper::new(0.0, 1.0).is_err());
    }

    #[test]
    fn recovers_simulated_hyperparameters() {
        let h = gamma_poisson(100_000, 2.0, 1.0, 17);
        let fit = peb_gamma_fit(&h).unwrap();
        assert!(!fit.boundary);
        assert!((fit.hyper.shape - 2.0).abs() < 0.2, "{:?}", fit.hyper);
        assert!((fit.hyper.rate - 1.0).abs() < 0.1, "{:?}", fit.hyper);
        assert!(fit.log_likelihood >= nb_log_likelihood(&h, 2.0, 1.0));
        // at the optimum the rate profile condition a = b ȳ holds
        assert_relative_eq!(fit.hyper.shape, fit.hyper.rate * h.mean(), max_relative = 1e-6);
    }

    #[test]
    fn plug_in_matches_oracle_posterior_means() {
        let h = gamma_poisson(100_000, 2.0, 1.0, 23);
        let fit = peb_gamma_fit(&h).unwrap();
        let oracle = GammaHyper::new(2.0, 1.0).unwrap();
        for y in 0..10 {
            let (a, b) = (peb_gamma_estimate(&fit.hyper, y), peb_gamma_estimate(&oracle, y));
            assert!((a - b).abs() < 0.05 * b.max(1.0), "y={y}: {a} vs {b}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = gamma_poisson(500, 1.5, 0.7, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let (u, v) = (rng.random_range(-1.0..2.0), rng.random_range(-1.5..1.5));
            let f = |u: f64, v: f64| nb_log_likelihood(&h, u.exp(), v.exp());
            let eps = 1e-5;
            let fd = [
                (f(u + eps, v) - f(u - eps, v)) / (2.0 * eps),
                (f(u, v + eps) - f(u, v - eps)) / (2.0 * eps),
            ];
            let g = nb_gradient_log_params(&h, u.exp(), v.exp());
            for k in 0..2 {
                assert!((g[k] - fd[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "{g:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn poisson_data_hit_the_boundary() {
        // exact Poisson(3) frequencies, rounded: variance below the mean
        let h = CountHistogram::from_pairs((0..20u64).map(|y| (y, (1e5 * poisson_pmf(y, 3.0)).floor() as u64)));
        assert!(h.variance() <= h.mean());
        let fit = peb_gamma_fit(&h).unwrap();
        assert!(fit.boundary);
        assert!(fit.hyper.shape.is_finite() && fit.hyper.rate.is_finite());
        assert_relative_eq!(fit.hyper.shape / fit.hyper.rate, h.mean(), max_relative = 1e-12);

        // sampled Poisson data may be slightly overdispersed; then the optimum is
        // interior but the shape is large, and the estimates shrink almost fully
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = CountHistogram::from_counts((0..5000).map(|_| sample_poisson(&mut rng, 3.0)));
        let fit = peb_gamma_fit(&h).unwrap();
        assert!(fit.boundary || fit.hyper.shape > 20.0, "{:?}", fit.hyper);
        assert!(fit.hyper.shape.is_finite());

        let same = CountHistogram::from_pairs([(4, 10)]);
        assert!(peb_gamma_fit(&same).unwrap().boundary);
        assert!(peb_gamma_fit(&CountHistogram::from_pairs([(0, 10)])).is_err());
    }
}

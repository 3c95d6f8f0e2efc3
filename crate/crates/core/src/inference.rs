//! Point estimates, their asymptotic variance and credible intervals.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_log_pmf, fill_log_terms, posterior_into, MixingWeights, LOG_PMF_FLOOR};
use crate::newton::{LearningRate, NewtonState};

/// Largest grid for which [`vmatrix`] will build the dense matrix.
pub const VMATRIX_MAX_D: usize = 200;

/// Terms summed directly before the Euler–Maclaurin remainder takes over.
const DIRECT_TERMS: u64 = 1000;

/// `θ̂_g(y) = (y+1) p_g(y+1) / p_g(y)`, kept inside `[ϑ_1, ϑ_d]`.
pub fn qb_estimate(g: &MixingWeights, y: u64) -> Result<f64> {
    let grid = g.grid();
    let mut terms = Vec::with_capacity(g.len());
    let lp0 = check_log_pmf(y, fill_log_terms(&grid.log_kernel_row(y), g.weights(), &mut terms))?;
    let lp1 = check_log_pmf(y + 1, fill_log_terms(&grid.log_kernel_row(y + 1), g.weights(), &mut terms))?;
    let theta = (y + 1) as f64 * (lp1 - lp0).exp();
    Ok(theta.clamp(grid.first(), grid.last()))
}

/// `Σ_{k≥n} (α + k)^{-2γ}`.
///
/// The first thousand terms are added directly (smallest first), the remainder by
/// Euler–Maclaurin through the fifth derivative. Fails for `γ ≤ 1/2`, where the
/// series diverges.
pub fn power_tail_sum(alpha: f64, gamma: f64, n: u64) -> Result<f64> {
    if !(gamma > 0.5) {
        return Err(Error::DivergentTail { gamma });
    }
    if !(alpha > -(n as f64)) {
        return Err(Error::Config(format!("α + n must be positive (α = {alpha}, n = {n})")));
    }
    let s = 2.0 * gamma;
    let cut = n + DIRECT_TERMS;
    let x = alpha + cut as f64;
    let f = x.powf(-s);
    let d1 = -s * f / x;
    let d3 = -s * (s + 1.0) * (s + 2.0) * f / x.powi(3);
    let d5 = -s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * f / x.powi(5);
    let mut total = x.powf(1.0 - s) / (s - 1.0) + f / 2.0 - d1 / 12.0 + d3 / 720.0 - d5 / 30240.0;
    for k in (n..cut).rev() {
        total += (alpha + k as f64).powf(-s);
    }
    Ok(total)
}

/// `b_n = (Σ_{k≥n} α_k²)^{-1}` for the power schedule.
pub fn tail_sum_bn(rate: &LearningRate, n: u64) -> Result<f64> {
    Ok(1.0 / power_tail_sum(rate.alpha(), rate.gamma(), n)?)
}

/// Large-`n` approximation `(2γ-1)(α+n)^{2γ-1}` of [`tail_sum_bn`].
pub fn bn_closed_form(rate: &LearningRate, n: u64) -> f64 {
    let e = 2.0 * rate.gamma() - 1.0;
    e * (rate.alpha() + n as f64).powf(e)
}

/// Asymptotic variance of the estimate at one `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CltVariance {
    pub theta_hat: f64,
    pub variance: f64,
    /// `1 - Σ_{z ≤ y_max} p_g(z)`, the mass left out of the expectation.
    pub tail_mass: f64,
}

/// `c_j = k(y+1|ϑ_j)/p_g(y+1) - k(y|ϑ_j)/p_g(y)`, plus `θ̂`.
fn bracket(g: &MixingWeights, y: u64) -> Result<(Vec<f64>, f64)> {
    let grid = g.grid();
    let row0 = grid.log_kernel_row(y);
    let row1 = grid.log_kernel_row(y + 1);
    let mut terms = Vec::with_capacity(g.len());
    let lp0 = check_log_pmf(y, fill_log_terms(&row0, g.weights(), &mut terms))?;
    let lp1 = check_log_pmf(y + 1, fill_log_terms(&row1, g.weights(), &mut terms))?;
    let c = row0
        .iter()
        .zip(&row1)
        .map(|(&l0, &l1)| (l1 - lp1).exp() - (l0 - lp0).exp())
        .collect();
    let theta = ((y + 1) as f64 * (lp1 - lp0).exp()).clamp(grid.first(), grid.last());
    Ok((c, theta))
}

/// Visits `(z, p_g(z), posterior at z)` for `z ≤ y_max`, skipping counts whose
/// probability is below the representable range. Returns the mass visited.
fn for_each_posterior(g: &MixingWeights, y_max: u64, mut f: impl FnMut(u64, f64, &[f64])) -> f64 {
    let grid = g.grid();
    let mut post = Vec::with_capacity(g.len());
    let mut mass = 0.0;
    for z in 0..=y_max {
        let row = grid.log_kernel_row(z);
        match posterior_into(z, &row, g.weights(), &mut post) {
            Ok(lp) if lp >= LOG_PMF_FLOOR => {
                let p = lp.exp();
                mass += p;
                f(z, p, &post);
            }
            _ => {}
        }
    }
    mass
}

/// `W_g(y) = θ̂² E_{Z~p_g}[(Σ_j g(ϑ_j|Z) c_j)²]` with `Z` truncated at `y_max`.
pub fn clt_variance(g: &MixingWeights, y: u64, y_max: u64) -> Result<CltVariance> {
    let (c, theta_hat) = bracket(g, y)?;
    let mut acc = 0.0;
    let mass = for_each_posterior(g, y_max, |_, p, post| {
        let inner: f64 = post.iter().zip(&c).map(|(q, cj)| q * cj).sum();
        acc += p * inner * inner;
    });
    Ok(CltVariance {
        theta_hat,
        variance: theta_hat * theta_hat * acc,
        tail_mass: (1.0 - mass).max(0.0),
    })
}

/// `V_{ij} = Σ_z g(ϑ_i|z) g(ϑ_j|z) p_g(z) - g(ϑ_i) g(ϑ_j)` for `i, j < d`.
pub fn vmatrix(g: &MixingWeights, y_max: u64) -> Result<DMatrix<f64>> {
    let d = g.len();
    if d > VMATRIX_MAX_D {
        return Err(Error::TooLarge(format!(
            "V matrix needs d <= {VMATRIX_MAX_D}, grid has {d} points"
        )));
    }
    let m = d.saturating_sub(1);
    let mut v = DMatrix::<f64>::zeros(m, m);
    for_each_posterior(g, y_max, |_, p, post| {
        let q = DVector::from_column_slice(&post[..m]);
        v.ger(p, &q, &q, 1.0);
    });
    let w = DVector::from_column_slice(&g.weights()[..m]);
    v.ger(-1.0, &w, &w, 1.0);
    // enforce exact symmetry against rounding in the rank-one updates
    let vt = v.transpose();
    Ok((v + vt) * 0.5)
}

/// Gradient of `g ↦ θ̂_g(y)` in the first `d-1` coordinates (the last one is implied).
pub fn estimate_gradient(g: &MixingWeights, y: u64) -> Result<DVector<f64>> {
    let (c, theta) = bracket(g, y)?;
    let d = c.len();
    Ok(DVector::from_iterator(d - 1, c[..d - 1].iter().map(|ci| theta * (ci - c[d - 1]))))
}

/// `∇h V ∇hᵀ`, an independent route to [`clt_variance`].
pub fn sandwich_variance(g: &MixingWeights, y: u64, y_max: u64) -> Result<f64> {
    if g.len() == 1 {
        return Ok(0.0);
    }
    let grad = estimate_gradient(g, y)?;
    let v = vmatrix(g, y_max)?;
    Ok((grad.transpose() * v * &grad)[(0, 0)])
}

/// Standard normal quantile: Acklam's rational approximation followed by one
/// Halley step against `erfc`.
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549671010269838e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        let r = (-2.0 * q.ln()).sqrt();
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    };
    let x = if p < 0.02425 {
        tail(p)
    } else if p > 1.0 - 0.02425 {
        -tail(1.0 - p)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// Everything behind one credible interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateReport {
    pub y: u64,
    pub theta_hat: f64,
    pub variance: f64,
    pub b_n: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    #[serde(skip)]
    pub n: u64,
    #[serde(skip)]
    pub tail_mass: f64,
}

/// `θ̂_{g_n}(y) ± z_{(1+level)/2} √(W_{g_n}(y) / b_n)`.
pub fn credible_interval(state: &NewtonState, y: u64, level: f64) -> Result<EstimateReport> {
    credible_interval_with(state, y, level, state.grid().default_y_max().max(y + 1))
}

pub fn credible_interval_with(state: &NewtonState, y: u64, level: f64, y_max: u64) -> Result<EstimateReport> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::Config(format!("credible level must lie in [0, 1), got {level}")));
    }
    if state.n() == 0 {
        return Err(Error::Config("credible intervals need at least one observation".into()));
    }
    let rate = state.schedule().power().ok_or_else(|| {
        Error::Config("credible intervals need the power learning-rate schedule".into())
    })?;
    let b_n = tail_sum_bn(rate, state.n())?;
    let clt = clt_variance(&state.snapshot(), y, y_max)?;
    let half = normal_quantile(0.5 * (1.0 + level)) * (clt.variance / b_n).sqrt();
    Ok(EstimateReport {
        y,
        theta_hat: clt.theta_hat,
        variance: clt.variance,
        b_n,
        ci_low: clt.theta_hat - half,
        ci_high: clt.theta_hat + half,
        level,
        n: state.n(),
        tail_mass: clt.tail_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{posterior_mean, Grid};
    use crate::prior::poisson_pmf;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn weights(points: &[f64], w: &[f64]) -> MixingWeights {
        MixingWeights::from_unnormalized(Arc::new(Grid::new(points.to_vec()).unwrap()), w.to_vec()).unwrap()
    }

    fn random_g(rng: &mut ChaCha8Rng, d: usize, spacing: f64) -> MixingWeights {
        let pts: Vec<f64> = (1..=d).map(|i| i as f64 * spacing).collect();
        let w: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 0.05).collect();
        weights(&pts, &w)
    }

    /// Asymptotic trigamma with upward recurrence.
    fn trigamma(mut x: f64) -> f64 {
        let mut acc = 0.0;
        while x < 30.0 {
            acc += 1.0 / (x * x);
            x += 1.0;
        }
        let x2 = x * x;
        acc + 1.0 / x + 1.0 / (2.0 * x2) + 1.0 / (6.0 * x2 * x) - 1.0 / (30.0 * x2 * x2 * x)
            + 1.0 / (42.0 * x2 * x2 * x2 * x)
            - 1.0 / (30.0 * x2 * x2 * x2 * x2 * x)
    }

    #[test]
    fn point_mass_estimate_and_zero_variance() {
        let g = MixingWeights::point_mass(Arc::new(Grid::new(vec![1.0, 2.5, 4.0]).unwrap()), 1).unwrap();
        for y in [0, 3, 9] {
            assert_relative_eq!(qb_estimate(&g, y).unwrap(), 2.5, max_relative = 1e-14);
            assert_eq!(clt_variance(&g, y, 60).unwrap().variance, 0.0);
        }
    }

    #[test]
    fn estimate_equals_posterior_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let g = random_g(&mut rng, 30, 0.7);
            for y in 0..=50 {
                let a = qb_estimate(&g, y).unwrap();
                let b = posterior_mean(&g, y).unwrap();
                assert!((a - b).abs() <= 1e-10 * a, "y={y}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn tail_sum_matches_trigamma_for_unit_exponent() {
        let rate = LearningRate::new(1.0, 1.0).unwrap();
        for n in [1u64, 2, 10, 100, 5000, 1_000_000] {
            let tail = power_tail_sum(1.0, 1.0, n).unwrap();
            assert_relative_eq!(tail, trigamma(n as f64 + 1.0), max_relative = 1e-13);
            let b = tail_sum_bn(&rate, n).unwrap();
            assert!((n as f64) < b && b < n as f64 + 1.0, "n={n}: b_n={b}");
            assert_relative_eq!(b * tail, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn tail_sum_agrees_with_brute_force_and_closed_form() {
        // brute force to 10⁷ terms plus the leading integral remainder
        let brute = |alpha: f64, gamma: f64, n: u64| {
            let top = 10_000_000u64;
            let s = 2.0 * gamma;
            let mut acc = (alpha + top as f64 - 0.5).powf(1.0 - s) / (s - 1.0);
            for k in (n..top).rev() {
                acc += (alpha + k as f64).powf(-s);
            }
            acc
        };
        for (alpha, gamma, n) in [(1.0, 0.75, 1000u64), (1.0, 0.99, 1), (3.0, 0.6, 50)] {
            assert_relative_eq!(power_tail_sum(alpha, gamma, n).unwrap(), brute(alpha, gamma, n), max_relative = 1e-9);
        }
        let rate = LearningRate::new(1.0, 0.75).unwrap();
        for n in [100u64, 1000, 100_000] {
            let ratio = tail_sum_bn(&rate, n).unwrap() / bn_closed_form(&rate, n);
            assert!((ratio - 1.0).abs() < 0.02, "n={n}: ratio {ratio}");
        }
    }

    #[test]
    fn bn_is_increasing_and_divergence_is_rejected() {
        let rate = LearningRate::default();
        let b: Vec<f64> = (1..200).map(|n| tail_sum_bn(&rate, n).unwrap()).collect();
        assert!(b[0] > 0.0 && b[0].is_finite());
        assert!(b.windows(2).all(|w| w[1] > w[0]));
        assert!(matches!(power_tail_sum(1.0, 0.5, 10), Err(Error::DivergentTail { .. })));
    }

    #[test]
    fn two_atom_variance_matches_double_sum() {
        let g = weights(&[1.0, 3.0], &[0.5, 0.5]);
        let (t, w) = ([1.0, 3.0], [0.5, 0.5]);
        let p = |y: u64| w[0] * poisson_pmf(y, t[0]) + w[1] * poisson_pmf(y, t[1]);
        let y = 0;
        let theta = (y + 1) as f64 * p(y + 1) / p(y);
        let mut acc = 0.0;
        for z in 0..=60u64 {
            let mut inner = 0.0;
            for j in 0..2 {
                let post = poisson_pmf(z, t[j]) * w[j] / p(z);
                inner += post * (poisson_pmf(y + 1, t[j]) / p(y + 1) - poisson_pmf(y, t[j]) / p(y));
            }
            acc += p(z) * inner * inner;
        }
        let got = clt_variance(&g, y, 60).unwrap();
        assert!((got.variance - theta * theta * acc).abs() < 1e-9);
        assert!(got.tail_mass < 1e-12);
    }

    #[test]
    fn variance_equals_gradient_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [2usize, 5, 20, 50] {
            let g = random_g(&mut rng, d, 0.4);
            let y_max = g.grid().default_y_max();
            for y in [0u64, 1, 4, 9] {
                let w = clt_variance(&g, y, y_max).unwrap().variance;
                let s = sandwich_variance(&g, y, y_max).unwrap();
                assert!((w - s).abs() < 1e-8 * w.max(1.0), "d={d} y={y}: {w} vs {s}");
                assert!(w >= 0.0);
            }
        }
    }

    #[test]
    fn vmatrix_properties() {
        let g = weights(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]);
        let v = vmatrix(&g, 80).unwrap();
        assert_eq!(v.shape(), (2, 2));
        assert!((v.clone() - v.transpose()).abs().max() < 1e-14);
        let eig = v.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e > 0.0), "{eig}");

        let mut norms = Vec::new();
        for eps in [1e-2, 1e-4, 1e-6] {
            let g = weights(&[1.0, 2.0, 3.0], &[1.0 - eps, eps / 2.0, eps / 2.0]);
            norms.push(vmatrix(&g, 80).unwrap().norm());
        }
        assert!(norms[0] > norms[1] && norms[1] > norms[2] && norms[2] < 1e-5);

        let big = MixingWeights::uniform(Arc::new(Grid::equispaced(0.1, 30.0, 201).unwrap()));
        assert!(matches!(vmatrix(&big, 10), Err(Error::TooLarge(_))));
    }

    #[test]
    fn normal_quantile_accuracy() {
        let cdf = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        assert_eq!(normal_quantile(0.5), 0.0);
        assert_relative_eq!(normal_quantile(0.95), 1.6448536269514722, max_relative = 1e-12);
        assert_relative_eq!(normal_quantile(0.975), 1.959963984540054, max_relative = 1e-12);
        for p in [1e-12, 1e-6, 0.01, 0.2, 0.7, 0.99, 1.0 - 1e-9] {
            assert!((cdf(normal_quantile(p)) - p).abs() < 1e-9 * p.min(1.0 - p).max(1e-12) + 1e-15);
        }
    }

    #[test]
    fn credible_interval_shape() {
        let grid = Arc::new(Grid::new(vec![0.5, 1.5, 3.0, 5.0, 8.0]).unwrap());
        let mut state = NewtonState::new(Arc::clone(&grid), None, LearningRate::default()).unwrap();
        assert!(credible_interval(&state, 1, 0.9).is_err());
        state.update_stream([0, 1, 3, 2, 7, 0, 1, 4, 9, 2]).unwrap();
        let r = credible_interval(&state, 2, 0.9).unwrap();
        assert!(r.ci_low <= r.theta_hat && r.theta_hat <= r.ci_high);
        let z = normal_quantile(0.95);
        assert_relative_eq!(r.ci_high - r.theta_hat, z * (r.variance / r.b_n).sqrt(), max_relative = 1e-12);
        let zero = credible_interval(&state, 2, 0.0).unwrap();
        assert_eq!((zero.ci_low, zero.ci_high), (zero.theta_hat, zero.theta_hat));
        assert!(credible_interval(&state, 2, 1.0).is_err());

        let pm = MixingWeights::point_mass(Arc::clone(&grid), 2).unwrap();
        let mut s = NewtonState::new(grid, Some(pm), LearningRate::default()).unwrap();
        s.update(5).unwrap();
        let r = credible_interval(&s, 5, 0.95).unwrap();
        assert_eq!(r.variance, 0.0);
        assert_eq!((r.ci_low, r.ci_high), (r.theta_hat, r.theta_hat));
        assert_relative_eq!(r.theta_hat, 3.0, max_relative = 1e-14);

        let mut out = csv::Writer::from_writer(Vec::new());
        out.serialize(r).unwrap();
        let text = String::from_utf8(out.into_inner().unwrap()).unwrap();
        assert!(text.starts_with("y,theta_hat,variance,b_n,ci_low,ci_high,level\n5,"));
    }

    proptest! {
        #[test]
        fn variance_is_nonnegative(w in prop::collection::vec(0.01f64..1.0, 2..8), y in 0u64..15) {
            let pts: Vec<f64> = (1..=w.len()).map(|i| i as f64).collect();
            let g = weights(&pts, &w);
            prop_assert!(clt_variance(&g, y, 60).unwrap().variance >= 0.0);
        }
    }
}

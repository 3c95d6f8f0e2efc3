//! Poisson kernel, grid-supported mixing distributions and the mixture arithmetic
//! shared by every other module.
//!
//! All kernel evaluations happen in log space. Grids reach means in the tens of
//! thousands, where `e^{-θ} θ^y` is not representable as an `f64`.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// `ln(f64::MIN_POSITIVE)`: a marginal probability below this is treated as zero.
pub const LOG_PMF_FLOOR: f64 = -708.396_418_532_264_1;

/// Tolerance on `Σ g = 1` when accepting user-supplied weights.
const SIMPLEX_INPUT_TOL: f64 = 1e-9;

#[inline]
pub fn ln_factorial(y: u64) -> f64 {
    // ln Γ(1) and ln Γ(2) come back a few ulps off zero
    if y < 2 {
        0.0
    } else {
        ln_gamma(y as f64 + 1.0)
    }
}

/// `ln k(y | θ) = -θ + y ln θ - ln y!`.
pub fn log_poisson_kernel(y: u64, theta: f64) -> Result<f64> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Domain(format!(
            "Poisson mean must be finite and > 0, got {theta}"
        )));
    }
    Ok(-theta + y as f64 * theta.ln() - ln_factorial(y))
}

/// Numerically stable `ln Σ exp(x_i)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Ordered support `ϑ_1 < … < ϑ_d` of a mixing distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    log_points: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Grid("grid must contain at least one point".into()));
        }
        if let Some(bad) = points.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::Grid(format!("grid points must be finite and > 0, got {bad}")));
        }
        if let Some(w) = points.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(Error::Grid(format!(
                "grid points must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        let log_points = points.iter().map(|p| p.ln()).collect();
        Ok(Grid { points, log_points })
    }

    /// `d` equally spaced points from `lo` to `hi` inclusive.
    pub fn equispaced(lo: f64, hi: f64, d: usize) -> Result<Self> {
        match d {
            0 => Err(Error::Grid("grid size must be positive".into())),
            1 if lo == hi => Grid::new(vec![lo]),
            1 => Err(Error::Grid("a one-point grid needs lo == hi".into())),
            _ => {
                let step = (hi - lo) / (d - 1) as f64;
                let mut points: Vec<f64> = (0..d).map(|i| lo + i as f64 * step).collect();
                points[d - 1] = hi;
                Grid::new(points)
            }
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn log_points(&self) -> &[f64] {
        &self.log_points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Common spacing if the grid is equispaced (relative tolerance `1e-9`).
    pub fn spacing(&self) -> Option<f64> {
        if self.len() < 2 {
            return None;
        }
        let step = (self.last() - self.first()) / (self.len() - 1) as f64;
        let tol = 1e-9 * step.max(f64::MIN_POSITIVE);
        self.points
            .windows(2)
            .all(|w| ((w[1] - w[0]) - step).abs() <= tol.max(1e-12 * w[1]))
            .then_some(step)
    }

    /// Default series truncation `⌈ϑ_d + 20 √ϑ_d⌉`; the Poisson tail beyond it is negligible.
    pub fn default_y_max(&self) -> u64 {
        let top = self.last();
        (top + 20.0 * top.sqrt()).ceil() as u64
    }

    /// Log-kernel column `ln k(y | ϑ_j)` for every grid point.
    pub fn log_kernel_row(&self, y: u64) -> Vec<f64> {
        let yf = y as f64;
        let lf = ln_factorial(y);
        self.points
            .iter()
            .zip(&self.log_points)
            .map(|(&t, &lt)| -t + yf * lt - lf)
            .collect()
    }
}

/// Probability mass function on a [`Grid`].
///
/// The weight vector is shared; clones are cheap snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingWeights {
    grid: Arc<Grid>,
    weights: Arc<[f64]>,
}

impl MixingWeights {
    /// Validates and renormalizes; rejects vectors whose sum is not 1 (tolerance `1e-9`).
    pub fn new(grid: Arc<Grid>, weights: Vec<f64>) -> Result<Self> {
        check_len(&grid, &weights)?;
        check_nonnegative(&weights)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_INPUT_TOL {
            return Err(Error::Weights(format!("weights sum to {total}, not 1")));
        }
        Ok(Self::normalized(grid, weights))
    }

    /// Accepts any nonnegative vector with positive mass and rescales it.
    pub fn from_unnormalized(grid: Arc<Grid>, weights: Vec<f64>) -> Result<Self> {
        check_len(&grid, &weights)?;
        check_nonnegative(&weights)?;
        if !(weights.iter().sum::<f64>() > 0.0) {
            return Err(Error::Weights("weights have no mass".into()));
        }
        Ok(Self::normalized(grid, weights))
    }

    pub fn uniform(grid: Arc<Grid>) -> Self {
        let d = grid.len();
        Self::normalized(grid, vec![1.0 / d as f64; d])
    }

    pub fn point_mass(grid: Arc<Grid>, index: usize) -> Result<Self> {
        if index >= grid.len() {
            return Err(Error::Weights(format!(
                "atom index {index} outside grid of size {}",
                grid.len()
            )));
        }
        let mut w = vec![0.0; grid.len()];
        w[index] = 1.0;
        Ok(Self::normalized(grid, w))
    }

    pub(crate) fn normalized(grid: Arc<Grid>, mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        MixingWeights {
            grid,
            weights: weights.into(),
        }
    }

    pub(crate) fn from_shared(grid: Arc<Grid>, weights: Arc<[f64]>) -> Self {
        MixingWeights { grid, weights }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn shared_weights(&self) -> &Arc<[f64]> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.grid.points().iter().zip(self.weights()).map(|(t, w)| t * w).sum()
    }

    /// Total-variation distance to another pmf on the same grid.
    pub fn total_variation(&self, other: &MixingWeights) -> Result<f64> {
        same_grid(self, other)?;
        Ok(0.5
            * self
                .weights()
                .iter()
                .zip(other.weights())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }
}

fn check_len(grid: &Grid, weights: &[f64]) -> Result<()> {
    if grid.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: grid.len(),
            right: weights.len(),
        });
    }
    Ok(())
}

fn check_nonnegative(weights: &[f64]) -> Result<()> {
    match weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        Some(bad) => Err(Error::Weights(format!(
            "weights must be finite and >= 0, got {bad}"
        ))),
        None => Ok(()),
    }
}

pub(crate) fn same_grid(a: &MixingWeights, b: &MixingWeights) -> Result<()> {
    if Arc::ptr_eq(a.grid(), b.grid()) || a.grid() == b.grid() {
        Ok(())
    } else {
        Err(Error::Grid("mixing distributions live on different grids".into()))
    }
}

/// Multiset of observed counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountHistogram {
    entries: BTreeMap<u64, u64>,
    total: u64,
}

impl CountHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts<I: IntoIterator<Item = u64>>(ys: I) -> Self {
        let mut h = Self::new();
        ys.into_iter().for_each(|y| h.add(y, 1));
        h
    }

    /// Builds from `(y, n_y)` pairs; zero multiplicities are dropped.
    pub fn from_pairs<I: IntoIterator<Item = (u64, u64)>>(pairs: I) -> Self {
        let mut h = Self::new();
        pairs.into_iter().for_each(|(y, n)| h.add(y, n));
        h
    }

    pub fn add(&mut self, y: u64, n: u64) {
        if n > 0 {
            *self.entries.entry(y).or_insert(0) += n;
            self.total += n;
        }
    }

    pub fn count(&self, y: u64) -> u64 {
        self.entries.get(&y).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn distinct(&self) -> usize {
        self.entries.len()
    }

    pub fn max_y(&self) -> Option<u64> {
        self.entries.keys().next_back().copied()
    }

    pub fn min_y(&self) -> Option<u64> {
        self.entries.keys().next().copied()
    }

    /// `(y, n_y)` in ascending `y`.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.entries.iter().map(|(&y, &n)| (y, n))
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    /// Empirical `n^{-1} Σ Y_i^k`.
    pub fn moment(&self, k: i32) -> f64 {
        if self.total == 0 {
            return f64::NAN;
        }
        self.iter().map(|(y, n)| n as f64 * (y as f64).powi(k)).sum::<f64>() / self.total as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.iter()
            .map(|(y, n)| n as f64 * (y as f64 - m).powi(2))
            .sum::<f64>()
            / self.total as f64
    }
}

/// Lazily filled table of `ln k(y | ϑ_j)` rows.
///
/// Rows are materialized on first request and never change afterwards. Reads
/// take a shared lock; only a first request for a new `y` takes the write lock.
#[derive(Debug)]
pub struct KernelMatrixCache {
    grid: Arc<Grid>,
    rows: RwLock<Vec<Option<Arc<[f64]>>>>,
}

impl KernelMatrixCache {
    pub fn new(grid: Arc<Grid>) -> Self {
        KernelMatrixCache {
            grid,
            rows: RwLock::new(Vec::new()),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn row(&self, y: u64) -> Arc<[f64]> {
        let idx = y as usize;
        if let Some(Some(row)) = self.rows.read().expect("kernel cache poisoned").get(idx) {
            return Arc::clone(row);
        }
        let mut rows = self.rows.write().expect("kernel cache poisoned");
        if rows.len() <= idx {
            rows.resize(idx + 1, None);
        }
        Arc::clone(rows[idx].get_or_insert_with(|| self.grid.log_kernel_row(y).into()))
    }

    /// Largest `y` the index has been extended to, if any row exists.
    pub fn max_y(&self) -> Option<u64> {
        let rows = self.rows.read().expect("kernel cache poisoned");
        rows.len().checked_sub(1).map(|m| m as u64)
    }

    pub fn cached_rows(&self) -> usize {
        let rows = self.rows.read().expect("kernel cache poisoned");
        rows.iter().filter(|r| r.is_some()).count()
    }
}

impl Clone for KernelMatrixCache {
    fn clone(&self) -> Self {
        KernelMatrixCache {
            grid: Arc::clone(&self.grid),
            rows: RwLock::new(self.rows.read().expect("kernel cache poisoned").clone()),
        }
    }
}

/// Fills `terms[j] = ln k_j + ln g_j` (−∞ on zero-weight atoms) and returns their
/// log-sum-exp, `ln p_g(y)`.
pub(crate) fn fill_log_terms(log_kernel: &[f64], weights: &[f64], terms: &mut Vec<f64>) -> f64 {
    terms.clear();
    terms.extend(log_kernel.iter().zip(weights).map(|(&lk, &w)| {
        if w > 0.0 {
            lk + w.ln()
        } else {
            f64::NEG_INFINITY
        }
    }));
    log_sum_exp(terms)
}

pub(crate) fn log_mixture_from_row(log_kernel: &[f64], weights: &[f64]) -> f64 {
    let mut terms = Vec::with_capacity(weights.len());
    fill_log_terms(log_kernel, weights, &mut terms)
}

pub(crate) fn check_log_pmf(y: u64, log_p: f64) -> Result<f64> {
    if log_p.is_nan() || log_p < LOG_PMF_FLOOR {
        Err(Error::DegenerateLikelihood { y, n: None, log_p })
    } else {
        Ok(log_p)
    }
}

/// Posterior weights `k_j g_j / p_g(y)` written into `out`, renormalized to sum 1.
/// Returns `ln p_g(y)`.
pub(crate) fn posterior_into(
    y: u64,
    log_kernel: &[f64],
    weights: &[f64],
    out: &mut Vec<f64>,
) -> Result<f64> {
    let log_p = check_log_pmf(y, fill_log_terms(log_kernel, weights, out))?;
    let mut total = 0.0;
    for t in out.iter_mut() {
        *t = (*t - log_p).exp();
        total += *t;
    }
    out.iter_mut().for_each(|t| *t /= total);
    Ok(log_p)
}

/// `ln p_g(y)`.
pub fn log_mixture_pmf(g: &MixingWeights, y: u64) -> f64 {
    log_mixture_from_row(&g.grid().log_kernel_row(y), g.weights())
}

/// `p_g(y) = Σ_j k(y | ϑ_j) g(ϑ_j)`.
pub fn mixture_pmf(g: &MixingWeights, y: u64) -> f64 {
    log_mixture_pmf(g, y).exp()
}

/// One-observation posterior `g(ϑ_j | y)`.
pub fn posterior_weights(g: &MixingWeights, y: u64) -> Result<MixingWeights> {
    let mut out = Vec::with_capacity(g.len());
    posterior_into(y, &g.grid().log_kernel_row(y), g.weights(), &mut out)?;
    Ok(MixingWeights {
        grid: Arc::clone(g.grid()),
        weights: out.into(),
    })
}

/// Bayes estimate `Σ_j ϑ_j g(ϑ_j | y)`.
pub fn posterior_mean(g: &MixingWeights, y: u64) -> Result<f64> {
    let post = posterior_weights(g, y)?;
    let grid = g.grid();
    let mean: f64 = grid.points().iter().zip(post.weights()).map(|(t, w)| t * w).sum();
    Ok(mean.clamp(grid.first(), grid.last()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(points: &[f64]) -> Arc<Grid> {
        Arc::new(Grid::new(points.to_vec()).unwrap())
    }

    fn random_weights(rng: &mut ChaCha8Rng, grid: Arc<Grid>) -> MixingWeights {
        let w: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>() + 1e-3).collect();
        MixingWeights::from_unnormalized(grid, w).unwrap()
    }

    #[test]
    fn kernel_trivial_values() {
        assert_relative_eq!(log_poisson_kernel(0, 1.0).unwrap(), -1.0, epsilon = 1e-15);
        assert_relative_eq!(log_poisson_kernel(1, 1.0).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn kernel_matches_extended_precision() {
        // -3 + 50 ln 3 - ln 50!, evaluated at 40 significant digits
        let reference = -96.547_152_518_367_547_497_774_93;
        assert_relative_eq!(
            log_poisson_kernel(50, 3.0).unwrap(),
            reference,
            max_relative = 1e-14
        );
    }

    #[test]
    fn kernel_rejects_nonpositive_mean() {
        assert!(matches!(log_poisson_kernel(2, 0.0), Err(Error::Domain(_))));
        assert!(matches!(log_poisson_kernel(2, -1.0), Err(Error::Domain(_))));
        assert!(log_poisson_kernel(2, f64::NAN).is_err());
    }

    #[test]
    fn kernel_stays_finite_far_into_the_tail() {
        let v = log_poisson_kernel(0, 11_354.225).unwrap();
        assert_relative_eq!(v, -11_354.225);
        assert!(log_poisson_kernel(20_000, 0.025).unwrap().is_finite());
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(vec![]).is_err());
        assert!(Grid::new(vec![1.0, 1.0]).is_err());
        assert!(Grid::new(vec![2.0, 1.0]).is_err());
        assert!(Grid::new(vec![0.0, 1.0]).is_err());
        let g = Grid::equispaced(0.5, 3.0, 6).unwrap();
        assert_relative_eq!(g.spacing().unwrap(), 0.5);
        assert!(Grid::new(vec![1.0, 2.0, 4.0]).unwrap().spacing().is_none());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let g = grid(&[1.0, 2.0]);
        assert!(MixingWeights::new(Arc::clone(&g), vec![0.5, 0.6]).is_err());
        assert!(MixingWeights::new(Arc::clone(&g), vec![-0.5, 1.5]).is_err());
        assert!(MixingWeights::new(Arc::clone(&g), vec![1.0]).is_err());
        let w = MixingWeights::new(g, vec![0.25, 0.75]).unwrap();
        assert_eq!(w.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn mixture_point_mass_is_kernel() {
        let g = MixingWeights::point_mass(grid(&[1.0, 2.0, 5.0]), 1).unwrap();
        assert_relative_eq!(mixture_pmf(&g, 0), (-2.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn mixture_two_atoms_by_hand() {
        let g = MixingWeights::uniform(grid(&[1.0, 2.0]));
        let expected = 0.319_275_003_822_333_852_691_761_4;
        assert_relative_eq!(mixture_pmf(&g, 1), expected, max_relative = 1e-14);
    }

    #[test]
    fn mixture_matches_direct_sum_on_random_50_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<f64> = (1..=50).map(|i| 0.3 * i as f64).collect();
        let g = random_weights(&mut rng, grid(&pts));
        let direct: f64 = pts
            .iter()
            .zip(g.weights())
            .map(|(&t, &w)| {
                let fact: f64 = (1..=7).map(|i| i as f64).product();
                (-t).exp() * t.powi(7) / fact * w
            })
            .sum();
        assert_relative_eq!(mixture_pmf(&g, 7), direct, max_relative = 1e-10);
    }

    #[test]
    fn mixture_skips_zero_weight_atoms() {
        let g = MixingWeights::new(grid(&[1.0, 50.0]), vec![1.0, 0.0]).unwrap();
        assert_relative_eq!(log_mixture_pmf(&g, 3), log_poisson_kernel(3, 1.0).unwrap());
    }

    #[test]
    fn posterior_of_point_mass_is_itself() {
        let g = MixingWeights::point_mass(grid(&[1.0, 2.0, 3.0]), 2).unwrap();
        for y in [0, 4, 40] {
            assert_eq!(posterior_weights(&g, y).unwrap().weights(), &[0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn posterior_two_atom_bayes_rule() {
        let g = MixingWeights::uniform(grid(&[1.0, 3.0]));
        let post = posterior_weights(&g, 0).unwrap();
        let expected = 0.880_797_077_977_882_444_059_729_1;
        assert_relative_eq!(post.weights()[0], expected, max_relative = 1e-14);
        assert_relative_eq!(post.weights()[1], 1.0 - expected, max_relative = 1e-13);
        assert_relative_eq!(posterior_mean(&g, 0).unwrap(), 1.238_405_844_044_235, max_relative = 1e-12);
    }

    #[test]
    fn posterior_matches_brute_force_on_100_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<f64> = (1..=100).map(|i| 0.1 * i as f64).collect();
        let g = random_weights(&mut rng, grid(&pts));
        let raw: Vec<f64> = pts
            .iter()
            .zip(g.weights())
            .map(|(&t, &w)| (-t).exp() * t.powi(4) / 24.0 * w)
            .collect();
        let total: f64 = raw.iter().sum();
        let post = posterior_weights(&g, 4).unwrap();
        for (a, b) in post.weights().iter().zip(&raw) {
            assert!((a - b / total).abs() <= 1e-12);
        }
    }

    #[test]
    fn posterior_degenerate_likelihood() {
        let g = MixingWeights::uniform(grid(&[0.01, 0.02]));
        let err = posterior_weights(&g, 5_000).unwrap_err();
        assert!(matches!(err, Error::DegenerateLikelihood { y: 5_000, .. }));
    }

    #[test]
    fn pmf_normalizes_with_negligible_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_weights(&mut rng, grid(&[0.5, 2.0, 7.5, 12.0]));
        let y_max = g.grid().default_y_max();
        let total: f64 = (0..=y_max).map(|y| mixture_pmf(&g, y)).sum();
        assert!((1.0 - total).abs() < 1e-8);
    }

    #[test]
    fn kernel_cache_rows_are_stable_and_lazy() {
        let cache = KernelMatrixCache::new(grid(&[0.5, 1.5, 4.0]));
        assert_eq!(cache.max_y(), None);
        let r3 = cache.row(3);
        assert_eq!(cache.max_y(), Some(3));
        assert_eq!(cache.cached_rows(), 1);
        let r10 = cache.row(10);
        assert!(Arc::ptr_eq(&r3, &cache.row(3)));
        assert_eq!(cache.max_y(), Some(10));
        for (j, &t) in [0.5f64, 1.5, 4.0].iter().enumerate() {
            let direct = (-t).exp() * t.powi(10) / 3_628_800.0;
            assert_relative_eq!(r10[j].exp(), direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn kernel_cache_concurrent_readers() {
        let cache = Arc::new(KernelMatrixCache::new(grid(&[1.0, 2.0])));
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let c = Arc::clone(&cache);
                std::thread::spawn(move || (0..50u64).map(|y| c.row((y * (t + 1)) % 37)[0]).sum::<f64>())
            })
            .collect();
        for h in handles {
            assert!(h.join().unwrap().is_finite());
        }
    }

    #[test]
    fn histogram_invariants() {
        let h = CountHistogram::from_counts([0, 0, 1, 3, 3, 3]);
        assert_eq!(h.total(), 6);
        assert_eq!(h.count(3), 3);
        assert_eq!(h.count(2), 0);
        assert_eq!(h.iter().map(|(_, n)| n).sum::<u64>(), h.total());
        let h2 = CountHistogram::from_pairs([(0, 2), (1, 0), (5, 1)]);
        assert_eq!(h2.distinct(), 2);
        assert_eq!(h2.max_y(), Some(5));
        assert_relative_eq!(h2.moment(2), 25.0 / 3.0);
    }

    proptest! {
        #[test]
        fn ratio_identity_and_bounds(seed in 0u64..10_000, d in 1usize..40, y in 0u64..=100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pts: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..60.0)).collect();
            pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            pts.dedup();
            let g = random_weights(&mut rng, grid(&pts));
            let mean = posterior_mean(&g, y).unwrap();
            let ratio = (y + 1) as f64 * (log_mixture_pmf(&g, y + 1) - log_mixture_pmf(&g, y)).exp();
            prop_assert!((mean - ratio).abs() <= 1e-10 * ratio.abs().max(1e-300));
            prop_assert!(mean >= g.grid().first() && mean <= g.grid().last());
            let post = posterior_weights(&g, y).unwrap();
            prop_assert!(post.weights().iter().all(|w| *w >= 0.0));
            prop_assert!((post.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

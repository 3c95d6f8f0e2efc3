//! Vectors of independent Poisson counts with a mixing distribution on a product grid.
//!
//! The support is `Θ_d^k`, indexed lexicographically with the first coordinate most
//! significant. Every operation is `O(D)` in `D = d^k`, so grids stay small.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result, StateError};
use crate::model::{check_log_pmf, fill_log_terms, log_poisson_kernel, Grid, MixingWeights, LOG_PMF_FLOOR};
use crate::newton::{codec, newton_step, LearningRate, Schedule};

/// Default refusal threshold for `D = d^k`.
pub const MAX_PRODUCT_SIZE: usize = 1_000_000;

/// Largest `D` for which [`multi_clt_covariance`] evaluates its lattice expectation.
pub const COVARIANCE_MAX_SIZE: usize = 10_000;

/// Largest `D · (y_max+1)^k` visited by a lattice sum.
const LATTICE_WORK_LIMIT: u128 = 2_000_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ProductGrid {
    base: Arc<Grid>,
    k: usize,
    size: usize,
}

impl ProductGrid {
    pub fn new(base: Arc<Grid>, k: usize) -> Result<Self> {
        Self::with_cap(base, k, MAX_PRODUCT_SIZE)
    }

    pub fn with_cap(base: Arc<Grid>, k: usize, cap: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("dimension k must be at least 1".into()));
        }
        let size = u32::try_from(k)
            .ok()
            .and_then(|k| base.len().checked_pow(k))
            .filter(|&s| s <= cap)
            .ok_or_else(|| Error::TooLarge(format!("{}^{k} grid points exceed the cap of {cap}", base.len())))?;
        Ok(ProductGrid { base, k, size })
    }

    pub fn base(&self) -> &Arc<Grid> {
        &self.base
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `D = d^k`.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Flat index of a tuple of base-grid indices.
    pub fn index_of(&self, tuple: &[usize]) -> Result<usize> {
        if tuple.len() != self.k {
            return Err(Error::LengthMismatch { left: tuple.len(), right: self.k });
        }
        let d = self.base.len();
        tuple.iter().try_fold(0usize, |acc, &i| {
            if i < d {
                Ok(acc * d + i)
            } else {
                Err(Error::Grid(format!("coordinate index {i} outside base grid of size {d}")))
            }
        })
    }

    pub fn tuple(&self, mut index: usize) -> Vec<usize> {
        let d = self.base.len();
        let mut t = vec![0; self.k];
        for slot in t.iter_mut().rev() {
            *slot = index % d;
            index /= d;
        }
        t
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        self.tuple(index).into_iter().map(|i| self.base.points()[i]).collect()
    }

    /// `ln k(y | ϑ_i)` for every product point, summed coordinate by coordinate from 0.
    pub fn log_kernel_row(&self, y: &[u64]) -> Result<Vec<f64>> {
        if y.len() != self.k {
            return Err(Error::LengthMismatch { left: y.len(), right: self.k });
        }
        let mut row = vec![0.0];
        for &yj in y {
            let scalar = self.base.log_kernel_row(yj);
            row = row.iter().flat_map(|&acc| scalar.iter().map(move |&s| acc + s)).collect();
        }
        Ok(row)
    }
}

/// `Σ_j ln k(y_j | θ_j)`.
pub fn multi_kernel(y: &[u64], theta: &[f64]) -> Result<f64> {
    if y.len() != theta.len() {
        return Err(Error::LengthMismatch { left: y.len(), right: theta.len() });
    }
    y.iter().zip(theta).try_fold(0.0, |acc, (&yj, &tj)| Ok(acc + log_poisson_kernel(yj, tj)?))
}

/// Probability mass function on a [`ProductGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct MultiMixingWeights {
    grid: Arc<ProductGrid>,
    weights: Arc<[f64]>,
}

impl MultiMixingWeights {
    pub fn new(grid: Arc<ProductGrid>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::LengthMismatch { left: weights.len(), right: grid.len() });
        }
        if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Weights(format!("weights must be finite and >= 0, got {bad}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Weights(format!("weights sum to {total}, not 1")));
        }
        Ok(Self::normalized(grid, weights))
    }

    fn normalized(grid: Arc<ProductGrid>, mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        MultiMixingWeights { grid, weights: weights.into() }
    }

    pub fn uniform(grid: Arc<ProductGrid>) -> Self {
        let d = grid.len();
        Self::normalized(grid, vec![1.0 / d as f64; d])
    }

    pub fn point_mass(grid: Arc<ProductGrid>, tuple: &[usize]) -> Result<Self> {
        let mut w = vec![0.0; grid.len()];
        w[grid.index_of(tuple)?] = 1.0;
        Ok(MultiMixingWeights { grid, weights: w.into() })
    }

    /// `g(ϑ_i) = Π_j g_j(ϑ_{i,j})`; every factor must live on the base grid.
    pub fn product(grid: Arc<ProductGrid>, factors: &[MixingWeights]) -> Result<Self> {
        if factors.len() != grid.k() {
            return Err(Error::LengthMismatch { left: factors.len(), right: grid.k() });
        }
        if factors.iter().any(|f| f.grid().points() != grid.base().points()) {
            return Err(Error::Grid("factor weights live on a different grid".into()));
        }
        let mut w = vec![1.0];
        for f in factors {
            w = w.iter().flat_map(|&acc| f.weights().iter().map(move |&p| acc * p)).collect();
        }
        Ok(Self::normalized(grid, w))
    }

    /// Marginal of coordinate `j` on the base grid.
    pub fn marginal(&self, j: usize) -> Result<MixingWeights> {
        if j >= self.grid.k() {
            return Err(Error::Config(format!("coordinate {j} out of range for k = {}", self.grid.k())));
        }
        let d = self.grid.base().len();
        let mut m = vec![0.0; d];
        for (i, &w) in self.weights.iter().enumerate() {
            m[self.grid.tuple(i)[j]] += w;
        }
        MixingWeights::from_unnormalized(Arc::clone(self.grid.base()), m)
    }

    pub fn grid(&self) -> &Arc<ProductGrid> {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_variation(&self, other: &MultiMixingWeights) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::Grid("mixing distributions live on different grids".into()));
        }
        Ok(0.5 * self.weights.iter().zip(other.weights.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }
}

/// `ln p_g(y)`, checked against the underflow floor.
fn checked_log_pmf(g: &MultiMixingWeights, y: &[u64], terms: &mut Vec<f64>) -> Result<f64> {
    let lp = fill_log_terms(&g.grid.log_kernel_row(y)?, &g.weights, terms);
    check_log_pmf(0, lp).map_err(|_| Error::DegenerateVector { y: y.to_vec(), n: None, log_p: lp })
}

/// `θ̂_{g,j}(y) = (y_j + 1) p_g(y + e_j) / p_g(y)`, kept inside `[ϑ_1, ϑ_d]`.
pub fn multi_estimate(g: &MultiMixingWeights, y: &[u64], j: usize) -> Result<f64> {
    if j >= y.len() {
        return Err(Error::Config(format!("coordinate {j} out of range for k = {}", y.len())));
    }
    let mut terms = Vec::with_capacity(g.weights.len());
    let lp0 = checked_log_pmf(g, y, &mut terms)?;
    let mut up = y.to_vec();
    up[j] += 1;
    let lp1 = checked_log_pmf(g, &up, &mut terms)?;
    let base = g.grid.base();
    Ok(((y[j] + 1) as f64 * (lp1 - lp0).exp()).clamp(base.first(), base.last()))
}

/// Visits every `z ∈ {0..=y_max}^k` in lexicographic order.
fn for_each_lattice_point(k: usize, y_max: u64, mut f: impl FnMut(&[u64]) -> Result<()>) -> Result<()> {
    let mut z = vec![0u64; k];
    loop {
        f(&z)?;
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            if z[pos] < y_max {
                z[pos] += 1;
                break;
            }
            z[pos] = 0;
        }
    }
}

fn check_lattice_work(d: usize, k: usize, y_max: u64) -> Result<()> {
    let points = (y_max as u128 + 1).checked_pow(k as u32).unwrap_or(u128::MAX);
    if points.saturating_mul(d as u128) > LATTICE_WORK_LIMIT {
        return Err(Error::TooLarge(format!("lattice sum over {points} points of a {d}-point grid")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiCltCovariance {
    pub theta_hat: Vec<f64>,
    /// `k × k`, symmetric positive semidefinite.
    pub covariance: DMatrix<f64>,
    /// Probability of the lattice points beyond `y_max` in some coordinate.
    pub tail_mass: f64,
}

/// `W_{jj'}(y) = θ̂_j θ̂_{j'} E_{Z~p_g}[s_j(Z) s_{j'}(Z)]` with
/// `s_j(Z) = Σ_i g(ϑ_i|Z) (k(y+e_j|ϑ_i)/p_g(y+e_j) − k(y|ϑ_i)/p_g(y))`,
/// `Z` running over `{0..=y_max}^k`.
pub fn multi_clt_covariance(g: &MultiMixingWeights, y: &[u64], y_max: u64) -> Result<MultiCltCovariance> {
    let grid = &g.grid;
    let (k, dd) = (grid.k(), grid.len());
    if dd > COVARIANCE_MAX_SIZE {
        return Err(Error::TooLarge(format!(
            "covariance needs D ≤ {COVARIANCE_MAX_SIZE}, grid has {dd} points"
        )));
    }
    check_lattice_work(dd, k, y_max)?;
    let mut terms = Vec::with_capacity(dd);
    let row0 = grid.log_kernel_row(y)?;
    let lp0 = checked_log_pmf(g, y, &mut terms)?;
    let (lo, hi) = (grid.base().first(), grid.base().last());
    let mut brackets = Vec::with_capacity(k);
    let mut theta_hat = Vec::with_capacity(k);
    for j in 0..k {
        let mut up = y.to_vec();
        up[j] += 1;
        let row1 = grid.log_kernel_row(&up)?;
        let lp1 = checked_log_pmf(g, &up, &mut terms)?;
        brackets.push(
            row0.iter().zip(&row1).map(|(&l0, &l1)| (l1 - lp1).exp() - (l0 - lp0).exp()).collect::<Vec<f64>>(),
        );
        theta_hat.push(((y[j] + 1) as f64 * (lp1 - lp0).exp()).clamp(lo, hi));
    }

    let mut acc = DMatrix::<f64>::zeros(k, k);
    let mut mass = 0.0;
    let mut s = vec![0.0; k];
    for_each_lattice_point(k, y_max, |z| {
        let row = grid.log_kernel_row(z)?;
        let lp = fill_log_terms(&row, &g.weights, &mut terms);
        if lp.is_nan() || lp < LOG_PMF_FLOOR {
            return Ok(());
        }
        let p = lp.exp();
        mass += p;
        s.iter_mut().for_each(|v| *v = 0.0);
        for (i, &t) in terms.iter().enumerate() {
            let post = (t - lp).exp();
            if post > 0.0 {
                for (sj, c) in s.iter_mut().zip(&brackets) {
                    *sj += post * c[i];
                }
            }
        }
        for a in 0..k {
            for b in 0..=a {
                acc[(a, b)] += p * s[a] * s[b];
            }
        }
        Ok(())
    })?;
    let mut covariance = DMatrix::<f64>::zeros(k, k);
    for a in 0..k {
        for b in 0..=a {
            let v = theta_hat[a] * theta_hat[b] * acc[(a, b)];
            covariance[(a, b)] = v;
            covariance[(b, a)] = v;
        }
    }
    Ok(MultiCltCovariance { theta_hat, covariance, tail_mass: (1.0 - mass).max(0.0) })
}

/// `Σ_{z ∈ {0..=y_max}^k} ‖θ̂_{g_a}(z) − θ̂_{g_b}(z)‖² p_{g_b}(z)`, with `g_b` the truth.
pub fn multi_regret(g_a: &MultiMixingWeights, g_b: &MultiMixingWeights, y_max: u64) -> Result<f64> {
    if g_a.grid != g_b.grid {
        return Err(Error::Grid("mixing distributions live on different grids".into()));
    }
    let k = g_a.grid.k();
    check_lattice_work(g_a.grid.len(), k, y_max + 1)?;
    let mut terms = Vec::new();
    let mut total = 0.0;
    for_each_lattice_point(k, y_max, |z| {
        let lp = fill_log_terms(&g_b.grid.log_kernel_row(z)?, &g_b.weights, &mut terms);
        if lp.is_nan() || lp < LOG_PMF_FLOOR {
            return Ok(());
        }
        let mut sq = 0.0;
        for j in 0..k {
            let diff = multi_estimate(g_a, z, j)? - multi_estimate(g_b, z, j)?;
            sq += diff * diff;
        }
        total += sq * lp.exp();
        Ok(())
    })?;
    Ok(total)
}

/// Newton recursion on a product grid.
#[derive(Debug, Clone)]
pub struct MultiNewtonState {
    grid: Arc<ProductGrid>,
    weights: Vec<f64>,
    n: u64,
    schedule: Schedule,
    scratch: Vec<f64>,
}

impl MultiNewtonState {
    /// Starts from `g0`, or from the uniform distribution on the product grid.
    pub fn new(grid: Arc<ProductGrid>, g0: Option<MultiMixingWeights>, schedule: impl Into<Schedule>) -> Result<Self> {
        let weights = match g0 {
            None => MultiMixingWeights::uniform(Arc::clone(&grid)).weights.to_vec(),
            Some(g) if g.grid != grid => {
                return Err(Error::Config("initial weights live on a different grid".into()))
            }
            Some(g) => g.weights.to_vec(),
        };
        Ok(MultiNewtonState { grid, weights, n: 0, schedule: schedule.into(), scratch: Vec::new() })
    }

    pub fn grid(&self) -> &Arc<ProductGrid> {
        &self.grid
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn snapshot(&self) -> MultiMixingWeights {
        MultiMixingWeights { grid: Arc::clone(&self.grid), weights: self.weights.as_slice().into() }
    }

    /// Consumes one count vector. On error the state is left as it was.
    pub fn update(&mut self, y: &[u64]) -> Result<()> {
        let row = self.grid.log_kernel_row(y)?;
        let rate = self.schedule.at(self.n + 1);
        newton_step(0, &row, &mut self.weights, rate, &mut self.scratch).map_err(|e| match e {
            Error::DegenerateLikelihood { log_p, .. } => {
                Error::DegenerateVector { y: y.to_vec(), n: Some(self.n), log_p }
            }
            other => other,
        })?;
        self.n += 1;
        Ok(())
    }

    pub fn update_stream<'a, I: IntoIterator<Item = &'a [u64]>>(&mut self, ys: I) -> Result<()> {
        for (index, y) in ys.into_iter().enumerate() {
            self.update(y).map_err(|e| Error::Stream { index, source: Box::new(e) })?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let rate = self
            .schedule
            .power()
            .ok_or_else(|| Error::Config("only power learning-rate schedules can be saved".into()))?;
        Ok(codec::encode(&codec::RawState {
            k: self.grid.k() as u32,
            n: self.n,
            alpha: rate.alpha(),
            gamma: rate.gamma(),
            grid: self.grid.base().points().to_vec(),
            weights: self.weights.clone(),
        }))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let raw = codec::decode(bytes)?;
        let payload = |e: Error| Error::State(StateError::Payload(e.to_string()));
        let rate = LearningRate::new(raw.alpha, raw.gamma).map_err(payload)?;
        let base = Arc::new(Grid::new(raw.grid).map_err(payload)?);
        let grid = Arc::new(ProductGrid::new(base, raw.k as usize).map_err(payload)?);
        // validate, then keep the stored bits
        MultiMixingWeights::new(Arc::clone(&grid), raw.weights.clone()).map_err(payload)?;
        Ok(MultiNewtonState { grid, weights: raw.weights, n: raw.n, schedule: rate.into(), scratch: Vec::new() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> Result<()> {
        codec::write_jsonl(out, self.weights.iter().enumerate().map(|(i, &w)| (self.grid.point(i), w)))
    }
}

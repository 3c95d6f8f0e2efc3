//! Equispaced support grids and the KL discretization check.

use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};
use crate::model::{log_mixture_from_row, LOG_PMF_FLOOR, CountHistogram, Grid, MixingWeights};
use crate::prior::PriorSpec;

/// Largest grid size the size search will consider.
pub const MAX_GRID_SIZE: u64 = 1_000_000_000;

/// Parameters of the equispaced grid: spacing `eta`, moment order `k` and bound `m_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub eta: f64,
    pub k: u32,
    pub m_k: f64,
    /// Upper bound on the number of points actually materialized.
    pub d_cap: Option<usize>,
}

impl GridSpec {
    pub fn new(eta: f64, k: u32, m_k: f64, d_cap: Option<usize>) -> Result<Self> {
        let spec = GridSpec { eta, k, m_k, d_cap };
        spec.validate()?;
        Ok(spec)
    }

    /// `k = 2` with `m_2` the empirical second moment of the counts.
    pub fn from_data(h: &CountHistogram, eta: f64, d_cap: Option<usize>) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::EmptyInput);
        }
        let m2 = h.moment(2);
        if m2 <= 0.0 {
            return Err(Error::Config(
                "all counts are zero; the second moment must be positive to size the grid".into(),
            ));
        }
        GridSpec::new(eta, 2, m2, d_cap)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("moment order must be >= 2, got {}", self.k)));
        }
        if !(self.m_k > 0.0 && self.m_k.is_finite()) {
            return Err(Error::Config(format!("m_k must be positive, got {}", self.m_k)));
        }
        if matches!(self.d_cap, Some(c) if c < 2) {
            return Err(Error::Config("d_cap must be at least 2".into()));
        }
        Ok(())
    }

    /// `n^{1-k} log(nη) m_k ≤ η^k`, the moment condition on the grid size.
    pub fn size_condition(&self, n: u64) -> bool {
        let n = n as f64;
        let k = self.k as f64;
        // compare in logs: both sides can over/underflow for large k
        let lhs = (1.0 - k) * n.ln() + self.m_k.ln();
        let log_term = (n * self.eta).ln();
        log_term <= 0.0 || lhs + log_term.ln() <= k * self.eta.ln()
    }

    /// Smallest integer `n > 1/η` satisfying [`size_condition`](Self::size_condition).
    ///
    /// Scans upward while `n^{1-k} log(nη)` can still be increasing, then bisects:
    /// past `e^{1/(k-1)}/η` the left side is decreasing in `n`, so the first success
    /// there is found exactly by binary search.
    pub fn minimal_size(&self) -> Result<u64> {
        self.validate()?;
        let start = (1.0 / self.eta).floor() as u64 + 1;
        let peak = ((1.0 / (self.k as f64 - 1.0)).exp() / self.eta).ceil() as u64;
        let scan_end = peak.max(start).min(MAX_GRID_SIZE);
        for n in start..=scan_end {
            if self.size_condition(n) {
                return Ok(n);
            }
        }
        if !self.size_condition(MAX_GRID_SIZE) {
            return Err(Error::SpecInfeasible(format!(
                "no grid size up to {MAX_GRID_SIZE} satisfies the moment condition \
                 (eta = {}, k = {}, m_k = {})",
                self.eta, self.k, self.m_k
            )));
        }
        let (mut lo, mut hi) = (scan_end, MAX_GRID_SIZE);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.size_condition(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Number of points [`build_equispaced_grid`] will produce.
    pub fn materialized_size(&self) -> Result<usize> {
        let d = self.minimal_size()?;
        Ok(match self.d_cap {
            Some(cap) => d.min(cap as u64) as usize,
            None => usize::try_from(d).map_err(|_| Error::TooLarge(format!("grid of {d} points")))?,
        })
    }
}

/// Points `iη`, `i = 1..=d`. With a cap below the minimal size, the same endpoints
/// `η` and `dη` are kept and `d_cap` equispaced points span them.
pub fn build_equispaced_grid(spec: &GridSpec) -> Result<Grid> {
    let d = spec.minimal_size()?;
    let top = d as f64 * spec.eta;
    match spec.d_cap {
        Some(cap) if (cap as u64) < d => Grid::equispaced(spec.eta, top, cap),
        _ => {
            let d = usize::try_from(d).map_err(|_| Error::TooLarge(format!("grid of {d} points")))?;
            Grid::new((1..=d).map(|i| i as f64 * spec.eta).collect())
        }
    }
}

/// Bins a prior onto the grid: `w_i = G((ϑ_{i-1}, ϑ_i])` with `ϑ_0 = 0`, the last
/// atom absorbing everything above `ϑ_{d-1}`.
pub fn binned_discretization(prior: &PriorSpec, grid: &Arc<Grid>) -> Result<MixingWeights> {
    let pts = grid.points();
    let at_zero = prior.cdf(0.0);
    if at_zero > 0.0 {
        warn!("prior puts mass {at_zero} at 0; assigning it to the first grid point");
    }
    let d = pts.len();
    let mut weights = Vec::with_capacity(d);
    let mut prev = 0.0;
    for (i, &t) in pts.iter().enumerate() {
        let w = if i + 1 == d {
            prior.sf(prev) + if i == 0 { at_zero } else { 0.0 }
        } else if i == 0 {
            prior.cdf(t)
        } else {
            prior.interval_mass(prev, t)
        };
        weights.push(w);
        prev = t;
    }
    MixingWeights::from_unnormalized(Arc::clone(grid), weights)
}

/// `Σ_{y ≤ y_max} p_G(y) log(p_G(y) / p_g(y))`.
pub fn kl_discretization_gap(prior: &PriorSpec, g: &MixingWeights, y_max: u64) -> Result<f64> {
    truncated_kl(&prior.marginal_pmf(y_max), g)
}

/// KL divergence of a reference pmf table (indexed by `y`) from the mixture `p_g`.
pub fn truncated_kl(reference: &[f64], g: &MixingWeights) -> Result<f64> {
    let grid = g.grid();
    let mut total = 0.0;
    for (y, &p) in reference.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let log_q = log_mixture_from_row(&grid.log_kernel_row(y as u64), g.weights());
        // p_g(y) is positive in exact arithmetic; below the floor it is zero in f64
        if !(log_q >= LOG_PMF_FLOOR) {
            return Err(Error::InfiniteDivergence { y: y as u64 });
        }
        total += p * (p.ln() - log_q);
    }
    Ok(total)
}

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::{generate_compound, median};
use crate::error::{Error, Result};
use crate::model::Grid;
use crate::newton::{LearningRate, NewtonState};
use crate::prior::PriorSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct TimingConfig {
    pub prior: PriorSpec,
    /// Grid range; each `d` gets an equispaced grid over it.
    pub lo: f64,
    pub hi: f64,
    pub rate: LearningRate,
    pub seed: u64,
    /// Updates run (on a throwaway state sharing the kernel cache) before timing starts.
    pub warmup: usize,
}

impl TimingConfig {
    pub fn new(prior: PriorSpec, lo: f64, hi: f64) -> Self {
        TimingConfig { prior, lo, hi, rate: LearningRate::default(), seed: 0, warmup: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub d: usize,
    /// Update indices `n_lo..=n_hi` (1-based).
    pub n_lo: u64,
    pub n_hi: u64,
    pub median_ms: f64,
}

/// Median wall time of one update per grid size and window of update indices.
pub fn timing_harness(cfg: &TimingConfig, ds: &[usize], windows: &[(u64, u64)]) -> Result<Vec<TimingRow>> {
    if windows.iter().any(|&(a, b)| a == 0 || a > b) {
        return Err(Error::Config("windows must satisfy 1 ≤ lo ≤ hi".into()));
    }
    let n_max = windows.iter().map(|w| w.1).max().unwrap_or(0) as usize;
    let ys = generate_compound(&cfg.prior, n_max + cfg.warmup.max(1), cfg.seed)?.ys;
    let (warm, timed) = ys.split_at(cfg.warmup);
    let mut rows = Vec::new();
    for &d in ds {
        let grid = Arc::new(Grid::equispaced(cfg.lo, cfg.hi, d)?);
        let mut scratch = NewtonState::new(grid, None, cfg.rate)?;
        scratch.update_stream(warm.iter().chain(timed).copied())?;
        let mut state = NewtonState::with_cache(Arc::clone(scratch.cache()), None, cfg.rate)?;
        let mut times = Vec::with_capacity(n_max);
        for &y in &timed[..n_max] {
            let start = Instant::now();
            state.update(y)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        for &(a, b) in windows {
            let median_ms = median(&times[a as usize - 1..b as usize]);
            rows.push(TimingRow { d, n_lo: a, n_hi: b, median_ms });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_per_grid_and_window() {
        let mut cfg = TimingConfig::new(PriorSpec::weibull(5.0, 3.0).unwrap(), 0.025, 50.0);
        cfg.warmup = 10;
        let rows = timing_harness(&cfg, &[50, 500], &[(1, 20), (30, 40)]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[3].d, rows[3].n_lo, rows[3].n_hi), (500, 30, 40));
        assert!(rows.iter().all(|r| r.median_ms > 0.0));
        assert!(timing_harness(&cfg, &[50], &[(0, 5)]).is_err());
    }
}

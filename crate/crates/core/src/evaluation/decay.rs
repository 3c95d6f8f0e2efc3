use std::sync::Arc;

use rayon::prelude::*;

use super::{generate_compound, median, regret};
use crate::error::{Error, Result};
use crate::model::{Grid, MixingWeights};
use crate::newton::{LearningRate, NewtonState};
use crate::prior::PriorSpec;

/// Starting point of the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    #[default]
    Uniform,
    /// Start at the oracle itself.
    Oracle,
}

/// Regret decay against a discrete oracle whose atoms form the grid, so the
/// discretized oracle is the oracle itself.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayConfig {
    pub prior: PriorSpec,
    pub rate: LearningRate,
    pub seeds: Vec<u64>,
    pub init: Init,
    /// Defaults to the grid's own truncation point.
    pub y_max: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayTrace {
    pub seed: u64,
    pub regrets: Vec<f64>,
    /// Total variation from the oracle at each checkpoint.
    pub tv: Vec<f64>,
    /// Least-squares slope of log regret against log n; `None` if a regret is zero.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub checkpoints: Vec<u64>,
    pub traces: Vec<DecayTrace>,
    /// Median over seeds, per checkpoint.
    pub median_regret: Vec<f64>,
    pub median_tv: Vec<f64>,
    pub median_slope: f64,
}

pub fn regret_decay_diagnostic(cfg: &DecayConfig, checkpoints: &[u64]) -> Result<DecayReport> {
    if checkpoints.len() < 3 {
        return Err(Error::Config(format!(
            "a slope needs at least 3 checkpoints, got {}",
            checkpoints.len()
        )));
    }
    if checkpoints[0] == 0 || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("checkpoints must be positive and strictly increasing".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let PriorSpec::Atoms(atoms) = &cfg.prior else {
        return Err(Error::Config(format!("regret decay needs a discrete oracle, got {}", cfg.prior)));
    };
    let grid = Arc::new(Grid::new(atoms.iter().map(|a| a.0).collect())?);
    let oracle = MixingWeights::new(Arc::clone(&grid), atoms.iter().map(|a| a.1).collect())?;
    let y_max = cfg.y_max.unwrap_or_else(|| grid.default_y_max());
    let n_max = *checkpoints.last().expect("nonempty");

    let traces: Vec<DecayTrace> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let ys = generate_compound(&cfg.prior, n_max as usize, seed)?.ys;
            let g0 = match cfg.init {
                Init::Uniform => None,
                Init::Oracle => Some(oracle.clone()),
            };
            let mut state = NewtonState::new(Arc::clone(&grid), g0, cfg.rate)?;
            let mut regrets = Vec::with_capacity(checkpoints.len());
            let mut tv = Vec::with_capacity(checkpoints.len());
            let mut done = 0usize;
            for &c in checkpoints {
                state.update_stream(ys[done..c as usize].iter().copied())?;
                done = c as usize;
                let g = state.snapshot();
                regrets.push(regret(&g, &oracle, y_max)?.value);
                tv.push(g.total_variation(&oracle)?);
            }
            let slope = log_log_slope(checkpoints, &regrets);
            Ok(DecayTrace { seed, regrets, tv, slope })
        })
        .collect::<Result<_>>()?;

    let column = |f: &dyn Fn(&DecayTrace) -> f64| median(&traces.iter().map(f).collect::<Vec<_>>());
    let median_regret = (0..checkpoints.len()).map(|i| column(&|t| t.regrets[i])).collect();
    let median_tv = (0..checkpoints.len()).map(|i| column(&|t| t.tv[i])).collect();
    let median_slope = column(&|t| t.slope.unwrap_or(f64::NAN));
    Ok(DecayReport { checkpoints: checkpoints.to_vec(), traces, median_regret, median_tv, median_slope })
}

fn log_log_slope(ns: &[u64], values: &[f64]) -> Option<f64> {
    if values.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

//! Synthetic data, accuracy metrics, regret and timing.

mod decay;
mod experiment;
mod timing;

pub use decay::{regret_decay_diagnostic, DecayConfig, DecayReport, DecayTrace, Init};
pub use experiment::{
    run_experiment, table_markdown, write_metrics_csv, Estimator, ExperimentConfig, GridPolicy, MetricRow,
};
pub use timing::{timing_harness, TimingConfig, TimingRow};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::model::{log_mixture_pmf, MixingWeights, LOG_PMF_FLOOR};
use crate::prior::{sample_poisson, PriorSpec};

/// Means and counts drawn from the compound model.
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundSample {
    pub thetas: Vec<f64>,
    pub ys: Vec<u64>,
}

/// `θ_i ~ G`, `Y_i ~ Poisson(θ_i)`, reproducible from `seed`.
pub fn generate_compound(prior: &PriorSpec, n: usize, seed: u64) -> Result<CompoundSample> {
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut thetas = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let theta = prior.sample(&mut rng);
        ys.push(sample_poisson(&mut rng, theta));
        thetas.push(theta);
    }
    Ok(CompoundSample { thetas, ys })
}

/// Root mean squared error and mean absolute deviation of `estimates` around `thetas`.
pub fn rmse_mad(thetas: &[f64], estimates: &[f64]) -> Result<(f64, f64)> {
    if thetas.len() != estimates.len() {
        return Err(Error::LengthMismatch { left: thetas.len(), right: estimates.len() });
    }
    if thetas.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = thetas.len() as f64;
    let (sq, abs) = thetas.iter().zip(estimates).fold((0.0, 0.0), |(sq, abs), (t, e)| {
        let err = e - t;
        (sq + err * err, abs + err.abs())
    });
    Ok(((sq / n).sqrt(), abs / n))
}

/// A truncated regret and the oracle probability of the counts left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regret {
    pub value: f64,
    pub tail_mass: f64,
}

/// `Σ_{y ≤ y_max} (θ̂_{g_a}(y) − θ̂_{g_b}(y))² p_{g_b}(y)`: the regret of using `g_a`
/// when `g_b` is the truth.
///
/// Counts at which `p_{g_b}` underflows carry no weight and are skipped; the tail
/// mass is the exact Poisson tail of `g_b` beyond `y_max`.
pub fn regret(g_a: &MixingWeights, g_b: &MixingWeights, y_max: u64) -> Result<Regret> {
    crate::model::same_grid(g_a, g_b)?;
    let lp_b = log_pmfs(g_b, y_max);
    let weights: Vec<f64> = lp_b[..=y_max as usize]
        .iter()
        .map(|&lp| if lp < LOG_PMF_FLOOR { 0.0 } else { lp.exp() })
        .collect();
    let value = weighted_sum(g_a, &lp_b, &weights)?;
    let grid = g_b.grid();
    let tail_mass = grid
        .points()
        .iter()
        .zip(g_b.weights())
        .map(|(&t, &w)| w * gamma_lr(y_max as f64 + 1.0, t))
        .sum();
    Ok(Regret { value, tail_mass })
}

/// Regret of `g_a` against the discretized oracle `g_b`, with counts weighted by the
/// continuous oracle's marginal `p_G(y)` instead of `p_{g_b}`.
pub fn regret_under_prior(g_a: &MixingWeights, g_b: &MixingWeights, prior: &PriorSpec, y_max: u64) -> Result<Regret> {
    crate::model::same_grid(g_a, g_b)?;
    let weights = prior.marginal_pmf(y_max);
    let value = weighted_sum(g_a, &log_pmfs(g_b, y_max), &weights)?;
    let tail_mass = (1.0 - weights.iter().sum::<f64>()).max(0.0);
    Ok(Regret { value, tail_mass })
}

/// `ln p_g(y)` for `y = 0..=y_max+1`.
fn log_pmfs(g: &MixingWeights, y_max: u64) -> Vec<f64> {
    (0..=y_max + 1).into_par_iter().map(|y| log_mixture_pmf(g, y)).collect()
}

fn weighted_sum(g_a: &MixingWeights, lp_b: &[f64], weights: &[f64]) -> Result<f64> {
    let y_max = (weights.len() - 1) as u64;
    let lp_a = log_pmfs(g_a, y_max);
    let grid = g_a.grid();
    let (lo, hi) = (grid.first(), grid.last());
    let estimate = |lp: &[f64], y: usize| -> Result<f64> {
        if lp[y] < LOG_PMF_FLOOR {
            return Err(Error::DegenerateLikelihood { y: y as u64, n: None, log_p: lp[y] });
        }
        // an underflowing p(y+1) only means the ratio is below the grid
        Ok(((y + 1) as f64 * (lp[y + 1] - lp[y]).exp()).clamp(lo, hi))
    };
    let mut total = 0.0;
    for (y, &w) in weights.iter().enumerate() {
        if w <= 0.0 || lp_b[y] < LOG_PMF_FLOOR {
            continue;
        }
        let diff = estimate(&lp_a, y)? - estimate(lp_b, y)?;
        total += diff * diff * w;
    }
    Ok(total)
}

/// Median of a slice; NaN when empty.
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

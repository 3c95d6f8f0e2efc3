use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{generate_compound, median, rmse_mad};
use crate::baselines::{baseline_estimates_at, Method, VdmConfig};
use crate::error::{Error, Result};
use crate::grid::{build_equispaced_grid, GridSpec};
use crate::inference::qb_estimate;
use crate::model::{CountHistogram, Grid};
use crate::newton::{LearningRate, NewtonState};
use crate::prior::PriorSpec;

/// How the Newton grid is chosen for each replication.
#[derive(Debug, Clone, PartialEq)]
pub enum GridPolicy {
    /// Equispaced grid sized from the sample's second moment (`k = 2`), with at most
    /// `d_cap` points between `η` and `η·d_η`.
    FromData { eta: f64, d_cap: Option<usize> },
    Fixed { lo: f64, hi: f64, d: usize },
    /// The support points of a discrete prior.
    PriorAtoms,
}

impl GridPolicy {
    pub(crate) fn build(&self, prior: &PriorSpec, h: &CountHistogram) -> Result<Grid> {
        match *self {
            GridPolicy::FromData { eta, d_cap } => build_equispaced_grid(&GridSpec::from_data(h, eta, d_cap)?),
            GridPolicy::Fixed { lo, hi, d } => Grid::equispaced(lo, hi, d),
            GridPolicy::PriorAtoms => match prior {
                PriorSpec::Atoms(atoms) => Grid::new(atoms.iter().map(|a| a.0).collect()),
                other => Err(Error::Config(format!("prior {other} has no atoms to use as a grid"))),
            },
        }
    }

    fn eta(&self) -> Option<f64> {
        match *self {
            GridPolicy::FromData { eta, .. } => Some(eta),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub prior: PriorSpec,
    pub n: usize,
    pub grid: GridPolicy,
    pub rate: LearningRate,
    pub seeds: Vec<u64>,
    /// Iteration budget of the grid baselines.
    pub vdm_max_iters: usize,
}

impl ExperimentConfig {
    /// Grid with `η = 0.025` capped at 10,000 points, uniform start, `α_n = (1+n)^{-0.99}`,
    /// seeds `0..10`.
    pub fn new(prior: PriorSpec, n: usize) -> Self {
        ExperimentConfig {
            prior,
            n,
            grid: GridPolicy::FromData { eta: 0.025, d_cap: Some(10_000) },
            rate: LearningRate::default(),
            seeds: (0..10).collect(),
            vdm_max_iters: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("sample size must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    QbEb,
    Baseline(Method),
}

impl Estimator {
    /// All five estimators in table order.
    pub const ALL: [Estimator; 5] = [
        Estimator::Baseline(Method::Robbins),
        Estimator::Baseline(Method::Npmle),
        Estimator::Baseline(Method::Npmd),
        Estimator::Baseline(Method::Peb),
        Estimator::QbEb,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Estimator::QbEb => "QB-EB",
            Estimator::Baseline(m) => m.label(),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::QbEb => f.write_str("qbeb"),
            Estimator::Baseline(m) => m.fmt(f),
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qbeb" | "qb-eb" | "newton" => Ok(Estimator::QbEb),
            other => other.parse().map(Estimator::Baseline),
        }
    }
}

/// One estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub method: String,
    pub prior: String,
    pub n: usize,
    pub d: Option<usize>,
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub seed: u64,
    pub rmse: f64,
    pub mad: f64,
    /// Newton: mean wall time of one update. Batch methods: one full refit.
    pub cpu_per_update_ms: f64,
}

/// Runs every estimator on every seed; rows come back ordered by seed, then estimator.
pub fn run_experiment(cfg: &ExperimentConfig, estimators: &[Estimator]) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    let per_seed: Vec<Vec<MetricRow>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| replicate(cfg, estimators, seed))
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

fn replicate(cfg: &ExperimentConfig, estimators: &[Estimator], seed: u64) -> Result<Vec<MetricRow>> {
    let sample = generate_compound(&cfg.prior, cfg.n, seed)?;
    let h = CountHistogram::from_counts(sample.ys.iter().copied());
    let distinct: Vec<u64> = h.iter().map(|(y, _)| y).collect();
    let mut rows = Vec::with_capacity(estimators.len());
    for &est in estimators {
        let (by_y, d, eta, gamma, ms) = match est {
            Estimator::QbEb => {
                let grid = Arc::new(cfg.grid.build(&cfg.prior, &h)?);
                let mut state = NewtonState::new(Arc::clone(&grid), None, cfg.rate)?;
                let start = Instant::now();
                state.update_stream(sample.ys.iter().copied())?;
                let ms = start.elapsed().as_secs_f64() * 1e3 / cfg.n as f64;
                let g = state.snapshot();
                let by_y: BTreeMap<u64, f64> =
                    distinct.iter().map(|&y| Ok((y, qb_estimate(&g, y)?))).collect::<Result<_>>()?;
                (by_y, Some(grid.len()), cfg.grid.eta(), Some(cfg.rate.gamma()), ms)
            }
            Estimator::Baseline(m) => {
                let vdm = match m {
                    Method::Npmle | Method::Npmd => {
                        let mut c = VdmConfig::for_histogram(&h)?;
                        c.max_iters = cfg.vdm_max_iters;
                        Some(c)
                    }
                    _ => None,
                };
                let start = Instant::now();
                let row = baseline_estimates_at(&h, m, vdm.as_ref(), &distinct)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                let by_y = distinct.iter().copied().zip(row.estimates).collect();
                (by_y, vdm.map(|c| c.grid.len()), None, None, ms)
            }
        };
        let estimates: Vec<f64> = sample.ys.iter().map(|y| by_y[y]).collect();
        let (rmse, mad) = rmse_mad(&sample.thetas, &estimates)?;
        rows.push(MetricRow {
            method: est.label().to_string(),
            prior: cfg.prior.to_string(),
            n: cfg.n,
            d,
            eta,
            gamma,
            seed,
            rmse,
            mad,
            cpu_per_update_ms: ms,
        });
    }
    Ok(rows)
}

/// Columns: method, prior, n, d, eta, gamma, seed, rmse, mad, cpu_per_update_ms.
pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// RMSE rows then MAD rows, one per sample size, one column per method (in order of
/// first appearance); each cell is the median over seeds.
pub fn table_markdown(rows: &[MetricRow]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();

    let mut s = String::from("| |");
    for m in &methods {
        s.push_str(&format!(" {m} |"));
    }
    s.push_str("\n|---|");
    s.push_str(&"---:|".repeat(methods.len()));
    s.push('\n');
    for (name, pick) in [("RMSE", 0), ("MAD", 1)] {
        for &n in &ns {
            s.push_str(&format!("| {name} n={n} |"));
            for m in &methods {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.n == n && r.method == *m)
                    .map(|r| if pick == 0 { r.rmse } else { r.mad })
                    .collect();
                if vals.is_empty() {
                    s.push_str(" - |");
                } else {
                    s.push_str(&format!(" {:.3} |", median(&vals)));
                }
            }
            s.push('\n');
        }
    }
    s
}

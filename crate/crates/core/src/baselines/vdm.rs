//! Vertex-direction fits of a grid mixing distribution to a count histogram.
//!
//! Both objectives are concave functions `F(P)` of the fitted cell probabilities, so
//! one routine serves both: step toward the vertex with the steepest directional
//! derivative, then exchange mass from the flattest supported vertex to it, each
//! with a line search along the segment.

use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};
use crate::model::{CountHistogram, Grid, MixingWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// Bisection on the derivative of the (concave) objective along the segment.
    #[default]
    ExactLineSearch,
    /// Backtracking from the full step until the Armijo condition holds.
    Armijo,
}

#[derive(Debug, Clone)]
pub struct VdmConfig {
    pub grid: Arc<Grid>,
    pub max_iters: usize,
    /// Stop once the stationarity certificate is within `tol` of 1.
    pub tol: f64,
    pub step_rule: StepRule,
}

impl VdmConfig {
    pub const DEFAULT_POINTS: usize = 1000;

    pub fn new(grid: Arc<Grid>) -> Self {
        VdmConfig { grid, max_iters: 500, tol: 1e-8, step_rule: StepRule::ExactLineSearch }
    }

    /// 1000 points spanning the observed counts, starting no lower than 0.01.
    pub fn for_histogram(h: &CountHistogram) -> Result<Self> {
        let (Some(lo), Some(hi)) = (h.min_y(), h.max_y()) else {
            return Err(Error::EmptyInput);
        };
        let lo = (lo as f64).max(0.01);
        let hi = (hi as f64).max(lo + 1.0);
        Ok(Self::new(Arc::new(Grid::equispaced(lo, hi, Self::DEFAULT_POINTS)?)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Result of a vertex-direction fit.
#[derive(Debug, Clone)]
pub struct VdmFit {
    pub g: MixingWeights,
    /// Objective after every iteration, starting with the initial value. The
    /// log-likelihood (per observation) increases; the Hellinger distance decreases.
    pub objective_trace: Vec<f64>,
    /// `max_j` of the normalized directional derivative; 1 at a stationary point.
    pub certificate: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl VdmFit {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial value")
    }
}

#[derive(Clone, Copy)]
enum Kind {
    LogLikelihood,
    Hellinger,
}

/// Scaled kernel `K_ij = k(y_i|ϑ_j) / s_i` on the observed cells, `s_i = max_j k(y_i|ϑ_j)`.
struct Problem {
    kind: Kind,
    /// Empirical cell probabilities `n_y / N`.
    freq: Vec<f64>,
    log_scale: Vec<f64>,
    /// Row-major, `cells × d`.
    k: Vec<f64>,
    d: usize,
    /// Per-cell coefficient of the concave objective: `n_y/N` or `√(p̂ s)`.
    coef: Vec<f64>,
}

impl Problem {
    fn new(h: &CountHistogram, grid: &Grid, kind: Kind) -> Self {
        let d = grid.len();
        let total = h.total() as f64;
        let mut k = Vec::with_capacity(h.distinct() * d);
        let mut freq = Vec::new();
        let mut log_scale = Vec::new();
        for (y, n) in h.iter() {
            let row = grid.log_kernel_row(y);
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            k.extend(row.iter().map(|l| (l - top).exp()));
            freq.push(n as f64 / total);
            log_scale.push(top);
        }
        let coef = match kind {
            Kind::LogLikelihood => freq.clone(),
            Kind::Hellinger => freq.iter().zip(&log_scale).map(|(f, s)| (f * s.exp()).sqrt()).collect(),
        };
        Problem { kind, freq, log_scale, k, d, coef }
    }

    fn cells(&self) -> usize {
        self.freq.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.k[i * self.d..(i + 1) * self.d]
    }

    fn mix(&self, g: &[f64]) -> Vec<f64> {
        (0..self.cells()).map(|i| self.row(i).iter().zip(g).map(|(a, b)| a * b).sum()).collect()
    }

    /// The concave criterion `F(P)` that is maximized.
    fn concave(&self, p: &[f64]) -> f64 {
        match self.kind {
            Kind::LogLikelihood => self.coef.iter().zip(p).map(|(c, p)| c * p.ln()).sum(),
            Kind::Hellinger => self.coef.iter().zip(p).map(|(c, p)| c * p.sqrt()).sum(),
        }
    }

    /// `∂F/∂P_i`.
    fn dfdp(&self, p: &[f64], out: &mut [f64]) {
        for ((o, c), p) in out.iter_mut().zip(&self.coef).zip(p) {
            *o = match self.kind {
                Kind::LogLikelihood => c / p,
                Kind::Hellinger => c / (2.0 * p.sqrt()),
            };
        }
    }

    /// Reported objective: average log-likelihood, or squared Hellinger distance
    /// `1 - Σ √(p̂ p_g)` over the observed cells.
    fn report(&self, p: &[f64]) -> f64 {
        match self.kind {
            Kind::LogLikelihood => self
                .freq
                .iter()
                .zip(p)
                .zip(&self.log_scale)
                .map(|((f, p), s)| f * (p.ln() + s))
                .sum(),
            Kind::Hellinger => 1.0 - self.concave(p),
        }
    }

    /// Normalized directional derivatives `Σ_i F_i K_ij / Σ_i F_i P_i` for every vertex.
    fn certificates(&self, p: &[f64], grad: &[f64], out: &mut [f64]) {
        let norm: f64 = grad.iter().zip(p).map(|(a, b)| a * b).sum();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &gi) in grad.iter().enumerate() {
            for (o, k) in out.iter_mut().zip(self.row(i)) {
                *o += gi * k;
            }
        }
        out.iter_mut().for_each(|o| *o /= norm);
    }

    /// Best `λ ∈ [0, 1]` for `P + λ Δ`.
    fn line_search(&self, p: &[f64], delta: &[f64], rule: StepRule) -> f64 {
        let mut moved = vec![0.0; p.len()];
        let mut grad = vec![0.0; p.len()];
        let mut slope = |lambda: f64| {
            for ((m, p), d) in moved.iter_mut().zip(p).zip(delta) {
                *m = p + lambda * d;
            }
            self.dfdp(&moved, &mut grad);
            grad.iter().zip(delta).map(|(g, d)| g * d).sum::<f64>()
        };
        let s0 = slope(0.0);
        if !(s0 > 0.0) {
            return 0.0;
        }
        match rule {
            StepRule::ExactLineSearch => {
                if slope(1.0) >= 0.0 {
                    return 1.0;
                }
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if slope(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
            StepRule::Armijo => {
                let f0 = self.concave(p);
                let mut lambda = 1.0;
                let mut trial = vec![0.0; p.len()];
                while lambda > 1e-12 {
                    for ((t, p), d) in trial.iter_mut().zip(p).zip(delta) {
                        *t = p + lambda * d;
                    }
                    if trial.iter().all(|&t| t > 0.0) && self.concave(&trial) >= f0 + 1e-4 * lambda * s0 {
                        return lambda;
                    }
                    lambda *= 0.5;
                }
                0.0
            }
        }
    }

    fn solve(&self, grid: &Arc<Grid>, cfg: &VdmConfig) -> Result<VdmFit> {
        cfg.validate()?;
        let d = self.d;
        let m = self.cells();
        let mut g = vec![1.0 / d as f64; d];
        let mut p = self.mix(&g);
        let mut grad = vec![0.0; m];
        let mut cert = vec![0.0; d];
        let mut delta = vec![0.0; m];
        let mut trace = vec![self.report(&p)];
        let mut best_cert;
        let mut iterations = 0;
        let mut converged = false;

        loop {
            self.dfdp(&p, &mut grad);
            self.certificates(&p, &grad, &mut cert);
            let (best, &top) = cert.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            best_cert = top;
            if top <= 1.0 + cfg.tol {
                converged = true;
                break;
            }
            if iterations == cfg.max_iters {
                break;
            }
            iterations += 1;

            // vertex direction: g ← (1-λ) g + λ δ_best
            for i in 0..m {
                delta[i] = self.row(i)[best] - p[i];
            }
            let lambda = self.line_search(&p, &delta, cfg.step_rule);
            if lambda > 0.0 {
                g.iter_mut().for_each(|w| *w *= 1.0 - lambda);
                g[best] += lambda;
                for i in 0..m {
                    p[i] += lambda * delta[i];
                }
            }

            // vertex exchange: move mass from the flattest supported atom to `best`
            self.dfdp(&p, &mut grad);
            self.certificates(&p, &grad, &mut cert);
            let worst = (0..d)
                .filter(|&j| g[j] > 0.0 && j != best)
                .min_by(|&a, &b| cert[a].total_cmp(&cert[b]));
            if let Some(worst) = worst {
                let mass = g[worst];
                for i in 0..m {
                    delta[i] = mass * (self.row(i)[best] - self.row(i)[worst]);
                }
                let lambda = self.line_search(&p, &delta, cfg.step_rule);
                if lambda > 0.0 {
                    let moved = if lambda >= 1.0 { mass } else { lambda * mass };
                    g[worst] = if lambda >= 1.0 { 0.0 } else { g[worst] - moved };
                    g[best] += moved;
                    for i in 0..m {
                        p[i] += lambda * delta[i];
                    }
                }
            }

            if iterations % 50 == 0 {
                // refresh against accumulated rounding in the incremental updates
                let total: f64 = g.iter().sum();
                g.iter_mut().for_each(|w| *w /= total);
                p = self.mix(&g);
            }
            trace.push(self.report(&p));
        }

        if !converged {
            warn!(
                "vertex-direction fit stopped after {iterations} iterations with certificate 1 + {:.3e} (tol {:.1e})",
                best_cert - 1.0,
                cfg.tol
            );
        }
        Ok(VdmFit {
            g: MixingWeights::from_unnormalized(Arc::clone(grid), g)?,
            objective_trace: trace,
            certificate: best_cert,
            iterations,
            converged,
        })
    }
}

fn check_input(h: &CountHistogram) -> Result<()> {
    if h.is_empty() {
        Err(Error::EmptyInput)
    } else {
        Ok(())
    }
}

/// Nonparametric maximum likelihood on the grid: maximizes `Σ_y n_y log p_g(y)`.
pub fn npmle_vdm(h: &CountHistogram, cfg: &VdmConfig) -> Result<VdmFit> {
    check_input(h)?;
    Problem::new(h, &cfg.grid, Kind::LogLikelihood).solve(&cfg.grid, cfg)
}

/// Minimum squared Hellinger distance between the empirical pmf and `p_g`.
pub fn npmd_hellinger(h: &CountHistogram, cfg: &VdmConfig) -> Result<VdmFit> {
    check_input(h)?;
    Problem::new(h, &cfg.grid, Kind::Hellinger).solve(&cfg.grid, cfg)
}

/// `max_j Σ_y (n_y/N) k(y|ϑ_j) / p_g(y)`, computed from scratch.
pub fn npmle_certificate(h: &CountHistogram, g: &MixingWeights) -> f64 {
    let problem = Problem::new(h, g.grid(), Kind::LogLikelihood);
    let p = problem.mix(g.weights());
    let mut grad = vec![0.0; p.len()];
    let mut cert = vec![0.0; g.len()];
    problem.dfdp(&p, &mut grad);
    problem.certificates(&p, &grad, &mut cert);
    cert.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Average log-likelihood `N⁻¹ Σ_y n_y log p_g(y)`.
pub fn average_log_likelihood(h: &CountHistogram, g: &MixingWeights) -> f64 {
    let problem = Problem::new(h, g.grid(), Kind::LogLikelihood);
    problem.report(&problem.mix(g.weights()))
}

/// `1 - Σ_y √(p̂(y) p_g(y))` over the observed counts.
pub fn hellinger_objective(h: &CountHistogram, g: &MixingWeights) -> f64 {
    let problem = Problem::new(h, g.grid(), Kind::Hellinger);
    problem.report(&problem.mix(g.weights()))
}

//! The streaming recursion `g_n = (1 - α_n) g_{n-1} + α_n g_{n-1}(· | Y_n)`.

pub mod codec;
pub mod rate;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result, StateError};
use crate::model::{posterior_into, Grid, KernelMatrixCache, MixingWeights};

pub use rate::{CltConditions, LearningRate, Schedule};

/// One step of the recursion, in place, shared with the product-grid engine.
///
/// `scratch` receives the posterior. On error `weights` is untouched.
pub(crate) fn newton_step(
    y: u64,
    log_kernel: &[f64],
    weights: &mut [f64],
    rate: f64,
    scratch: &mut Vec<f64>,
) -> Result<f64> {
    let log_p = posterior_into(y, log_kernel, weights, scratch)?;
    let keep = 1.0 - rate;
    let mut total = 0.0;
    for (w, &p) in weights.iter_mut().zip(scratch.iter()) {
        *w = keep * *w + rate * p;
        total += *w;
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(log_p)
}

/// Mixing distribution `g_n` after `n` observations, plus what is needed to continue.
#[derive(Debug, Clone)]
pub struct NewtonState {
    grid: Arc<Grid>,
    weights: Arc<[f64]>,
    n: u64,
    schedule: Schedule,
    cache: Arc<KernelMatrixCache>,
    scratch: Vec<f64>,
}

/// Options for [`NewtonState::update_stream_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StreamOptions {
    /// Call the snapshot hook after every `s` consumed observations.
    pub snapshot_every: Option<usize>,
    /// Skip observations with a degenerate likelihood (logged) instead of aborting.
    pub skip_degenerate: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamReport {
    pub consumed: usize,
    /// `(index in the stream, y)` of skipped observations.
    pub skipped: Vec<(usize, u64)>,
}

impl NewtonState {
    /// Starts from `g0`, or from the uniform distribution on the grid.
    pub fn new(grid: Arc<Grid>, g0: Option<MixingWeights>, schedule: impl Into<Schedule>) -> Result<Self> {
        let cache = Arc::new(KernelMatrixCache::new(Arc::clone(&grid)));
        Self::with_cache(cache, g0, schedule)
    }

    /// Like [`new`](Self::new) but reuses an existing kernel cache (and its grid).
    pub fn with_cache(
        cache: Arc<KernelMatrixCache>,
        g0: Option<MixingWeights>,
        schedule: impl Into<Schedule>,
    ) -> Result<Self> {
        let grid = Arc::clone(cache.grid());
        let g0 = match g0 {
            None => MixingWeights::uniform(Arc::clone(&grid)),
            Some(g) if g.len() != grid.len() => {
                return Err(Error::Config(format!(
                    "initial weights have {} entries but the grid has {} points",
                    g.len(),
                    grid.len()
                )))
            }
            Some(g) if g.grid().points() != grid.points() => {
                return Err(Error::Config("initial weights live on a different grid".into()))
            }
            Some(g) => g,
        };
        Ok(NewtonState {
            weights: Arc::clone(g0.shared_weights()),
            grid,
            n: 0,
            schedule: schedule.into(),
            cache,
            scratch: Vec::new(),
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn cache(&self) -> &Arc<KernelMatrixCache> {
        &self.cache
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The current `g_n`. Cheap: the weight buffer is shared, and later updates
    /// copy it instead of writing through the snapshot.
    pub fn snapshot(&self) -> MixingWeights {
        MixingWeights::from_shared(Arc::clone(&self.grid), Arc::clone(&self.weights))
    }

    /// Consumes one observation. On error the state is left as it was.
    pub fn update(&mut self, y: u64) -> Result<()> {
        let row = self.cache.row(y);
        let rate = self.schedule.at(self.n + 1);
        let n = self.n;
        let with_n = |e| match e {
            Error::DegenerateLikelihood { y, log_p, .. } => Error::DegenerateLikelihood { y, n: Some(n), log_p },
            other => other,
        };
        match Arc::get_mut(&mut self.weights) {
            Some(buf) => {
                newton_step(y, &row, buf, rate, &mut self.scratch).map_err(with_n)?;
            }
            None => {
                // a snapshot holds the buffer: write into a fresh copy
                let mut buf = self.weights.to_vec();
                newton_step(y, &row, &mut buf, rate, &mut self.scratch).map_err(with_n)?;
                self.weights = buf.into();
            }
        }
        self.n += 1;
        Ok(())
    }

    /// Folds [`update`](Self::update) over `ys`, stopping at the first failure.
    ///
    /// Observations before the failing one stay applied; the error reports its index.
    pub fn update_stream<I: IntoIterator<Item = u64>>(&mut self, ys: I) -> Result<()> {
        self.update_stream_with(ys, StreamOptions::default(), |_, _| {}).map(|_| ())
    }

    pub fn update_stream_with<I, F>(&mut self, ys: I, opts: StreamOptions, mut on_snapshot: F) -> Result<StreamReport>
    where
        I: IntoIterator<Item = u64>,
        F: FnMut(u64, MixingWeights),
    {
        let mut report = StreamReport::default();
        for (index, y) in ys.into_iter().enumerate() {
            match self.update(y) {
                Ok(()) => report.consumed += 1,
                Err(e @ Error::DegenerateLikelihood { .. }) if opts.skip_degenerate => {
                    warn!("skipping observation {index}: {e}");
                    report.skipped.push((index, y));
                    continue;
                }
                Err(e) => return Err(Error::Stream { index, source: Box::new(e) }),
            }
            if let Some(s) = opts.snapshot_every {
                if s > 0 && report.consumed % s == 0 {
                    on_snapshot(self.n, self.snapshot());
                }
            }
        }
        Ok(report)
    }

    /// `max_j |E[g_{n+1}(ϑ_j) | g_n] - g_n(ϑ_j)|` with the expectation over `Y ~ p_{g_n}`.
    ///
    /// Counts up to `y_max` are summed explicitly; the rest enter through the exact
    /// Poisson tail `P(Pois(ϑ_j) > y_max)`, on which the posterior sum collapses to
    /// `g_n(ϑ_j)`.
    pub fn martingale_residual(&self, y_max: u64) -> f64 {
        let rate = self.schedule.at(self.n + 1);
        let d = self.grid.len();
        let mut expected = vec![0.0; d];
        let mut post = Vec::with_capacity(d);
        for y in 0..=y_max {
            let row = self.cache.row(y);
            let Ok(log_p) = posterior_into(y, &row, &self.weights, &mut post) else {
                continue; // p_g(y) is below the representable range: contributes nothing
            };
            let p = log_p.exp();
            for (e, q) in expected.iter_mut().zip(&post) {
                *e += q * p;
            }
        }
        self.grid
            .points()
            .iter()
            .zip(self.weights.iter())
            .zip(&expected)
            .map(|((&theta, &g), &e)| {
                let tail = gamma_lr(y_max as f64 + 1.0, theta);
                let next = (1.0 - rate) * g + rate * (e + g * tail);
                (next - g).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let rate = self.schedule.power().ok_or_else(|| {
            Error::Config("only power learning-rate schedules can be saved".into())
        })?;
        Ok(codec::encode(&codec::RawState {
            k: 1,
            n: self.n,
            alpha: rate.alpha(),
            gamma: rate.gamma(),
            grid: self.grid.points().to_vec(),
            weights: self.weights.to_vec(),
        }))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let raw = codec::decode(bytes)?;
        if raw.k != 1 {
            return Err(StateError::Dimension { found: raw.k, expected: 1 }.into());
        }
        let payload = |e: Error| Error::State(StateError::Payload(e.to_string()));
        let rate = LearningRate::new(raw.alpha, raw.gamma).map_err(payload)?;
        let grid = Arc::new(Grid::new(raw.grid).map_err(payload)?);
        let g = MixingWeights::new(Arc::clone(&grid), raw.weights).map_err(payload)?;
        let mut state = NewtonState::new(grid, Some(g), rate)?;
        // keep the stored bits exactly; `MixingWeights::new` renormalizes
        state.weights = codec::decode(bytes)?.weights.into();
        state.n = raw.n;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Human-diffable dump, one atom per line.
    pub fn write_jsonl<W: Write>(&self, out: W) -> Result<()> {
        codec::write_jsonl(
            out,
            self.grid.points().iter().zip(self.weights.iter()).map(|(&t, &w)| (vec![t], w)),
        )
    }
}

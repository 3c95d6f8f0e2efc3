//! Learning-rate schedules for the recursion.

use std::sync::Arc;

use crate::error::{Error, Result};

/// The power schedule `α_n = (α + n)^{-γ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRate {
    alpha: f64,
    gamma: f64,
}

impl LearningRate {
    /// Requires `α > 0` and `1/2 < γ ≤ 1`.
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("learning-rate offset must be > 0, got {alpha}")));
        }
        if !(gamma > 0.5 && gamma <= 1.0) {
            return Err(Error::Config(format!(
                "learning-rate exponent must lie in (1/2, 1], got {gamma}"
            )));
        }
        Ok(LearningRate { alpha, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `α_n` for `n ≥ 1`; the first observation uses `α_1 = (α + 1)^{-γ}`.
    pub fn at(&self, n: u64) -> f64 {
        (self.alpha + n as f64).powf(-self.gamma)
    }
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate { alpha: 1.0, gamma: 0.99 }
    }
}

/// Any non-increasing sequence in `(0, 1]` can drive the recursion.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Power(LearningRate),
    /// Explicit `α_1, α_2, …`; the last value repeats once the list runs out.
    Custom(Arc<[f64]>),
}

impl Schedule {
    pub fn custom(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("custom schedule is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::Config(format!("learning rates must lie in (0, 1], got {v}")));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config("custom schedule must be non-increasing".into()));
        }
        Ok(Schedule::Custom(values.into()))
    }

    /// `α_n`, `n ≥ 1`.
    pub fn at(&self, n: u64) -> f64 {
        match self {
            Schedule::Power(rate) => rate.at(n),
            Schedule::Custom(values) => {
                let idx = (n.max(1) - 1) as usize;
                values[idx.min(values.len() - 1)]
            }
        }
    }

    pub fn power(&self) -> Option<&LearningRate> {
        match self {
            Schedule::Power(rate) => Some(rate),
            Schedule::Custom(_) => None,
        }
    }

    /// Whether the schedule meets the conditions of the central limit theorem:
    /// non-increasing rates and `Σ_n (α_n² / Σ_{k≥n} α_k²)² < ∞`.
    ///
    /// For the power schedule the ratio behaves like `(2γ-1)/(α+n)`, whose square is
    /// summable for every `γ ∈ (1/2, 1]`. A custom list ends in a constant rate, so its
    /// squared tail diverges and the condition fails.
    pub fn clt_conditions(&self) -> CltConditions {
        match self {
            Schedule::Power(_) => CltConditions { non_increasing: true, summable: true },
            Schedule::Custom(values) => CltConditions {
                non_increasing: values.windows(2).all(|w| w[1] <= w[0]),
                summable: false,
            },
        }
    }
}

impl From<LearningRate> for Schedule {
    fn from(rate: LearningRate) -> Self {
        Schedule::Power(rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CltConditions {
    pub non_increasing: bool,
    pub summable: bool,
}

impl CltConditions {
    pub fn holds(&self) -> bool {
        self.non_increasing && self.summable
    }
}

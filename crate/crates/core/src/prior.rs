//! Mixing distributions used to simulate data and as oracles.

use std::f64::consts::{FRAC_2_PI, SQRT_2};
use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal, Weibull};
use statrs::function::gamma::{gamma, gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::model::ln_factorial;

/// Gauss–Legendre nodes used to integrate the Poisson kernel against a continuous prior.
pub const QUADRATURE_NODES: usize = 10_000;

/// Upper-tail mass ignored when integrating a continuous prior.
const SUPPORT_TAIL: f64 = 1e-20;

fn legendre_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(QUADRATURE_NODES).unwrap()))
}

/// A prior `G` on the Poisson means.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    Weibull { shape: f64, scale: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Standard Gaussian scaled by `sigma`, truncated to the positive half-line.
    HalfGaussian { sigma: f64 },
    /// Shape/rate parameterization.
    Gamma { shape: f64, rate: f64 },
    /// Finitely many atoms `(θ, probability)`.
    Atoms(Vec<(f64, f64)>),
}

impl PriorSpec {
    pub fn weibull(shape: f64, scale: f64) -> Result<Self> {
        PriorSpec::Weibull { shape, scale }.validated()
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        PriorSpec::Uniform { lo, hi }.validated()
    }

    pub fn half_gaussian(sigma: f64) -> Result<Self> {
        PriorSpec::HalfGaussian { sigma }.validated()
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        PriorSpec::Gamma { shape, rate }.validated()
    }

    /// Atoms are sorted by location; probabilities are renormalized.
    pub fn atoms(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if total > 0.0 {
            atoms.iter_mut().for_each(|a| a.1 /= total);
        }
        PriorSpec::Atoms(atoms).validated()
    }

    pub fn validated(self) -> Result<Self> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let ok = match &self {
            PriorSpec::Weibull { shape, scale } => pos(*shape) && pos(*scale),
            PriorSpec::Uniform { lo, hi } => *lo >= 0.0 && hi.is_finite() && lo < hi,
            PriorSpec::HalfGaussian { sigma } => pos(*sigma),
            PriorSpec::Gamma { shape, rate } => pos(*shape) && pos(*rate),
            PriorSpec::Atoms(atoms) => {
                !atoms.is_empty()
                    && atoms.iter().all(|&(t, p)| t >= 0.0 && t.is_finite() && p >= 0.0)
                    && atoms.windows(2).all(|w| w[0].0 < w[1].0)
                    && atoms.iter().map(|a| a.1).sum::<f64>() > 0.0
            }
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::Config(format!("invalid prior parameters: {self}")))
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, PriorSpec::Atoms(_))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match *self {
            PriorSpec::Weibull { shape, scale } => -(-(x / scale).powf(shape)).exp_m1(),
            PriorSpec::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            PriorSpec::HalfGaussian { sigma } => libm::erf(x / (sigma * SQRT_2)),
            PriorSpec::Gamma { shape, rate } if x > 0.0 => gamma_lr(shape, rate * x),
            PriorSpec::Gamma { .. } => 0.0,
            PriorSpec::Atoms(ref atoms) => atoms.iter().filter(|a| a.0 <= x).map(|a| a.1).sum(),
        }
    }

    /// `1 - F(x)`, accurate in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        match *self {
            PriorSpec::Weibull { shape, scale } => (-(x / scale).powf(shape)).exp(),
            PriorSpec::Uniform { lo, hi } => ((hi - x) / (hi - lo)).clamp(0.0, 1.0),
            PriorSpec::HalfGaussian { sigma } => libm::erfc(x / (sigma * SQRT_2)),
            PriorSpec::Gamma { shape, rate } if x > 0.0 => gamma_ur(shape, rate * x),
            PriorSpec::Gamma { .. } => 1.0,
            PriorSpec::Atoms(ref atoms) => atoms.iter().filter(|a| a.0 > x).map(|a| a.1).sum(),
        }
    }

    /// `G((lo, hi])`, using whichever of the CDF or survival function is better conditioned.
    pub fn interval_mass(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        if self.cdf(lo) < 0.5 {
            (self.cdf(hi) - self.cdf(lo)).max(0.0)
        } else {
            (self.sf(lo) - self.sf(hi)).max(0.0)
        }
    }

    /// Density for continuous priors; `None` for atoms.
    pub fn pdf(&self, x: f64) -> Option<f64> {
        if self.is_discrete() {
            return None;
        }
        if x < 0.0 {
            return Some(0.0);
        }
        match *self {
            PriorSpec::Weibull { shape, scale } => {
                let z = x / scale;
                Some(shape / scale * z.powf(shape - 1.0) * (-z.powf(shape)).exp())
            }
            PriorSpec::Uniform { lo, hi } => Some(if x >= lo && x <= hi { 1.0 / (hi - lo) } else { 0.0 }),
            PriorSpec::HalfGaussian { sigma } => {
                Some(FRAC_2_PI.sqrt() / sigma * (-0.5 * (x / sigma).powi(2)).exp())
            }
            PriorSpec::Gamma { shape, rate } => Some(
                (shape * rate.ln() + (shape - 1.0) * x.ln() - rate * x - ln_gamma(shape)).exp(),
            ),
            PriorSpec::Atoms(_) => None,
        }
    }

    /// Interval carrying all but a negligible share of the mass.
    pub fn effective_support(&self) -> (f64, f64) {
        let tail_ln = SUPPORT_TAIL.ln();
        match *self {
            PriorSpec::Weibull { shape, scale } => (0.0, scale * (-tail_ln).powf(1.0 / shape)),
            PriorSpec::Uniform { lo, hi } => (lo, hi),
            PriorSpec::HalfGaussian { sigma } => (0.0, sigma * (-2.0 * tail_ln).sqrt()),
            PriorSpec::Gamma { shape, rate } => {
                let mean = shape / rate;
                let sd = shape.sqrt() / rate;
                let mut hi = mean + 10.0 * sd;
                while self.sf(hi) > SUPPORT_TAIL {
                    hi += 5.0 * sd;
                }
                (0.0, hi)
            }
            PriorSpec::Atoms(ref atoms) => (atoms[0].0, atoms[atoms.len() - 1].0),
        }
    }

    /// `E[θ^k]` for `k` in {1, 2}.
    pub fn theta_moment(&self, k: u32) -> f64 {
        let k = k as i32;
        match *self {
            PriorSpec::Weibull { shape, scale } => scale.powi(k) * gamma(1.0 + k as f64 / shape),
            PriorSpec::Uniform { lo, hi } => {
                let kp = k as f64 + 1.0;
                (hi.powf(kp) - lo.powf(kp)) / (kp * (hi - lo))
            }
            PriorSpec::HalfGaussian { sigma } => match k {
                1 => sigma * FRAC_2_PI.sqrt(),
                _ => sigma * sigma,
            },
            PriorSpec::Gamma { shape, rate } => match k {
                1 => shape / rate,
                _ => shape * (shape + 1.0) / (rate * rate),
            },
            PriorSpec::Atoms(ref atoms) => atoms.iter().map(|&(t, p)| p * t.powi(k)).sum(),
        }
    }

    /// Second moment of the marginal count, `E[Y²] = E[θ²] + E[θ]`.
    pub fn count_second_moment(&self) -> f64 {
        self.theta_moment(2) + self.theta_moment(1)
    }

    /// A truncation point for series over counts drawn from this prior.
    pub fn default_y_max(&self) -> u64 {
        let top = self.effective_support().1;
        (top + 20.0 * top.sqrt()).ceil() as u64 + 10
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PriorSpec::Weibull { shape, scale } => {
                Weibull::new(scale, shape).expect("validated").sample(rng)
            }
            PriorSpec::Uniform { lo, hi } => rng.random_range(lo..hi),
            PriorSpec::HalfGaussian { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                sigma * z.abs()
            }
            PriorSpec::Gamma { shape, rate } => {
                Gamma::new(shape, 1.0 / rate).expect("validated").sample(rng)
            }
            PriorSpec::Atoms(ref atoms) => {
                let idx = WeightedIndex::new(atoms.iter().map(|a| a.1))
                    .expect("validated")
                    .sample(rng);
                atoms[idx].0
            }
        }
    }

    /// Marginal pmf `p_G(y)` for `y = 0..=y_max`.
    ///
    /// Atoms are summed exactly, the Gamma prior uses its negative-binomial closed
    /// form, other priors are integrated with a 10⁴-node Gauss–Legendre rule over
    /// their effective support.
    pub fn marginal_pmf(&self, y_max: u64) -> Vec<f64> {
        match *self {
            PriorSpec::Atoms(ref atoms) => (0..=y_max)
                .map(|y| {
                    atoms
                        .iter()
                        .map(|&(t, p)| p * poisson_pmf(y, t))
                        .sum()
                })
                .collect(),
            PriorSpec::Gamma { shape, rate } => (0..=y_max)
                .map(|y| {
                    let yf = y as f64;
                    (ln_gamma(yf + shape) - ln_gamma(shape) - ln_factorial(y)
                        + shape * (rate / (1.0 + rate)).ln()
                        - yf * (1.0 + rate).ln())
                    .exp()
                })
                .collect(),
            _ => {
                let (lo, hi) = self.effective_support();
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                let nodes: Vec<(f64, f64)> = legendre_rule()
                    .iter()
                    .map(|(x, w)| {
                        let t = mid + half * x;
                        (t, half * w * self.pdf(t).unwrap_or(0.0))
                    })
                    .filter(|&(t, w)| t > 0.0 && w > 0.0)
                    .collect();
                (0..=y_max)
                    .map(|y| nodes.iter().map(|&(t, w)| w * poisson_pmf(y, t)).sum())
                    .collect()
            }
        }
    }
}

/// `k(y | θ)`, with the `θ = 0` limit.
pub fn poisson_pmf(y: u64, theta: f64) -> f64 {
    if theta <= 0.0 {
        return if y == 0 { 1.0 } else { 0.0 };
    }
    (-theta + y as f64 * theta.ln() - ln_factorial(y)).exp()
}

/// Draws `Y ~ Poisson(θ)`.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, theta: f64) -> u64 {
    if theta <= 0.0 {
        return 0;
    }
    Poisson::new(theta).expect("positive mean").sample(rng) as u64
}

impl fmt::Display for PriorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorSpec::Weibull { shape, scale } => write!(f, "weibull:{shape},{scale}"),
            PriorSpec::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
            PriorSpec::HalfGaussian { sigma } => write!(f, "half-gaussian:{sigma}"),
            PriorSpec::Gamma { shape, rate } => write!(f, "gamma:{shape},{rate}"),
            PriorSpec::Atoms(atoms) => {
                write!(f, "atoms:")?;
                for (i, (t, p)) in atoms.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{t}@{p}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for PriorSpec {
    type Err = Error;

    /// `weibull:5,3`, `uniform:0,3`, `half-gaussian[:σ]`, `gamma:2,1`, `atoms:0.5@0.3,2@0.7`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse prior '{s}'"));
        let (family, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .filter(|a| !a.trim().is_empty())
                .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
                .collect()
        };
        match (family.trim().to_ascii_lowercase().as_str(), nums()) {
            ("weibull", Ok(v)) if v.len() == 2 => PriorSpec::weibull(v[0], v[1]),
            ("uniform", Ok(v)) if v.len() == 2 => PriorSpec::uniform(v[0], v[1]),
            ("half-gaussian" | "halfgaussian" | "half-normal", Ok(v)) if v.len() <= 1 => {
                PriorSpec::half_gaussian(v.first().copied().unwrap_or(1.0))
            }
            ("gamma", Ok(v)) if v.len() == 2 => PriorSpec::gamma(v[0], v[1]),
            ("atoms" | "grid-atoms", _) => {
                let atoms = args
                    .split(',')
                    .map(|a| {
                        let (t, p) = a.split_once('@').ok_or_else(bad)?;
                        Ok((
                            t.trim().parse().map_err(|_| bad())?,
                            p.trim().parse().map_err(|_| bad())?,
                        ))
                    })
                    .collect::<Result<Vec<(f64, f64)>>>()?;
                PriorSpec::atoms(atoms)
            }
            _ => Err(bad()),
        }
    }
}

//! Comparison estimators: Robbins, grid NPMLE, minimum Hellinger and Gamma–Poisson.

pub mod peb;
pub mod vdm;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::info;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::qb_estimate;
use crate::model::CountHistogram;

pub use peb::{peb_gamma_estimate, peb_gamma_fit, GammaHyper, PebFit};
pub use vdm::{npmd_hellinger, npmle_certificate, npmle_vdm, StepRule, VdmConfig, VdmFit};

/// `(y + 1) n_{y+1} / n_y`.
pub fn robbins_estimate(h: &CountHistogram, y: u64) -> Result<f64> {
    match h.count(y) {
        0 => Err(Error::UndefinedAt { y }),
        ny => Ok((y + 1) as f64 * h.count(y + 1) as f64 / ny as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Robbins,
    Npmle,
    Npmd,
    Peb,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Robbins, Method::Npmle, Method::Npmd, Method::Peb];

    /// Row label used in printed tables.
    pub fn label(&self) -> &'static str {
        match self {
            Method::Robbins => "NP-EB",
            Method::Npmle => "NP-ML",
            Method::Npmd => "NP-MD",
            Method::Peb => "P-EB",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Robbins => "robbins",
            Method::Npmle => "npmle",
            Method::Npmd => "npmd",
            Method::Peb => "peb",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "robbins" | "np-eb" => Ok(Method::Robbins),
            "npmle" | "np-ml" => Ok(Method::Npmle),
            "npmd" | "np-md" | "hellinger" => Ok(Method::Npmd),
            "peb" | "p-eb" | "gamma" => Ok(Method::Peb),
            _ => Err(Error::Config(format!(
                "unknown method '{s}' (expected robbins, npmle, npmd or peb)"
            ))),
        }
    }
}

/// One method's estimates at a list of counts.
#[derive(Debug, Clone)]
pub struct EstimateRow {
    pub label: String,
    pub estimates: Vec<f64>,
    /// Fitted objective where the method has one (log-likelihood, Hellinger distance).
    pub objective: Option<f64>,
}

/// Applies `method` at every observed count.
///
/// The grid methods plug their fitted `g` into the ratio estimator; `cfg` overrides
/// their default 1000-point grid.
pub fn baseline_estimates(h: &CountHistogram, method: Method, cfg: Option<&VdmConfig>) -> Result<EstimateRow> {
    let ys: Vec<u64> = h.iter().map(|(y, _)| y).collect();
    baseline_estimates_at(h, method, cfg, &ys)
}

pub fn baseline_estimates_at(
    h: &CountHistogram,
    method: Method,
    cfg: Option<&VdmConfig>,
    ys: &[u64],
) -> Result<EstimateRow> {
    if h.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (estimates, objective) = match method {
        Method::Robbins => (ys.iter().map(|&y| robbins_estimate(h, y)).collect::<Result<_>>()?, None),
        Method::Npmle | Method::Npmd => {
            let default_cfg;
            let cfg = match cfg {
                Some(c) => c,
                None => {
                    default_cfg = VdmConfig::for_histogram(h)?;
                    &default_cfg
                }
            };
            let fit = if method == Method::Npmle { npmle_vdm(h, cfg)? } else { npmd_hellinger(h, cfg)? };
            info!(
                "{} objective {:.6e} after {} iterations (certificate {:.3e})",
                method.label(),
                fit.objective(),
                fit.iterations,
                fit.certificate
            );
            let est = ys.iter().map(|&y| qb_estimate(&fit.g, y)).collect::<Result<_>>()?;
            (est, Some(fit.objective()))
        }
        Method::Peb => {
            let fit = peb_gamma_fit(h)?;
            info!("P-EB hyperparameters {:?}, log-likelihood {:.6}", fit.hyper, fit.log_likelihood);
            (ys.iter().map(|&y| peb_gamma_estimate(&fit.hyper, y)).collect(), Some(fit.log_likelihood))
        }
    };
    Ok(EstimateRow { label: method.label().to_string(), estimates, objective })
}

/// Estimates of several methods over a common list of counts.
#[derive(Debug, Clone, Default)]
pub struct EstimateTable {
    pub ys: Vec<u64>,
    pub rows: Vec<EstimateRow>,
}

#[derive(Serialize)]
struct CsvRecord<'a> {
    y: u64,
    method: &'a str,
    estimate: f64,
}

impl EstimateTable {
    pub fn new(ys: Vec<u64>) -> Self {
        EstimateTable { ys, rows: Vec::new() }
    }

    pub fn push(&mut self, row: EstimateRow) -> Result<()> {
        if row.estimates.len() != self.ys.len() {
            return Err(Error::LengthMismatch { left: row.estimates.len(), right: self.ys.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    /// Long format: `y,method,estimate`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            for (&y, &estimate) in self.ys.iter().zip(&row.estimates) {
                w.serialize(CsvRecord { y, method: &row.label, estimate })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Wide format, one row per method and one column per count, two decimals.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| method |");
        for y in &self.ys {
            s.push_str(&format!(" {y} |"));
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(self.ys.len()));
        s.push('\n');
        for row in &self.rows {
            s.push_str(&format!("| {} |", row.label));
            for e in &row.estimates {
                s.push_str(&format!(" {e:.2} |"));
            }
            s.push('\n');
        }
        s
    }
}

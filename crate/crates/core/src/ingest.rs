//! Reading count data from files.
//!
//! Three layouts are understood:
//! - counts-lines: one non-negative integer per line, blank lines ignored;
//! - histogram-csv: header `y,count`, one row per distinct count;
//! - event-window TSV: `entity_id  origin_epoch_s  event_epoch_s`, one row per event.
//!   An entity without events has one row whose event field is empty or `-`. Its
//!   count is the number of events with `0 ≤ t_event − t_origin ≤ window`.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::CountHistogram;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IngestFormat {
    CountsLines,
    HistogramCsv,
    EventWindow { window_s: f64 },
}

impl IngestFormat {
    pub fn event_window(window_s: f64) -> Result<Self> {
        if !(window_s > 0.0 && window_s.is_finite()) {
            return Err(Error::Config(format!("event window must be positive, got {window_s}")));
        }
        Ok(IngestFormat::EventWindow { window_s })
    }
}

impl FromStr for IngestFormat {
    type Err = Error;

    /// `counts`, `histogram` or `event-window:<seconds>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "counts" | "counts-lines" => Ok(IngestFormat::CountsLines),
            "histogram" | "histogram-csv" => Ok(IngestFormat::HistogramCsv),
            other => match other.split_once(':') {
                Some(("event-window", w)) => {
                    let w = w.parse().map_err(|_| Error::Config(format!("bad event window '{w}'")))?;
                    IngestFormat::event_window(w)
                }
                _ => Err(Error::Config(format!(
                    "unknown input format '{other}' (expected counts, histogram or event-window:<seconds>)"
                ))),
            },
        }
    }
}

impl fmt::Display for IngestFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestFormat::CountsLines => f.write_str("counts"),
            IngestFormat::HistogramCsv => f.write_str("histogram"),
            IngestFormat::EventWindow { window_s } => write!(f, "event-window:{window_s}"),
        }
    }
}

pub fn ingest(path: &Path, fmt: IngestFormat) -> Result<CountHistogram> {
    ingest_reader(File::open(path)?, fmt)
}

pub fn ingest_reader<R: Read>(input: R, fmt: IngestFormat) -> Result<CountHistogram> {
    let h = match fmt {
        IngestFormat::CountsLines => CountHistogram::from_counts(read_counts(input)?),
        IngestFormat::HistogramCsv => read_histogram_csv(input)?,
        IngestFormat::EventWindow { window_s } => CountHistogram::from_counts(read_event_window(input, window_s)?),
    };
    if h.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(h)
}

/// The counts of a counts-lines file, in file order.
pub fn read_counts<R: Read>(input: R) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let y = t.parse().map_err(|_| Error::Parse {
            line: i as u64 + 1,
            msg: format!("expected a non-negative integer, got '{t}'"),
        })?;
        out.push(y);
    }
    Ok(out)
}

fn read_histogram_csv<R: Read>(input: R) -> Result<CountHistogram> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "y" || &headers[1] != "count" {
        return Err(Error::Parse { line: 1, msg: format!("expected header 'y,count', got '{}'", headers.iter().collect::<Vec<_>>().join(",")) });
    }
    let mut h = CountHistogram::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<u64> {
            rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected two non-negative integers, got '{}'", rec.iter().collect::<Vec<_>>().join(",")),
            })
        };
        let (y, n) = (field(0)?, field(1)?);
        if h.count(y) > 0 {
            return Err(Error::Parse { line, msg: format!("count y = {y} listed twice") });
        }
        h.add(y, n);
    }
    Ok(h)
}

/// Per-entity event counts, in order of first appearance.
pub fn read_event_window<R: Read>(input: R, window_s: f64) -> Result<Vec<u64>> {
    let mut order: Vec<String> = Vec::new();
    let mut entities: HashMap<String, (f64, u64)> = HashMap::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let lineno = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if lineno == 1 && fields.first() == Some(&"entity_id") {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: lineno, msg };
        if fields.len() < 2 || fields.len() > 3 {
            return Err(bad(format!("expected 2 or 3 tab-separated fields, got {}", fields.len())));
        }
        let parse_time = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|t| t.is_finite())
                .ok_or_else(|| bad(format!("bad timestamp '{s}'")))
        };
        let origin = parse_time(fields[1])?;
        let event = match fields.get(2) {
            None | Some(&"") | Some(&"-") => None,
            Some(s) => Some(parse_time(s)?),
        };
        let id = fields[0];
        let entry = match entities.get_mut(id) {
            Some(e) => {
                if e.0 != origin {
                    return Err(bad(format!("entity '{id}' has origin {origin}, earlier rows say {}", e.0)));
                }
                e
            }
            None => {
                order.push(id.to_string());
                entities.entry(id.to_string()).or_insert((origin, 0))
            }
        };
        if let Some(t) = event {
            let lag = t - origin;
            if (0.0..=window_s).contains(&lag) {
                entry.1 += 1;
            }
        }
    }
    Ok(order.iter().map(|id| entities[id].1).collect())
}

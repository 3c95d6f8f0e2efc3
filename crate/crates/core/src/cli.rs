//! Command-line front end. `main` only parses arguments and maps errors to exit codes.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::{baseline_estimates_at, EstimateTable, Method, VdmConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    regret_decay_diagnostic, run_experiment, table_markdown, timing_harness, write_metrics_csv, DecayConfig,
    Estimator, ExperimentConfig, GridPolicy, Init, TimingConfig,
};
use crate::grid::{build_equispaced_grid, GridSpec};
use crate::inference::{credible_interval, credible_interval_with, EstimateReport};
use crate::ingest::{ingest, read_counts, read_event_window, IngestFormat};
use crate::model::{CountHistogram, Grid};
use crate::newton::{LearningRate, NewtonState, StreamOptions};
use crate::prior::PriorSpec;

#[derive(Debug, Parser)]
#[command(name = "qbeb", version, about = "Streaming empirical Bayes estimates of Poisson means")]
pub struct Cli {
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for simulation and shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Omit the leading `#` provenance line of CSV output.
    #[arg(long, global = true)]
    pub no_meta: bool,
    /// Emit a markdown table instead of CSV.
    #[arg(long, global = true)]
    pub markdown: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the Newton recursion on simulated or observed counts.
    Fit(FitArgs),
    /// Point estimates and credible intervals from a saved state.
    Estimate(EstimateArgs),
    /// Batch comparison estimators on a histogram.
    Baseline(BaselineArgs),
    /// Per-update timing across grid sizes.
    Bench(BenchArgs),
    /// Regret decay against a discrete oracle.
    Regret(RegretArgs),
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
}

impl RateArgs {
    fn rate(&self) -> Result<LearningRate> {
        LearningRate::new(self.alpha, self.gamma)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Simulate from this prior, e.g. `weibull:5,3`.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub prior: Option<PriorSpec>,
    /// Sample sizes for simulation.
    #[arg(long, value_delimiter = ',', default_value = "500")]
    pub n: Vec<usize>,
    /// Observed counts.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `counts`, `histogram` or `event-window:<seconds>`.
    #[arg(long, default_value = "counts")]
    pub format: IngestFormat,
    #[arg(long, default_value_t = 0.025)]
    pub eta: f64,
    /// Largest grid size; the grid keeps its range and is thinned to this many points.
    #[arg(long, default_value_t = 10_000)]
    pub dcap: usize,
    /// Fixed grid `lo:hi:d` instead of the data-driven one.
    #[arg(long, conflicts_with_all = ["eta", "dcap"])]
    pub grid: Option<String>,
    #[command(flatten)]
    pub rate: RateArgs,
    /// Number of simulated replications, seeded `seed, seed+1, …`.
    #[arg(long, default_value_t = 1)]
    pub replications: u64,
    /// Estimators to score on simulated data (`qbeb`, `robbins`, `npmle`, `npmd`, `peb`, `all`).
    #[arg(long, value_delimiter = ',', default_value = "qbeb")]
    pub methods: Vec<String>,
    /// Iteration budget of the grid baselines.
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// State file written after the stream (and read first with `--resume`).
    #[arg(long, requires = "input", conflicts_with = "prior")]
    pub state: Option<PathBuf>,
    /// Continue from `--state` instead of starting fresh.
    #[arg(long, requires = "state")]
    pub resume: bool,
    /// Credible level of the intervals reported for observed data.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Skip counts with a degenerate likelihood instead of failing.
    #[arg(long)]
    pub skip_degenerate: bool,
    /// Write `NaN` instead of measured times, for byte-identical output.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub state: PathBuf,
    /// Counts to report: `0..7` (inclusive) or `0,2,5`.
    #[arg(long, value_parser = parse_counts)]
    pub y: CountList,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Truncation of the variance series; defaults to the grid's own.
    #[arg(long)]
    pub y_max: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// `robbins`, `npmle`, `npmd`, `peb` or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub method: Vec<String>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "histogram")]
    pub format: IngestFormat,
    /// Counts to report; defaults to the observed ones.
    #[arg(long, value_parser = parse_counts)]
    pub y: Option<CountList>,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "weibull:5,3")]
    pub prior: PriorSpec,
    #[arg(long, value_delimiter = ',', default_value = "1000,10000")]
    pub d: Vec<usize>,
    /// Update-index windows `lo-hi`, 1-based and inclusive.
    #[arg(long, value_delimiter = ',', default_value = "100-200,900-1000", value_parser = parse_window)]
    pub windows: Vec<(u64, u64)>,
    #[arg(long, default_value_t = 0.025)]
    pub lo: f64,
    #[arg(long, default_value_t = 250.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    #[command(flatten)]
    pub rate: RateArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Uniform,
    Oracle,
}

#[derive(Debug, Args)]
pub struct RegretArgs {
    /// Discrete oracle, e.g. `atoms:0.5@0.3,1.5@0.25,3@0.2,5@0.15,8@0.1`.
    #[arg(long, default_value = "atoms:0.5@0.3,1.5@0.25,3@0.2,5@0.15,8@0.1")]
    pub prior: PriorSpec,
    #[arg(long, value_delimiter = ',', default_value = "2000,6325,20000")]
    pub checkpoints: Vec<u64>,
    #[arg(long, default_value_t = 20)]
    pub replications: u64,
    #[arg(long, value_enum, default_value = "uniform")]
    pub init: InitArg,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.75)]
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountList(pub Vec<u64>);

fn parse_counts(s: &str) -> std::result::Result<CountList, String> {
    let bad = || format!("expected 'a..b' or a comma-separated list of counts, got '{s}'");
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok(CountList((a..=b).collect()));
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<std::result::Result<_, _>>().map(CountList)
}

fn parse_window(s: &str) -> std::result::Result<(u64, u64), String> {
    let bad = || format!("expected a window 'lo-hi', got '{s}'");
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn parse_fixed_grid(s: &str) -> Result<(f64, f64, usize)> {
    let bad = || Error::Config(format!("expected a grid 'lo:hi:d', got '{s}'"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok((
        parts[0].parse().map_err(|_| bad())?,
        parts[1].parse().map_err(|_| bad())?,
        parts[2].parse().map_err(|_| bad())?,
    ))
}

fn parse_estimators(names: &[String]) -> Result<Vec<Estimator>> {
    if names.iter().any(|n| n == "all") {
        return Ok(Estimator::ALL.to_vec());
    }
    names.iter().map(|n| n.parse()).collect()
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    if names.iter().any(|n| n == "all") {
        return Ok(Method::ALL.to_vec());
    }
    names.iter().map(|n| n.parse()).collect()
}

/// Collects output in memory and writes it in one go at the end.
struct Output {
    buf: Vec<u8>,
}

impl Output {
    fn new(cli: &Cli, what: &str) -> Self {
        let mut buf = Vec::new();
        if !cli.no_meta && !cli.markdown {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            let _ = writeln!(buf, "# qbeb {} {what} seed={} unix_time={now}", env!("CARGO_PKG_VERSION"), cli.seed);
        }
        Output { buf }
    }

    fn finish(self, cli: &Cli) -> Result<()> {
        match &cli.out {
            Some(path) => std::fs::write(path, &self.buf)?,
            None => std::io::stdout().lock().write_all(&self.buf)?,
        }
        Ok(())
    }
}

fn write_csv_rows<T: Serialize>(out: &mut Vec<u8>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) if a.input.is_some() => fit_data(cli, a),
        Command::Fit(a) => fit_simulated(cli, a),
        Command::Estimate(a) => estimate(cli, a),
        Command::Baseline(a) => baseline(cli, a),
        Command::Bench(a) => bench(cli, a),
        Command::Regret(a) => regret(cli, a),
    }
}

fn grid_policy(a: &FitArgs) -> Result<GridPolicy> {
    Ok(match &a.grid {
        Some(s) => {
            let (lo, hi, d) = parse_fixed_grid(s)?;
            GridPolicy::Fixed { lo, hi, d }
        }
        None => GridPolicy::FromData { eta: a.eta, d_cap: Some(a.dcap) },
    })
}

fn fit_simulated(cli: &Cli, a: &FitArgs) -> Result<()> {
    let prior = a.prior.clone().expect("clap enforces --prior or --input");
    if a.replications == 0 {
        return Err(Error::Config("--replications must be at least 1".into()));
    }
    let estimators = parse_estimators(&a.methods)?;
    let mut rows = Vec::new();
    for &n in &a.n {
        let cfg = ExperimentConfig {
            prior: prior.clone(),
            n,
            grid: grid_policy(a)?,
            rate: a.rate.rate()?,
            seeds: (cli.seed..cli.seed + a.replications).collect(),
            vdm_max_iters: a.max_iters,
        };
        info!("simulating {prior}, n = {n}, {} replications", a.replications);
        rows.extend(run_experiment(&cfg, &estimators)?);
    }
    if a.no_timing {
        rows.iter_mut().for_each(|r| r.cpu_per_update_ms = f64::NAN);
    }
    let mut out = Output::new(cli, "fit");
    if cli.markdown {
        out.buf.extend_from_slice(table_markdown(&rows).as_bytes());
    } else {
        write_metrics_csv(&rows, &mut out.buf)?;
    }
    out.finish(cli)
}

/// The observation stream of a data file. Histograms carry no order, so their
/// expansion is shuffled with the run's seed.
fn read_stream(path: &std::path::Path, format: IngestFormat, seed: u64) -> Result<Vec<u64>> {
    let ys = match format {
        IngestFormat::CountsLines => read_counts(std::fs::File::open(path)?)?,
        IngestFormat::EventWindow { window_s } => read_event_window(std::fs::File::open(path)?, window_s)?,
        IngestFormat::HistogramCsv => {
            let h = ingest(path, format)?;
            let mut ys: Vec<u64> = h.iter().flat_map(|(y, n)| std::iter::repeat_n(y, n as usize)).collect();
            ys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            ys
        }
    };
    if ys.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(ys)
}

fn fit_data(cli: &Cli, a: &FitArgs) -> Result<()> {
    let path = a.input.as_ref().expect("checked by caller");
    let ys = read_stream(path, a.format, cli.seed)?;
    let h = CountHistogram::from_counts(ys.iter().copied());
    let mut state = if a.resume {
        let state_path = a.state.as_ref().expect("clap enforces --state with --resume");
        let s = NewtonState::load(state_path)?;
        info!("resuming from {} after {} observations", state_path.display(), s.n());
        s
    } else {
        let grid = match grid_policy(a)? {
            GridPolicy::Fixed { lo, hi, d } => Grid::equispaced(lo, hi, d)?,
            _ => build_equispaced_grid(&GridSpec::from_data(&h, a.eta, Some(a.dcap))?)?,
        };
        info!("grid of {} points on [{}, {}]", grid.len(), grid.first(), grid.last());
        NewtonState::new(Arc::new(grid), None, a.rate.rate()?)?
    };
    let opts = StreamOptions { snapshot_every: None, skip_degenerate: a.skip_degenerate };
    let report = state.update_stream_with(ys.iter().copied(), opts, |_, _| {})?;
    if !report.skipped.is_empty() {
        log::warn!("skipped {} observations with a degenerate likelihood", report.skipped.len());
    }
    if let Some(p) = &a.state {
        state.save(p)?;
    }
    let reports: Vec<EstimateReport> =
        h.iter().map(|(y, _)| credible_interval(&state, y, a.level)).collect::<Result<_>>()?;
    emit_reports(cli, "fit", &reports)
}

fn emit_reports(cli: &Cli, what: &str, reports: &[EstimateReport]) -> Result<()> {
    let mut out = Output::new(cli, what);
    if cli.markdown {
        let mut s = String::from("| y | estimate | variance | b_n | low | high |\n|---:|---:|---:|---:|---:|---:|\n");
        for r in reports {
            s.push_str(&format!(
                "| {} | {:.4} | {:.4} | {:.1} | {:.4} | {:.4} |\n",
                r.y, r.theta_hat, r.variance, r.b_n, r.ci_low, r.ci_high
            ));
        }
        out.buf.extend_from_slice(s.as_bytes());
    } else {
        write_csv_rows(&mut out.buf, reports)?;
    }
    out.finish(cli)
}

fn estimate(cli: &Cli, a: &EstimateArgs) -> Result<()> {
    let state = NewtonState::load(&a.state)?;
    let reports: Vec<EstimateReport> = a
        .y
        .0
        .iter()
        .map(|&y| match a.y_max {
            Some(m) => credible_interval_with(&state, y, a.level, m),
            None => credible_interval(&state, y, a.level),
        })
        .collect::<Result<_>>()?;
    emit_reports(cli, "estimate", &reports)
}

fn baseline(cli: &Cli, a: &BaselineArgs) -> Result<()> {
    let h = ingest(&a.input, a.format)?;
    let methods = parse_methods(&a.method)?;
    let ys = match &a.y {
        Some(list) => list.0.clone(),
        None => h.iter().map(|(y, _)| y).collect(),
    };
    let mut vdm = VdmConfig::for_histogram(&h)?;
    vdm.max_iters = a.max_iters;
    vdm.tol = a.tol;
    let mut table = EstimateTable::new(ys.clone());
    for m in methods {
        table.push(baseline_estimates_at(&h, m, Some(&vdm), &ys)?)?;
    }
    let mut out = Output::new(cli, "baseline");
    if cli.markdown {
        out.buf.extend_from_slice(table.to_markdown().as_bytes());
    } else {
        table.write_csv(&mut out.buf)?;
    }
    out.finish(cli)
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let cfg = TimingConfig {
        prior: a.prior.clone(),
        lo: a.lo,
        hi: a.hi,
        rate: a.rate.rate()?,
        seed: cli.seed,
        warmup: a.warmup,
    };
    let rows = timing_harness(&cfg, &a.d, &a.windows)?;
    let mut out = Output::new(cli, "bench");
    if cli.markdown {
        let mut s = String::from("| d | updates | median ms |\n|---:|---|---:|\n");
        for r in &rows {
            s.push_str(&format!("| {} | {}-{} | {:.4} |\n", r.d, r.n_lo, r.n_hi, r.median_ms));
        }
        out.buf.extend_from_slice(s.as_bytes());
    } else {
        write_csv_rows(&mut out.buf, &rows)?;
    }
    out.finish(cli)
}

#[derive(Serialize)]
struct RegretRow {
    seed: u64,
    n: u64,
    regret: f64,
    tv: f64,
}

fn regret(cli: &Cli, a: &RegretArgs) -> Result<()> {
    if a.replications == 0 {
        return Err(Error::Config("--replications must be at least 1".into()));
    }
    let cfg = DecayConfig {
        prior: a.prior.clone(),
        rate: LearningRate::new(a.alpha, a.gamma)?,
        seeds: (cli.seed..cli.seed + a.replications).collect(),
        init: match a.init {
            InitArg::Uniform => Init::Uniform,
            InitArg::Oracle => Init::Oracle,
        },
        y_max: None,
    };
    let report = regret_decay_diagnostic(&cfg, &a.checkpoints)?;
    let mut out = Output::new(cli, "regret");
    if cli.markdown {
        let mut s = String::from("| n | median regret | median TV |\n|---:|---:|---:|\n");
        for (i, n) in report.checkpoints.iter().enumerate() {
            s.push_str(&format!("| {n} | {:.3e} | {:.4} |\n", report.median_regret[i], report.median_tv[i]));
        }
        s.push_str(&format!("\nmedian log-log slope: {:.3}\n", report.median_slope));
        out.buf.extend_from_slice(s.as_bytes());
    } else {
        let rows: Vec<RegretRow> = report
            .traces
            .iter()
            .flat_map(|t| {
                report.checkpoints.iter().enumerate().map(|(i, &n)| RegretRow {
                    seed: t.seed,
                    n,
                    regret: t.regrets[i],
                    tv: t.tv[i],
                })
            })
            .collect();
        write_csv_rows(&mut out.buf, &rows)?;
    }
    info!("median log-log regret slope {:.3}", report.median_slope);
    out.finish(cli)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_lists() {
        assert_eq!(parse_counts("0..3").unwrap(), CountList(vec![0, 1, 2, 3]));
        assert_eq!(parse_counts("4, 1,9").unwrap(), CountList(vec![4, 1, 9]));
        assert!(parse_counts("3..1").is_err());
        assert!(parse_counts("a").is_err());
        assert_eq!(parse_window("900-1000").unwrap(), (900, 1000));
        assert_eq!(parse_fixed_grid("0.1:20:200").unwrap(), (0.1, 20.0, 200));
        assert!(parse_fixed_grid("0.1:20").is_err());
    }

    #[test]
    fn flag_conflicts() {
        assert!(Cli::try_parse_from(["qbeb", "fit"]).is_err());
        assert!(Cli::try_parse_from(["qbeb", "fit", "--prior", "weibull:5,3", "--input", "x"]).is_err());
        assert!(Cli::try_parse_from(["qbeb", "fit", "--prior", "weibull:5,3", "--state", "s.bin"]).is_err());
        assert!(Cli::try_parse_from(["qbeb", "fit", "--input", "x", "--resume"]).is_err());
        assert!(Cli::try_parse_from(["qbeb", "fit", "--input", "x", "--grid", "1:2:3", "--eta", "0.1"]).is_err());
        let cli = Cli::try_parse_from([
            "qbeb", "fit", "--prior", "weibull:5,3", "--n", "500", "--eta", "0.025", "--dcap", "10000", "--gamma",
            "0.99", "--alpha", "1", "--seed", "7",
        ])
        .unwrap();
        assert_eq!(cli.seed, 7);
        let Command::Fit(f) = &cli.command else { panic!() };
        assert_eq!(f.n, vec![500]);
        assert_eq!(f.prior, Some(PriorSpec::weibull(5.0, 3.0).unwrap()));
    }

    #[test]
    fn estimator_lists() {
        assert_eq!(parse_estimators(&["all".into()]).unwrap().len(), 5);
        assert_eq!(parse_estimators(&["qbeb".into(), "robbins".into()]).unwrap().len(), 2);
        assert!(parse_methods(&["qbeb".into()]).is_err());
    }
}

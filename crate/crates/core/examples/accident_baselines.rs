//! The classical accident-count table: Robbins, grid NPMLE, minimum Hellinger,
//! Gamma-Poisson and the streaming estimator side by side.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qbeb::baselines::{baseline_estimates_at, EstimateRow, EstimateTable, Method};
use qbeb::grid::{build_equispaced_grid, GridSpec};
use qbeb::inference::qb_estimate;
use qbeb::ingest::{ingest, IngestFormat};
use qbeb::newton::{LearningRate, NewtonState};

fn main() -> qbeb::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/accidents.csv");
    let h = ingest(&path, IngestFormat::HistogramCsv)?;
    let ys: Vec<u64> = (0..8).collect();

    let mut table = EstimateTable::new(ys.clone());
    for m in Method::ALL {
        table.push(baseline_estimates_at(&h, m, None, &ys)?)?;
    }

    // the histogram has no order; a sorted stream would bias the recursion, so shuffle
    let mut stream: Vec<u64> = h.iter().flat_map(|(y, n)| std::iter::repeat_n(y, n as usize)).collect();
    stream.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
    let grid = Arc::new(build_equispaced_grid(&GridSpec::from_data(&h, 0.025, Some(2000))?)?);
    let mut state = NewtonState::new(grid, None, LearningRate::default())?;
    state.update_stream(stream)?;
    let g = state.snapshot();
    let estimates = ys.iter().map(|&y| qb_estimate(&g, y)).collect::<qbeb::Result<_>>()?;
    table.push(EstimateRow { label: "QB-EB".into(), estimates, objective: None })?;

    print!("{}", table.to_markdown());
    Ok(())
}

//! Stream a simulated sample through the recursion and print estimates with 95%
//! credible intervals at a few snapshots.

use std::sync::Arc;

use qbeb::evaluation::generate_compound;
use qbeb::inference::credible_interval;
use qbeb::model::Grid;
use qbeb::newton::{LearningRate, NewtonState, StreamOptions};
use qbeb::prior::PriorSpec;

fn main() -> qbeb::Result<()> {
    let prior = PriorSpec::gamma(2.0, 1.0)?;
    let sample = generate_compound(&prior, 20_000, 3)?;
    let grid = Arc::new(Grid::equispaced(0.05, 15.0, 300)?);
    let mut state = NewtonState::new(grid, None, LearningRate::new(1.0, 0.75)?)?;

    let opts = StreamOptions { snapshot_every: Some(5000), ..Default::default() };
    state.update_stream_with(sample.ys.iter().copied(), opts, |n, g| {
        println!("n = {n:>6}: prior mean estimate {:.3}", g.mean());
    })?;

    // Gamma(2, 1) prior: the Bayes rule is (y + 2) / 2
    println!("\n  y   estimate   95% interval       Bayes");
    for y in 0..6 {
        let r = credible_interval(&state, y, 0.95)?;
        println!("{y:>3}   {:8.3}   [{:.3}, {:.3}]   {:.3}", r.theta_hat, r.ci_low, r.ci_high, (y as f64 + 2.0) / 2.0);
    }
    Ok(())
}

//! Size a grid from a sample's second moment and measure how much the binned prior
//! loses in KL against the continuous one.

use std::sync::Arc;

use qbeb::evaluation::generate_compound;
use qbeb::grid::{binned_discretization, build_equispaced_grid, kl_discretization_gap, GridSpec};
use qbeb::model::CountHistogram;
use qbeb::prior::PriorSpec;

fn main() -> qbeb::Result<()> {
    let prior = PriorSpec::weibull(5.0, 3.0)?;
    let h = CountHistogram::from_counts(generate_compound(&prior, 500, 1)?.ys);

    for eta in [0.2, 0.1, 0.05, 0.025] {
        let spec = GridSpec::from_data(&h, eta, Some(10_000))?;
        let grid = Arc::new(build_equispaced_grid(&spec)?);
        let g = binned_discretization(&prior, &grid)?;
        let kl = kl_discretization_gap(&prior, &g, prior.default_y_max())?;
        println!(
            "eta {eta:<5} minimal size {:>7}  materialized {:>5}  range [{:.3}, {:.2}]  KL {kl:.2e} (bound {})",
            spec.minimal_size()?,
            grid.len(),
            grid.first(),
            grid.last(),
            2.0 * eta
        );
    }
    Ok(())
}

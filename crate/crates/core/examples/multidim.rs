//! Two counts per unit on a product grid: the joint recursion couples coordinates,
//! so its per-coordinate estimates differ from two independent scalar runs.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qbeb::inference::qb_estimate;
use qbeb::model::Grid;
use qbeb::multidim::{multi_clt_covariance, multi_estimate, MultiNewtonState, ProductGrid};
use qbeb::newton::{LearningRate, NewtonState};
use qbeb::prior::sample_poisson;

fn main() -> qbeb::Result<()> {
    let base = Arc::new(Grid::equispaced(0.25, 6.0, 24)?);
    let grid = Arc::new(ProductGrid::new(Arc::clone(&base), 2)?);
    let rate = LearningRate::new(1.0, 0.75)?;
    let mut joint = MultiNewtonState::new(Arc::clone(&grid), None, rate)?;
    let mut marginals = [NewtonState::new(Arc::clone(&base), None, rate)?, NewtonState::new(Arc::clone(&base), None, rate)?];

    // correlated means: the second rate tracks the first
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5000 {
        let a: f64 = rng.random_range(0.5..5.0);
        let b = (a + rng.random_range(-0.5..0.5)).max(0.3);
        let y = [sample_poisson(&mut rng, a), sample_poisson(&mut rng, b)];
        joint.update(&y)?;
        marginals[0].update(y[0])?;
        marginals[1].update(y[1])?;
    }

    let g = joint.snapshot();
    let m1 = marginals[1].snapshot();
    println!("  y      joint E[θ₂|y]   scalar E[θ₂|y₂]");
    for y in [[0, 2], [2, 2], [5, 2]] {
        println!("{y:?}   {:12.3}   {:14.3}", multi_estimate(&g, &y, 1)?, qb_estimate(&m1, y[1])?);
    }
    let cov = multi_clt_covariance(&g, &[2, 2], 40)?;
    println!("\nestimate at (2, 2): {:.3?}\nasymptotic covariance:\n{:.4}", cov.theta_hat, cov.covariance);
    Ok(())
}

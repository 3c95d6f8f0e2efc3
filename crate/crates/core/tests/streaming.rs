//! Long-run behavior of the recursion on a discrete oracle.

use std::sync::Arc;

use qbeb::evaluation::generate_compound;
use qbeb::inference::qb_estimate;
use qbeb::model::{Grid, MixingWeights};
use qbeb::newton::{LearningRate, NewtonState};
use qbeb::prior::PriorSpec;

const ATOMS: [(f64, f64); 5] = [(0.5, 0.3), (1.5, 0.25), (3.0, 0.2), (5.0, 0.15), (8.0, 0.1)];

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

#[test]
fn estimates_approach_the_oracle_rule() {
    let prior = PriorSpec::atoms(ATOMS.to_vec()).unwrap();
    let grid = Arc::new(Grid::new(ATOMS.iter().map(|a| a.0).collect()).unwrap());
    let oracle = MixingWeights::new(Arc::clone(&grid), ATOMS.iter().map(|a| a.1).collect()).unwrap();
    let checkpoints = [1000usize, 10_000, 100_000];

    // per checkpoint, per seed: worst error over y = 0..5
    let mut errors = vec![Vec::new(); checkpoints.len()];
    for seed in 0..9 {
        let ys = generate_compound(&prior, 100_000, seed).unwrap().ys;
        let mut s = NewtonState::new(Arc::clone(&grid), None, LearningRate::new(1.0, 0.75).unwrap()).unwrap();
        let mut done = 0;
        for (i, &c) in checkpoints.iter().enumerate() {
            s.update_stream(ys[done..c].iter().copied()).unwrap();
            done = c;
            let g = s.snapshot();
            let worst = (0..5)
                .map(|y| (qb_estimate(&g, y).unwrap() - qb_estimate(&oracle, y).unwrap()).abs())
                .fold(0.0, f64::max);
            errors[i].push(worst);
        }
    }
    let medians: Vec<f64> = errors.into_iter().map(median).collect();
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
    assert!(medians[2] < 0.1, "{medians:?}");
}

#[test]
fn weights_stay_a_distribution_over_a_long_stream() {
    let prior = PriorSpec::weibull(5.0, 3.0).unwrap();
    let ys = generate_compound(&prior, 50_000, 4).unwrap().ys;
    let grid = Arc::new(Grid::equispaced(0.05, 12.0, 240).unwrap());
    let mut s = NewtonState::new(grid, None, LearningRate::default()).unwrap();
    s.update_stream(ys).unwrap();
    let w = s.weights();
    assert!(w.iter().all(|&v| v >= 0.0));
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // the prior puts almost no mass above 6
    let high: f64 = s.grid().points().iter().zip(w).filter(|(t, _)| **t > 6.0).map(|(_, v)| v).sum();
    assert!(high < 0.02, "{high}");
}

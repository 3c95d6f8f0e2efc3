//! Regret against a discrete oracle at growing n, with the fitted log-log slope.

use qbeb::evaluation::{regret_decay_diagnostic, DecayConfig, Init};
use qbeb::newton::LearningRate;
use qbeb::prior::PriorSpec;

fn main() -> qbeb::Result<()> {
    let prior = PriorSpec::atoms(vec![(0.5, 0.3), (1.5, 0.25), (3.0, 0.2), (5.0, 0.15), (8.0, 0.1)])?;
    let checkpoints = [500, 2000, 6325, 20_000];
    for gamma in [0.75, 0.99] {
        let cfg = DecayConfig {
            prior: prior.clone(),
            rate: LearningRate::new(1.0, gamma)?,
            seeds: (0..20).collect(),
            init: Init::Uniform,
            y_max: None,
        };
        let report = regret_decay_diagnostic(&cfg, &checkpoints)?;
        println!("gamma = {gamma}");
        for ((n, r), tv) in checkpoints.iter().zip(&report.median_regret).zip(&report.median_tv) {
            println!("  n = {n:>6}  median regret {r:.3e}  median TV {tv:.4}");
        }
        println!("  median slope {:.3} (reference rate {:.3})", report.median_slope, 1.0 / gamma - 2.0);
    }
    Ok(())
}

//! RMSE and MAD of every estimator on Weibull(5, 3) samples, as a markdown table.

use qbeb::evaluation::{run_experiment, table_markdown, Estimator, ExperimentConfig};
use qbeb::prior::PriorSpec;

fn main() -> qbeb::Result<()> {
    let mut rows = Vec::new();
    for n in [500, 2000] {
        let mut cfg = ExperimentConfig::new(PriorSpec::weibull(5.0, 3.0)?, n);
        cfg.seeds = (0..5).collect();
        rows.extend(run_experiment(&cfg, &Estimator::ALL)?);
    }
    print!("{}", table_markdown(&rows));
    Ok(())
}

//! Per-entity event counts from a timestamped log (one row per event, `-` for an
//! entity with none), then estimates for each entity.

use std::io::Cursor;
use std::sync::Arc;

use qbeb::inference::credible_interval;
use qbeb::ingest::read_event_window;
use qbeb::model::Grid;
use qbeb::newton::{LearningRate, NewtonState};

const LOG: &str = "entity_id\torigin_epoch_s\tevent_epoch_s
post-1\t1000\t1004
post-1\t1000\t1011
post-1\t1000\t1090
post-2\t1010\t-
post-3\t1020\t1021
post-3\t1020\t1022
post-3\t1020\t1023
post-3\t1020\t1049
post-4\t1030\t1100
post-5\t1040\t1041
";

fn main() -> qbeb::Result<()> {
    // events within 30 s of each post
    let counts = read_event_window(Cursor::new(LOG), 30.0)?;
    println!("counts per entity: {counts:?}");

    let grid = Arc::new(Grid::equispaced(0.05, 8.0, 160)?);
    let mut state = NewtonState::new(grid, None, LearningRate::new(1.0, 0.75)?)?;
    // a short log says little; recycle it to show the mechanics
    for _ in 0..200 {
        state.update_stream(counts.iter().copied())?;
    }
    for y in 0..5 {
        let r = credible_interval(&state, y, 0.9)?;
        println!("y = {y}: {:.3} [{:.3}, {:.3}]", r.theta_hat, r.ci_low, r.ci_high);
    }
    Ok(())
}

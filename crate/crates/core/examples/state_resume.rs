//! Save a state part-way through a stream, reload it, and finish; the result is
//! identical to an uninterrupted run.

use std::sync::Arc;

use qbeb::evaluation::generate_compound;
use qbeb::model::Grid;
use qbeb::newton::{LearningRate, NewtonState};
use qbeb::prior::PriorSpec;

fn main() -> qbeb::Result<()> {
    let ys = generate_compound(&PriorSpec::uniform(0.0, 3.0)?, 2000, 9)?.ys;
    let grid = Arc::new(Grid::equispaced(0.05, 10.0, 200)?);
    let rate = LearningRate::default();

    let mut whole = NewtonState::new(Arc::clone(&grid), None, rate)?;
    whole.update_stream(ys.iter().copied())?;

    let dir = std::env::temp_dir().join(format!("qbeb-resume-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("state.bin");
    let mut first = NewtonState::new(grid, None, rate)?;
    first.update_stream(ys[..1000].iter().copied())?;
    first.save(&path)?;
    println!("saved after n = {} ({} bytes)", first.n(), std::fs::metadata(&path)?.len());

    let mut resumed = NewtonState::load(&path)?;
    resumed.update_stream(ys[1000..].iter().copied())?;
    std::fs::remove_dir_all(&dir)?;

    let gap = whole.weights().iter().zip(resumed.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("resumed to n = {}, max weight difference {gap:e}", resumed.n());
    Ok(())
}

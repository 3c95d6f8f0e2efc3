pub mod baselines;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod inference;
pub mod ingest;
pub mod model;
pub mod multidim;
pub mod newton;
pub mod prior;

pub use error::{Error, Result};

pub mod algorithm;
pub mod bench;
pub mod config;
pub mod error;
pub mod kernels;
pub mod oracles;
pub mod parallel;
pub mod problem;
pub mod schedules;
pub mod streams;

pub use algorithm::{run, run_multivariate, IterateState, RunSetup, RunTrace};
pub use error::{Error, Result};

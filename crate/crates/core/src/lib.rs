pub mod bath;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod evolve;
pub mod grid;
pub mod laplace;
pub mod oracle;
pub mod master;
pub mod opalg;
pub mod propagator;
pub mod quad;
pub mod special;

pub use error::{Error, Result};

//! Continuity-aware encoding of oriented boxes.

pub mod audit;
pub mod baselines;
pub mod cobb;
pub mod error;
pub mod geom;
pub mod io;
pub mod target;

pub use error::{Error, Result};

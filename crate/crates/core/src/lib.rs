//! Knowledge-graph embedding with per-unit quaternion relations acting on 3-D
//! entity units by rotation and scaling.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod model;
pub mod rot3;
pub mod train;

pub use error::{Error, Result};

//! Point cloud completion by coarse-to-fine refinement of icosphere
//! prototypes.

pub mod check;
pub mod error;
pub mod geom;
pub mod ingest;
pub mod model;
pub mod ndiff;
pub mod objective;
pub mod train;

pub use error::{Error, Result};

//! Head pose estimation from a single RGB face crop.
//!
//! The pipeline squares a detector box, expands it by a margin ratio `K`,
//! crops and resizes the region, and feeds it to a backbone with three angle
//! heads. Training minimizes, per angle, a temperature-scaled classification
//! loss over one-degree bins plus a weighted squared-error regression loss.

pub mod archive;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod net;
pub mod train;

pub use error::{Error, Result};

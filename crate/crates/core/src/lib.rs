//! Unbounded camera-view and image-composition recommendation.
//!
//! Given a framed view, the model predicts candidate composition crops that
//! may extend past the frame borders, and the camera view that contains them.

pub mod advisor;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod model;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{BBox, Orientation};

//! Action recognition from dense trajectories localized to skeleton joints.

pub mod classify;
pub mod descriptors;
pub mod encode;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod image;
pub mod io;
pub mod localize;
pub mod pipeline;
pub mod tracking;

pub use error::{Error, Result};

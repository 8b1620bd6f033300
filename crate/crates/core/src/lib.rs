//! Restoration of fractured shapes from learned occupancy fields.

pub mod binio;
pub mod break_surface;
pub mod error;
pub mod fixtures;
pub mod fracture;
pub mod gradcheck;
pub mod inference;
pub mod mesh;
pub mod metrics;
pub mod neural;
pub mod reconstruct;
pub mod sampling;
pub mod selftest;
pub mod training;

pub use error::{Error, Result};

//! Lossy LiDAR stream compression with learned spatio-temporal entropy models.

mod bytes;
pub mod coder;
pub mod compress;
pub mod config;
pub mod entropy;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod neighbors;
pub mod nn;
pub mod octree;
pub mod pointcloud;

pub use error::{Error, Result};

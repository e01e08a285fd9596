//! Model-agnostic video indexing and query execution.
//!
//! Preprocessing turns a video into per-chunk backgrounds, foreground blobs,
//! blob trajectories and matched keypoint tracks. Queries then run a
//! detector on a few representative frames per chunk and propagate its
//! results along those trajectories.

pub mod background;
pub mod blobs;
pub mod cluster;
pub mod config;
pub mod detector;
pub mod error;
pub mod frame_source;
pub mod geometry;
pub mod index_store;
pub mod keypoints;
pub mod metrics;
pub mod pipeline;
pub mod query;
pub mod scenes;
pub mod trajectory;

pub use config::Config;
pub use error::{Error, Result};

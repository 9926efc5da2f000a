//! Star tracking from event-camera streams.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod bank;
pub mod cli;
pub mod config;
pub mod error;
pub mod events;
pub mod geom;
pub mod hough;
pub mod manifest;
pub mod metrics;
pub mod motion;
pub mod sim;

pub use error::{Error, Result};
pub use events::{Event, EventChunk, EventStream, Polarity, SensorSize};
pub use geom::{angular_distance, CameraIntrinsics, Rotation};

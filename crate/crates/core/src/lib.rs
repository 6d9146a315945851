//! Controlled label and box noise for object-detection annotations, and a
//! refinement pipeline that removes it against a simulated detector.
//!
//! Boxes are corner form `[x1, y1, x2, y2]` in pixels throughout; COCO files
//! store `[x, y, w, h]` and are converted at the I/O boundary.

pub mod cinj;
pub mod cli;
pub mod coco;
pub mod error;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod noise;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    AnnotatedObject, BoundingBox, Category, ClassLabel, Dataset, ImageRecord, ObjectFlags,
};

//! Building blocks of a tile-based mitosis detection pipeline: slide tiling
//! and splitting, empty-tile rejection sampling, colour and flip
//! augmentation, single-scale square anchors, per-class NMS, and IoU-matched
//! F1 evaluation with an exact confidence-threshold search. The detector
//! itself sits behind the [`scorer::Scorer`] trait.

pub mod anchors;
pub mod augmentation;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod postprocess;
pub mod rng;
pub mod scorer;
pub mod synth;

pub use config::PipelineConfig;
pub use dataset::{Annotation, Label, Manifest, SlideRecord, SplitPlan, Tile};
pub use error::{Error, Result};
pub use evaluation::{EvalReport, Predictions};
pub use geometry::BBox;
pub use postprocess::Detection;

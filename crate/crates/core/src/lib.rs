//! Saliency-guided training of small presentation-attack classifiers.
//!
//! Human saliency maps are aggregated, coarsened to a chosen granularity
//! (full-resolution FOI, region-level AOI or bounding-box BOI) and used as a
//! CAM target alongside cross-entropy.

pub mod cyborg;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod granularity;
pub mod io;
pub mod mimic;
pub mod nn;
pub mod par;
pub mod saliency;
pub mod synth;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use granularity::{GranularityLevel, GranularitySpec, Rect, ThresholdMode};
pub use saliency::{AnnotationSet, SaliencyMap, UnitMap};

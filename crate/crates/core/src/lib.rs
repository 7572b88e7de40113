//! Rule-based refinement of object-detection outputs.
//!
//! Four layers operate on serialized detections: same-class redundancy
//! elimination, scene-context logit adjustment, size-rule adjustment driven
//! by a Bayes-updated knowledge graph, and a shape-count gate. The
//! [`pipeline`] module chains them and [`evalmetrics`] reports the effect.
//!
//! Layer math is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the precision used by the file formats and the pipeline.

pub mod cawal;
pub mod detection;
pub mod error;
pub mod evalmetrics;
pub mod geometry;
pub mod hwad;
pub mod knowledge;
pub mod pipeline;
pub mod redundancy;
pub mod scalar;
pub mod shapeconf;
pub mod testkit;

pub use detection::{ClassId, Vocabulary};
pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub type BBox = geometry::BBox<f64>;
pub type BBox32 = geometry::BBox<f32>;
pub type Detection = detection::Detection<f64>;
pub type Detection32 = detection::Detection<f32>;
pub type DetectionSet = detection::DetectionSet<f64>;
pub type DetectionSet32 = detection::DetectionSet<f32>;
pub type GroundTruthSet = evalmetrics::GroundTruthSet<f64>;
pub type KnowledgeGraph = knowledge::KnowledgeGraph<f64>;
pub type ContextBinding = cawal::ContextBinding<f64>;
pub type EvalReport = evalmetrics::EvalReport<f64>;
pub type EvalComparison = evalmetrics::EvalComparison<f64>;

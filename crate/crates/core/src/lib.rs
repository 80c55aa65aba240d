//! Weak-to-strong compositional learning workbench.
//!
//! The crate synthesizes dense (scene, description, box) triplets, labels them
//! with a compositionally-blind detector decomposed over noun phrases, builds
//! compositional contrastive alignment targets, trains a small grounding
//! model and scores it with description-aware detection metrics.

pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod groundnet;
pub mod labeling;
pub mod langparse;
pub mod scalar;
pub mod scenegen;
pub mod seed;
pub mod targets;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Grounding model over 64-bit floats, the precision every pipeline stage uses.
pub type GroundingModel = groundnet::GroundingModel<f64>;
/// Single-precision grounding model.
pub type GroundingModelF32 = groundnet::GroundingModel<f32>;
pub type Gradients = groundnet::Gradients<f64>;
pub type AlignmentScores = groundnet::AlignmentScores<f64>;
pub type BBox = geometry::BBox<f64>;
pub type MetricReport = evalkit::MetricReport;

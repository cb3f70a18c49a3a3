//! Open-vocabulary object placement and placement-quality evaluation.
//!
//! The crate has two halves. The placement pipeline ([`pipeline`]) turns a
//! scene photograph and an object name into a pixel where the object would
//! naturally rest, by tagging the scene, asking a language model which
//! surface to use, and locating that surface. Every model call goes through
//! a [`backend::Transport`], so runs can be served live over HTTP or
//! replayed byte-for-byte from recorded fixtures.
//!
//! The evaluation half ([`metrics`]) scores each stage against expert
//! annotations: exact-match and embedding similarity for the tag lists and
//! the chosen surface, and for final placements the in-mask rate and a
//! signed-distance score computed on exact Euclidean distance fields
//! ([`geometry`]).

pub mod backend;
pub mod dataset;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod placements;
pub mod prompts;
pub mod report;
pub mod simulate;
pub mod synthetic;
pub mod text;

pub use dataset::{DatasetIndex, EvaluablePair, SceneImage};
pub use geometry::{BinaryMask, DistanceField, Heatmap, Point2D};

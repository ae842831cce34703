//! Unified vehicle search: joint detection and re-identification.
//!
//! The crate covers the full desk-scale workflow:
//!
//! - [`datamodel`]: manifests, annotations, queries, and the IoU primitive.
//! - [`nn`]: a small reverse-mode autodiff engine over `ndarray` (f64).
//! - [`pipeline`]: backbone, region proposal, RoI alignment, detection and
//!   identity heads with norm-aware embeddings, plus the frozen encoder
//!   contracts.
//! - [`losses`]: detection, online instance matching, semantic-region
//!   alignment, and multi-level identification objectives.
//! - [`prompts`]: dual-granularity text prompts and stage-1 token learning.
//! - [`benchmark`]: dataset construction from multi-camera tracking sources.
//! - [`eval`]: ranking, average precision, mAP/Top-1, and a brute-force
//!   oracle evaluator.
//! - [`trainer`]: two-stage training orchestration, checkpointing, and the
//!   search entry point.
//!
//! Data-parallel inner loops (convolutions, RoI pooling, per-query
//! evaluation) run on rayon when the default `parallel` feature is enabled
//! and fall back to sequential iteration otherwise; results are identical
//! either way.

pub mod datamodel;
pub mod imgio;
pub mod losses;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod prompts;

pub use datamodel::{BoxAnnotation, DatasetManifest, FrameRecord, QueryRecord, Rect};

//! Image-to-video generation pipeline: prompt enhancement, mask-guided end
//! keyframe selection, bracketed video synthesis, and an evaluation harness.
//!
//! Model-backed roles are reached through the traits in [`providers`], with
//! deterministic mocks for offline use and an HTTP adapter for real
//! backends.

pub mod diffusion;
pub mod enhancer;
pub mod eval;
pub mod fsutil;
pub mod keyframe;
pub mod model;
pub mod pipeline;
pub mod providers;
pub mod video;

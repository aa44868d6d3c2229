//! Training-free class-agnostic object counting.
//!
//! Given an image and a few exemplar boxes or points, the pipeline prompts a
//! segmenter with superpixel centers to collect instance mask proposals,
//! pools semantic patch features under every mask, and counts the proposals
//! whose feature is close enough to the exemplar prototype. Tiny objects are
//! handled by re-segmenting upscaled tiles of the image.

pub mod backends;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod mask;
pub mod matching;
pub mod pipeline;
pub mod proposals;
pub mod render;
pub mod superpixel;
pub mod synth;

pub use error::{Error, Result};

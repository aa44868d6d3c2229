//! Model-facing interfaces: a promptable segmenter and a semantic patch
//! encoder, with deterministic mock implementations and ONNX adapters.

use std::any::Any;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Prompt;
use crate::image::RawImage;
use crate::mask::MaskProposal;
use crate::matching::FeatureMap;

pub mod mock;
#[cfg(feature = "onnx")]
pub mod onnx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterVariant {
    VitB,
    #[default]
    VitH,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmenterInfo {
    pub name: String,
    pub variant: SegmenterVariant,
    /// Side length of the square model input.
    pub input_resolution: usize,
    /// Maximum number of prompts decoded per model call.
    pub batch_limit: usize,
}

/// Encoder output for one image, reusable for any number of decodes.
pub struct EmbeddedImage {
    pub image_hash: u64,
    pub width: usize,
    pub height: usize,
    state: Box<dyn Any + Send + Sync>,
}

impl EmbeddedImage {
    pub fn new(image: &RawImage, state: impl Any + Send + Sync) -> Self {
        Self {
            image_hash: image.content_hash(),
            width: image.width(),
            height: image.height(),
            state: Box::new(state),
        }
    }

    pub fn state<T: 'static>(&self) -> Option<&T> {
        self.state.downcast_ref()
    }
}

impl std::fmt::Debug for EmbeddedImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddedImage")
            .field("image_hash", &self.image_hash)
            .field("size", &(self.width, self.height))
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("prompt {0:?} lies outside the image")]
    OutOfBounds(Prompt),
    #[error("prompt {0:?} was not produced by this embedding")]
    Mismatch(Prompt),
}

/// One decode slot per prompt.
pub type DecodeSlot = std::result::Result<MaskProposal, PromptError>;

/// Promptable segmenter split into an image encoder and a prompt decoder.
pub trait SegmenterBackend: Send + Sync {
    fn info(&self) -> SegmenterInfo;

    fn encode(&self, image: &RawImage) -> Result<EmbeddedImage>;

    /// Returns exactly one slot per prompt, in prompt order. Each mask is in
    /// the coordinates of the encoded image and may be empty.
    fn decode(&self, emb: &EmbeddedImage, prompts: &[Prompt]) -> Result<Vec<DecodeSlot>>;

    /// The encoder's own feature grid, used when semantic features are
    /// switched off.
    fn embedding_features(&self, emb: &EmbeddedImage) -> Result<FeatureMap>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticInfo {
    pub name: String,
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
}

pub trait SemanticEncoderBackend: Send + Sync {
    fn info(&self) -> SemanticInfo;

    /// Patch-grid features covering the whole image.
    fn embed(&self, image: &RawImage) -> Result<FeatureMap>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticModel {
    Clip,
    Dino,
    #[default]
    Dinov2,
    Mock,
}

impl SemanticModel {
    /// Patch grid side of the published model at its standard input size.
    pub fn patch_grid(self) -> Option<usize> {
        match self {
            SemanticModel::Clip => Some(16),
            SemanticModel::Dino => Some(28),
            SemanticModel::Dinov2 => Some(37),
            SemanticModel::Mock => None,
        }
    }
}

/// Decodes `prompts` in chunks of the backend's batch limit.
pub fn decode_batched(backend: &dyn SegmenterBackend, emb: &EmbeddedImage, prompts: &[Prompt]) -> Result<Vec<DecodeSlot>> {
    let limit = backend.info().batch_limit.max(1);
    let mut out = Vec::with_capacity(prompts.len());
    for chunk in prompts.chunks(limit) {
        out.extend(backend.decode(emb, chunk)?);
    }
    Ok(out)
}

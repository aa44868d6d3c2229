//! ONNX adapters running on the `rten` runtime.
//!
//! The segmenter expects a directory holding `encoder.onnx` (image to
//! `[1, 256, 64, 64]` embeddings, 1024x1024 padded input) and `decoder.onnx`
//! in the upstream single-image export layout (`image_embeddings`,
//! `point_coords`, `point_labels`, `mask_input`, `has_mask_input`,
//! `orig_im_size` in; `masks`, `iou_predictions` out).
//!
//! The semantic encoder expects a ViT export taking `pixel_values` and
//! returning token features as its first output; patch tokens are the last
//! `grid * grid` tokens.

use std::path::{Path, PathBuf};

use rten::Model;
use rten_tensor::prelude::*;
use rten_tensor::{NdTensor, Tensor};

use super::{
    DecodeSlot, EmbeddedImage, PromptError, SegmenterBackend, SegmenterInfo, SegmenterVariant,
    SemanticEncoderBackend, SemanticInfo, SemanticModel,
};
use crate::error::{Error, Result};
use crate::geometry::Prompt;
use crate::image::RawImage;
use crate::mask::{BinaryMask, MaskProposal};
use crate::matching::FeatureMap;

const SAM_INPUT: usize = 1024;
const SAM_PIXEL_MEAN: [f32; 3] = [123.675, 116.28, 103.53];
const SAM_PIXEL_STD: [f32; 3] = [58.395, 57.12, 57.375];
/// Logit offset used for the stability score.
const STABILITY_OFFSET: f32 = 1.0;

fn load_model(path: &Path) -> Result<Model> {
    Model::load_file(path).map_err(|e| Error::ModelLoad { path: path.to_path_buf(), message: e.to_string() })
}

fn run_err(e: impl std::fmt::Display) -> Error {
    Error::Backend(e.to_string())
}

pub struct OnnxSegmenter {
    variant: SegmenterVariant,
    encoder: Model,
    decoder: Model,
}

struct SamEmbedding {
    /// `[1, 256, 64, 64]`
    embeddings: NdTensor<f32, 4>,
    scale: f32,
}

impl OnnxSegmenter {
    pub fn load(dir: impl AsRef<Path>, variant: SegmenterVariant) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            variant,
            encoder: load_model(&dir.join("encoder.onnx"))?,
            decoder: load_model(&dir.join("decoder.onnx"))?,
        })
    }

    fn decode_one(&self, emb: &EmbeddedImage, state: &SamEmbedding, prompt: &Prompt) -> Result<MaskProposal> {
        let s = state.scale;
        let (coords, labels): (Vec<f32>, Vec<f32>) = match prompt {
            Prompt::Point(p) => (
                vec![(p.x as f32 + 0.5) * s, (p.y as f32 + 0.5) * s, 0.0, 0.0],
                vec![1.0, -1.0],
            ),
            Prompt::Box(b) => (
                vec![b.x0 as f32 * s, b.y0 as f32 * s, b.x1 as f32 * s, b.y1 as f32 * s],
                vec![2.0, 3.0],
            ),
        };
        let d = &self.decoder;
        let inputs = vec![
            (d.node_id("image_embeddings").map_err(run_err)?, state.embeddings.view().into()),
            (d.node_id("point_coords").map_err(run_err)?, NdTensor::from_data([1, 2, 2], coords).into()),
            (d.node_id("point_labels").map_err(run_err)?, NdTensor::from_data([1, 2], labels).into()),
            (d.node_id("mask_input").map_err(run_err)?, NdTensor::<f32, 4>::zeros([1, 1, 256, 256]).into()),
            (d.node_id("has_mask_input").map_err(run_err)?, NdTensor::from_data([1], vec![0.0f32]).into()),
            (
                d.node_id("orig_im_size").map_err(run_err)?,
                NdTensor::from_data([2], vec![emb.height as f32, emb.width as f32]).into(),
            ),
        ];
        let [masks, ious] = d
            .run_n(
                inputs,
                [d.node_id("masks").map_err(run_err)?, d.node_id("iou_predictions").map_err(run_err)?],
                None,
            )
            .map_err(run_err)?;
        let masks: Tensor<f32> = masks.try_into().map_err(run_err)?;
        let ious: Tensor<f32> = ious.try_into().map_err(run_err)?;
        let shape = masks.shape().to_vec();
        let (n, h, w) = (shape[1], shape[2], shape[3]);
        if h != emb.height || w != emb.width {
            return Err(Error::Backend(format!("decoder returned {w}x{h} masks for a {}x{} image", emb.width, emb.height)));
        }
        let ious = ious.into_data();
        let best = (0..n).fold(0, |b, i| if ious[i] > ious[b] { i } else { b });
        let logits = masks.into_data();
        let plane = &logits[best * h * w..(best + 1) * h * w];
        let bitmap: Vec<bool> = plane.iter().map(|&v| v > 0.0).collect();
        let hi = plane.iter().filter(|&&v| v > STABILITY_OFFSET).count();
        let lo = plane.iter().filter(|&&v| v > -STABILITY_OFFSET).count();
        let mut proposal = MaskProposal::new(BinaryMask::from_bitmap(w, h, &bitmap), ious[best]);
        proposal.stability_score = if lo == 0 { 0.0 } else { hi as f32 / lo as f32 };
        Ok(proposal)
    }
}

impl SegmenterBackend for OnnxSegmenter {
    fn info(&self) -> SegmenterInfo {
        SegmenterInfo {
            name: "sam-onnx".into(),
            variant: self.variant,
            input_resolution: SAM_INPUT,
            batch_limit: 1,
        }
    }

    fn encode(&self, image: &RawImage) -> Result<EmbeddedImage> {
        let (w, h) = (image.width(), image.height());
        let scale = SAM_INPUT as f32 / w.max(h) as f32;
        let (nw, nh) = (((w as f32 * scale).round() as usize).max(1), ((h as f32 * scale).round() as usize).max(1));
        let resized = image.resize_bilinear(nw, nh)?;
        let mut input = NdTensor::<f32, 4>::zeros([1, 3, SAM_INPUT, SAM_INPUT]);
        for y in 0..nh {
            for x in 0..nw {
                let p = resized.get(x, y);
                for c in 0..3 {
                    input[[0, c, y, x]] = (p[c] as f32 - SAM_PIXEL_MEAN[c]) / SAM_PIXEL_STD[c];
                }
            }
        }
        let enc = &self.encoder;
        let input_id = *enc.input_ids().first().ok_or_else(|| Error::Backend("encoder has no inputs".into()))?;
        let output_id = *enc.output_ids().first().ok_or_else(|| Error::Backend("encoder has no outputs".into()))?;
        let [out] = enc.run_n(vec![(input_id, input.into())], [output_id], None).map_err(run_err)?;
        let embeddings: NdTensor<f32, 4> = out.try_into().map_err(run_err)?;
        Ok(EmbeddedImage::new(image, SamEmbedding { embeddings, scale }))
    }

    fn decode(&self, emb: &EmbeddedImage, prompts: &[Prompt]) -> Result<Vec<DecodeSlot>> {
        let state = emb
            .state::<SamEmbedding>()
            .ok_or_else(|| Error::Backend("embedding was not produced by the ONNX segmenter".into()))?;
        prompts
            .iter()
            .map(|p| {
                if !p.in_bounds(emb.width, emb.height) {
                    return Ok(Err(PromptError::OutOfBounds(*p)));
                }
                self.decode_one(emb, state, p).map(Ok)
            })
            .collect()
    }

    /// The embedding grid cropped to the unpadded image area.
    fn embedding_features(&self, emb: &EmbeddedImage) -> Result<FeatureMap> {
        let state = emb
            .state::<SamEmbedding>()
            .ok_or_else(|| Error::Backend("embedding was not produced by the ONNX segmenter".into()))?;
        let [_, dim, gh_full, gw_full] = state.embeddings.shape();
        let frac = |n: usize, g: usize| (((n as f32 * state.scale) / SAM_INPUT as f32 * g as f32).ceil() as usize).clamp(1, g);
        let (gh, gw) = (frac(emb.height, gh_full), frac(emb.width, gw_full));
        let mut data = Vec::with_capacity(gh * gw * dim);
        for y in 0..gh {
            for x in 0..gw {
                for c in 0..dim {
                    data.push(state.embeddings[[0, c, y, x]]);
                }
            }
        }
        FeatureMap::new(gh, gw, dim, data, emb.width, emb.height)
    }
}

/// Input geometry and normalization for a ViT patch encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VitSpec {
    pub grid: usize,
    pub patch: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl VitSpec {
    const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
    const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

    pub fn for_model(model: SemanticModel) -> Option<Self> {
        match model {
            SemanticModel::Clip => Some(Self {
                grid: 16,
                patch: 14,
                mean: [0.481_454_66, 0.457_827_5, 0.408_210_73],
                std: [0.268_629_54, 0.261_302_6, 0.275_777_1],
            }),
            SemanticModel::Dino => Some(Self { grid: 28, patch: 8, mean: Self::IMAGENET_MEAN, std: Self::IMAGENET_STD }),
            SemanticModel::Dinov2 => Some(Self { grid: 37, patch: 14, mean: Self::IMAGENET_MEAN, std: Self::IMAGENET_STD }),
            SemanticModel::Mock => None,
        }
    }

    pub fn input_size(&self) -> usize {
        self.grid * self.patch
    }
}

pub struct OnnxSemanticEncoder {
    name: String,
    spec: VitSpec,
    model: Model,
    path: PathBuf,
}

impl OnnxSemanticEncoder {
    pub fn load(path: impl AsRef<Path>, model: SemanticModel) -> Result<Self> {
        let spec = VitSpec::for_model(model)
            .ok_or_else(|| Error::Config("the mock semantic model has no ONNX adapter".into()))?;
        let path = path.as_ref().to_path_buf();
        Ok(Self { name: format!("{model:?}").to_lowercase(), spec, model: load_model(&path)?, path })
    }
}

impl SemanticEncoderBackend for OnnxSemanticEncoder {
    fn info(&self) -> SemanticInfo {
        SemanticInfo { name: self.name.clone(), grid_h: self.spec.grid, grid_w: self.spec.grid, dim: 0 }
    }

    fn embed(&self, image: &RawImage) -> Result<FeatureMap> {
        let s = self.spec.input_size();
        let resized = image.resize_bilinear(s, s)?;
        let input = NdTensor::<f32, 4>::from_fn([1, 3, s, s], |[_, c, y, x]| {
            (resized.get(x, y)[c] as f32 / 255.0 - self.spec.mean[c]) / self.spec.std[c]
        });
        let m = &self.model;
        let input_id = *m.input_ids().first().ok_or_else(|| Error::Backend("encoder has no inputs".into()))?;
        let output_id = *m.output_ids().first().ok_or_else(|| Error::Backend("encoder has no outputs".into()))?;
        let [out] = m.run_n(vec![(input_id, input.into())], [output_id], None).map_err(run_err)?;
        let tokens: NdTensor<f32, 3> = out.try_into().map_err(run_err)?;
        let [_, count, dim] = tokens.shape();
        let g = self.spec.grid;
        if count < g * g {
            return Err(Error::Backend(format!(
                "{} produced {count} tokens, expected at least {}",
                self.path.display(),
                g * g
            )));
        }
        let skip = count - g * g;
        let data = tokens.into_data()[skip * dim..].to_vec();
        FeatureMap::new(g, g, dim, data, image.width(), image.height())
    }
}

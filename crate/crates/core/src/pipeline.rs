//! End-to-end counting: prompts, proposals, filtering, matching, count.

use crate::backends::mock::{MockSegmenter, MockSemanticEncoder};
use crate::backends::{EmbeddedImage, SegmenterBackend, SemanticEncoderBackend, SemanticModel};
use crate::config::{Config, FeatureSource, PromptMode, SegmenterKind};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::image::RawImage;
use crate::mask::MaskProposal;
use crate::matching::{
    count, pool_mask_feature, refine_prototype, CountResult, FeatureMap, Prototype, ScoredProposal,
};
use crate::proposals::{
    filter_and_dedup, generate_candidates, generate_reference_masks, grid_prompts, multiscale_expand,
    remap_to_original, ProposalSet, QualityGate, ReferenceSpec,
};
use crate::superpixel::{centers_as_prompts, compute_superpixels, SuperpixelParams, SuperpixelResult};

/// How the target category is specified.
#[derive(Debug, Clone)]
pub enum References {
    /// Exemplar boxes or points inside the counted image; they count towards
    /// the total.
    InImage(ReferenceSpec),
    /// A prototype pooled from exemplars in other images; nothing is added to
    /// the count for it.
    External(Prototype),
}

/// Owned backend pair built from a config.
pub struct Backends {
    pub segmenter: Box<dyn SegmenterBackend>,
    pub semantic: Option<Box<dyn SemanticEncoderBackend>>,
}

impl Backends {
    pub fn mock(config: &Config) -> Self {
        Self {
            segmenter: Box::new(MockSegmenter::new(config.mock.clone())),
            semantic: Some(Box::new(MockSemanticEncoder::new(&config.mock))),
        }
    }

    /// Loads the backends the config asks for. The semantic encoder is only
    /// loaded when matching uses semantic features.
    pub fn from_config(config: &Config) -> Result<Self> {
        let segmenter: Box<dyn SegmenterBackend> = match config.segmenter.backend {
            SegmenterKind::Mock => Box::new(MockSegmenter::new(config.mock.clone())),
            SegmenterKind::Onnx => load_onnx_segmenter(config)?,
        };
        let semantic: Option<Box<dyn SemanticEncoderBackend>> = match config.matching.features {
            FeatureSource::Segmenter => None,
            FeatureSource::Semantic => Some(match config.semantic.model {
                SemanticModel::Mock => Box::new(MockSemanticEncoder::new(&config.mock)),
                model => load_onnx_semantic(config, model)?,
            }),
        };
        Ok(Self { segmenter, semantic })
    }

    pub fn pipeline<'a>(&'a self, config: &'a Config) -> Pipeline<'a> {
        Pipeline::new(self.segmenter.as_ref(), self.semantic.as_deref(), config)
    }
}

#[cfg(feature = "onnx")]
fn load_onnx_segmenter(config: &Config) -> Result<Box<dyn SegmenterBackend>> {
    let path = config
        .segmenter
        .weights_path
        .as_deref()
        .ok_or_else(|| Error::Config("segmenter.weights_path is required for the onnx backend".into()))?;
    Ok(Box::new(crate::backends::onnx::OnnxSegmenter::load(
        Config::resolve_weights(path),
        config.segmenter.variant,
    )?))
}

#[cfg(feature = "onnx")]
fn load_onnx_semantic(config: &Config, model: SemanticModel) -> Result<Box<dyn SemanticEncoderBackend>> {
    let path = config
        .semantic
        .weights_path
        .as_deref()
        .ok_or_else(|| Error::Config("semantic.weights_path is required for ONNX semantic models".into()))?;
    Ok(Box::new(crate::backends::onnx::OnnxSemanticEncoder::load(Config::resolve_weights(path), model)?))
}

#[cfg(not(feature = "onnx"))]
fn load_onnx_segmenter(_: &Config) -> Result<Box<dyn SegmenterBackend>> {
    Err(Error::Config("built without the `onnx` feature".into()))
}

#[cfg(not(feature = "onnx"))]
fn load_onnx_semantic(_: &Config, _: SemanticModel) -> Result<Box<dyn SemanticEncoderBackend>> {
    Err(Error::Config("built without the `onnx` feature".into()))
}

/// Everything produced before matching.
pub struct ProposalStage {
    pub embedding: EmbeddedImage,
    pub reference_masks: Vec<MaskProposal>,
    /// Superpixels of the full image, when prompts came from superpixels.
    pub superpixels: Option<SuperpixelResult>,
    pub prompts: Vec<Point>,
    /// Candidates before filtering, in original coordinates.
    pub raw_candidates: Vec<MaskProposal>,
    pub set: ProposalSet,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CountOutput {
    pub result: CountResult,
    pub prototype: Prototype,
    pub raw_candidates: usize,
    pub warnings: Vec<String>,
}

pub struct Pipeline<'a> {
    segmenter: &'a dyn SegmenterBackend,
    semantic: Option<&'a dyn SemanticEncoderBackend>,
    config: &'a Config,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        segmenter: &'a dyn SegmenterBackend,
        semantic: Option<&'a dyn SemanticEncoderBackend>,
        config: &'a Config,
    ) -> Self {
        Self { segmenter, semantic, config }
    }

    pub fn config(&self) -> &Config {
        self.config
    }

    fn quality_gate(&self) -> QualityGate {
        QualityGate {
            min_confidence: self.config.segmenter.pred_iou_thresh,
            min_stability: self.config.segmenter.stability_score_thresh,
        }
    }

    /// Point prompts for one segmenter input.
    pub fn prompts_for(&self, image: &RawImage) -> Result<(Vec<Point>, Option<SuperpixelResult>)> {
        match self.config.prompts.mode {
            PromptMode::Grid => Ok((grid_prompts(image.width(), image.height(), self.config.prompts.grid_side), None)),
            PromptMode::Superpixel => {
                let params = SuperpixelParams {
                    cluster_count: self.config.superpixel.cluster_count.min(image.width() * image.height()),
                    ..self.config.superpixel.clone()
                };
                let sp = compute_superpixels(image, &params)?;
                Ok((centers_as_prompts(&sp), Some(sp)))
            }
        }
    }

    /// Reference masks and the filtered candidate set, merged over the full
    /// image and (when enabled) every tile.
    pub fn propose(&self, image: &RawImage, refs: Option<&ReferenceSpec>) -> Result<ProposalStage> {
        let mut warnings = Vec::new();
        let embedding = self.segmenter.encode(image)?;
        let reference_masks = match refs {
            Some(r) => generate_reference_masks(self.segmenter, &embedding, r, &mut warnings)?,
            None => Vec::new(),
        };
        let gate = self.quality_gate();
        let (prompts, superpixels) = self.prompts_for(image)?;
        let mut raw_candidates = generate_candidates(self.segmenter, &embedding, &prompts, gate)?;

        let ms = &self.config.multiscale;
        if ms.enabled && ms.n_p > 1 {
            for tile in multiscale_expand(image, ms.n_p)? {
                let emb = self.segmenter.encode(&tile.image)?;
                let (tile_prompts, _) = self.prompts_for(&tile.image)?;
                for m in generate_candidates(self.segmenter, &emb, &tile_prompts, gate)? {
                    if !tile.transform.is_truncated(&m.mask) {
                        let r = remap_to_original(&m, &tile.transform);
                        if !r.is_degenerate() {
                            raw_candidates.push(r);
                        }
                    }
                }
            }
        }

        let set = filter_and_dedup(
            ProposalSet::new(reference_masks.clone(), raw_candidates.clone(), image.width(), image.height()),
            self.config.dedup.iou_threshold,
        );
        Ok(ProposalStage { embedding, reference_masks, superpixels, prompts, raw_candidates, set, warnings })
    }

    /// Feature grid used for matching.
    pub fn feature_map(&self, image: &RawImage, embedding: &EmbeddedImage) -> Result<FeatureMap> {
        match self.config.matching.features {
            FeatureSource::Segmenter => self.segmenter.embedding_features(embedding),
            FeatureSource::Semantic => self
                .semantic
                .ok_or_else(|| Error::Config("semantic features requested but no semantic encoder is loaded".into()))?
                .embed(image),
        }
    }

    pub fn count(&self, image: &RawImage, refs: &References) -> Result<CountOutput> {
        let in_image = match refs {
            References::InImage(r) => Some(r),
            References::External(_) => None,
        };
        let stage = self.propose(image, in_image)?;
        let fm = self.feature_map(image, &stage.embedding)?;
        let m = &self.config.matching;
        let (prototype, n_ref) = match refs {
            References::InImage(r) => {
                let feats: Vec<Vec<f64>> = stage
                    .reference_masks
                    .iter()
                    .filter(|r| !r.is_degenerate())
                    .map(|r| pool_mask_feature(&fm, &r.mask, m.mask_interp))
                    .collect();
                (Prototype::from_features(&feats)?, r.n_ref())
            }
            References::External(p) => {
                if p.vector.len() != fm.dim {
                    return Err(Error::InvalidInput(format!(
                        "external prototype has dimension {}, feature map has {}",
                        p.vector.len(),
                        fm.dim
                    )));
                }
                (p.clone(), 0)
            }
        };

        let scored: Vec<ScoredProposal> = stage
            .set
            .candidate_masks
            .iter()
            .map(|c| ScoredProposal::new(c.clone(), pool_mask_feature(&fm, &c.mask, m.mask_interp)))
            .collect();
        let (prototype, scored) = refine_prototype(prototype, scored, m.delta, m.tpu_rounds);
        let mut result = count(&scored, m.theta, n_ref);
        result.reference_masks = stage.reference_masks;
        Ok(CountOutput { result, prototype, raw_candidates: stage.raw_candidates.len(), warnings: stage.warnings })
    }

    /// Prototype pooled from exemplars in other images, one feature per
    /// non-degenerate exemplar mask.
    pub fn exemplar_prototype(&self, exemplars: &[(RawImage, ReferenceSpec)]) -> Result<Prototype> {
        let mut feats = Vec::new();
        let mut warnings = Vec::new();
        for (image, refs) in exemplars {
            let emb = self.segmenter.encode(image)?;
            let masks = match generate_reference_masks(self.segmenter, &emb, refs, &mut warnings) {
                Ok(m) => m,
                Err(Error::ReferenceFailure(_)) => continue,
                Err(e) => return Err(e),
            };
            let fm = self.feature_map(image, &emb)?;
            feats.extend(
                masks
                    .iter()
                    .filter(|m| !m.is_degenerate())
                    .map(|m| pool_mask_feature(&fm, &m.mask, self.config.matching.mask_interp)),
            );
        }
        Prototype::from_features(&feats)
    }
}

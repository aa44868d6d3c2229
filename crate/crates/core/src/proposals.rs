//! Reference and candidate mask generation, multi-scale tiling, and the
//! filtering that turns raw decoder output into a candidate set.

use serde::{Deserialize, Serialize};

use crate::backends::{decode_batched, EmbeddedImage, SegmenterBackend};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Point, Prompt};
use crate::image::{RawImage, Region};
use crate::mask::{BinaryMask, MaskProposal, Origin};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceFormat {
    Box,
    Point,
}

/// Exemplar prompts in original-image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub items: Vec<Prompt>,
}

impl ReferenceSpec {
    pub fn boxes(boxes: impl IntoIterator<Item = BBox>) -> Self {
        Self { items: boxes.into_iter().map(Prompt::Box).collect() }
    }

    pub fn points(points: impl IntoIterator<Item = Point>) -> Self {
        Self { items: points.into_iter().map(Prompt::Point).collect() }
    }

    pub fn n_ref(&self) -> usize {
        self.items.len()
    }

    /// `Box` if every item is a box, `Point` if every item is a point.
    pub fn format(&self) -> Option<ReferenceFormat> {
        let boxes = self.items.iter().filter(|p| matches!(p, Prompt::Box(_))).count();
        match boxes {
            0 if !self.items.is_empty() => Some(ReferenceFormat::Point),
            n if n == self.items.len() && n > 0 => Some(ReferenceFormat::Box),
            _ => None,
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::InvalidInput("at least one reference is required".into()));
        }
        if let Some(bad) = self.items.iter().find(|p| !p.in_bounds(width, height)) {
            return Err(Error::InvalidInput(format!("reference {bad:?} outside {width}x{height} image")));
        }
        Ok(())
    }
}

/// Reference masks in reference order. Prompts that fail or decode empty are
/// kept as degenerate entries with a warning; if none survive the whole call
/// fails.
pub fn generate_reference_masks(
    backend: &dyn SegmenterBackend,
    emb: &EmbeddedImage,
    refs: &ReferenceSpec,
    warnings: &mut Vec<String>,
) -> Result<Vec<MaskProposal>> {
    refs.validate(emb.width, emb.height)?;
    let slots = decode_batched(backend, emb, &refs.items)?;
    let masks: Vec<MaskProposal> = slots
        .into_iter()
        .zip(&refs.items)
        .map(|(slot, prompt)| match slot {
            Ok(m) if !m.is_degenerate() => m,
            Ok(_) => {
                warnings.push(format!("reference {prompt:?} produced an empty mask"));
                MaskProposal::new(BinaryMask::empty(emb.width, emb.height), 0.0)
            }
            Err(e) => {
                warnings.push(format!("reference {prompt:?} failed: {e}"));
                MaskProposal::new(BinaryMask::empty(emb.width, emb.height), 0.0)
            }
        })
        .collect();
    if masks.iter().all(MaskProposal::is_degenerate) {
        return Err(Error::ReferenceFailure(format!(
            "all {} reference prompts decoded to empty masks",
            masks.len()
        )));
    }
    Ok(masks)
}

/// Decoder quality gates applied to candidate masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityGate {
    pub min_confidence: f32,
    pub min_stability: f32,
}

impl QualityGate {
    pub const OPEN: QualityGate = QualityGate { min_confidence: f32::NEG_INFINITY, min_stability: f32::NEG_INFINITY };

    fn admits(&self, m: &MaskProposal) -> bool {
        m.segmenter_confidence >= self.min_confidence && m.stability_score >= self.min_stability
    }
}

/// Decodes one mask per point prompt and drops empty, failed or low-quality
/// ones.
pub fn generate_candidates(
    backend: &dyn SegmenterBackend,
    emb: &EmbeddedImage,
    prompts: &[Point],
    gate: QualityGate,
) -> Result<Vec<MaskProposal>> {
    let prompts: Vec<Prompt> = prompts.iter().copied().map(Prompt::Point).collect();
    Ok(decode_batched(backend, emb, &prompts)?
        .into_iter()
        .filter_map(std::result::Result::ok)
        .filter(|m| !m.is_degenerate() && gate.admits(m))
        .collect())
}

/// `side x side` regular point grid with half-cell offsets.
pub fn grid_prompts(width: usize, height: usize, side: usize) -> Vec<Point> {
    let mut out = Vec::with_capacity(side * side);
    for j in 0..side {
        for i in 0..side {
            let x = ((i as f64 + 0.5) * width as f64 / side as f64) as usize;
            let y = ((j as f64 + 0.5) * height as f64 / side as f64) as usize;
            out.push(Point::new(x.min(width - 1), y.min(height - 1)));
        }
    }
    out
}

/// Maps between a tile image (upscaled to the full image size) and the
/// region of the original image it was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileTransform {
    pub row: usize,
    pub col: usize,
    pub region: Region,
    pub full_width: usize,
    pub full_height: usize,
}

impl TileTransform {
    /// Continuous tile coordinate to original coordinate.
    pub fn to_original(&self, tx: f64, ty: f64) -> (f64, f64) {
        (
            self.region.x as f64 + tx * self.region.width as f64 / self.full_width as f64,
            self.region.y as f64 + ty * self.region.height as f64 / self.full_height as f64,
        )
    }

    /// Continuous original coordinate to tile coordinate.
    pub fn to_tile(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.region.x as f64) * self.full_width as f64 / self.region.width as f64,
            (y - self.region.y as f64) * self.full_height as f64 / self.region.height as f64,
        )
    }

    pub fn origin(&self) -> Origin {
        Origin::Tile { row: self.row, col: self.col }
    }

    /// Samples an original-image mask at tile pixel centers.
    pub fn project_mask(&self, mask: &BinaryMask) -> BinaryMask {
        let (w, h) = (self.full_width, self.full_height);
        BinaryMask::from_fn_in(w, h, BBox::new(0, 0, w, h), |tx, ty| {
            let (x, y) = self.to_original(tx as f64 + 0.5, ty as f64 + 0.5);
            mask.get(x as usize, y as usize)
        })
    }

    /// True when the mask touches a tile edge that was cut from the interior
    /// of the original image, i.e. the object may continue in a neighbour.
    pub fn is_truncated(&self, mask: &BinaryMask) -> bool {
        if mask.is_empty() {
            return false;
        }
        let b = mask.bbox();
        let r = self.region;
        (r.x > 0 && b.x0 == 0)
            || (r.y > 0 && b.y0 == 0)
            || (r.right() < self.full_width && b.x1 == self.full_width)
            || (r.bottom() < self.full_height && b.y1 == self.full_height)
    }
}

#[derive(Debug, Clone)]
pub struct Tile {
    pub image: RawImage,
    pub transform: TileTransform,
}

/// Splits `[0, len)` into `n` spans; the last absorbs the remainder.
fn spans(len: usize, n: usize) -> Vec<(usize, usize)> {
    let base = len / n;
    (0..n)
        .map(|i| {
            let start = i * base;
            let end = if i + 1 == n { len } else { start + base };
            (start, end - start)
        })
        .collect()
}

/// Cuts the image into `n_p x n_p` non-overlapping tiles (row-major) and
/// resizes each back to the full image size.
pub fn multiscale_expand(image: &RawImage, n_p: usize) -> Result<Vec<Tile>> {
    let (w, h) = (image.width(), image.height());
    if n_p == 0 || n_p > w.min(h) {
        return Err(Error::InvalidParameter(format!(
            "tile count {n_p} must be in 1..={} for a {w}x{h} image",
            w.min(h)
        )));
    }
    let mut tiles = Vec::with_capacity(n_p * n_p);
    for (row, &(y, th)) in spans(h, n_p).iter().enumerate() {
        for (col, &(x, tw)) in spans(w, n_p).iter().enumerate() {
            let region = Region::new(x, y, tw, th);
            let image = if n_p == 1 { image.clone() } else { image.crop(region)?.resize_bilinear(w, h)? };
            tiles.push(Tile {
                image,
                transform: TileTransform { row, col, region, full_width: w, full_height: h },
            });
        }
    }
    Ok(tiles)
}

/// Nearest-neighbour resampling of a tile mask into original coordinates,
/// clipped to the tile's region.
pub fn remap_to_original(mask: &MaskProposal, t: &TileTransform) -> MaskProposal {
    let (w, h) = (t.full_width, t.full_height);
    let remapped = if mask.is_degenerate() {
        BinaryMask::empty(w, h)
    } else {
        let b = mask.bbox();
        let (x0, y0) = t.to_original(b.x0 as f64, b.y0 as f64);
        let (x1, y1) = t.to_original(b.x1 as f64, b.y1 as f64);
        let window = BBox::new(
            (x0.floor() as usize).max(t.region.x),
            (y0.floor() as usize).max(t.region.y),
            (x1.ceil() as usize).min(t.region.right()),
            (y1.ceil() as usize).min(t.region.bottom()),
        );
        BinaryMask::from_fn_in(w, h, window, |x, y| {
            let (tx, ty) = t.to_tile(x as f64 + 0.5, y as f64 + 0.5);
            let (tx, ty) = ((tx.max(0.0) as usize).min(w - 1), (ty.max(0.0) as usize).min(h - 1));
            mask.mask.get(tx, ty)
        })
    };
    MaskProposal {
        mask: remapped,
        segmenter_confidence: mask.segmenter_confidence,
        stability_score: mask.stability_score,
        origin: t.origin(),
        similarity: mask.similarity,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub reference_masks: Vec<MaskProposal>,
    pub candidate_masks: Vec<MaskProposal>,
    pub width: usize,
    pub height: usize,
    /// Set once the background (largest) candidate has been dropped.
    pub background_removed: bool,
}

impl ProposalSet {
    pub fn new(reference_masks: Vec<MaskProposal>, candidate_masks: Vec<MaskProposal>, width: usize, height: usize) -> Self {
        Self { reference_masks, candidate_masks, width, height, background_removed: false }
    }
}

fn is_duplicate(a: &BinaryMask, b: &BinaryMask, threshold: f64) -> bool {
    a.iou_upper_bound(b) >= threshold && a.bbox().intersect(&b.bbox()).is_some() && a.iou(b) >= threshold
}

/// Collapses duplicate candidates (IoU >= threshold, keeping the higher
/// confidence), drops the largest surviving candidate as background, then
/// drops candidates duplicating any reference mask. Candidate order is
/// otherwise preserved.
pub fn filter_and_dedup(set: ProposalSet, iou_threshold: f64) -> ProposalSet {
    let ProposalSet { reference_masks, candidate_masks, width, height, background_removed } = set;

    let mut order: Vec<usize> = (0..candidate_masks.len()).collect();
    order.sort_by(|&a, &b| {
        candidate_masks[b]
            .segmenter_confidence
            .total_cmp(&candidate_masks[a].segmenter_confidence)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let m = &candidate_masks[i].mask;
        if !kept.iter().any(|&k| is_duplicate(&candidate_masks[k].mask, m, iou_threshold)) {
            kept.push(i);
        }
    }
    kept.sort_unstable();

    if !background_removed {
        if let Some(pos) = kept
            .iter()
            .enumerate()
            .max_by(|a, b| candidate_masks[*a.1].area().cmp(&candidate_masks[*b.1].area()).then(b.0.cmp(&a.0)))
            .map(|(pos, _)| pos)
        {
            kept.remove(pos);
        }
    }

    let refs: Vec<&MaskProposal> = reference_masks.iter().filter(|r| !r.is_degenerate()).collect();
    kept.retain(|&i| !refs.iter().any(|r| is_duplicate(&r.mask, &candidate_masks[i].mask, iou_threshold)));

    let mut slots: Vec<Option<MaskProposal>> = candidate_masks.into_iter().map(Some).collect();
    let candidate_masks = kept.into_iter().map(|i| slots[i].take().expect("index kept once")).collect();
    ProposalSet { reference_masks, candidate_masks, width, height, background_removed: true }
}

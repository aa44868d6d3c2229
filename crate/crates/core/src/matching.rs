//! Region-of-mask features, the reference prototype, cosine scoring,
//! transductive prototype updating and the final count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, MaskProposal};

/// Patch-grid feature tensor, row-major `[grid_h][grid_w][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    /// Dimensions of the image the grid covers.
    pub image_width: usize,
    pub image_height: usize,
}

impl FeatureMap {
    pub fn new(
        grid_h: usize,
        grid_w: usize,
        dim: usize,
        data: Vec<f32>,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || dim == 0 {
            return Err(Error::InvalidInput("feature map must be non-empty".into()));
        }
        if data.len() != grid_h * grid_w * dim {
            return Err(Error::InvalidInput(format!(
                "feature buffer has {} values, expected {}x{}x{}",
                data.len(),
                grid_h,
                grid_w,
                dim
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature map contains non-finite values".into()));
        }
        Ok(Self { grid_h, grid_w, dim, data, image_width, image_height })
    }

    #[inline]
    pub fn cell(&self, gy: usize, gx: usize) -> &[f32] {
        let i = (gy * self.grid_w + gx) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (
            self.image_width as f64 / self.grid_w as f64,
            self.image_height as f64 / self.grid_h as f64,
        )
    }
}

/// How a full-resolution mask is brought down to the feature grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskInterp {
    /// Area-weighted coverage fraction per cell, in `[0, 1]`.
    #[default]
    Soft,
    /// Nearest-neighbour sample at each cell center.
    Hard,
}

/// Per-cell weights of `mask` on the grid of `fm`.
pub fn grid_weights(fm: &FeatureMap, mask: &BinaryMask, interp: MaskInterp) -> Vec<f64> {
    let mut weights = vec![0.0; fm.grid_h * fm.grid_w];
    if mask.is_empty() {
        return weights;
    }
    let (cw, ch) = fm.cell_size();
    match interp {
        MaskInterp::Soft => {
            let b = mask.bbox();
            let cols: Vec<Vec<(usize, f64)>> = (b.x0..b.x1).map(|x| axis_overlaps(x, cw, fm.grid_w)).collect();
            let rows: Vec<Vec<(usize, f64)>> = (b.y0..b.y1).map(|y| axis_overlaps(y, ch, fm.grid_h)).collect();
            for p in mask.pixels() {
                for &(gy, oy) in &rows[p.y - b.y0] {
                    for &(gx, ox) in &cols[p.x - b.x0] {
                        weights[gy * fm.grid_w + gx] += ox * oy;
                    }
                }
            }
            let cell_area = cw * ch;
            for w in &mut weights {
                *w = (*w / cell_area).min(1.0);
            }
        }
        MaskInterp::Hard => {
            for gy in 0..fm.grid_h {
                let y = (((gy as f64 + 0.5) * ch) as usize).min(mask.height() - 1);
                for gx in 0..fm.grid_w {
                    let x = (((gx as f64 + 0.5) * cw) as usize).min(mask.width() - 1);
                    if mask.get(x, y) {
                        weights[gy * fm.grid_w + gx] = 1.0;
                    }
                }
            }
        }
    }
    weights
}

/// Cells overlapped by the unit pixel interval `[i, i+1)` and overlap lengths.
pub(crate) fn axis_overlaps(i: usize, cell: f64, n: usize) -> Vec<(usize, f64)> {
    let (lo, hi) = (i as f64, i as f64 + 1.0);
    let first = ((lo / cell).floor() as usize).min(n - 1);
    let mut out = Vec::with_capacity(2);
    let mut g = first;
    while g < n {
        let (c0, c1) = (g as f64 * cell, (g + 1) as f64 * cell);
        if c0 >= hi {
            break;
        }
        let len = hi.min(c1) - lo.max(c0);
        if len > 0.0 {
            out.push((g, len));
        }
        g += 1;
    }
    out
}

/// Masked average of grid features under the downsampled mask. Falls back to
/// the cell holding the mask centroid when no cell receives weight; an empty
/// mask pools to the zero vector.
pub fn pool_mask_feature(fm: &FeatureMap, mask: &BinaryMask, interp: MaskInterp) -> Vec<f64> {
    let weights = grid_weights(fm, mask, interp);
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; fm.dim];
    if total > 0.0 {
        for (c, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let f = &fm.data[c * fm.dim..(c + 1) * fm.dim];
            for (o, &v) in out.iter_mut().zip(f) {
                *o += w * v as f64;
            }
        }
        for o in &mut out {
            *o /= total;
        }
        return out;
    }
    if let Some((cx, cy)) = mask.centroid() {
        let (cw, ch) = fm.cell_size();
        let gx = (((cx + 0.5) / cw) as usize).min(fm.grid_w - 1);
        let gy = (((cy + 0.5) / ch) as usize).min(fm.grid_h - 1);
        for (o, &v) in out.iter_mut().zip(fm.cell(gy, gx)) {
            *o = v as f64;
        }
    }
    out
}

/// Reference prototype, possibly augmented by transductive updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub vector: Vec<f64>,
    /// Number of features averaged into `vector`.
    pub support_count: f64,
    pub update_round: u32,
}

impl Prototype {
    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = features.first() else {
            return Err(Error::ReferenceFailure("no reference features to average".into()));
        };
        let mut vector = vec![0.0; first.len()];
        for f in features {
            if f.len() != vector.len() {
                return Err(Error::InvalidInput("reference features differ in dimension".into()));
            }
            for (v, x) in vector.iter_mut().zip(f) {
                *v += x;
            }
        }
        let n = features.len() as f64;
        vector.iter_mut().for_each(|v| *v /= n);
        if vector.iter().all(|v| *v == 0.0) || vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::ReferenceFailure("reference prototype is zero or non-finite".into()));
        }
        Ok(Self { vector, support_count: n, update_round: 0 })
    }
}

pub fn build_prototype(fm: &FeatureMap, ref_masks: &[MaskProposal], interp: MaskInterp) -> Result<Prototype> {
    let feats: Vec<Vec<f64>> = ref_masks
        .iter()
        .filter(|m| !m.is_degenerate())
        .map(|m| pool_mask_feature(fm, &m.mask, interp))
        .collect();
    if feats.is_empty() {
        return Err(Error::ReferenceFailure("all reference masks are empty".into()));
    }
    Prototype::from_features(&feats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredProposal {
    pub proposal: MaskProposal,
    pub feature: Vec<f64>,
    pub similarity: f64,
}

impl ScoredProposal {
    pub fn new(proposal: MaskProposal, feature: Vec<f64>) -> Self {
        Self { proposal, feature, similarity: -1.0 }
    }
}

/// Cosine similarity clamped to `[-1, 1]`; a zero vector scores -1.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return -1.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub fn score_proposals(proto: &Prototype, mut scored: Vec<ScoredProposal>) -> Vec<ScoredProposal> {
    for s in &mut scored {
        s.similarity = cosine(&proto.vector, &s.feature);
        s.proposal.similarity = Some(s.similarity);
    }
    scored
}

/// One round of prototype updating: the current prototype, weighted by its
/// support count, is averaged with every candidate feature scoring strictly
/// above `delta`.
pub fn transductive_update(proto: &Prototype, scored: &[ScoredProposal], delta: f64) -> Prototype {
    let mut sum: Vec<f64> = proto.vector.iter().map(|v| v * proto.support_count).collect();
    let mut selected = 0usize;
    for s in scored.iter().filter(|s| s.similarity > delta) {
        for (acc, f) in sum.iter_mut().zip(&s.feature) {
            *acc += f;
        }
        selected += 1;
    }
    if selected == 0 {
        return Prototype { update_round: proto.update_round + 1, ..proto.clone() };
    }
    let support = proto.support_count + selected as f64;
    Prototype {
        vector: sum.into_iter().map(|v| v / support).collect(),
        support_count: support,
        update_round: proto.update_round + 1,
    }
}

/// Runs `rounds` update/rescore cycles, returning the final prototype and the
/// candidates scored against it.
pub fn refine_prototype(
    proto: Prototype,
    scored: Vec<ScoredProposal>,
    delta: f64,
    rounds: u32,
) -> (Prototype, Vec<ScoredProposal>) {
    let mut proto = proto;
    let mut scored = score_proposals(&proto, scored);
    for _ in 0..rounds {
        proto = transductive_update(&proto, &scored, delta);
        scored = score_proposals(&proto, scored);
    }
    (proto, scored)
}

#[derive(Debug, Clone)]
pub struct CountResult {
    pub count: usize,
    /// References contributing to the count directly.
    pub n_ref: usize,
    pub selected: Vec<ScoredProposal>,
    pub reference_masks: Vec<MaskProposal>,
    /// Number of candidates that were scored.
    pub candidates: usize,
}

/// `n_ref` plus the number of candidates scoring strictly above `theta`.
pub fn count(scored: &[ScoredProposal], theta: f64, n_ref: usize) -> CountResult {
    let selected: Vec<ScoredProposal> = scored.iter().filter(|s| s.similarity > theta).cloned().collect();
    CountResult {
        count: n_ref + selected.len(),
        n_ref,
        selected,
        reference_masks: Vec::new(),
        candidates: scored.len(),
    }
}

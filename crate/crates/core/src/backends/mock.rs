//! Deterministic stand-ins for the model backends.
//!
//! The mock segmenter snaps pixels to the nearest palette color and treats
//! every connected region of one color as one object, so on rendered
//! synthetic scenes a prompt returns exactly the shape it lands on. Regions
//! smaller than `min_area` pixels are reported as empty masks, which mimics a
//! real segmenter failing on tiny objects and gives the multi-scale path
//! something to recover.
//!
//! The mock semantic encoder classifies pixels by nearest palette color and
//! pools one-hot class vectors onto a patch grid.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{
    DecodeSlot, EmbeddedImage, PromptError, SegmenterBackend, SegmenterInfo, SegmenterVariant,
    SemanticEncoderBackend, SemanticInfo,
};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Point, Prompt};
use crate::image::RawImage;
use crate::mask::{BinaryMask, MaskProposal};
use crate::matching::{axis_overlaps, FeatureMap};

/// Class colors used by the synthetic scene generator and the mock encoder.
pub const CLASS_COLORS: [[u8; 3]; 8] = [
    [220, 60, 60],
    [60, 200, 80],
    [70, 90, 230],
    [230, 200, 50],
    [200, 70, 210],
    [60, 210, 210],
    [240, 140, 40],
    [160, 160, 160],
];

pub const BACKGROUND_COLOR: [u8; 3] = [25, 25, 25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockConfig {
    /// Regions below this many pixels decode to empty masks.
    pub min_area: usize,
    pub confidence: f32,
    /// Side of the mock segmenter's own feature grid (capped by image size).
    pub segmenter_grid: usize,
    pub semantic_grid: usize,
    /// Amplitude of the deterministic per-cell feature jitter.
    pub jitter: f32,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            min_area: 30,
            confidence: 0.95,
            segmenter_grid: 64,
            semantic_grid: 37,
            jitter: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockSegmenter {
    pub config: MockConfig,
}

impl MockSegmenter {
    pub fn new(config: MockConfig) -> Self {
        Self { config }
    }
}

impl Default for MockSegmenter {
    fn default() -> Self {
        Self::new(MockConfig::default())
    }
}

/// Color-connected regions of one image.
#[derive(Debug)]
struct Regions {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    sizes: Vec<usize>,
    boxes: Vec<BBox>,
    largest: u32,
}

impl Regions {
    /// Connected components of pixels sharing the nearest palette color.
    fn compute(image: &RawImage) -> Self {
        let (w, h) = (image.width(), image.height());
        let mut labels = vec![u32::MAX; w * h];
        let (mut sizes, mut boxes) = (Vec::new(), Vec::new());
        let classes: Vec<usize> = image
            .as_bytes()
            .chunks_exact(3)
            .map(|p| nearest_class([p[0], p[1], p[2]], &BACKGROUND_COLOR, &CLASS_COLORS))
            .collect();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if labels[start] != u32::MAX {
                continue;
            }
            let id = sizes.len() as u32;
            let (mut n, mut b) = (0, BBox::new(usize::MAX, usize::MAX, 0, 0));
            labels[start] = id;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                n += 1;
                b = BBox::new(b.x0.min(x), b.y0.min(y), b.x1.max(x + 1), b.y1.max(y + 1));
                let c = classes[i];
                let mut visit = |j: usize| {
                    if labels[j] == u32::MAX && classes[j] == c {
                        labels[j] = id;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            sizes.push(n);
            boxes.push(b);
        }
        let largest = sizes
            .iter()
            .enumerate()
            .fold((0usize, 0usize), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc })
            .0 as u32;
        Self { width: w, height: h, labels, sizes, boxes, largest }
    }

    fn label(&self, p: Point) -> u32 {
        self.labels[p.y * self.width + p.x]
    }

    fn mask(&self, id: u32) -> BinaryMask {
        let w = self.width;
        BinaryMask::from_fn_in(self.width, self.height, self.boxes[id as usize], |x, y| self.labels[y * w + x] == id)
    }
}

impl SegmenterBackend for MockSegmenter {
    fn info(&self) -> SegmenterInfo {
        SegmenterInfo {
            name: "mock-segmenter".into(),
            variant: SegmenterVariant::VitB,
            input_resolution: 0,
            batch_limit: usize::MAX,
        }
    }

    fn encode(&self, image: &RawImage) -> Result<EmbeddedImage> {
        Ok(EmbeddedImage::new(image, Regions::compute(image)))
    }

    fn decode(&self, emb: &EmbeddedImage, prompts: &[Prompt]) -> Result<Vec<DecodeSlot>> {
        let regions = emb
            .state::<Regions>()
            .ok_or_else(|| Error::Backend("embedding was not produced by the mock segmenter".into()))?;
        let usable = |id: u32| regions.sizes[id as usize] >= self.config.min_area;
        let mut cache: HashMap<u32, MaskProposal> = HashMap::new();
        let mut out = Vec::with_capacity(prompts.len());
        for prompt in prompts {
            if !prompt.in_bounds(regions.width, regions.height) {
                out.push(Err(PromptError::OutOfBounds(*prompt)));
                continue;
            }
            let target = match prompt {
                Prompt::Point(p) => Some(regions.label(*p)).filter(|&id| usable(id)),
                Prompt::Box(b) => {
                    let center = regions.label(b.center());
                    if usable(center) && b.contains_box(&regions.boxes[center as usize]) {
                        Some(center)
                    } else {
                        (0..regions.sizes.len() as u32)
                            .filter(|&id| usable(id) && b.contains_box(&regions.boxes[id as usize]))
                            .max_by_key(|&id| (regions.sizes[id as usize], std::cmp::Reverse(id)))
                    }
                }
            };
            let proposal = match target {
                Some(id) => cache
                    .entry(id)
                    .or_insert_with(|| MaskProposal::new(regions.mask(id), self.config.confidence))
                    .clone(),
                None => MaskProposal::new(BinaryMask::empty(regions.width, regions.height), 0.0),
            };
            out.push(Ok(proposal));
        }
        Ok(out)
    }

    /// Objectness-only features: every non-background region looks alike.
    fn embedding_features(&self, emb: &EmbeddedImage) -> Result<FeatureMap> {
        let regions = emb
            .state::<Regions>()
            .ok_or_else(|| Error::Backend("embedding was not produced by the mock segmenter".into()))?;
        let g = self.config.segmenter_grid.max(1);
        let (gh, gw) = (g.min(regions.height), g.min(regions.width));
        let w = regions.width;
        let data = pool_pixels(regions.width, regions.height, gh, gw, 2, |x, y, f| {
            if regions.labels[y * w + x] == regions.largest {
                f[1] = 1.0;
            } else {
                f[0] = 1.0;
                f[1] = 0.2;
            }
        });
        let data = jittered(data, emb.image_hash, self.config.jitter);
        FeatureMap::new(gh, gw, 2, data, regions.width, regions.height)
    }
}

#[derive(Debug, Clone)]
pub struct MockSemanticEncoder {
    pub background: [u8; 3],
    pub palette: Vec<[u8; 3]>,
    pub grid: usize,
    pub jitter: f32,
}

impl MockSemanticEncoder {
    pub fn new(config: &MockConfig) -> Self {
        Self {
            background: BACKGROUND_COLOR,
            palette: CLASS_COLORS.to_vec(),
            grid: config.semantic_grid.max(1),
            jitter: config.jitter,
        }
    }

    /// Class index of a color: 0 for background, `1 + i` for palette entry `i`.
    pub fn classify(&self, rgb: [u8; 3]) -> usize {
        nearest_class(rgb, &self.background, &self.palette)
    }

    fn dim(&self) -> usize {
        self.palette.len() + 1
    }
}

impl Default for MockSemanticEncoder {
    fn default() -> Self {
        Self::new(&MockConfig::default())
    }
}

impl SemanticEncoderBackend for MockSemanticEncoder {
    fn info(&self) -> SemanticInfo {
        SemanticInfo { name: "mock-semantic".into(), grid_h: self.grid, grid_w: self.grid, dim: self.dim() }
    }

    fn embed(&self, image: &RawImage) -> Result<FeatureMap> {
        let dim = self.dim();
        let classes: Vec<usize> = image.as_bytes().chunks_exact(3).map(|p| self.classify([p[0], p[1], p[2]])).collect();
        let w = image.width();
        let data = pool_pixels(w, image.height(), self.grid, self.grid, dim, |x, y, f| {
            f[classes[y * w + x]] = 1.0;
        });
        let data = jittered(data, image.content_hash(), self.jitter);
        FeatureMap::new(self.grid, self.grid, dim, data, w, image.height())
    }
}

/// 0 for `background`, `1 + i` for `palette[i]`; ties go to the lower index.
fn nearest_class(rgb: [u8; 3], background: &[u8; 3], palette: &[[u8; 3]]) -> usize {
    let d = |c: &[u8; 3]| (0..3).map(|i| (c[i] as i32 - rgb[i] as i32).pow(2)).sum::<i32>();
    std::iter::once(background)
        .chain(palette)
        .enumerate()
        .min_by_key(|(i, c)| (d(c), *i))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Area-weighted average of per-pixel features onto a `gh x gw` grid.
fn pool_pixels(
    w: usize,
    h: usize,
    gh: usize,
    gw: usize,
    dim: usize,
    pixel: impl Fn(usize, usize, &mut [f32]),
) -> Vec<f32> {
    let (cw, ch) = (w as f64 / gw as f64, h as f64 / gh as f64);
    let cols: Vec<_> = (0..w).map(|x| axis_overlaps(x, cw, gw)).collect();
    let mut acc = vec![0.0f64; gh * gw * dim];
    let mut f = vec![0.0f32; dim];
    for y in 0..h {
        let rows = axis_overlaps(y, ch, gh);
        for (x, col) in cols.iter().enumerate() {
            f.fill(0.0);
            pixel(x, y, &mut f);
            for &(gy, oy) in &rows {
                for &(gx, ox) in col {
                    let base = (gy * gw + gx) * dim;
                    for (d, &v) in f.iter().enumerate() {
                        if v != 0.0 {
                            acc[base + d] += v as f64 * ox * oy;
                        }
                    }
                }
            }
        }
    }
    let area = cw * ch;
    acc.into_iter().map(|v| (v / area) as f32).collect()
}

fn jittered(mut data: Vec<f32>, seed: u64, amplitude: f32) -> Vec<f32> {
    if amplitude == 0.0 {
        return data;
    }
    for (i, v) in data.iter_mut().enumerate() {
        let r = splitmix64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        *v += amplitude * ((r >> 40) as f32 / (1u64 << 24) as f32);
    }
    data
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

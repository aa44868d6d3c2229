//! Binary instance masks and the proposal records built around them.

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, Point};

/// Binary mask over a `width x height` image, stored cropped to its tight
/// bounding box. An empty mask has an empty box and no bits.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bbox: BBox,
    bits: Vec<bool>,
    area: usize,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("size", &(self.width, self.height))
            .field("bbox", &self.bbox)
            .field("area", &self.area)
            .finish()
    }
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bbox: BBox::new(0, 0, 0, 0), bits: Vec::new(), area: 0 }
    }

    /// Builds a mask from a full-size row-major bitmap.
    pub fn from_bitmap(width: usize, height: usize, bitmap: &[bool]) -> Self {
        assert_eq!(bitmap.len(), width * height, "bitmap size mismatch");
        Self::from_fn_in(width, height, BBox::new(0, 0, width, height), |x, y| bitmap[y * width + x])
    }

    /// Builds a mask by evaluating `f` over `window` (clipped to the image);
    /// pixels outside the window are unset.
    pub fn from_fn_in(width: usize, height: usize, window: BBox, f: impl Fn(usize, usize) -> bool) -> Self {
        let window = BBox::new(window.x0, window.y0, window.x1.min(width), window.y1.min(height));
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut scratch = Vec::with_capacity(window.area());
        for y in window.y0..window.y1 {
            for x in window.x0..window.x1 {
                let v = f(x, y);
                scratch.push(v);
                if v {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        if x0 == usize::MAX {
            return Self::empty(width, height);
        }
        let bbox = BBox::new(x0, y0, x1, y1);
        let mut bits = Vec::with_capacity(bbox.area());
        let mut area = 0;
        let ww = window.width();
        for y in y0..y1 {
            let row = (y - window.y0) * ww;
            for x in x0..x1 {
                let v = scratch[row + x - window.x0];
                area += v as usize;
                bits.push(v);
            }
        }
        Self { width, height, bbox, bits, area }
    }

    /// Solid rectangle mask.
    pub fn from_box(width: usize, height: usize, b: BBox) -> Self {
        Self::from_fn_in(width, height, b, |_, _| true)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Tight bounding box of the set pixels (empty for an empty mask).
    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn area(&self) -> usize {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        if !self.bbox.contains(Point::new(x, y)) {
            return false;
        }
        self.bits[(y - self.bbox.y0) * self.bbox.width() + (x - self.bbox.x0)]
    }

    /// Iterates set pixels in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = Point> + '_ {
        let b = self.bbox;
        let bw = b.width();
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| Point::new(b.x0 + i % bw, b.y0 + i / bw))
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut out = vec![false; self.width * self.height];
        for p in self.pixels() {
            out[p.y * self.width + p.x] = true;
        }
        out
    }

    pub fn centroid(&self) -> Option<(f64, f64)> {
        if self.area == 0 {
            return None;
        }
        let (sx, sy) = self
            .pixels()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x as f64, sy + p.y as f64));
        Some((sx / self.area as f64, sy / self.area as f64))
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> usize {
        let Some(ib) = self.bbox.intersect(&other.bbox) else {
            return 0;
        };
        let mut n = 0;
        for y in ib.y0..ib.y1 {
            for x in ib.x0..ib.x1 {
                n += (self.get(x, y) && other.get(x, y)) as usize;
            }
        }
        n
    }

    /// Intersection over union; two empty masks have IoU 0.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area + other.area - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Upper bound on IoU from areas alone, used to skip exact comparisons.
    pub fn iou_upper_bound(&self, other: &BinaryMask) -> f64 {
        let (lo, hi) = (self.area.min(other.area), self.area.max(other.area));
        if hi == 0 {
            0.0
        } else {
            lo as f64 / hi as f64
        }
    }
}

/// Where a proposal was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scale", rename_all = "lowercase")]
pub enum Origin {
    Full,
    Tile { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskProposal {
    pub mask: BinaryMask,
    pub segmenter_confidence: f32,
    /// Mask stability under logit-threshold perturbation, 1.0 when the
    /// backend does not report one.
    pub stability_score: f32,
    pub origin: Origin,
    pub similarity: Option<f64>,
}

impl MaskProposal {
    pub fn new(mask: BinaryMask, segmenter_confidence: f32) -> Self {
        Self { mask, segmenter_confidence, stability_score: 1.0, origin: Origin::Full, similarity: None }
    }

    pub fn area(&self) -> usize {
        self.mask.area()
    }

    pub fn bbox(&self) -> BBox {
        self.mask.bbox()
    }

    pub fn is_degenerate(&self) -> bool {
        self.mask.is_empty()
    }
}

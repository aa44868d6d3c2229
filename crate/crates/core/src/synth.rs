//! Synthetic counting scenes with exact ground truth.
//!
//! Scenes are flat-colored disks and squares on a dark background. Targets
//! use one class color, distractors another, so the mock backends can
//! segment and classify them without error.

use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backends::mock::{BACKGROUND_COLOR, CLASS_COLORS};
use crate::error::Result;
use crate::geometry::{BBox, Point};
use crate::image::RawImage;
use crate::mask::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    /// Disk radius or half the square side.
    pub radius: f64,
    pub class: usize,
}

impl Shape {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 + 0.5 - self.cx, y as f64 + 0.5 - self.cy);
        match self.kind {
            ShapeKind::Disk => dx * dx + dy * dy <= self.radius * self.radius,
            ShapeKind::Square => dx.abs() <= self.radius && dy.abs() <= self.radius,
        }
    }

    /// Pixel bounding box, clipped to `width x height`.
    pub fn bbox(&self, width: usize, height: usize) -> BBox {
        self.mask(width, height).bbox()
    }

    pub fn mask(&self, width: usize, height: usize) -> BinaryMask {
        let lo = |c: f64| (c - self.radius - 1.0).floor().max(0.0) as usize;
        let hi = |c: f64, n: usize| ((c + self.radius + 1.0).ceil() as usize).min(n);
        let window = BBox::new(lo(self.cx), lo(self.cy), hi(self.cx, width), hi(self.cy, height));
        BinaryMask::from_fn_in(width, height, window, |x, y| self.contains(x, y))
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx.floor() as usize, self.cy.floor() as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of target counts, tiny targets included.
    pub targets: (usize, usize),
    pub distractors: (usize, usize),
    pub radius: (f64, f64),
    /// Targets drawn at `tiny_radius` instead; never used as references.
    pub tiny_targets: (usize, usize),
    pub tiny_radius: f64,
    pub references: usize,
    /// Minimum empty pixels between two shapes.
    pub gap: f64,
    pub target_class: usize,
    pub distractor_class: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 192,
            height: 192,
            targets: (5, 60),
            distractors: (0, 8),
            radius: (4.5, 7.0),
            tiny_targets: (0, 0),
            tiny_radius: 2.0,
            references: 3,
            gap: 3.0,
            target_class: 0,
            distractor_class: 2,
        }
    }
}

impl SceneSpec {
    /// Scenes where tiny targets only show up at a finer scale and
    /// distractors outnumber them, so every disabled component costs accuracy.
    pub fn ablation() -> Self {
        Self {
            targets: (8, 20),
            distractors: (10, 16),
            tiny_targets: (3, 6),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub targets: Vec<Shape>,
    pub distractors: Vec<Shape>,
    /// Indices into `targets`.
    pub references: Vec<usize>,
}

impl Scene {
    pub fn render(&self) -> RawImage {
        let mut img = RawImage::filled(self.width, self.height, BACKGROUND_COLOR)
            .expect("scene dimensions are non-zero");
        for s in self.targets.iter().chain(&self.distractors) {
            let color = CLASS_COLORS[s.class % CLASS_COLORS.len()];
            for p in s.mask(self.width, self.height).pixels() {
                img.set(p.x, p.y, color);
            }
        }
        img
    }

    pub fn ground_truth(&self) -> usize {
        self.targets.len()
    }

    pub fn reference_boxes(&self) -> Vec<BBox> {
        self.references.iter().map(|&i| self.targets[i].bbox(self.width, self.height)).collect()
    }

    pub fn reference_points(&self) -> Vec<Point> {
        self.references.iter().map(|&i| self.targets[i].center()).collect()
    }
}

/// Draws one scene; shapes are placed by rejection sampling and any that
/// cannot be placed are dropped.
pub fn generate_scene(spec: &SceneSpec, id: impl Into<String>, rng: &mut impl Rng) -> Scene {
    let pick = |rng: &mut dyn rand::RngCore, (lo, hi): (usize, usize)| if hi <= lo { lo } else { rng.random_range(lo..=hi) };
    let n_tiny = pick(rng, spec.tiny_targets);
    let n_targets = pick(rng, spec.targets).max(spec.references + n_tiny);
    let n_distractors = pick(rng, spec.distractors);

    let mut placed: Vec<Shape> = Vec::new();
    let mut place = |rng: &mut dyn rand::RngCore, radius: f64, class: usize| -> Option<Shape> {
        let kind = if rng.random_bool(0.5) { ShapeKind::Disk } else { ShapeKind::Square };
        let r = if kind == ShapeKind::Square { radius * 0.85 } else { radius };
        let reach = radius * std::f64::consts::SQRT_2;
        for _ in 0..200 {
            let cx = rng.random_range(r + 1.0..spec.width as f64 - r - 1.0);
            let cy = rng.random_range(r + 1.0..spec.height as f64 - r - 1.0);
            let clear = placed.iter().all(|o| {
                let d = ((o.cx - cx).powi(2) + (o.cy - cy).powi(2)).sqrt();
                d > reach + o.radius * std::f64::consts::SQRT_2 + spec.gap
            });
            if clear {
                let s = Shape { kind, cx, cy, radius: r, class };
                placed.push(s);
                return Some(s);
            }
        }
        None
    };

    let mut targets = Vec::new();
    for i in 0..n_targets {
        let radius = if i >= n_targets - n_tiny {
            spec.tiny_radius
        } else {
            rng.random_range(spec.radius.0..=spec.radius.1)
        };
        targets.extend(place(rng, radius, spec.target_class));
    }
    let distractors: Vec<Shape> = (0..n_distractors)
        .filter_map(|_| {
            let radius = rng.random_range(spec.radius.0..=spec.radius.1);
            place(rng, radius, spec.distractor_class)
        })
        .collect();

    let mut normal: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].radius > spec.tiny_radius).collect();
    let mut references = Vec::new();
    while references.len() < spec.references && !normal.is_empty() {
        references.push(normal.swap_remove(rng.random_range(0..normal.len())));
    }
    references.sort_unstable();
    Scene { id: id.into(), width: spec.width, height: spec.height, targets, distractors, references }
}

pub fn generate_corpus(spec: &SceneSpec, count: usize, seed: u64) -> Vec<Scene> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count).map(|i| generate_scene(spec, format!("scene_{i:04}"), &mut rng)).collect()
}

/// Writes scenes as a dataset in the FSC-147 release layout, every scene in
/// the test split.
pub fn write_fsc147(dir: &Path, scenes: &[Scene]) -> Result<()> {
    let images = dir.join("images_384_VarV2");
    std::fs::create_dir_all(&images)?;
    let mut annotations = serde_json::Map::new();
    let mut names = Vec::new();
    let mut classes = String::new();
    for scene in scenes {
        let name = format!("{}.png", scene.id);
        scene.render().save(images.join(&name))?;
        let boxes: Vec<_> = scene
            .reference_boxes()
            .iter()
            .map(|b| json!([[b.x0, b.y0], [b.x0, b.y1], [b.x1, b.y1], [b.x1, b.y0]]))
            .collect();
        let points: Vec<_> = scene.targets.iter().map(|s| json!([s.cx, s.cy])).collect();
        annotations.insert(
            name.clone(),
            json!({ "H": scene.height, "W": scene.width, "box_examples_coordinates": boxes, "points": points }),
        );
        classes.push_str(&format!("{name}\tsynthetic\n"));
        names.push(name);
    }
    std::fs::write(dir.join("annotation_FSC147_384.json"), serde_json::to_string_pretty(&annotations)?)?;
    let split = json!({ "train": [], "val": [], "test": names });
    std::fs::write(dir.join("Train_Test_Val_FSC_147.json"), serde_json::to_string_pretty(&split)?)?;
    std::fs::write(dir.join("ImageClasses_FSC147.txt"), classes)?;
    Ok(())
}

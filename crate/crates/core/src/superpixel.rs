//! SLIC superpixels and the point prompts derived from their centers.
//!
//! Clustering runs in CIELAB over a regular seed grid, with each center
//! searching a `2S x 2S` window where `S = sqrt(H*W/K)`. After the k-means
//! iterations, fragments are made 4-connected and tiny pieces are absorbed
//! into their largest neighbor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::image::RawImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuperpixelParams {
    /// Requested number of clusters `K`.
    pub cluster_count: usize,
    /// Color-vs-space weighting `m`; larger values give more compact clusters.
    pub compactness: f64,
    pub max_iterations: usize,
    /// Reserved for randomized tie-breaking. The current implementation breaks
    /// ties by index and is deterministic regardless of this value.
    pub seed: u64,
}

impl Default for SuperpixelParams {
    fn default() -> Self {
        Self {
            cluster_count: 1024,
            compactness: 10.0,
            max_iterations: 10,
            seed: 0,
        }
    }
}

/// Sub-pixel cluster center, `x` is the column coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Center {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelResult {
    pub width: usize,
    pub height: usize,
    /// Row-major label per pixel, dense in `0..centers.len()`.
    pub labels: Vec<u32>,
    pub centers: Vec<Center>,
    pub iterations_run: usize,
}

impl SuperpixelResult {
    pub fn num_clusters(&self) -> usize {
        self.centers.len()
    }

    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters()];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

/// Regular seed grid used for initialization: `(columns, rows)`.
pub fn seed_grid(width: usize, height: usize, k: usize) -> (usize, usize) {
    let nx = ((k as f64 * width as f64 / height as f64).sqrt().ceil() as usize).clamp(1, width);
    let ny = (k / nx).clamp(1, height);
    (nx, ny)
}

/// Initial (pre-perturbation) seed positions in row-major order.
pub fn initial_grid_centers(width: usize, height: usize, k: usize) -> Vec<Center> {
    let (nx, ny) = seed_grid(width, height, k);
    let (step_x, step_y) = (width as f64 / nx as f64, height as f64 / ny as f64);
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push(Center {
                x: (i as f64 + 0.5) * step_x - 0.5,
                y: (j as f64 + 0.5) * step_y - 0.5,
            });
        }
    }
    out
}

pub fn grid_interval(width: usize, height: usize, k: usize) -> f64 {
    ((width * height) as f64 / k as f64).sqrt()
}

pub fn compute_superpixels(image: &RawImage, params: &SuperpixelParams) -> Result<SuperpixelResult> {
    let (w, h) = (image.width(), image.height());
    let n = w * h;
    let k = params.cluster_count;
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "cluster count {k} must be in 1..={n} for a {w}x{h} image"
        )));
    }
    if !(params.compactness > 0.0 && params.compactness.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "compactness must be positive, got {}",
            params.compactness
        )));
    }
    if params.max_iterations == 0 {
        return Err(Error::InvalidParameter("max_iterations must be positive".into()));
    }

    let lab: Vec<[f64; 3]> = image.as_bytes().chunks_exact(3).map(|p| srgb_to_lab([p[0], p[1], p[2]])).collect();
    let s = grid_interval(w, h, k);
    let (nx, ny) = seed_grid(w, h, k);
    let perturb = w as f64 / nx as f64 >= 3.0 && h as f64 / ny as f64 >= 3.0;

    let mut centers: Vec<[f64; 5]> = initial_grid_centers(w, h, k)
        .into_iter()
        .map(|c| {
            let (x, y) = if perturb { lowest_gradient(&lab, w, h, c) } else { (c.x, c.y) };
            let px = (x.round() as usize).min(w - 1);
            let py = (y.round() as usize).min(h - 1);
            let l = lab[py * w + px];
            [l[0], l[1], l[2], x, y]
        })
        .collect();

    let spatial_weight = (params.compactness / s).powi(2);
    let mut labels = vec![u32::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    let mut iterations_run = 0;

    for _ in 0..params.max_iterations {
        labels.fill(u32::MAX);
        dist.fill(f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let x_lo = (c[3] - s).floor().max(0.0) as usize;
            let x_hi = ((c[3] + s).ceil() as usize).min(w - 1);
            let y_lo = (c[4] - s).floor().max(0.0) as usize;
            let y_hi = ((c[4] + s).ceil() as usize).min(h - 1);
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let i = y * w + x;
                    let d = joint_distance(&lab[i], x, y, c, spatial_weight);
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = ci as u32;
                    }
                }
            }
        }
        // Pixels outside every window fall back to a global nearest search.
        for i in 0..n {
            if labels[i] == u32::MAX {
                let (x, y) = (i % w, i / w);
                let best = centers
                    .iter()
                    .enumerate()
                    .map(|(ci, c)| (ci, joint_distance(&lab[i], x, y, c, spatial_weight)))
                    .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
                labels[i] = best.0 as u32;
            }
        }

        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            let acc = &mut sums[l as usize];
            acc[0] += lab[i][0];
            acc[1] += lab[i][1];
            acc[2] += lab[i][2];
            acc[3] += (i % w) as f64;
            acc[4] += (i / w) as f64;
            acc[5] += 1.0;
        }
        let mut movement = 0.0;
        for (c, acc) in centers.iter_mut().zip(&sums) {
            if acc[5] == 0.0 {
                continue;
            }
            let next = [acc[0] / acc[5], acc[1] / acc[5], acc[2] / acc[5], acc[3] / acc[5], acc[4] / acc[5]];
            movement += ((next[3] - c[3]).powi(2) + (next[4] - c[4]).powi(2)).sqrt();
            *c = next;
        }
        iterations_run += 1;
        if movement < 1.0 {
            break;
        }
    }

    let labels = enforce_connectivity(&labels, w, h, s * s / 4.0);
    let num = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut acc = vec![(0.0f64, 0.0f64, 0usize); num];
    for (i, &l) in labels.iter().enumerate() {
        let a = &mut acc[l as usize];
        a.0 += (i % w) as f64;
        a.1 += (i / w) as f64;
        a.2 += 1;
    }
    let centers = acc
        .into_iter()
        .map(|(sx, sy, c)| Center { x: sx / c as f64, y: sy / c as f64 })
        .collect();

    Ok(SuperpixelResult { width: w, height: h, labels, centers, iterations_run })
}

/// Rounds centers to pixel coordinates, sorted row-major.
pub fn centers_as_prompts(result: &SuperpixelResult) -> Vec<Point> {
    let (w, h) = (result.width.max(1), result.height.max(1));
    let mut pts: Vec<Point> = result
        .centers
        .iter()
        .map(|c| {
            Point::new(
                (c.x.round().max(0.0) as usize).min(w - 1),
                (c.y.round().max(0.0) as usize).min(h - 1),
            )
        })
        .collect();
    pts.sort_by_key(|p| (p.y, p.x));
    pts
}

#[inline]
fn joint_distance(lab: &[f64; 3], x: usize, y: usize, c: &[f64; 5], spatial_weight: f64) -> f64 {
    let dc = (lab[0] - c[0]).powi(2) + (lab[1] - c[1]).powi(2) + (lab[2] - c[2]).powi(2);
    let ds = (x as f64 - c[3]).powi(2) + (y as f64 - c[4]).powi(2);
    dc + ds * spatial_weight
}

/// Moves a seed to the lowest-gradient pixel of its 3x3 neighborhood. The
/// sub-pixel seed is kept unless a strictly lower gradient exists.
fn lowest_gradient(lab: &[[f64; 3]], w: usize, h: usize, c: Center) -> (f64, f64) {
    let cx = (c.x.round() as usize).min(w - 1);
    let cy = (c.y.round() as usize).min(h - 1);
    let grad = |x: usize, y: usize| {
        let at = |x: usize, y: usize| lab[y * w + x];
        let (l, r) = (at(x.saturating_sub(1), y), at((x + 1).min(w - 1), y));
        let (u, d) = (at(x, y.saturating_sub(1)), at(x, (y + 1).min(h - 1)));
        (0..3).map(|i| (r[i] - l[i]).powi(2) + (d[i] - u[i]).powi(2)).sum::<f64>()
    };
    let mut best = (grad(cx, cy), None);
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let (x, y) = (cx as i64 + dx, cy as i64 + dy);
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                continue;
            }
            let g = grad(x as usize, y as usize);
            if g < best.0 {
                best = (g, Some((x as f64, y as f64)));
            }
        }
    }
    best.1.unwrap_or((c.x, c.y))
}

/// Splits labels into 4-connected components, merges components smaller than
/// `min_size` into their largest adjacent neighbor, and renumbers the result
/// densely in raster order.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_size: f64) -> Vec<u32> {
    let n = w * h;
    let mut comp = vec![usize::MAX; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = members.len();
        let lbl = labels[start];
        let mut pix = Vec::new();
        comp[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            pix.push(i);
            for j in neighbors4(i, w, h) {
                if comp[j] == usize::MAX && labels[j] == lbl {
                    comp[j] = id;
                    stack.push(j);
                }
            }
        }
        members.push(pix);
    }

    let count = members.len();
    let mut parent: Vec<usize> = (0..count).collect();
    let mut size: Vec<usize> = members.iter().map(Vec::len).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    loop {
        let mut changed = false;
        for c in 0..count {
            let root = find(&mut parent, c);
            if root != c || (size[root] as f64) >= min_size {
                continue;
            }
            let mut best: Option<usize> = None;
            for &i in &members[root] {
                for j in neighbors4(i, w, h) {
                    let r = find(&mut parent, comp[j]);
                    if r == root {
                        continue;
                    }
                    best = match best {
                        Some(b) if size[b] > size[r] || (size[b] == size[r] && b < r) => Some(b),
                        _ => Some(r),
                    };
                }
            }
            if let Some(target) = best {
                parent[root] = target;
                size[target] += size[root];
                let moved = std::mem::take(&mut members[root]);
                members[target].extend(moved);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut remap = vec![u32::MAX; count];
    let mut next = 0u32;
    let mut out = vec![0u32; n];
    for i in 0..n {
        let r = find(&mut parent, comp[i]);
        if remap[r] == u32::MAX {
            remap[r] = next;
            next += 1;
        }
        out[i] = remap[r];
    }
    out
}

#[inline]
fn neighbors4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    let left = (x > 0).then(|| i - 1);
    let right = (x + 1 < w).then(|| i + 1);
    let up = (y > 0).then(|| i - w);
    let down = (y + 1 < h).then(|| i + w);
    [left, right, up, down].into_iter().flatten()
}

/// sRGB (D65) to CIELAB.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = |c: u8| {
        let c = c as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = (0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b) / 0.950_47;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175 * b;
    let z = (0.019_333_9 * r + 0.119_192 * g + 0.950_304_1 * b) / 1.088_83;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

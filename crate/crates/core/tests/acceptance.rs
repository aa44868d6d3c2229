//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tfcount::config::{Components, Config, FeatureSource, PromptMode};
use tfcount::eval::{self, compute_metrics, EvalOptions, SweepAxis};
use tfcount::geometry::BBox;
use tfcount::image::{RawImage, Region};
use tfcount::mask::{BinaryMask, MaskProposal};
use tfcount::matching::{
    count, pool_mask_feature, score_proposals, transductive_update, FeatureMap, MaskInterp, Prototype, ScoredProposal,
};
use tfcount::pipeline::{Backends, References};
use tfcount::proposals::{multiscale_expand, remap_to_original, ReferenceFormat, ReferenceSpec};
use tfcount::superpixel::{compute_superpixels, grid_interval, initial_grid_centers, srgb_to_lab, SuperpixelParams};
use tfcount::synth::{generate_corpus, write_fsc147, SceneSpec};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn mock_config() -> Config {
    Config::load(None, &["segmenter.backend=mock".into(), "semantic.model=mock".into()]).expect("mock config")
}

fn mock_end_to_end() -> Outcome {
    let start = Instant::now();
    let scenes = generate_corpus(&SceneSpec::default(), 50, 2024);
    let cfg = mock_config();
    let backends = Backends::mock(&cfg);
    let pipeline = backends.pipeline(&cfg);
    let mut pairs = Vec::new();
    for s in &scenes {
        let refs = References::InImage(ReferenceSpec::boxes(s.reference_boxes()));
        match pipeline.count(&s.render(), &refs) {
            Ok(out) => pairs.push((s.ground_truth() as f64, out.result.count as f64)),
            Err(e) => return Outcome::Fail(format!("{}: {e}", s.id)),
        }
    }
    let (mae, rmse) = compute_metrics(&pairs).expect("non-empty");
    let secs = start.elapsed().as_secs_f64();
    let objects: f64 = pairs.iter().map(|p| p.0).sum();
    check(
        mae == 0.0 && rmse == 0.0 && secs < 60.0,
        format!("{} scenes, {objects} objects: MAE {mae}, RMSE {rmse}, {secs:.1}s single-threaded (need 0, 0, < 60s)", scenes.len()),
    )
}

fn random_vec(rng: &mut StdRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tpu_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let (mut worst, mut noops) = (0.0f64, 0);
    for case in 0..1000 {
        let dim = rng.random_range(1..48);
        let n = rng.random_range(1..6) as f64;
        let proto = Prototype { vector: random_vec(&mut rng, dim), support_count: n, update_round: 0 };
        let k = rng.random_range(0..30);
        let scored: Vec<ScoredProposal> = (0..k)
            .map(|_| {
                let f: Vec<f64> = proto.vector.iter().map(|v| v + rng.random_range(-0.8..0.8)).collect();
                ScoredProposal::new(MaskProposal::new(BinaryMask::empty(4, 4), 1.0), f)
            })
            .collect();
        let scored = score_proposals(&proto, scored);
        let delta = rng.random_range(-0.99..0.99);
        let updated = transductive_update(&proto, &scored, delta);

        // Direct evaluation: (n * P + sum of features above delta) / (n + k').
        let chosen: Vec<&Vec<f64>> = scored
            .iter()
            .filter(|s| {
                let (d, na, nb) = s.feature.iter().zip(&proto.vector).fold((0.0, 0.0, 0.0), |a, (x, y)| {
                    (a.0 + x * y, a.1 + x * x, a.2 + y * y)
                });
                d / (na * nb).sqrt() > delta
            })
            .map(|s| &s.feature)
            .collect();
        let denom = n + chosen.len() as f64;
        let expected: Vec<f64> = (0..dim)
            .map(|j| (n * proto.vector[j] + chosen.iter().map(|f| f[j]).sum::<f64>()) / denom)
            .collect();
        let norm = expected.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let err = expected.iter().zip(&updated.vector).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm;
        worst = worst.max(err);
        if err > 1e-9 {
            return Outcome::Fail(format!("case {case}: relative error {err:e}"));
        }
        for j in 0..dim {
            let vals = std::iter::once(proto.vector[j]).chain(chosen.iter().map(|f| f[j]));
            let (lo, hi) = vals.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
            if updated.vector[j] < lo - slack || updated.vector[j] > hi + slack {
                return Outcome::Fail(format!("case {case}: coordinate {j} leaves the convex hull"));
            }
        }
        if chosen.is_empty() {
            noops += 1;
            if updated.vector != proto.vector || updated.support_count != n {
                return Outcome::Fail(format!("case {case}: update with nothing above delta changed the prototype"));
            }
        }
        let above_all = transductive_update(&proto, &scored, 1.0);
        if above_all.vector != proto.vector {
            return Outcome::Fail(format!("case {case}: delta = 1 changed the prototype"));
        }
    }
    check(true, format!("1000 instances, max relative error {worst:.2e} (need <= 1e-9), {noops} empty selections, convexity held"))
}

/// Independent pooling reference: explicit rectangle overlap of every mask
/// pixel with every grid cell.
fn pooling_reference(fm: &FeatureMap, mask: &BinaryMask, interp: MaskInterp) -> Vec<f64> {
    let (gw, gh) = (fm.grid_w, fm.grid_h);
    let cw = fm.image_width as f64 / gw as f64;
    let ch = fm.image_height as f64 / gh as f64;
    let mut weights = vec![0.0; gw * gh];
    for gy in 0..gh {
        for gx in 0..gw {
            let w = match interp {
                MaskInterp::Soft => {
                    let (cx0, cx1) = (gx as f64 * cw, (gx + 1) as f64 * cw);
                    let (cy0, cy1) = (gy as f64 * ch, (gy + 1) as f64 * ch);
                    let mut covered = 0.0;
                    for y in 0..mask.height() {
                        for x in 0..mask.width() {
                            if mask.get(x, y) {
                                let ox = (x as f64 + 1.0).min(cx1) - (x as f64).max(cx0);
                                let oy = (y as f64 + 1.0).min(cy1) - (y as f64).max(cy0);
                                if ox > 0.0 && oy > 0.0 {
                                    covered += ox * oy;
                                }
                            }
                        }
                    }
                    (covered / (cw * ch)).min(1.0)
                }
                MaskInterp::Hard => {
                    let x = (((gx as f64 + 0.5) * cw) as usize).min(mask.width() - 1);
                    let y = (((gy as f64 + 0.5) * ch) as usize).min(mask.height() - 1);
                    if mask.get(x, y) {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            weights[gy * gw + gx] = w;
        }
    }
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; fm.dim];
    if total > 0.0 {
        for (c, w) in weights.iter().enumerate() {
            for d in 0..fm.dim {
                out[d] += w * fm.data[c * fm.dim + d] as f64 / total;
            }
        }
    } else {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1.0;
                }
            }
        }
        let gx = (((sx / n + 0.5) / cw) as usize).min(gw - 1);
        let gy = (((sy / n + 0.5) / ch) as usize).min(gh - 1);
        for d in 0..fm.dim {
            out[d] = fm.data[(gy * gw + gx) * fm.dim + d] as f64;
        }
    }
    out
}

fn random_mask(rng: &mut StdRng, w: usize, h: usize, kind: usize, cell: (f64, f64)) -> BinaryMask {
    match kind {
        // Inside a single grid cell.
        0 => {
            let (cw, ch) = (cell.0.floor().max(1.0) as usize, cell.1.floor().max(1.0) as usize);
            let gx = rng.random_range(0..(w / cw).max(1));
            let gy = rng.random_range(0..(h / ch).max(1));
            let x0 = ((gx as f64 * cell.0).ceil() as usize).min(w - 1);
            let y0 = ((gy as f64 * cell.1).ceil() as usize).min(h - 1);
            let bw = rng.random_range(1..=cw.min(w - x0));
            let bh = rng.random_range(1..=ch.min(h - y0));
            BinaryMask::from_box(w, h, BBox::new(x0, y0, x0 + bw, y0 + bh))
        }
        // A handful of pixels.
        1 => {
            let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
            let n = rng.random_range(1..4);
            BinaryMask::from_fn_in(w, h, BBox::new(0, 0, w, h), |px, py| {
                px >= x && px < x + n && py == y
            })
        }
        // Ellipse.
        2 => {
            let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            let (rx, ry) = (rng.random_range(1.0..w as f64 / 2.0), rng.random_range(1.0..h as f64 / 2.0));
            BinaryMask::from_fn_in(w, h, BBox::new(0, 0, w, h), |x, y| {
                ((x as f64 + 0.5 - cx) / rx).powi(2) + ((y as f64 + 0.5 - cy) / ry).powi(2) <= 1.0
            })
        }
        // Random scatter.
        _ => {
            let bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.2)).collect();
            BinaryMask::from_bitmap(w, h, &bits)
        }
    }
}

fn pooling_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let (mut worst, mut done) = (0.0f64, 0);
    while done < 1000 {
        let (w, h) = (rng.random_range(4..80), rng.random_range(4..80));
        let (gw, gh) = (rng.random_range(1..=w.min(20)), rng.random_range(1..=h.min(20)));
        let dim = rng.random_range(1..8);
        let data: Vec<f32> = (0..gw * gh * dim).map(|_| rng.random_range(0.1f32..2.0)).collect();
        let fm = FeatureMap::new(gh, gw, dim, data, w, h).expect("valid map");
        let cell = (w as f64 / gw as f64, h as f64 / gh as f64);
        let mask = random_mask(&mut rng, w, h, done % 4, cell);
        if mask.is_empty() {
            continue;
        }
        let interp = if done % 5 == 4 { MaskInterp::Hard } else { MaskInterp::Soft };
        let got = pool_mask_feature(&fm, &mask, interp);
        let want = pooling_reference(&fm, &mask, interp);
        let norm = want.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = got.iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm;
        worst = worst.max(err);
        if err > 1e-6 {
            return Outcome::Fail(format!("pair {done} ({w}x{h}, grid {gw}x{gh}, {interp:?}): relative error {err:e}"));
        }
        done += 1;
    }
    check(true, format!("1000 mask/feature pairs incl. single-cell and sub-cell masks, max relative error {worst:.2e} (need <= 1e-6)"))
}

fn four_connected(labels: &[u32], w: usize, h: usize) -> bool {
    let mut seen = vec![false; labels.len()];
    let mut components = std::collections::HashMap::new();
    for start in 0..labels.len() {
        if seen[start] {
            continue;
        }
        *components.entry(labels[start]).or_insert(0) += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut nb = Vec::with_capacity(4);
            if x > 0 {
                nb.push(i - 1);
            }
            if x + 1 < w {
                nb.push(i + 1);
            }
            if y > 0 {
                nb.push(i - w);
            }
            if y + 1 < h {
                nb.push(i + w);
            }
            for j in nb {
                if !seen[j] && labels[j] == labels[start] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    components.values().all(|&c| c == 1)
}

/// Plain Lloyd iterations over joint Lab+xy features, two clusters, seeded
/// at the grid centers; returns per-pixel labels.
fn two_means(img: &RawImage, compactness: f64) -> Vec<usize> {
    let (w, h) = (img.width(), img.height());
    let s = ((w * h) as f64 / 2.0).sqrt();
    let feats: Vec<[f64; 5]> = (0..w * h)
        .map(|i| {
            let l = srgb_to_lab(img.get(i % w, i / w));
            [l[0], l[1], l[2], (i % w) as f64, (i / w) as f64]
        })
        .collect();
    let mut centers: Vec<[f64; 5]> = initial_grid_centers(w, h, 2)
        .iter()
        .map(|c| {
            let f = feats[(c.y.round() as usize) * w + c.x.round() as usize];
            [f[0], f[1], f[2], c.x, c.y]
        })
        .collect();
    let mut labels = vec![0; w * h];
    for _ in 0..100 {
        for (i, f) in feats.iter().enumerate() {
            let d = |c: &[f64; 5]| {
                let dc: f64 = (0..3).map(|j| (f[j] - c[j]).powi(2)).sum();
                let ds: f64 = (3..5).map(|j| (f[j] - c[j]).powi(2)).sum();
                dc + ds * (compactness / s).powi(2)
            };
            labels[i] = if d(&centers[1]) < d(&centers[0]) { 1 } else { 0 };
        }
        let mut next = [[0.0; 5]; 2];
        let mut n = [0.0; 2];
        for (f, &l) in feats.iter().zip(&labels) {
            for j in 0..5 {
                next[l][j] += f[j];
            }
            n[l] += 1.0;
        }
        let mut moved = false;
        for c in 0..2 {
            if n[c] > 0.0 {
                let m: Vec<f64> = next[c].iter().map(|v| v / n[c]).collect();
                moved |= m.iter().zip(&centers[c]).any(|(a, b)| (a - b).abs() > 1e-9);
                centers[c].copy_from_slice(&m);
            }
        }
        if !moved {
            break;
        }
    }
    labels
}

fn slic_properties() -> Outcome {
    let spec = SceneSpec { width: 96, height: 80, targets: (3, 12), distractors: (0, 4), ..SceneSpec::default() };
    let scenes = generate_corpus(&spec, 10, 77);
    for (i, scene) in scenes.iter().enumerate() {
        let img = scene.render();
        let params = SuperpixelParams { cluster_count: 60 + 20 * i, ..SuperpixelParams::default() };
        let a = match compute_superpixels(&img, &params) {
            Ok(r) => r,
            Err(e) => return Outcome::Fail(format!("image {i}: {e}")),
        };
        let b = compute_superpixels(&img, &params).expect("second run");
        if a.labels != b.labels || a.centers != b.centers {
            return Outcome::Fail(format!("image {i}: runs differ"));
        }
        let sizes = a.cluster_sizes();
        if a.labels.len() != img.width() * img.height() || sizes.contains(&0) {
            return Outcome::Fail(format!("image {i}: labels are not a total, gap-free assignment"));
        }
        if !four_connected(&a.labels, img.width(), img.height()) {
            return Outcome::Fail(format!("image {i}: a superpixel is not 4-connected"));
        }
    }

    let mut worst_drift = 0.0f64;
    for (w, h, k) in [(64, 64, 16), (90, 60, 24), (100, 100, 100), (37, 53, 9)] {
        let img = RawImage::filled(w, h, [120, 80, 40]).expect("image");
        let r = compute_superpixels(&img, &SuperpixelParams { cluster_count: k, ..SuperpixelParams::default() })
            .expect("constant image");
        let s = grid_interval(w, h, k);
        let seeds = initial_grid_centers(w, h, k);
        for c in &r.centers {
            let d = seeds.iter().map(|g| ((g.x - c.x).powi(2) + (g.y - c.y).powi(2)).sqrt()).fold(f64::MAX, f64::min);
            worst_drift = worst_drift.max(d / s);
            if d > s / 2.0 {
                return Outcome::Fail(format!("{w}x{h} K={k}: center drifted {d:.2} > S/2 = {:.2}", s / 2.0));
            }
        }
    }

    let mut worst_col = 0usize;
    for (b, colors) in [
        (40usize, ([200u8, 40, 40], [40u8, 40, 200])),
        (55, ([250, 250, 250], [10, 10, 10])),
        (63, ([30, 160, 30], [220, 220, 60])),
        (70, ([120, 120, 120], [200, 60, 160])),
    ] {
        let (w, h) = (120, 60);
        let img = RawImage::from_fn(w, h, |x, _| if x < b { colors.0 } else { colors.1 }).expect("image");
        let params = SuperpixelParams { cluster_count: 2, ..SuperpixelParams::default() };
        let r = compute_superpixels(&img, &params).expect("two halves");
        let oracle = two_means(&img, params.compactness);
        for y in 0..h {
            let edge = |f: &dyn Fn(usize) -> bool| (1..w).find(|&x| f(x)).unwrap_or(w);
            let got = edge(&|x| r.label_at(x, y) != r.label_at(0, y));
            let want = edge(&|x| oracle[y * w + x] != oracle[y * w]);
            worst_col = worst_col.max(got.abs_diff(want));
            if got.abs_diff(want) > 1 {
                return Outcome::Fail(format!("halves split at {b}, row {y}: boundary {got} vs 2-means {want}"));
            }
        }
    }
    check(
        true,
        format!(
            "10 images total/connected/deterministic; constant-image drift max {worst_drift:.3} S (need <= 0.5 S); \
             two-halves boundary within {worst_col} column of 2-means (need <= 1)"
        ),
    )
}

fn count_monotonicity() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let thetas: Vec<f64> = (0..20).map(|i| -1.0 + 2.0 * (i + 1) as f64 / 20.0).collect();
    for set in 0..100 {
        let n_ref = rng.random_range(0..6);
        let scored: Vec<ScoredProposal> = (0..rng.random_range(0..60))
            .map(|_| {
                let mut s = ScoredProposal::new(MaskProposal::new(BinaryMask::empty(2, 2), 1.0), vec![]);
                s.similarity = rng.random_range(-1.0..=1.0);
                s
            })
            .collect();
        let counts: Vec<usize> = thetas.iter().map(|&t| count(&scored, t, n_ref).count).collect();
        if counts.windows(2).any(|p| p[1] > p[0]) {
            return Outcome::Fail(format!("set {set}: counts {counts:?} increase with theta"));
        }
        if *counts.last().expect("20 thetas") != n_ref {
            return Outcome::Fail(format!("set {set}: theta = 1 gave {} with n_ref {n_ref}", counts[19]));
        }
    }
    check(true, "100 score sets x 20 thetas non-increasing; theta = 1.0 gives n_ref".into())
}

fn multiscale_geometry() -> Outcome {
    let mut rng = StdRng::seed_from_u64(8);
    let mut worst = 1.0f64;
    for n_p in 1..=3usize {
        let mut done = 0;
        while done < 500 {
            let (w, h) = (rng.random_range(48..160), rng.random_range(48..160));
            let img = RawImage::filled(w, h, [0, 0, 0]).expect("image");
            let tiles = multiscale_expand(&img, n_p).expect("tiles");
            if tiles.len() != n_p * n_p {
                return Outcome::Fail(format!("n_p {n_p}: {} tiles", tiles.len()));
            }
            let mut cover = vec![0u8; w * h];
            for t in &tiles {
                let r: Region = t.transform.region;
                if (t.image.width(), t.image.height()) != (w, h) {
                    return Outcome::Fail(format!("n_p {n_p}: tile not resized to {w}x{h}"));
                }
                for y in r.y..r.bottom() {
                    for x in r.x..r.right() {
                        cover[y * w + x] += 1;
                    }
                }
            }
            if cover.iter().any(|&c| c != 1) {
                return Outcome::Fail(format!("n_p {n_p}, {w}x{h}: tiles do not partition the image"));
            }

            let tile = &tiles[rng.random_range(0..tiles.len())];
            let r = tile.transform.region;
            if r.width < 8 || r.height < 8 {
                continue;
            }
            let (mw, mh) = (rng.random_range(8..=r.width), rng.random_range(8..=r.height));
            let (x0, y0) = (r.x + rng.random_range(0..=r.width - mw), r.y + rng.random_range(0..=r.height - mh));
            let ellipse = rng.random_bool(0.5);
            let window = BBox::new(x0, y0, x0 + mw, y0 + mh);
            let original = BinaryMask::from_fn_in(w, h, window, |x, y| {
                if !ellipse {
                    return true;
                }
                let dx = (x as f64 + 0.5 - (x0 as f64 + mw as f64 / 2.0)) / (mw as f64 / 2.0);
                let dy = (y as f64 + 0.5 - (y0 as f64 + mh as f64 / 2.0)) / (mh as f64 / 2.0);
                dx * dx + dy * dy <= 1.0
            });
            let in_tile = MaskProposal::new(tile.transform.project_mask(&original), 1.0);
            let back = remap_to_original(&in_tile, &tile.transform);
            let iou = back.mask.iou(&original);
            worst = worst.min(iou);
            if iou < 0.95 {
                return Outcome::Fail(format!("n_p {n_p}, {w}x{h}, mask {window:?}: round-trip IoU {iou:.4}"));
            }
            done += 1;
        }
    }
    check(true, format!("tiles partition exactly; 500 masks per n_p in {{1,2,3}}, min round-trip IoU {worst:.4} (need >= 0.95)"))
}

fn metrics() -> Outcome {
    let fixed: [((f64, f64), f64, f64); 20] = [
        ((5.0, 5.0), 0.0, 0.0),
        ((0.0, 3.0), 3.0, 9.0),
        ((4.0, 0.0), 4.0, 16.0),
        ((10.0, 12.0), 2.0, 4.0),
        ((7.0, 1.0), 6.0, 36.0),
        ((100.0, 90.0), 10.0, 100.0),
        ((1.0, 2.0), 1.0, 1.0),
        ((3.0, 3.0), 0.0, 0.0),
        ((50.0, 55.0), 5.0, 25.0),
        ((8.0, 0.0), 8.0, 64.0),
        ((12.0, 15.0), 3.0, 9.0),
        ((9.0, 2.0), 7.0, 49.0),
        ((20.0, 20.0), 0.0, 0.0),
        ((6.0, 10.0), 4.0, 16.0),
        ((30.0, 29.0), 1.0, 1.0),
        ((2.0, 8.0), 6.0, 36.0),
        ((15.0, 13.0), 2.0, 4.0),
        ((40.0, 31.0), 9.0, 81.0),
        ((11.0, 11.0), 0.0, 0.0),
        ((0.0, 5.0), 5.0, 25.0),
    ];
    // Prefix sets: the first i pairs, with MAE and MSE summed by hand above.
    for n in 1..=fixed.len() {
        let pairs: Vec<(f64, f64)> = fixed[..n].iter().map(|f| f.0).collect();
        let abs: f64 = fixed[..n].iter().map(|f| f.1).sum();
        let sq: f64 = fixed[..n].iter().map(|f| f.2).sum();
        let (mae, rmse) = compute_metrics(&pairs).expect("non-empty");
        if mae != abs / n as f64 || rmse != (sq / n as f64).sqrt() {
            return Outcome::Fail(format!("first {n} pairs: got ({mae}, {rmse})"));
        }
    }
    let (mae, rmse) = compute_metrics(&[fixed[1].0, fixed[2].0]).expect("two pairs");
    if mae != 3.5 || (rmse - 3.5355).abs() > 5e-5 {
        return Outcome::Fail(format!("{{(0,3),(4,0)}} gave ({mae}, {rmse})"));
    }
    let mut rng = StdRng::seed_from_u64(9);
    for set in 0..1000 {
        let pairs: Vec<(f64, f64)> =
            (0..rng.random_range(1..40)).map(|_| (rng.random_range(0..200) as f64, rng.random_range(0..200) as f64)).collect();
        let (mae, rmse) = compute_metrics(&pairs).expect("non-empty");
        if rmse < mae * (1.0 - 1e-12) {
            return Outcome::Fail(format!("set {set}: RMSE {rmse} < MAE {mae}"));
        }
    }
    check(true, "20 fixed pairs exact; RMSE >= MAE on 1000 random sets".into())
}

fn ablation() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let scenes = generate_corpus(&SceneSpec::ablation(), 12, 31);
    write_fsc147(dir.path(), &scenes).expect("write corpus");
    let dataset = eval::load_fsc147(dir.path(), "test").expect("load corpus");
    let mut base = mock_config();
    base.run.workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let opts = EvalOptions { references: Some(ReferenceFormat::Box), ..EvalOptions::default() };
    let reports = match eval::run_sweep(&dataset, &base, SweepAxis::Components, &["table".into()], &opts, |c| {
        Backends::from_config(c)
    }) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("sweep failed: {e}")),
    };
    let find = |c: Components| reports.iter().find(|r| Components::of(&r.config) == c).map(|r| r.mae);
    let (Some(off), Some(on)) = (find(Components::NONE), find(Components::ALL)) else {
        return Outcome::Fail("sweep is missing the all-off or all-on cell".into());
    };
    let cells: Vec<String> = reports.iter().map(|r| format!("{}={:.2}", r.label.as_deref().unwrap_or("?"), r.mae)).collect();
    let all_off_cfg = &reports[0].config;
    let plumbed = all_off_cfg.prompts.mode == PromptMode::Grid
        && all_off_cfg.matching.features == FeatureSource::Segmenter
        && all_off_cfg.matching.tpu_rounds == 0
        && !all_off_cfg.multiscale.enabled;
    check(
        reports.len() == 16 && plumbed && off > on,
        format!("{} of 16 cells ran on {} scenes; MAE all-off {off:.3} vs all-on {on:.3} (need off > on) [{}]", reports.len(), scenes.len(), cells.join(", ")),
    )
}

fn real_backend_smoke() -> Outcome {
    let (Some(weights), Some(root)) = (std::env::var_os("TFCOUNT_WEIGHTS_DIR"), std::env::var_os("TFCOUNT_FSC147_ROOT")) else {
        return Outcome::Skip("set TFCOUNT_WEIGHTS_DIR (sam_vit_b/, dinov2.onnx) and TFCOUNT_FSC147_ROOT to run".into());
    };
    let weights = PathBuf::from(weights);
    let start = Instant::now();
    let mut dataset = match eval::load_fsc147(&PathBuf::from(root), "test") {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(format!("loading FSC-147: {e}")),
    };
    dataset.samples.truncate(20);
    let mut full = Config::default();
    full.segmenter.variant = tfcount::backends::SegmenterVariant::VitB;
    full.segmenter.weights_path = Some(weights.join("sam_vit_b"));
    full.semantic.weights_path = Some(weights.join("dinov2.onnx"));
    let mut baseline = full.clone();
    Components::NONE.apply(&mut baseline);
    let run = |cfg: &Config| -> tfcount::Result<f64> {
        let b = Backends::from_config(cfg)?;
        Ok(eval::evaluate(&dataset, cfg, &b, &EvalOptions::default())?.mae)
    };
    match (run(&full), run(&baseline)) {
        (Ok(f), Ok(b)) => {
            let mins = start.elapsed().as_secs_f64() / 60.0;
            check(f < b && mins <= 30.0, format!("20 FSC-147 images: full MAE {f:.2} vs baseline {b:.2}, {mins:.1} min"))
        }
        (Err(e), _) | (_, Err(e)) => Outcome::Fail(format!("real backends: {e}")),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("mock end-to-end exactness", mock_end_to_end),
        ("prototype update oracle", tpu_oracle),
        ("pooling oracle", pooling_oracle),
        ("superpixel properties", slic_properties),
        ("count monotonicity", count_monotonicity),
        ("multi-scale geometry", multiscale_geometry),
        ("metrics", metrics),
        ("ablation plumbing", ablation),
        ("real-backend smoke", real_backend_smoke),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let (tag, detail) = match f() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("[{tag}] {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

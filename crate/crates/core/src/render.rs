//! Debug and result images: count overlays, superpixel label maps, and raw
//! proposal masks.

use crate::geometry::BBox;
use crate::image::RawImage;
use crate::mask::{BinaryMask, MaskProposal};
use crate::superpixel::SuperpixelResult;

/// 3x5 glyphs for `0`-`9`, one row per `u8`, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

/// Well-separated color for index `i` (golden-angle hue walk).
pub fn distinct_color(i: usize) -> [u8; 3] {
    let h = (i as f64 * 137.507_764) % 360.0;
    let (s, v) = (0.75, 0.95);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [((r + m) * 255.0) as u8, ((g + m) * 255.0) as u8, ((b + m) * 255.0) as u8]
}

fn blend(img: &mut RawImage, mask: &BinaryMask, color: [u8; 3], alpha: f64) {
    for p in mask.pixels() {
        if p.x < img.width() && p.y < img.height() {
            let old = img.get(p.x, p.y);
            let mix = |o: u8, c: u8| (o as f64 * (1.0 - alpha) + c as f64 * alpha).round() as u8;
            img.set(p.x, p.y, [mix(old[0], color[0]), mix(old[1], color[1]), mix(old[2], color[2])]);
        }
    }
}

fn fill_rect(img: &mut RawImage, x0: usize, y0: usize, x1: usize, y1: usize, color: [u8; 3]) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            img.set(x, y, color);
        }
    }
}

fn rect_border(img: &mut RawImage, x0: isize, y0: isize, x1: isize, y1: isize, color: [u8; 3]) {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut put = |x: isize, y: isize| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.set(x as usize, y as usize, color);
        }
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

/// Two-pixel box outline: white on the box edge, black just outside it.
fn outline(img: &mut RawImage, b: BBox) {
    if b.is_empty() {
        return;
    }
    let (x0, y0, x1, y1) = (b.x0 as isize, b.y0 as isize, b.x1 as isize - 1, b.y1 as isize - 1);
    rect_border(img, x0 - 1, y0 - 1, x1 + 1, y1 + 1, [0, 0, 0]);
    rect_border(img, x0, y0, x1, y1, [255, 255, 255]);
}

/// Draws `value` right-aligned at the bottom-right corner on a
/// dark plate.
pub fn stamp_number(img: &mut RawImage, value: usize) {
    let text = value.to_string();
    let scale = (img.width().min(img.height()) / 64).clamp(1, 8);
    let (gw, gh) = (4 * scale, 5 * scale);
    let width = text.len() * gw + scale;
    let height = gh + 2 * scale;
    let x0 = img.width().saturating_sub(width + scale);
    let y0 = img.height().saturating_sub(height + scale);
    fill_rect(img, x0, y0, x0 + width, y0 + height, [0, 0, 0]);
    for (i, ch) in text.bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        let gx = x0 + scale + i * gw;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    let (px, py) = (gx + col * scale, y0 + scale + row * scale);
                    fill_rect(img, px, py, px + scale, py + scale, [255, 255, 255]);
                }
            }
        }
    }
}

/// Selected masks in distinct colors, reference boxes outlined, and the
/// count in the bottom-right corner.
pub fn count_overlay(image: &RawImage, selected: &[&BinaryMask], references: &[BBox], count: usize) -> RawImage {
    let mut out = image.clone();
    for (i, m) in selected.iter().enumerate() {
        blend(&mut out, m, distinct_color(i), 0.55);
    }
    for b in references {
        outline(&mut out, *b);
    }
    stamp_number(&mut out, count);
    out
}

/// Superpixel labels painted in distinct colors, with boundaries in black.
pub fn label_map(sp: &SuperpixelResult) -> RawImage {
    let (w, h) = (sp.width, sp.height);
    RawImage::from_fn(w, h, |x, y| {
        let l = sp.label_at(x, y);
        let edge = (x + 1 < w && sp.label_at(x + 1, y) != l) || (y + 1 < h && sp.label_at(x, y + 1) != l);
        if edge {
            [0, 0, 0]
        } else {
            distinct_color(l as usize)
        }
    })
    .expect("superpixel result has non-zero size")
}

/// Every proposal blended over a dimmed copy of the image, larger masks
/// first so small ones stay visible.
pub fn proposals_image(image: &RawImage, proposals: &[MaskProposal]) -> RawImage {
    let mut out = RawImage::from_fn(image.width(), image.height(), |x, y| image.get(x, y).map(|c| c / 3))
        .expect("image has non-zero size");
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(proposals[i].area()));
    for i in order {
        blend(&mut out, &proposals[i].mask, distinct_color(i), 0.7);
    }
    out
}

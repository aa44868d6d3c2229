//! Owned 8-bit RGB image buffer and the handful of resampling helpers the
//! pipeline needs.

use std::path::Path;

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle, `x`/`y` are the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { x, y, width, height }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn right(&self) -> usize {
        self.x + self.width
    }

    pub fn bottom(&self) -> usize {
        self.y + self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }
}

/// Row-major, interleaved RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RawImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RawImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RawImage {
    /// Wraps an interleaved RGB buffer. Fails on zero-area images or a buffer
    /// whose length is not `3 * width * height`.
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image must have non-zero area, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "pixel buffer has {} bytes, expected {}",
                pixels.len(),
                width * height * 3
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels)
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        Self::from_rgb_image(img)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb_image().save(path.as_ref())?;
        Ok(())
    }

    pub fn from_rgb_image(img: image::RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// 64-bit FNV-1a over dimensions and pixel data.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for b in (self.width as u64).to_le_bytes() {
            eat(b);
        }
        for b in (self.height as u64).to_le_bytes() {
            eat(b);
        }
        for &b in &self.pixels {
            eat(b);
        }
        h
    }

    pub fn crop(&self, region: Region) -> Result<Self> {
        if region.width == 0
            || region.height == 0
            || region.right() > self.width
            || region.bottom() > self.height
        {
            return Err(Error::InvalidParameter(format!(
                "crop region {region:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(region.area() * 3);
        for y in region.y..region.bottom() {
            let start = (y * self.width + region.x) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + region.width * 3]);
        }
        Self::new(region.width, region.height, pixels)
    }

    /// Bilinear resize with pixel-center alignment (half-pixel offsets).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Self> {
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let (xs, ys) = (
            bilinear_taps(width, sx, self.width),
            bilinear_taps(height, sy, self.height),
        );
        Self::from_fn(width, height, |x, y| {
            let (x0, x1, fx) = xs[x];
            let (y0, y1, fy) = ys[y];
            let (p00, p10, p01, p11) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
            let mut out = [0u8; 3];
            for c in 0..3 {
                let top = p00[c] as f32 * (1.0 - fx) + p10[c] as f32 * fx;
                let bot = p01[c] as f32 * (1.0 - fx) + p11[c] as f32 * fx;
                out[c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
            }
            out
        })
    }
}

fn bilinear_taps(out_len: usize, scale: f32, in_len: usize) -> Vec<(usize, usize, f32)> {
    (0..out_len)
        .map(|i| {
            let src = ((i as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_area() {
        assert!(matches!(RawImage::new(0, 4, vec![]), Err(Error::InvalidInput(_))));
        assert!(RawImage::filled(3, 0, [0, 0, 0]).is_err());
    }

    #[test]
    fn crop_and_hash() {
        let img = RawImage::from_fn(4, 3, |x, y| [x as u8, y as u8, 7]).unwrap();
        let c = img.crop(Region::new(1, 1, 2, 2)).unwrap();
        assert_eq!(c.get(0, 0), [1, 1, 7]);
        assert_eq!(c.get(1, 1), [2, 2, 7]);
        assert_ne!(img.content_hash(), c.content_hash());
        assert_eq!(img.content_hash(), img.clone().content_hash());
        assert!(img.crop(Region::new(3, 0, 2, 1)).is_err());
    }

    #[test]
    fn upscale_constant_stays_constant() {
        let img = RawImage::filled(5, 7, [10, 20, 30]).unwrap();
        let up = img.resize_bilinear(10, 14).unwrap();
        assert!((0..14).all(|y| (0..10).all(|x| up.get(x, y) == [10, 20, 30])));
    }
}

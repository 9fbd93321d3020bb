//! Raster containers shared by every rendering stage.

use crate::error::{ensure, Result};
use serde::{Deserialize, Serialize};

/// 8-bit sRGB triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0, 0, 0]);
    pub const WHITE: Rgb = Rgb([255, 255, 255]);

    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Rgb([r, g, b])
    }

    pub fn to_f64(self) -> [f64; 3] {
        self.0.map(f64::from)
    }

    pub fn from_f64(c: [f64; 3]) -> Self {
        Rgb(c.map(to_u8))
    }

    pub fn lerp(self, other: Rgb, t: f64) -> [f64; 3] {
        let (a, b) = (self.to_f64(), other.to_f64());
        [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
    }
}

/// Round and clamp a channel value to `0..=255`.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 255.0) as u8
    }
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, Rgb::BLACK)
    }

    pub fn filled(width: usize, height: usize, c: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&c.0);
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        ensure(data.len() == width * height * 3, || {
            format!("rgb buffer of {} bytes does not match {width}x{height}", data.len())
        })?;
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        Rgb([self.data[i], self.data[i + 1], self.data[i + 2]])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c.0);
    }

    pub fn pixels(&self) -> impl Iterator<Item = Rgb> + '_ {
        self.data.chunks_exact(3).map(|c| Rgb([c[0], c[1], c[2]]))
    }

    /// Rec. 601 luma in `0..=255`.
    pub fn to_luma(&self) -> Field {
        let data = self
            .data
            .chunks_exact(3)
            .map(|c| 0.299 * c[0] as f32 + 0.587 * c[1] as f32 + 0.114 * c[2] as f32)
            .collect();
        Field { width: self.width, height: self.height, data }
    }

    /// RGBA bytes with opaque alpha, as expected by canvas `ImageData`.
    pub fn to_rgba(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width * self.height * 4);
        for c in self.data.chunks_exact(3) {
            out.extend_from_slice(&[c[0], c[1], c[2], 255]);
        }
        out
    }

    /// Separable Gaussian blur with clamp-to-edge borders.
    pub fn gaussian_blur(&self, sigma: f64) -> RasterImage {
        if sigma <= 0.0 {
            return self.clone();
        }
        let mut planes: Vec<Field> = (0..3)
            .map(|c| Field {
                width: self.width,
                height: self.height,
                data: self.data.iter().skip(c).step_by(3).map(|&v| v as f32).collect(),
            })
            .collect();
        for p in &mut planes {
            *p = p.gaussian_blur(sigma);
        }
        let mut out = RasterImage::new(self.width, self.height);
        for (i, px) in out.data.chunks_exact_mut(3).enumerate() {
            for c in 0..3 {
                px[c] = to_u8(planes[c].data[i] as f64);
            }
        }
        out
    }
}

/// Single-channel float raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Field {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xi = x.clamp(0, self.width as isize - 1) as usize;
        let yi = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yi * self.width + xi]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer + 0.5). Outside the raster the value is 0.
    pub fn sample_zero(&self, x: f64, y: f64) -> f32 {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = (fx - x0) as f32;
        let ty = (fy - y0) as f32;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let at = |xi: isize, yi: isize| -> f32 {
            if xi < 0 || yi < 0 || xi >= self.width as isize || yi >= self.height as isize {
                0.0
            } else {
                self.data[yi as usize * self.width + xi as usize]
            }
        };
        let a = at(x0, y0) + (at(x0 + 1, y0) - at(x0, y0)) * tx;
        let b = at(x0, y0 + 1) + (at(x0 + 1, y0 + 1) - at(x0, y0 + 1)) * tx;
        a + (b - a) * ty
    }

    pub fn gaussian_blur(&self, sigma: f64) -> Field {
        if sigma <= 0.0 {
            return self.clone();
        }
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() / 2) as isize;
        let (w, h) = (self.width, self.height);
        let mut tmp = Field::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * self.get_clamped(x as isize + k as isize - r, y as isize) as f64;
                }
                tmp.data[y * w + x] = acc as f32;
            }
        }
        let mut out = Field::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * tmp.get_clamped(x as isize, y as isize + k as isize - r) as f64;
                }
                out.data[y * w + x] = acc as f32;
            }
        }
        out
    }
}

/// Normalized Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// One-bit semantic mask; `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_bools(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        ensure(data.len() == width * height, || {
            format!("mask buffer of {} does not match {width}x{height}", data.len())
        })?;
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-range coordinates read as background.
    #[inline]
    pub fn get_or_false(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Grayscale bytes, 255 for foreground.
    pub fn to_luma8(&self) -> Vec<u8> {
        self.data.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    pub fn to_image(&self) -> RasterImage {
        let data = self.data.iter().flat_map(|&b| if b { [255; 3] } else { [0; 3] }).collect();
        RasterImage { width: self.width, height: self.height, data }
    }

    pub fn to_field(&self) -> Field {
        Field {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b { 255.0 } else { 0.0 }).collect(),
        }
    }

    /// 3x3 binary dilation repeated `radius` times.
    pub fn dilate(&self, radius: usize) -> BinaryMask {
        let mut cur = self.clone();
        for _ in 0..radius {
            cur = BinaryMask::from_fn(self.width, self.height, |x, y| {
                (-1..=1).any(|dy| (-1..=1).any(|dx| cur.get_or_false(x as isize + dx, y as isize + dy)))
            });
        }
        cur
    }

    /// 3x3 binary erosion repeated `radius` times; outside counts as background.
    pub fn erode(&self, radius: usize) -> BinaryMask {
        let mut cur = self.clone();
        for _ in 0..radius {
            cur = BinaryMask::from_fn(self.width, self.height, |x, y| {
                (-1..=1).all(|dy| (-1..=1).all(|dx| cur.get_or_false(x as isize + dx, y as isize + dy)))
            });
        }
        cur
    }

    /// Foreground pixels with at least one background 8-neighbor.
    pub fn boundary(&self) -> BinaryMask {
        let eroded = self.erode(1);
        BinaryMask::from_fn(self.width, self.height, |x, y| self.get(x, y) && !eroded.get(x, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized() {
        let k = gaussian_kernel(1.4);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blur_preserves_constant_image() {
        let img = RasterImage::filled(9, 7, Rgb::new(10, 200, 77));
        assert_eq!(img.gaussian_blur(2.0), img);
    }

    #[test]
    fn boundary_of_square() {
        let m = BinaryMask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (2..6).contains(&y));
        assert_eq!(m.boundary().count(), 12);
        assert_eq!(m.erode(1).count(), 4);
        assert_eq!(m.dilate(1).count(), 36);
    }
}

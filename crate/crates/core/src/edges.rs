//! Canny edge detection and the edge-conditioning maps built from it.

use crate::error::{ensure, Result};
use crate::raster::{gaussian_kernel, BinaryMask, Field, RasterImage};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub gaussian_sigma: f64,
    /// Sobel magnitude thresholds on 0..255 intensities.
    pub low_threshold: f64,
    pub high_threshold: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self { gaussian_sigma: 1.4, low_threshold: 40.0, high_threshold: 100.0 }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite(), || "gaussian_sigma must be > 0".into())?;
        ensure(self.low_threshold >= 0.0 && self.low_threshold.is_finite(), || "low threshold must be >= 0".into())?;
        ensure(self.high_threshold >= self.low_threshold && self.high_threshold.is_finite(), || {
            format!("high threshold {} is below low threshold {}", self.high_threshold, self.low_threshold)
        })
    }
}

/// Relative slack under which two magnitudes count as tied in non-maximum
/// suppression. Ties are kept on both sides.
pub const NMS_TIE_EPS: f64 = 1e-9;

fn blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k.iter().enumerate().map(|(i, kv)| kv * src[y * w + clamp(x as isize + i as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k.iter().enumerate().map(|(i, kv)| kv * tmp[clamp(y as isize + i as isize - r, h) * w + x]).sum();
        }
    }
    out
}

/// Gradient magnitude after blur and 3x3 Sobel (borders replicated), with
/// the suppression direction sector 0..4 (0 horizontal, 1 diagonal down-right,
/// 2 vertical, 3 diagonal down-left).
pub fn sobel(values: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<u8>) {
    let at = |x: isize, y: isize| values[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut mag = vec![0.0; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)) - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)) - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            mag[i] = gx.hypot(gy);
            let mut deg = gy.atan2(gx).to_degrees();
            if deg < 0.0 {
                deg += 180.0;
            }
            dir[i] = if !(22.5..157.5).contains(&deg) {
                0
            } else if deg < 67.5 {
                1
            } else if deg < 112.5 {
                2
            } else {
                3
            };
        }
    }
    (mag, dir)
}

/// Canny on an intensity field in 0..255 units.
pub fn canny_field(field: &Field, params: &CannyParams) -> Result<BinaryMask> {
    params.validate()?;
    let (w, h) = (field.width, field.height);
    let mut out = BinaryMask::new(w, h);
    if w < 3 || h < 3 {
        return Ok(out);
    }
    let src: Vec<f64> = field.data.iter().map(|&v| v as f64).collect();
    let smooth = blur(&src, w, h, params.gaussian_sigma);
    let (mag, dir) = sobel(&smooth, w, h);

    // Non-maximum suppression; the outermost ring is always suppressed.
    let mut thin = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let (a, b) = match dir[i] {
                0 => (mag[i - 1], mag[i + 1]),
                1 => (mag[i - w - 1], mag[i + w + 1]),
                2 => (mag[i - w], mag[i + w]),
                _ => (mag[i - w + 1], mag[i + w - 1]),
            };
            let eps = NMS_TIE_EPS * m.max(1.0);
            if m + eps >= a && m + eps >= b {
                thin[i] = m;
            }
        }
    }

    // Hysteresis: weak pixels survive when 8-connected to a strong pixel.
    let mut stack: Vec<usize> = Vec::new();
    let mut keep = vec![false; w * h];
    for (i, &m) in thin.iter().enumerate() {
        if m > 0.0 && m >= params.high_threshold {
            keep[i] = true;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !keep[j] && thin[j] > 0.0 && thin[j] >= params.low_threshold {
                    keep[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    for (i, &k) in keep.iter().enumerate() {
        if k {
            out.set(i % w, i / w, true);
        }
    }
    Ok(out)
}

/// Canny on the luma of an RGB image.
pub fn canny(image: &RasterImage, params: &CannyParams) -> Result<BinaryMask> {
    canny_field(&image.to_luma(), params)
}

/// Canny on a binary mask (foreground = 255).
pub fn canny_mask(mask: &BinaryMask, params: &CannyParams) -> Result<BinaryMask> {
    let mut f = mask.to_field();
    f.data.iter_mut().for_each(|v| *v *= 255.0);
    canny_field(&f, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeMode {
    /// Edges of the semantic mask only.
    MaskBoundary,
    /// Image edges restricted to the dilated mask.
    ImageInMask,
    /// Image edges inside the dilated mask plus the mask boundary.
    #[default]
    Combined,
}

impl FromStr for EdgeMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask-boundary" => Ok(EdgeMode::MaskBoundary),
            "image-in-mask" => Ok(EdgeMode::ImageInMask),
            "combined" => Ok(EdgeMode::Combined),
            other => Err(crate::Error::input(format!("unknown edge mode `{other}`"))),
        }
    }
}

/// Conditioning edge map for a datapoint; `dilate_px` widens the region in
/// which image edges are kept.
pub fn edge_map(image: &RasterImage, mask: &BinaryMask, mode: EdgeMode, params: &CannyParams, dilate_px: usize) -> Result<BinaryMask> {
    ensure(image.dims() == mask.dims(), || "image and mask resolution differ".into())?;
    let (w, h) = mask.dims();
    let inner = || -> Result<BinaryMask> {
        let e = canny(image, params)?;
        let region = mask.dilate(dilate_px);
        Ok(BinaryMask::from_fn(w, h, |x, y| e.get(x, y) && region.get(x, y)))
    };
    match mode {
        EdgeMode::MaskBoundary => canny_mask(mask, params),
        EdgeMode::ImageInMask => inner(),
        EdgeMode::Combined => {
            let a = canny_mask(mask, params)?;
            let b = inner()?;
            Ok(BinaryMask::from_fn(w, h, |x, y| a.get(x, y) || b.get(x, y)))
        }
    }
}

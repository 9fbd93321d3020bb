//! Mask agreement metrics, the deviation filter rule, and a palette-based
//! baseline segmenter used as a stand-in prediction source.

use crate::error::{ensure, Error, Result};
use crate::paper::PaperPalette;
use crate::raster::{BinaryMask, RasterImage};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Default rejection threshold: datapoints deviating by more than 15% are dropped.
pub const DEFAULT_THRESHOLD: f64 = 0.15;

fn check_dims(predicted: &BinaryMask, truth: &BinaryMask) -> Result<()> {
    ensure(predicted.dims() == truth.dims(), || {
        format!("mask resolution mismatch: {:?} vs {:?}", predicted.dims(), truth.dims())
    })
}

fn counts(predicted: &BinaryMask, truth: &BinaryMask) -> (usize, usize) {
    let mut inter = 0;
    let mut union = 0;
    for (&p, &t) in predicted.as_slice().iter().zip(truth.as_slice()) {
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    (inter, union)
}

/// `|A & B| / |A | B|`, 1 when both masks are empty.
pub fn iou(predicted: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    check_dims(predicted, truth)?;
    let (inter, union) = counts(predicted, truth);
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

fn nonempty_truth(truth: &BinaryMask) -> Result<usize> {
    let n = truth.count();
    ensure(n > 0, || "ground-truth mask is empty".into())?;
    Ok(n)
}

/// `||A| - |B|| / |B|`.
pub fn mask_pixel_error(predicted: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    check_dims(predicted, truth)?;
    let t = nonempty_truth(truth)?;
    Ok((predicted.count() as f64 - t as f64).abs() / t as f64)
}

/// `|A xor B| / |B|`.
pub fn deviation(predicted: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    check_dims(predicted, truth)?;
    let t = nonempty_truth(truth)?;
    let (inter, union) = counts(predicted, truth);
    Ok((union - inter) as f64 / t as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationMetric {
    #[default]
    SymmetricDifference,
    PixelCount,
    OneMinusIou,
}

impl DeviationMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviationMetric::SymmetricDifference => "symmetric-difference",
            DeviationMetric::PixelCount => "pixel-count",
            DeviationMetric::OneMinusIou => "one-minus-iou",
        }
    }

    pub fn evaluate(self, predicted: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
        match self {
            DeviationMetric::SymmetricDifference => deviation(predicted, truth),
            DeviationMetric::PixelCount => mask_pixel_error(predicted, truth),
            DeviationMetric::OneMinusIou => {
                nonempty_truth(truth)?;
                Ok(1.0 - iou(predicted, truth)?)
            }
        }
    }
}

impl FromStr for DeviationMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric-difference" | "xor" => Ok(DeviationMetric::SymmetricDifference),
            "pixel-count" => Ok(DeviationMetric::PixelCount),
            "one-minus-iou" | "iou" => Ok(DeviationMetric::OneMinusIou),
            other => Err(Error::input(format!("unknown deviation metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub deviation: f64,
    pub threshold: f64,
    pub kept: bool,
}

impl FilterDecision {
    /// Kept unless the deviation is strictly above the threshold.
    pub fn new(deviation: f64, threshold: f64) -> Self {
        Self { deviation, threshold, kept: deviation <= threshold }
    }
}

/// Arithmetic mean of relative errors over `(predicted, truth)` pairs.
pub fn mean_relative_error(pairs: &[(f64, f64)]) -> Result<f64> {
    ensure(!pairs.is_empty(), || "mean relative error of an empty list".into())?;
    let mut sum = 0.0;
    for &(p, t) in pairs {
        sum += crate::annotate::relative_error(p, t)?;
    }
    Ok(sum / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    /// Minimum chromaticity distance from the paper base-ink segment.
    pub chroma_threshold: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self { chroma_threshold: 0.045 }
    }
}

fn chroma(c: [f64; 3]) -> (f64, f64) {
    let s = (c[0] + c[1] + c[2]).max(1.0);
    (c[0] / s, c[1] / s)
}

fn distance_to_chroma_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Per-pixel distance of the chromaticity from the paper's base-ink line.
/// Shadows and grid ink stay near the line; leaf greens do not.
pub fn chroma_distance(image: &RasterImage, palette: &PaperPalette) -> Vec<f64> {
    let (a, b) = (chroma(palette.base), chroma(palette.ink));
    image.pixels().map(|p| distance_to_chroma_segment(chroma(p.to_f64()), a, b)).collect()
}

/// Largest 4-connected component of `mask`; ties go to the component found first in scan order.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut label = vec![0u32; w * h];
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.as_slice()[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.as_slice()[j] && label[j] == 0 {
                    label[j] = next;
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
        if size > best.1 {
            best = (next, size);
        }
    }
    BinaryMask::from_fn(w, h, |x, y| best.0 != 0 && label[y * w + x] == best.0)
}

/// Foreground where the chromaticity leaves the paper line by more than the
/// threshold, reduced to the largest connected component. Interior holes
/// (paper showing through) stay background.
pub fn baseline_segment(image: &RasterImage, palette: &PaperPalette, params: &SegmentParams) -> BinaryMask {
    let (w, h) = image.dims();
    let d = chroma_distance(image, palette);
    let raw = BinaryMask::from_fn(w, h, |x, y| d[y * w + x] > params.chroma_threshold);
    largest_component(&raw)
}

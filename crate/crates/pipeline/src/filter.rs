//! Annotation-consistency filtering of datapoints against predicted masks.

use crate::config::FilterConfig;
use crate::error::{PipelineError, Result};
use crate::generate::REPORT_DIR;
use crate::io::{read_mask_png, read_rgb_png, write_atomic, write_rgb_png};
use crate::manifest::{DatasetManifest, ManifestHeader, FILTERED_MANIFEST, INPAINTED_MANIFEST, MANIFEST, REJECTED_MANIFEST};
use leafgen_core::annotate::{Annotation, Provenance};
use leafgen_core::metrics::{baseline_segment, iou, mask_pixel_error, DeviationMetric, FilterDecision, SegmentParams};
use leafgen_core::{BinaryMask, RasterImage, Rgb};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Where predicted masks come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionSource {
    /// Built-in chromaticity segmenter run on the (inpainted) image.
    Baseline(SegmentParams),
    /// `<dir>/<id>.png` masks produced by any external model.
    Directory(PathBuf),
}

impl PredictionSource {
    pub fn from_config(cfg: &FilterConfig, dataset: &Path) -> Self {
        if cfg.predictions == "baseline" {
            PredictionSource::Baseline(SegmentParams { chroma_threshold: cfg.chroma_threshold })
        } else {
            let p = PathBuf::from(&cfg.predictions);
            PredictionSource::Directory(if p.is_absolute() { p } else { dataset.join(p) })
        }
    }

    /// The image a datapoint currently shows: inpainted if available.
    pub fn displayed_image(dataset: &Path, a: &Annotation) -> Result<RasterImage> {
        read_rgb_png(&dataset.join(a.inpainted_path.as_deref().unwrap_or(&a.image_path)))
    }

    /// `Ok(None)` when no prediction exists for the entry.
    pub fn predict(&self, dataset: &Path, a: &Annotation) -> Result<Option<BinaryMask>> {
        match self {
            PredictionSource::Baseline(p) => {
                let img = Self::displayed_image(dataset, a)?;
                Ok(Some(baseline_segment(&img, &a.paper_palette, p)))
            }
            PredictionSource::Directory(dir) => {
                let path = dir.join(format!("{}.png", a.id));
                if path.is_file() {
                    read_mask_png(&path).map(Some)
                } else {
                    Ok(None)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryScore {
    pub id: String,
    pub deviation: f64,
    pub iou: f64,
    pub mask_pixel_error: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unscored {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationStats {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub max: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

impl DeviationStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: percentile(&v, 0.5),
            p90: percentile(&v, 0.9),
            p95: percentile(&v, 0.95),
            max: *v.last().expect("nonempty"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub threshold: f64,
    pub deviation_metric: String,
    pub prediction_source: String,
    pub input: usize,
    pub kept: usize,
    pub rejected: usize,
    pub unscored: usize,
    /// Rejected over scored entries.
    pub rejection_rate: f64,
    pub deviation: Option<DeviationStats>,
    pub mean_iou: Option<f64>,
    pub mean_mask_pixel_error: Option<f64>,
    pub entries: Vec<EntryScore>,
    pub unscored_entries: Vec<Unscored>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<Annotation>,
    pub rejected: Vec<Annotation>,
    pub report: FilterReport,
}

enum Scored {
    Score(EntryScore),
    Skip(String),
}

/// Scores every entry and partitions by `deviation <= threshold`. Entries
/// without a usable prediction are reported as unscored and appear in
/// neither output. Kept inpainted entries become `inpainted_filtered`.
pub fn filter_dataset<P, T>(entries: &[Annotation], predict: P, truth: T, threshold: f64, metric: DeviationMetric, source_name: &str) -> Result<FilterOutcome>
where
    P: Fn(&Annotation) -> Result<Option<BinaryMask>> + Sync,
    T: Fn(&Annotation) -> Result<BinaryMask> + Sync,
{
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(PipelineError::Usage(format!("threshold must be >= 0, got {threshold}")));
    }
    let scored: Vec<Scored> = entries
        .par_iter()
        .map(|a| {
            let pred = match predict(a) {
                Ok(Some(p)) => p,
                Ok(None) => return Scored::Skip("missing prediction".into()),
                Err(e) => return Scored::Skip(format!("prediction unreadable: {e}")),
            };
            let truth = match truth(a) {
                Ok(t) => t,
                Err(e) => return Scored::Skip(format!("ground-truth mask unreadable: {e}")),
            };
            let dev = match metric.evaluate(&pred, &truth) {
                Ok(d) => d,
                Err(e) => return Scored::Skip(e.to_string()),
            };
            let d = FilterDecision::new(dev, threshold);
            Scored::Score(EntryScore {
                id: a.id.clone(),
                deviation: dev,
                iou: iou(&pred, &truth).unwrap_or(0.0),
                mask_pixel_error: mask_pixel_error(&pred, &truth).unwrap_or(f64::NAN),
                kept: d.kept,
            })
        })
        .collect();

    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    let mut scores = Vec::new();
    let mut unscored = Vec::new();
    for (a, s) in entries.iter().zip(scored) {
        match s {
            Scored::Score(s) => {
                if s.kept {
                    let mut b = a.clone();
                    if b.provenance == Provenance::Inpainted {
                        b.provenance = Provenance::InpaintedFiltered;
                    }
                    kept.push(b);
                } else {
                    rejected.push(a.clone());
                }
                scores.push(s);
            }
            Scored::Skip(reason) => unscored.push(Unscored { id: a.id.clone(), reason }),
        }
    }
    let n = scores.len();
    let devs: Vec<f64> = scores.iter().map(|s| s.deviation).collect();
    let mean = |f: fn(&EntryScore) -> f64| (n > 0).then(|| scores.iter().map(f).sum::<f64>() / n as f64);
    let report = FilterReport {
        threshold,
        deviation_metric: metric.as_str().into(),
        prediction_source: source_name.into(),
        input: entries.len(),
        kept: kept.len(),
        rejected: rejected.len(),
        unscored: unscored.len(),
        rejection_rate: if n > 0 { rejected.len() as f64 / n as f64 } else { 0.0 },
        deviation: DeviationStats::of(&devs),
        mean_iou: mean(|s| s.iou),
        mean_mask_pixel_error: mean(|s| s.mask_pixel_error),
        entries: scores,
        unscored_entries: unscored,
    };
    Ok(FilterOutcome { kept, rejected, report })
}

/// Side-by-side image and overlay: ground truth outline green, predicted
/// outline magenta.
pub fn overlay(image: &RasterImage, truth: &BinaryMask, predicted: &BinaryMask) -> RasterImage {
    let (w, h) = image.dims();
    let mut out = RasterImage::new(2 * w, h);
    let tb = truth.boundary();
    let pb = if predicted.dims() == truth.dims() { predicted.boundary() } else { BinaryMask::new(w, h) };
    for y in 0..h {
        for x in 0..w {
            let c = image.get(x, y);
            out.set(x, y, c);
            let o = if tb.get(x, y) {
                Rgb::new(0, 200, 0)
            } else if pb.get(x, y) {
                Rgb::new(230, 0, 200)
            } else if predicted.dims() == truth.dims() && predicted.get(x, y) != truth.get(x, y) {
                Rgb::from_f64(c.lerp(Rgb::new(255, 0, 0), 0.5))
            } else {
                c
            };
            out.set(w + x, y, o);
        }
    }
    out
}

/// Manifest the filter reads: the inpainted one when present.
pub fn filter_input_path(out: &Path) -> PathBuf {
    let p = out.join(INPAINTED_MANIFEST);
    if p.is_file() {
        p
    } else {
        out.join(MANIFEST)
    }
}

/// Filters the dataset in `out`, writing the kept and rejected manifests, the
/// JSON report and an overlay gallery of rejected entries.
pub fn run_filter_stage(out: &Path, cfg: &FilterConfig) -> Result<FilterOutcome> {
    let input = filter_input_path(out);
    let manifest = DatasetManifest::read(&input)?;
    let source = PredictionSource::from_config(cfg, out);
    let name = match &source {
        PredictionSource::Baseline(p) => format!("baseline (chroma threshold {})", p.chroma_threshold),
        PredictionSource::Directory(d) => d.display().to_string(),
    };
    log::info!("filtering {} entries from {} at threshold {}", manifest.entries.len(), input.display(), cfg.threshold);
    let outcome = filter_dataset(
        &manifest.entries,
        |a| source.predict(out, a),
        |a| read_mask_png(&out.join(&a.mask_path)),
        cfg.threshold,
        cfg.deviation_metric,
        &name,
    )?;
    let hash = manifest.header.config_hash.clone();
    DatasetManifest::new(ManifestHeader::new(hash.clone()), outcome.kept.clone()).write(&out.join(FILTERED_MANIFEST))?;
    DatasetManifest::new(ManifestHeader::new(hash), outcome.rejected.clone()).write(&out.join(REJECTED_MANIFEST))?;
    let report_dir = out.join(REPORT_DIR);
    write_atomic(&report_dir.join("filter_report.json"), serde_json::to_string_pretty(&outcome.report)?.as_bytes())?;

    let gallery = report_dir.join("rejected");
    if gallery.is_dir() {
        std::fs::remove_dir_all(&gallery).map_err(|e| PipelineError::io(&gallery, e))?;
    }
    for a in outcome.rejected.iter().take(cfg.gallery_limit) {
        let img = PredictionSource::displayed_image(out, a)?;
        let truth = read_mask_png(&out.join(&a.mask_path))?;
        let pred = source.predict(out, a)?.unwrap_or_else(|| BinaryMask::new(truth.width(), truth.height()));
        write_rgb_png(&gallery.join(format!("{}.png", a.id)), &overlay(&img, &truth, &pred))?;
    }
    Ok(outcome)
}

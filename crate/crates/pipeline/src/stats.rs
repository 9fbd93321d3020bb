//! Dataset summaries for `leafgen stats`.

use crate::error::Result;
use crate::generate::leaf_index_of;
use crate::manifest::{DatasetManifest, INPAINTED_MANIFEST, MANIFEST};
use leafgen_core::annotate::{Annotation, Provenance};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        Some(Self {
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<Bin> {
    let Some(s) = Summary::of(values.iter().copied()) else { return Vec::new() };
    let bins = bins.max(1);
    let width = (s.max - s.min) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|i| Bin { lo: s.min + width * i as f64, hi: if i + 1 == bins { s.max } else { s.min + width * (i + 1) as f64 }, count: 0 })
        .collect();
    for &x in values {
        let i = if width > 0.0 { (((x - s.min) / width) as usize).min(bins - 1) } else { 0 };
        out[i].count += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub manifest: String,
    pub config_hash: String,
    pub datapoints: usize,
    pub leaves: usize,
    /// Counted per leaf.
    pub species: BTreeMap<String, usize>,
    pub provenance: BTreeMap<String, usize>,
    pub surface_area_mm2: Option<Summary>,
    pub projected_area_mm2: Option<Summary>,
    pub surface_area_histogram: Vec<Bin>,
    pub gamma: Option<Summary>,
    pub mm_per_pixel: Option<Summary>,
    pub flat_datapoints: usize,
    pub with_holes: usize,
    pub max_area_gap: f64,
}

fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Rendered => "rendered",
        Provenance::Inpainted => "inpainted",
        Provenance::InpaintedFiltered => "inpainted_filtered",
    }
}

pub fn compute_stats(name: &str, m: &DatasetManifest) -> DatasetStats {
    let e = &m.entries;
    let mut leaves: BTreeMap<usize, &Annotation> = BTreeMap::new();
    for a in e {
        if let Some(i) = leaf_index_of(&a.id) {
            leaves.entry(i).or_insert(a);
        }
    }
    let mut species = BTreeMap::new();
    for a in leaves.values() {
        *species.entry(a.species.as_str().to_string()).or_insert(0) += 1;
    }
    let mut provenance = BTreeMap::new();
    for a in e {
        *provenance.entry(provenance_name(a.provenance).to_string()).or_insert(0) += 1;
    }
    let areas: Vec<f64> = e.iter().map(|a| a.surface_area_mm2).collect();
    let distinct: BTreeSet<usize> = leaves.keys().copied().collect();
    DatasetStats {
        manifest: name.into(),
        config_hash: m.header.config_hash.clone(),
        datapoints: e.len(),
        leaves: distinct.len(),
        species,
        provenance,
        surface_area_mm2: Summary::of(areas.iter().copied()),
        projected_area_mm2: Summary::of(e.iter().map(|a| a.projected_area_mm2)),
        surface_area_histogram: histogram(&areas, 10),
        gamma: Summary::of(e.iter().map(|a| a.gamma)),
        mm_per_pixel: Summary::of(e.iter().map(|a| a.mm_per_pixel)),
        flat_datapoints: e.iter().filter(|a| a.surface_area_mm2 == a.projected_area_mm2).count(),
        with_holes: e.iter().filter(|a| a.hole_count > 0).count(),
        max_area_gap: e.iter().map(Annotation::area_gap).fold(0.0, f64::max),
    }
}

/// The most processed full manifest: inpainted when present.
pub fn default_manifest(out: &Path) -> PathBuf {
    let p = out.join(INPAINTED_MANIFEST);
    if p.is_file() {
        p
    } else {
        out.join(MANIFEST)
    }
}

pub fn dataset_stats(path: &Path) -> Result<DatasetStats> {
    let m = DatasetManifest::read(path)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(compute_stats(&name, &m))
}

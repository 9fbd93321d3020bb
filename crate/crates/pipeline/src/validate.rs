//! Re-checks every manifest invariant against the files on disk.

use crate::config::GenerationConfig;
use crate::error::{PipelineError, Result};
use crate::generate::{leaf_index_of, CONFIG_SNAPSHOT};
use crate::io::{png_dimensions, read_mask_png};
use crate::manifest::{DatasetManifest, FILTERED_MANIFEST, INPAINTED_MANIFEST, MANIFEST, REJECTED_MANIFEST};
use leafgen_core::annotate::{Annotation, Provenance};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub manifest: String,
    pub id: Option<String>,
    pub check: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub manifests: Vec<String>,
    pub entries: usize,
    pub max_area_gap: f64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn v(manifest: &str, id: Option<&str>, check: &str, message: impl Into<String>) -> Violation {
    Violation { manifest: manifest.into(), id: id.map(Into::into), check: check.into(), message: message.into() }
}

fn check_png(out: &Path, rel: &str, a: &Annotation, name: &str, check: &str) -> Option<Violation> {
    match png_dimensions(&out.join(rel)) {
        Ok(d) if d == (a.width, a.height) => None,
        Ok((w, h)) => Some(v(name, Some(&a.id), check, format!("{rel} is {w}x{h}, expected {}x{}", a.width, a.height))),
        Err(e) => Some(v(name, Some(&a.id), check, e.to_string())),
    }
}

/// Per-entry checks: annotation invariants, the 2% mask/area check, file
/// presence and resolution, and the stored mask agreeing with the record.
fn check_entry(out: &Path, name: &str, a: &Annotation, deep: bool, camera_extent_mm: Option<f64>) -> Vec<Violation> {
    let mut found = Vec::new();
    if let Err(e) = a.validate() {
        found.push(v(name, Some(&a.id), "annotation", e.to_string()));
    }
    if leaf_index_of(&a.id).is_none() || !a.id.ends_with(&format!("_{}", a.pass_index)) {
        found.push(v(name, Some(&a.id), "id", "id is not <leaf>_<pass>"));
    }
    if let Some(extent) = camera_extent_mm {
        if a.mm_per_pixel != leafgen_core::scene::mm_per_pixel(a.gamma, extent, a.width) {
            found.push(v(name, Some(&a.id), "scale", "mm_per_pixel does not equal gamma * extent / width"));
        }
    }
    found.extend(check_png(out, &a.image_path, a, name, "image"));
    found.extend(check_png(out, &a.edge_path, a, name, "edges"));
    match (a.provenance, &a.inpainted_path) {
        (Provenance::Rendered, Some(_)) => found.push(v(name, Some(&a.id), "provenance", "rendered entry has an inpainted path")),
        (Provenance::Inpainted | Provenance::InpaintedFiltered, None) => {
            found.push(v(name, Some(&a.id), "provenance", "inpainted entry lacks an inpainted path"))
        }
        (_, Some(p)) => found.extend(check_png(out, p, a, name, "inpainted")),
        _ => {}
    }
    if deep {
        match read_mask_png(&out.join(&a.mask_path)) {
            Ok(m) if m.dims() != (a.width, a.height) => found.push(v(name, Some(&a.id), "mask", "mask resolution differs from record")),
            Ok(m) if m.count() as u64 != a.mask_pixel_count => found.push(v(
                name,
                Some(&a.id),
                "mask",
                format!("mask has {} foreground pixels, record says {}", m.count(), a.mask_pixel_count),
            )),
            Ok(_) => {}
            Err(e) => found.push(v(name, Some(&a.id), "mask", e.to_string())),
        }
    } else {
        found.extend(check_png(out, &a.mask_path, a, name, "mask"));
    }
    found
}

/// Validates `manifest.jsonl` and every derived manifest present in `out`.
pub fn validate_dataset(out: &Path) -> Result<ValidationReport> {
    let main = out.join(MANIFEST);
    if !main.is_file() {
        return Err(PipelineError::Validation(format!("{} not found", main.display())));
    }
    let mut violations = Vec::new();
    let config = match std::fs::read_to_string(out.join(CONFIG_SNAPSHOT)) {
        Ok(text) => match GenerationConfig::from_toml(&text) {
            Ok(c) => Some(c),
            Err(e) => {
                violations.push(v(CONFIG_SNAPSHOT, None, "config", e.to_string()));
                None
            }
        },
        Err(_) => {
            violations.push(v(CONFIG_SNAPSHOT, None, "config", "config snapshot missing"));
            None
        }
    };

    let mut names = Vec::new();
    let mut total = 0;
    let mut max_gap: f64 = 0.0;
    let mut main_entries: BTreeMap<String, Annotation> = BTreeMap::new();
    for name in [MANIFEST, INPAINTED_MANIFEST, FILTERED_MANIFEST, REJECTED_MANIFEST] {
        let path = out.join(name);
        if !path.is_file() {
            continue;
        }
        names.push(name.to_string());
        let m = match DatasetManifest::read(&path) {
            Ok(m) => m,
            Err(e) => {
                violations.push(v(name, None, "parse", e.to_string()));
                continue;
            }
        };
        if let Some(c) = &config {
            if m.header.config_hash != c.hash() {
                violations.push(v(name, None, "config_hash", "config hash does not match config.toml"));
            }
        }
        for d in m.duplicate_ids() {
            violations.push(v(name, Some(&d), "unique_id", "duplicate id"));
        }
        if m.entries.windows(2).any(|w| w[0].id > w[1].id) {
            violations.push(v(name, None, "order", "entries are not sorted by id"));
        }
        let deep = name == MANIFEST;
        let extent = config.as_ref().map(|c| c.render.camera_extent_mm);
        violations.extend(m.entries.par_iter().flat_map_iter(|a| check_entry(out, name, a, deep, extent)).collect::<Vec<_>>());
        max_gap = m.entries.iter().map(Annotation::area_gap).fold(max_gap, f64::max);
        total += m.entries.len();

        if name == MANIFEST {
            if let Some(c) = &config {
                let expected = c.n_leaves * c.passes_per_leaf;
                if m.entries.len() != expected {
                    violations.push(v(name, None, "count", format!("{} entries, config implies {expected}", m.entries.len())));
                }
            }
            let mut per_leaf: BTreeMap<usize, Vec<&Annotation>> = BTreeMap::new();
            for a in &m.entries {
                if a.provenance != Provenance::Rendered {
                    violations.push(v(name, Some(&a.id), "provenance", "source manifest entry is not `rendered`"));
                }
                if let Some(i) = leaf_index_of(&a.id) {
                    per_leaf.entry(i).or_default().push(a);
                }
            }
            for (i, group) in per_leaf {
                let first = group[0];
                if group.iter().any(|a| a.mask_pixel_count != first.mask_pixel_count || a.gamma != first.gamma || a.surface_area_mm2 != first.surface_area_mm2) {
                    violations.push(v(name, None, "passes", format!("passes of leaf {i} disagree on mask, scale or area")));
                }
            }
            main_entries = m.entries.into_iter().map(|a| (a.id.clone(), a)).collect();
        } else {
            // Derived manifests never alter labels.
            for a in &m.entries {
                match main_entries.get(&a.id) {
                    None => violations.push(v(name, Some(&a.id), "subset", "entry not in manifest.jsonl")),
                    Some(orig) => {
                        let mut b = a.clone();
                        b.provenance = orig.provenance;
                        b.inpainted_path = orig.inpainted_path.clone();
                        if &b != orig {
                            violations.push(v(name, Some(&a.id), "labels", "annotation differs from manifest.jsonl"));
                        }
                    }
                }
            }
        }
    }
    Ok(ValidationReport { manifests: names, entries: total, max_area_gap: max_gap, violations })
}

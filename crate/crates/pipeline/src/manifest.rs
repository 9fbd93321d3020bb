//! JSON Lines manifests: a header line followed by one annotation per line.

use crate::error::{PipelineError, Result};
use crate::io::write_atomic;
use leafgen_core::annotate::Annotation;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const MANIFEST: &str = "manifest.jsonl";
pub const PARTIAL_MANIFEST: &str = "manifest.partial.jsonl";
pub const INPAINTED_MANIFEST: &str = "manifest.inpainted.jsonl";
pub const FILTERED_MANIFEST: &str = "manifest.filtered.jsonl";
pub const REJECTED_MANIFEST: &str = "manifest.rejected.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub config_hash: String,
    pub tool_version: String,
    pub created_at: String,
}

impl ManifestHeader {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.into(),
            tool_version: TOOL_VERSION.into(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub entries: Vec<Annotation>,
}

impl DatasetManifest {
    /// Entries are sorted by id.
    pub fn new(header: ManifestHeader, mut entries: Vec<Annotation>) -> Self {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Self { header, entries }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = serde_json::to_string(&self.header)?;
        s.push('\n');
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| PipelineError::Validation("manifest is empty".into()))?;
        let header: ManifestHeader = serde_json::from_str(first)
            .map_err(|e| PipelineError::Validation(format!("manifest header: {e}")))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(PipelineError::Validation(format!(
                "unsupported manifest schema_version {} (expected {SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let entries = lines
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| PipelineError::Validation(format!("manifest line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<Annotation>>>()?;
        Ok(Self { header, entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    /// Ids that occur more than once.
    pub fn duplicate_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut dup: Vec<String> = self.entries.iter().filter(|e| !seen.insert(e.id.as_str())).map(|e| e.id.clone()).collect();
        dup.sort();
        dup.dedup();
        dup
    }
}

/// Append-only annotation log used while a run is in progress.
pub struct PartialLog {
    file: std::fs::File,
}

impl PartialLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| PipelineError::io(path, e))?;
        Ok(Self { file })
    }

    /// Appends a leaf's records in one write so that a crash leaves whole lines.
    pub fn append(&mut self, entries: &[Annotation]) -> Result<()> {
        let mut buf = String::new();
        for e in entries {
            buf.push_str(&serde_json::to_string(e)?);
            buf.push('\n');
        }
        self.file
            .write_all(buf.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| PipelineError::io(PARTIAL_MANIFEST, e))
    }

    /// Reads every complete, parseable line; a torn final line is ignored.
    pub fn read(path: &Path) -> Result<Vec<Annotation>> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(PipelineError::io(path, e)),
        };
        Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use leafgen_core::annotate::Provenance;
    use leafgen_core::paper::PaperPalette;
    use leafgen_core::scene::{Lighting, ShadowParams};
    use leafgen_core::{Species, Vec2};

    pub(crate) fn entry(id: &str, area: f64) -> Annotation {
        Annotation {
            id: id.into(),
            species: Species::Beech,
            seed: 0xDEAD_BEEF_0000_0001,
            gamma: 1.234_567_890_123,
            mm_per_pixel: 0.1 + 0.2,
            surface_area_mm2: area * 1.01,
            projected_area_mm2: area,
            petiole_area_mm2: 0.0,
            hole_count: 0,
            mask_pixel_count: 100,
            width: 64,
            height: 64,
            image_path: format!("images/{id}.png"),
            mask_path: format!("masks/{id}.png"),
            edge_path: format!("edges/{id}.png"),
            pass_index: 1,
            provenance: Provenance::Rendered,
            inpainted_path: None,
            paper_palette: PaperPalette { base: [1.0 / 3.0, 2.0, 3.0], ink: [0.1, 0.2, 0.3] },
            shadow: ShadowParams { strength: 0.3, offset_mm: Vec2::new(0.7, -1.9), size_mm: 1.1 },
            lighting: Lighting::OVERHEAD,
        }
    }

    #[test]
    fn round_trip_is_exact_and_sorted() {
        let m = DatasetManifest::new(ManifestHeader::new("abc"), vec![entry("000002_0", 9.0), entry("000001_3", 1.0 / 7.0)]);
        assert_eq!(m.entries[0].id, "000001_3");
        let text = m.to_jsonl().unwrap();
        let back = DatasetManifest::parse(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_jsonl().unwrap(), text);
        assert!(m.duplicate_ids().is_empty());
    }

    #[test]
    fn rejects_unknown_schema() {
        let mut h = ManifestHeader::new("x");
        h.schema_version = 99;
        let text = serde_json::to_string(&h).unwrap();
        assert!(DatasetManifest::parse(&text).is_err());
        assert!(DatasetManifest::parse("").is_err());
    }

    #[test]
    fn partial_log_skips_torn_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(PARTIAL_MANIFEST);
        PartialLog::open(&p).unwrap().append(&[entry("a", 1.0), entry("b", 2.0)]).unwrap();
        std::fs::OpenOptions::new().append(true).open(&p).unwrap().write_all(b"{\"id\":\"c\",").unwrap();
        let got = PartialLog::read(&p).unwrap();
        assert_eq!(got.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
    }
}

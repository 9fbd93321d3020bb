//! Run configuration: TOML file, dotted overrides, hashing and seed derivation.

use crate::error::{PipelineError, Result};
use leafgen_core::edges::{CannyParams, EdgeMode};
use leafgen_core::leaf::LeafSampling;
use leafgen_core::metrics::DeviationMetric;
use leafgen_core::rng::{hash_words, tag_hash};
use leafgen_core::scene::{DistractorSampling, PassSampling, PASSES_PER_LEAF};
use leafgen_core::{NoiseSeed, Species};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// World width framed at gamma = 1.
    pub camera_extent_mm: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Minimum clearance between the leaf and the frame border.
    pub margin_mm: f64,
    pub distractors: DistractorSampling,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            camera_extent_mm: 160.0,
            gamma_min: 1.0,
            gamma_max: 1.5,
            margin_mm: 3.0,
            distractors: DistractorSampling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub mode: EdgeMode,
    pub gaussian_sigma: f64,
    pub low_threshold: f64,
    pub high_threshold: f64,
    /// Image edges are kept within this many pixels of the mask.
    pub dilate_px: usize,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        let c = CannyParams::default();
        Self {
            mode: EdgeMode::default(),
            gaussian_sigma: c.gaussian_sigma,
            low_threshold: c.low_threshold,
            high_threshold: c.high_threshold,
            dilate_px: 3,
        }
    }
}

impl EdgeConfig {
    pub fn canny(&self) -> CannyParams {
        CannyParams {
            gaussian_sigma: self.gaussian_sigma,
            low_threshold: self.low_threshold,
            high_threshold: self.high_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InpaintConfig {
    /// `http://...` or `mock:identity`, `mock:perturb`, `mock:flaky:N`, `mock:down`.
    pub endpoint: String,
    pub timeout_secs: f64,
    /// Retries after the first attempt.
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub steps: u32,
    pub guidance: f64,
    /// `{species}` is replaced by the species name.
    pub prompt_template: String,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            endpoint: "mock:identity".into(),
            timeout_secs: 120.0,
            retries: 3,
            backoff_ms: 250,
            max_in_flight: 4,
            steps: 30,
            guidance: 7.5,
            prompt_template: "{species} leaf on millimeter paper".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub threshold: f64,
    pub deviation_metric: DeviationMetric,
    /// `baseline` or a directory of `<id>.png` predicted masks.
    pub predictions: String,
    pub chroma_threshold: f64,
    /// Number of rejected datapoints rendered into the report gallery.
    pub gallery_limit: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            threshold: leafgen_core::metrics::DEFAULT_THRESHOLD,
            deviation_metric: DeviationMetric::default(),
            predictions: "baseline".into(),
            chroma_threshold: leafgen_core::metrics::SegmentParams::default().chroma_threshold,
            gallery_limit: 24,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesMix {
    pub beech: f64,
    pub oak: f64,
}

impl Default for SpeciesMix {
    fn default() -> Self {
        Self { beech: 0.5, oak: 0.5 }
    }
}

impl SpeciesMix {
    pub fn weight(&self, s: Species) -> f64 {
        match s {
            Species::Beech => self.beech,
            Species::Oak => self.oak,
        }
    }

    /// Categorical draw from a uniform `u` in `[0, 1)`.
    pub fn pick(&self, u: f64) -> Species {
        let mut acc = 0.0;
        for s in Species::ALL {
            acc += self.weight(s);
            if u < acc {
                return s;
            }
        }
        *Species::ALL.iter().rev().find(|s| self.weight(**s) > 0.0).unwrap_or(&Species::ALL[0])
    }

    /// Parses `beech=0.7,oak=0.3`; unnamed species get weight 0.
    pub fn parse(s: &str) -> Result<Self> {
        let mut mix = SpeciesMix { beech: 0.0, oak: 0.0 };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| PipelineError::Usage(format!("species mix entry `{part}` is not name=weight")))?;
            let species: Species = k.trim().parse().map_err(|e| PipelineError::Usage(format!("{e}")))?;
            let w: f64 = v
                .trim()
                .parse()
                .map_err(|_| PipelineError::Usage(format!("species weight `{v}` is not a number")))?;
            match species {
                Species::Beech => mix.beech = w,
                Species::Oak => mix.oak = w,
            }
        }
        Ok(mix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    /// Kept within the signed 64-bit range so the TOML echo round-trips.
    pub master_seed: u64,
    pub n_leaves: usize,
    pub passes_per_leaf: usize,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Reseeded build attempts per leaf before it is recorded as failed.
    pub max_attempts: usize,
    /// Also write each leaf mesh as OBJ under `meshes/`.
    pub write_meshes: bool,
    pub species_mix: SpeciesMix,
    pub render: RenderConfig,
    pub passes: PassSampling,
    pub leaf: LeafSampling,
    pub edges: EdgeConfig,
    pub inpaint: InpaintConfig,
    pub filter: FilterConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            master_seed: 1,
            n_leaves: 25,
            passes_per_leaf: PASSES_PER_LEAF,
            output_dir: PathBuf::from("dataset"),
            jobs: 0,
            max_attempts: 8,
            write_meshes: false,
            species_mix: SpeciesMix::default(),
            render: RenderConfig::default(),
            passes: PassSampling::default(),
            leaf: LeafSampling::default(),
            edges: EdgeConfig::default(),
            inpaint: InpaintConfig::default(),
            filter: FilterConfig::default(),
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(cfg_err(msg()))
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.master_seed <= i64::MAX as u64, || "master_seed must fit in 63 bits".into())?;
        check(self.n_leaves > 0, || "n_leaves must be > 0".into())?;
        check((1..=PASSES_PER_LEAF).contains(&self.passes_per_leaf), || {
            format!("passes_per_leaf must be in 1..={PASSES_PER_LEAF}")
        })?;
        check(self.max_attempts > 0, || "max_attempts must be > 0".into())?;
        let m = &self.species_mix;
        check(m.beech >= 0.0 && m.oak >= 0.0, || "species weights must be >= 0".into())?;
        check(((m.beech + m.oak) - 1.0).abs() <= 1e-9, || {
            format!("species_mix must sum to 1, got {}", m.beech + m.oak)
        })?;
        let r = &self.render;
        check(r.width >= 16 && r.height >= 16, || "resolution must be at least 16x16".into())?;
        check(r.camera_extent_mm > 0.0 && r.camera_extent_mm.is_finite(), || "camera_extent_mm must be > 0".into())?;
        check(r.gamma_min > 0.0 && r.gamma_min <= r.gamma_max && r.gamma_max.is_finite(), || {
            format!("gamma range ({}, {}) is invalid", r.gamma_min, r.gamma_max)
        })?;
        check(r.margin_mm >= 0.0, || "margin_mm must be >= 0".into())?;
        check((0.0..=1.0).contains(&r.distractors.glass_probability), || "glass_probability must be in [0, 1]".into())?;
        check(r.distractors.scale.0 > 0.0 && r.distractors.scale.0 <= r.distractors.scale.1, || {
            "distractor scale range is invalid".into()
        })?;
        self.passes.validate().map_err(|e| cfg_err(format!("passes: {e}")))?;
        self.leaf.validate().map_err(|e| cfg_err(format!("leaf: {e}")))?;
        self.edges.canny().validate().map_err(|e| cfg_err(format!("edges: {e}")))?;
        let i = &self.inpaint;
        check(i.timeout_secs > 0.0 && i.timeout_secs.is_finite(), || "inpaint.timeout_secs must be > 0".into())?;
        check(i.max_in_flight > 0, || "inpaint.max_in_flight must be > 0".into())?;
        check(!i.endpoint.is_empty(), || "inpaint.endpoint is empty".into())?;
        let f = &self.filter;
        check(f.threshold >= 0.0 && f.threshold.is_finite(), || "filter.threshold must be >= 0".into())?;
        check(f.chroma_threshold > 0.0, || "filter.chroma_threshold must be > 0".into())?;
        Ok(())
    }

    /// Parses a TOML document layered over the defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::layered(Some(text), &[])
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| cfg_err(format!("{}: {e}", p.display())))?),
            None => None,
        };
        Self::layered(text.as_deref(), overrides)
    }

    /// Defaults, then the file, then `key.path=value` overrides.
    pub fn layered(text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut root = toml::Value::try_from(GenerationConfig::default()).map_err(|e| PipelineError::Internal(e.to_string()))?;
        if let Some(text) = text {
            let file: toml::Table = text.parse().map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
            merge(&mut root, toml::Value::Table(file), "")?;
        }
        for (key, value) in overrides {
            set_dotted(&mut root, key, value)?;
        }
        let cfg: GenerationConfig = root.try_into().map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| PipelineError::Internal(e.to_string()))
    }

    /// SHA-256 over the key-sorted JSON of every field that affects content.
    /// `output_dir` and `jobs` are excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
            map.remove("jobs");
        }
        let bytes = serde_json::to_vec(&v).expect("value serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn canny(&self) -> CannyParams {
        self.edges.canny()
    }
}

/// Recursively overlays `src` on `dst`. Unknown keys are kept so that
/// deserialization reports them.
fn merge(dst: &mut toml::Value, src: toml::Value, path: &str) -> Result<()> {
    match (dst, src) {
        (toml::Value::Table(d), toml::Value::Table(s)) => {
            for (k, v) in s {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match d.get_mut(&k) {
                    Some(existing) if existing.is_table() => merge(existing, v, &sub)?,
                    _ => {
                        d.insert(k, v);
                    }
                }
            }
            Ok(())
        }
        (d, s) => {
            *d = s;
            Ok(())
        }
    }
}

/// Sets an existing dotted key. The value is read as a TOML literal when it
/// parses as one, otherwise as a bare string.
pub fn set_dotted(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| cfg_err(format!("`{}` is not a table", parts[..i].join("."))))?;
        cur = table.get_mut(*part).ok_or_else(|| cfg_err(format!("unknown config key `{key}`")))?;
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    // Integers given where floats are expected.
    let value = match (&*cur, value) {
        (toml::Value::Float(_), toml::Value::Integer(n)) => toml::Value::Float(n as f64),
        (_, v) => v,
    };
    *cur = value;
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| PipelineError::Usage(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Stable per-leaf, per-stage seed.
pub fn derive_seed(master_seed: u64, leaf_index: u64, stage_tag: &str) -> NoiseSeed {
    NoiseSeed(hash_words(&[master_seed, leaf_index, tag_hash(stage_tag)]))
}

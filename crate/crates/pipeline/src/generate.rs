//! Dataset generation: per-leaf rendering, file layout, resume.

use crate::config::{derive_seed, GenerationConfig};
use crate::error::{PipelineError, Result};
use crate::io::{write_atomic, write_mask_png, write_rgb_png};
use crate::manifest::{DatasetManifest, ManifestHeader, PartialLog, MANIFEST, PARTIAL_MANIFEST};
use leafgen_core::annotate::{annotate_datapoint, Annotation, AnnotationMeta};
use leafgen_core::edges::edge_map;
use leafgen_core::leaf::{build_leaf, sample_pose, Leaf, LeafParams};
use leafgen_core::paper::{render_paper, PaperParams, PaperSheet};
use leafgen_core::rng::{stream, unit_f64};
use leafgen_core::scene::{place_distractors, render_mask, render_passes_with, LeafPose, RenderedDatapoint, SceneParams};
use leafgen_core::{BinaryMask, NoiseSeed, Species, Vec2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";
pub const EDGES_DIR: &str = "edges";
pub const MESHES_DIR: &str = "meshes";
pub const INPAINTED_DIR: &str = "inpainted";
pub const REPORT_DIR: &str = "report";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const ERRORS_LOG: &str = "errors.jsonl";

pub fn datapoint_id(leaf_index: usize, pass_index: usize) -> String {
    format!("{leaf_index:06}_{pass_index}")
}

/// Leaf index parsed back from a datapoint id.
pub fn leaf_index_of(id: &str) -> Option<usize> {
    id.split_once('_').and_then(|(l, _)| l.parse().ok())
}

pub fn leaf_species(cfg: &GenerationConfig, leaf_index: usize) -> Species {
    cfg.species_mix.pick(unit_f64(derive_seed(cfg.master_seed, leaf_index as u64, "species").0))
}

/// Everything rendered for one leaf, held in memory.
#[derive(Debug, Clone)]
pub struct RenderedLeaf {
    pub leaf_index: usize,
    pub attempt: usize,
    pub seed: NoiseSeed,
    pub leaf: Leaf,
    pub paper: PaperSheet,
    pub scene: SceneParams,
    pub datapoints: Vec<RenderedDatapoint>,
    pub edges: Vec<BinaryMask>,
    pub annotations: Vec<Annotation>,
}

fn pick(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// One reseeded attempt at a leaf; any core error means "try the next seed".
pub fn render_attempt(cfg: &GenerationConfig, leaf_index: usize, attempt: usize) -> leafgen_core::Result<RenderedLeaf> {
    let species = leaf_species(cfg, leaf_index);
    let seed = derive_seed(cfg.master_seed, leaf_index as u64, "leaf").derive_index("attempt", attempt as u64);
    let params = LeafParams::sample(species, seed.derive("params"), &cfg.leaf)?;
    let leaf = build_leaf(&params)?;

    let r = &cfg.render;
    let gamma = pick(&mut stream(seed.0, "gamma", 0), r.gamma_min, r.gamma_max);
    let mut scene = SceneParams {
        gamma,
        camera_extent_mm: r.camera_extent_mm,
        width: r.width,
        height: r.height,
        pose: LeafPose { translation_mm: Vec2::new(0.0, 0.0), rotation: 0.0 },
        distractors: Vec::new(),
    };
    let extent = scene.world_extent();
    scene.pose = sample_pose(&leaf.surface, extent, r.margin_mm, seed.derive("pose"))?;
    let mask = render_mask(&leaf.surface, &scene)?;
    scene.distractors = place_distractors(&mask, &scene, &r.distractors, seed.derive("distractors"));

    // The sheet is rendered at output resolution so the scene samples it 1:1.
    let paper_params = PaperParams::sample(seed.derive("paper"));
    let paper = render_paper(&paper_params, extent.x, extent.y, 1.0 / scene.mm_per_pixel(), seed.derive("paper"))?;
    let palette = paper.palette();

    let mut datapoints = render_passes_with(&leaf.surface, &paper, &scene, seed.derive("passes"), &cfg.passes)?;
    datapoints.truncate(cfg.passes_per_leaf);
    let canny = cfg.canny();
    let mut edges = Vec::with_capacity(datapoints.len());
    let mut annotations = Vec::with_capacity(datapoints.len());
    for dp in &datapoints {
        let id = datapoint_id(leaf_index, dp.pass_index);
        edges.push(edge_map(&dp.image, &dp.mask, cfg.edges.mode, &canny, cfg.edges.dilate_px)?);
        let meta = AnnotationMeta {
            image_path: format!("{IMAGES_DIR}/{id}.png"),
            mask_path: format!("{MASKS_DIR}/{id}.png"),
            edge_path: format!("{EDGES_DIR}/{id}.png"),
            id,
            seed: seed.0,
            paper_palette: palette,
            hole_count: leaf.surface.holes.len(),
        };
        annotations.push(annotate_datapoint(dp, &leaf.mesh, meta)?);
    }
    Ok(RenderedLeaf { leaf_index, attempt, seed, leaf, paper, scene, datapoints, edges, annotations })
}

/// Renders a leaf, reseeding up to `max_attempts` times.
pub fn render_leaf(cfg: &GenerationConfig, leaf_index: usize) -> Result<RenderedLeaf> {
    let mut last = None;
    for attempt in 0..cfg.max_attempts {
        match render_attempt(cfg, leaf_index, attempt) {
            Ok(r) => {
                if attempt > 0 {
                    log::debug!("leaf {leaf_index}: succeeded on attempt {}", attempt + 1);
                }
                return Ok(r);
            }
            Err(e) => {
                log::debug!("leaf {leaf_index}: attempt {} failed: {e}", attempt + 1);
                last = Some(e);
            }
        }
    }
    Err(PipelineError::Generation(last.expect("max_attempts > 0")))
}

fn write_leaf(out: &Path, r: &RenderedLeaf, write_mesh: bool) -> Result<()> {
    for ((dp, edges), a) in r.datapoints.iter().zip(&r.edges).zip(&r.annotations) {
        write_rgb_png(&out.join(&a.image_path), &dp.image)?;
        write_mask_png(&out.join(&a.mask_path), &dp.mask)?;
        write_mask_png(&out.join(&a.edge_path), edges)?;
    }
    if write_mesh {
        let p = out.join(MESHES_DIR).join(format!("{:06}.obj", r.leaf_index));
        write_atomic(&p, r.leaf.mesh.to_obj().as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafFailure {
    pub leaf_index: usize,
    pub category: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    /// Stop after this many newly rendered leaves without writing the final
    /// manifest, as if interrupted.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub output_dir: PathBuf,
    pub resumed_leaves: usize,
    pub rendered_leaves: usize,
    pub failures: Vec<LeafFailure>,
    /// Set when every leaf was processed and `manifest.jsonl` was written.
    pub manifest: Option<DatasetManifest>,
}

fn files_exist(out: &Path, a: &Annotation) -> bool {
    [&a.image_path, &a.mask_path, &a.edge_path].iter().all(|p| out.join(p).is_file())
}

/// Annotations from earlier runs whose leaves are complete on disk.
fn completed_leaves(cfg: &GenerationConfig, hash: &str) -> Result<BTreeMap<usize, Vec<Annotation>>> {
    let out = &cfg.output_dir;
    let mut found: Vec<Annotation> = Vec::new();
    let manifest_path = out.join(MANIFEST);
    if manifest_path.is_file() {
        let m = DatasetManifest::read(&manifest_path)?;
        if m.header.config_hash != hash {
            return Err(PipelineError::Config(format!(
                "{} was produced by a different configuration; use a fresh --out",
                manifest_path.display()
            )));
        }
        found.extend(m.entries);
    }
    found.extend(PartialLog::read(&out.join(PARTIAL_MANIFEST))?);
    let mut by_leaf: BTreeMap<usize, BTreeMap<String, Annotation>> = BTreeMap::new();
    for a in found {
        if let Some(i) = leaf_index_of(&a.id) {
            if i < cfg.n_leaves && files_exist(out, &a) {
                by_leaf.entry(i).or_default().insert(a.id.clone(), a);
            }
        }
    }
    Ok(by_leaf
        .into_iter()
        .filter(|(_, v)| v.len() == cfg.passes_per_leaf)
        .map(|(i, v)| (i, v.into_values().collect()))
        .collect())
}

fn check_snapshot(out: &Path, hash: &str) -> Result<()> {
    let p = out.join(CONFIG_SNAPSHOT);
    if !p.is_file() {
        return Ok(());
    }
    let text = std::fs::read_to_string(&p).map_err(|e| PipelineError::io(&p, e))?;
    let old = GenerationConfig::from_toml(&text)?;
    if old.hash() != hash {
        return Err(PipelineError::Config(format!(
            "{} holds a run with a different configuration; use a fresh --out",
            out.display()
        )));
    }
    Ok(())
}

fn make_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PipelineError::Internal(format!("thread pool: {e}")))
}

/// Generates (or resumes) the dataset described by `cfg`.
pub fn generate(cfg: &GenerationConfig, opts: &GenerateOptions) -> Result<GenerateSummary> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    let hash = cfg.hash();
    std::fs::create_dir_all(&out).map_err(|e| PipelineError::io(&out, e))?;
    check_snapshot(&out, &hash)?;
    write_atomic(&out.join(CONFIG_SNAPSHOT), cfg.to_toml()?.as_bytes())?;

    let done = completed_leaves(cfg, &hash)?;
    // Rewrite the log with whole leaves only, dropping torn or partial tails.
    let partial_path = out.join(PARTIAL_MANIFEST);
    let kept: Vec<Annotation> = done.values().flatten().cloned().collect();
    let mut text = String::new();
    for a in &kept {
        text.push_str(&serde_json::to_string(a)?);
        text.push('\n');
    }
    write_atomic(&partial_path, text.as_bytes())?;

    let mut pending: Vec<usize> = (0..cfg.n_leaves).filter(|i| !done.contains_key(i)).collect();
    let interrupted = opts.limit.is_some_and(|k| k < pending.len());
    if let Some(k) = opts.limit {
        pending.truncate(k);
    }
    log::info!(
        "generating {} leaves ({} already complete) into {}",
        pending.len(),
        done.len(),
        out.display()
    );

    let log_file = Mutex::new(PartialLog::open(&partial_path)?);
    let fresh: Mutex<Vec<Annotation>> = Mutex::new(Vec::new());
    let failures: Mutex<Vec<LeafFailure>> = Mutex::new(Vec::new());
    let pool = make_pool(cfg.jobs)?;
    pool.install(|| {
        pending.par_iter().for_each(|&i| {
            let result = render_leaf(cfg, i).and_then(|r| {
                write_leaf(&out, &r, cfg.write_meshes)?;
                log_file.lock().expect("log lock").append(&r.annotations)?;
                Ok(r.annotations)
            });
            match result {
                Ok(anns) => fresh.lock().expect("lock").extend(anns),
                Err(e) => {
                    log::warn!("leaf {i} failed: {e}");
                    failures.lock().expect("lock").push(LeafFailure {
                        leaf_index: i,
                        category: e.category().into(),
                        message: e.to_string(),
                    });
                }
            }
        })
    });
    drop(log_file);
    let fresh = fresh.into_inner().expect("lock");
    let mut failures = failures.into_inner().expect("lock");
    failures.sort_by_key(|f| f.leaf_index);
    let rendered_leaves = fresh.len() / cfg.passes_per_leaf;

    let errors_path = out.join(ERRORS_LOG);
    if failures.is_empty() {
        let _ = std::fs::remove_file(&errors_path);
    } else {
        let mut text = String::new();
        for f in &failures {
            text.push_str(&serde_json::to_string(f)?);
            text.push('\n');
        }
        write_atomic(&errors_path, text.as_bytes())?;
    }

    let manifest = if interrupted {
        None
    } else {
        let entries: Vec<Annotation> = kept.into_iter().chain(fresh).collect();
        let m = DatasetManifest::new(ManifestHeader::new(hash), entries);
        m.write(&out.join(MANIFEST))?;
        let _ = std::fs::remove_file(&partial_path);
        log::info!("wrote {} datapoints to {}", m.entries.len(), out.join(MANIFEST).display());
        Some(m)
    };
    Ok(GenerateSummary { output_dir: out, resumed_leaves: done.len(), rendered_leaves, failures, manifest })
}

/// World-space size of the frame for a datapoint, in mm.
pub fn frame_extent_mm(a: &Annotation) -> Vec2 {
    Vec2::new(a.width as f64 * a.mm_per_pixel, a.height as f64 * a.mm_per_pixel)
}

/// Recomputes edge maps for every datapoint of `manifest.jsonl` into `dest`
/// (relative to the dataset). Returns the number of maps written.
pub fn rebuild_edges(out: &Path, edges: &crate::config::EdgeConfig, dest: &str, jobs: usize) -> Result<usize> {
    let m = DatasetManifest::read(&out.join(MANIFEST))?;
    let canny = edges.canny();
    canny.validate()?;
    let pool = make_pool(jobs)?;
    pool.install(|| {
        m.entries.par_iter().try_for_each(|a| -> Result<()> {
            let img = crate::io::read_rgb_png(&out.join(&a.image_path))?;
            let mask = crate::io::read_mask_png(&out.join(&a.mask_path))?;
            let e = edge_map(&img, &mask, edges.mode, &canny, edges.dilate_px)?;
            write_mask_png(&out.join(dest).join(format!("{}.png", a.id)), &e)
        })
    })?;
    Ok(m.entries.len())
}

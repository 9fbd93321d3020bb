//! Browser bindings for a few leafgen-core operations. Every function returns
//! RGBA bytes sized `size * size * 4`, ready for `ImageData`.

use leafgen_core::edges::{edge_map, CannyParams, EdgeMode};
use leafgen_core::leaf::{build_leaf, sample_pose, LeafParams, LeafSampling};
use leafgen_core::paper::{render_paper, PaperParams};
use leafgen_core::scene::{render_passes, LeafPose, RenderedDatapoint, SceneParams};
use leafgen_core::{NoiseSeed, Species, Vec2};
use wasm_bindgen::prelude::*;

const EXTENT_MM: f64 = 160.0;
const GAMMA: f64 = 1.2;
const MARGIN_MM: f64 = 3.0;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn check_size(size: u32) -> Result<usize, JsError> {
    if !(32..=1024).contains(&size) {
        return Err(JsError::new("size must be between 32 and 1024 pixels"));
    }
    Ok(size as usize)
}

fn scene_for(size: usize) -> SceneParams {
    SceneParams {
        gamma: GAMMA,
        camera_extent_mm: EXTENT_MM,
        width: size,
        height: size,
        pose: LeafPose { translation_mm: Vec2::new(0.0, 0.0), rotation: 0.0 },
        distractors: Vec::new(),
    }
}

fn render(species: &str, seed: u32, size: usize, pass: u32) -> Result<RenderedDatapoint, JsError> {
    let species: Species = species.parse().map_err(js)?;
    let seed = NoiseSeed(seed as u64);
    let leaf = build_leaf(&LeafParams::sample(species, seed.derive("params"), &LeafSampling::default()).map_err(js)?).map_err(js)?;
    let mut scene = scene_for(size);
    let extent = scene.world_extent();
    scene.pose = sample_pose(&leaf.surface, extent, MARGIN_MM, seed.derive("pose")).map_err(js)?;
    let paper = render_paper(&PaperParams::sample(seed.derive("paper")), extent.x, extent.y, 1.0 / scene.mm_per_pixel(), seed.derive("paper"))
        .map_err(js)?;
    let mut passes = render_passes(&leaf.surface, &paper, &scene, seed.derive("passes")).map_err(js)?;
    let i = (pass as usize).min(passes.len() - 1);
    Ok(passes.swap_remove(i))
}

/// A millimeter-paper sheet covering the default camera footprint.
#[wasm_bindgen]
pub fn paper_preview(seed: u32, size: u32) -> Result<Vec<u8>, JsError> {
    let size = check_size(size)?;
    let scene = scene_for(size);
    let extent = scene.world_extent();
    let seed = NoiseSeed(seed as u64);
    let sheet = render_paper(&PaperParams::sample(seed), extent.x, extent.y, 1.0 / scene.mm_per_pixel(), seed).map_err(js)?;
    Ok(sheet.image.to_rgba())
}

/// One rendered pass (0..4) of a sampled leaf on paper.
#[wasm_bindgen]
pub fn leaf_preview(species: &str, seed: u32, size: u32, pass: u32) -> Result<Vec<u8>, JsError> {
    Ok(render(species, seed, check_size(size)?, pass)?.image.to_rgba())
}

/// Conditioning edge map of the same render, white on black.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn edges_preview(species: &str, seed: u32, size: u32, pass: u32, mode: &str, sigma: f64, low: f64, high: f64) -> Result<Vec<u8>, JsError> {
    let dp = render(species, seed, check_size(size)?, pass)?;
    let mode: EdgeMode = mode.parse().map_err(js)?;
    let params = CannyParams { gaussian_sigma: sigma, low_threshold: low, high_threshold: high };
    let edges = edge_map(&dp.image, &dp.mask, mode, &params, 3).map_err(js)?;
    Ok(edges.to_image().to_rgba())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn previews_have_rgba_size() {
        assert_eq!(paper_preview(3, 64).unwrap().len(), 64 * 64 * 4);
        assert_eq!(leaf_preview("oak", 3, 96, 1).unwrap().len(), 96 * 96 * 4);
        let e = edges_preview("beech", 3, 96, 0, "combined", 1.4, 40.0, 100.0).unwrap();
        assert_eq!(e.len(), 96 * 96 * 4);
        assert!(e.chunks(4).any(|p| p[0] == 255), "no edges drawn");
    }

    #[test]
    fn same_seed_same_pixels() {
        assert_eq!(leaf_preview("beech", 11, 64, 2).unwrap(), leaf_preview("beech", 11, 64, 2).unwrap());
    }
}

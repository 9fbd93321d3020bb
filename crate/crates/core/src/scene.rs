//! Orthographic top-down compositing of a shaded leaf onto millimeter paper.
//!
//! World coordinates are millimeters with the origin at the top-left image
//! corner; pixel `(x, y)` has its center at `((x + 0.5) * mpp, (y + 0.5) * mpp)`.

use crate::error::{ensure, Error, Result};
use crate::geom::{point_in_polygon, distance_to_segment, Rect, Vec2, Vec3};
use crate::leaf_texture::{shade, LeafSurface};
use crate::noise::NoiseSeed;
use crate::paper::PaperSheet;
use crate::raster::{BinaryMask, Field, RasterImage, Rgb};
use crate::rng::stream;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Number of appearance passes rendered per leaf.
pub const PASSES_PER_LEAF: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowParams {
    pub strength: f64,
    pub offset_mm: Vec2,
    /// Gaussian blur sigma in mm.
    pub size_mm: f64,
}

impl ShadowParams {
    pub const NONE: ShadowParams = ShadowParams { strength: 0.0, offset_mm: Vec2::ZERO, size_mm: 0.0 };

    pub fn validate(&self) -> Result<()> {
        ensure((0.0..=1.0).contains(&self.strength), || format!("shadow strength must be in [0, 1], got {}", self.strength))?;
        ensure(self.offset_mm.is_finite(), || "shadow offset must be finite".into())?;
        ensure(self.size_mm >= 0.0 && self.size_mm.is_finite(), || "shadow size must be >= 0".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub direction: Vec3,
    pub ambient: f64,
}

impl Lighting {
    pub const OVERHEAD: Lighting = Lighting { direction: Vec3 { x: 0.0, y: 0.0, z: 1.0 }, ambient: 0.5 };
}

/// Rigid placement of the leaf-local frame in the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafPose {
    pub translation_mm: Vec2,
    pub rotation: f64,
}

impl LeafPose {
    pub fn to_world(&self, p: Vec2) -> Vec2 {
        p.rotate(self.rotation) + self.translation_mm
    }

    pub fn to_local(&self, w: Vec2) -> Vec2 {
        (w - self.translation_mm).rotate(-self.rotation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorKind {
    PaperFragment,
    GlassPane,
}

impl DistractorKind {
    /// Unscaled footprint in mm.
    pub fn base_size_mm(self) -> (f64, f64) {
        match self {
            DistractorKind::PaperFragment => (40.0, 30.0),
            DistractorKind::GlassPane => (60.0, 60.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistractorSpec {
    pub kind: DistractorKind,
    pub translation_mm: Vec2,
    pub rotation: f64,
    pub scale: (f64, f64),
    pub opacity: f64,
}

impl DistractorSpec {
    pub fn half_extent(&self) -> Vec2 {
        let (w, h) = self.kind.base_size_mm();
        Vec2::new(0.5 * w * self.scale.0, 0.5 * h * self.scale.1)
    }

    /// World-space corners, counter-clockwise.
    pub fn footprint(&self) -> [Vec2; 4] {
        let e = self.half_extent();
        [Vec2::new(-e.x, -e.y), Vec2::new(e.x, -e.y), Vec2::new(e.x, e.y), Vec2::new(-e.x, e.y)]
            .map(|c| c.rotate(self.rotation) + self.translation_mm)
    }

    fn to_local(&self, w: Vec2) -> Vec2 {
        (w - self.translation_mm).rotate(-self.rotation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Background scale; the physical width framed is `gamma * camera_extent_mm`.
    pub gamma: f64,
    pub camera_extent_mm: f64,
    pub width: usize,
    pub height: usize,
    pub pose: LeafPose,
    pub distractors: Vec<DistractorSpec>,
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.gamma > 0.0 && self.gamma.is_finite(), || format!("gamma must be > 0, got {}", self.gamma))?;
        ensure(self.camera_extent_mm > 0.0 && self.camera_extent_mm.is_finite(), || "camera extent must be > 0".into())?;
        ensure(self.width > 0 && self.height > 0, || "resolution must be positive".into())?;
        ensure(self.pose.translation_mm.is_finite() && self.pose.rotation.is_finite(), || "leaf pose must be finite".into())?;
        for d in &self.distractors {
            ensure((0.0..=1.0).contains(&d.opacity), || "distractor opacity must be in [0, 1]".into())?;
            ensure(d.scale.0 > 0.0 && d.scale.1 > 0.0, || "distractor scale must be > 0".into())?;
        }
        Ok(())
    }

    pub fn mm_per_pixel(&self) -> f64 {
        mm_per_pixel(self.gamma, self.camera_extent_mm, self.width)
    }

    pub fn world_extent(&self) -> Vec2 {
        let m = self.mm_per_pixel();
        Vec2::new(self.width as f64 * m, self.height as f64 * m)
    }

    pub fn pixel_center(&self, x: usize, y: usize) -> Vec2 {
        let m = self.mm_per_pixel();
        Vec2::new((x as f64 + 0.5) * m, (y as f64 + 0.5) * m)
    }
}

/// `gamma * camera_extent_mm / width_px`.
pub fn mm_per_pixel(gamma: f64, camera_extent_mm: f64, width_px: usize) -> f64 {
    gamma * camera_extent_mm / width_px as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedDatapoint {
    pub image: RasterImage,
    pub mask: BinaryMask,
    pub scene: SceneParams,
    pub shadow: ShadowParams,
    pub lighting: Lighting,
    pub pass_index: usize,
}

/// Leaf-local rectangle containing every texel with nonzero alpha.
pub fn alpha_bounds(leaf: &LeafSurface) -> Option<Rect> {
    let f = &leaf.frame;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for j in 0..f.height {
        for i in 0..f.width {
            if leaf.alpha.get(i, j) > 0.0 {
                x0 = x0.min(i);
                y0 = y0.min(j);
                x1 = x1.max(i + 1);
                y1 = y1.max(j + 1);
            }
        }
    }
    if x0 == usize::MAX {
        return None;
    }
    let t = f.texels_per_mm;
    Some(Rect::new(
        Vec2::new(f.origin.x + x0 as f64 / t, f.origin.y + y0 as f64 / t),
        Vec2::new(f.origin.x + x1 as f64 / t, f.origin.y + y1 as f64 / t),
    ))
}

/// Pixel rectangle `[x0, x1) x [y0, y1)` covering the posed leaf, expanded by
/// `margin_px`, clipped to the image. `None` for a fully transparent leaf.
fn leaf_pixel_window(leaf: &LeafSurface, scene: &SceneParams, margin_px: f64) -> Option<(usize, usize, usize, usize)> {
    let r = alpha_bounds(leaf)?;
    let world = Rect::bounding(r.corners().map(|c| scene.pose.to_world(c)))?;
    let m = scene.mm_per_pixel();
    let clip = |v: f64, n: usize| (v.max(0.0) as usize).min(n);
    let x0 = clip((world.min.x / m - margin_px).floor(), scene.width);
    let y0 = clip((world.min.y / m - margin_px).floor(), scene.height);
    let x1 = clip((world.max.x / m + margin_px).ceil(), scene.width);
    let y1 = clip((world.max.y / m + margin_px).ceil(), scene.height);
    Some((x0, y0, x1, y1))
}

/// Fails unless the posed leaf lies inside the framed region.
pub fn check_in_frame(leaf: &LeafSurface, scene: &SceneParams) -> Result<()> {
    let Some(r) = alpha_bounds(leaf) else { return Ok(()) };
    let ext = scene.world_extent();
    for c in r.corners() {
        let w = scene.pose.to_world(c);
        if !(w.x >= 0.0 && w.y >= 0.0 && w.x <= ext.x && w.y <= ext.y) {
            return Err(Error::Placement(format!(
                "leaf corner ({:.1}, {:.1}) mm lies outside the {:.1} x {:.1} mm frame",
                w.x, w.y, ext.x, ext.y
            )));
        }
    }
    Ok(())
}

fn leaf_alpha_at(leaf: &LeafSurface, local: Vec2) -> f64 {
    let t = leaf.frame.to_texel(local);
    leaf.alpha.sample_zero(t.x, t.y) as f64
}

/// Bilinear color sample with edge clamping; `(x, y)` in continuous pixel
/// coordinates with centers at integer + 0.5.
pub fn sample_rgb(img: &RasterImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = img.dims();
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let (c00, c10, c01, c11) = (img.get(x0, y0).to_f64(), img.get(x1, y0).to_f64(), img.get(x0, y1).to_f64(), img.get(x1, y1).to_f64());
    [0, 1, 2].map(|c| {
        let a = c00[c] + (c10[c] - c00[c]) * tx;
        let b = c01[c] + (c11[c] - c01[c]) * tx;
        a + (b - a) * ty
    })
}

/// Paper plus distractors, before shadow and leaf, in channel units.
pub fn render_background(paper: &PaperSheet, scene: &SceneParams) -> Vec<[f64; 3]> {
    let (w, h) = (scene.width, scene.height);
    let mut bg = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let p = scene.pixel_center(x, y);
            bg.push(paper.sample(p.x, p.y));
        }
    }
    let m = scene.mm_per_pixel();
    for d in &scene.distractors {
        let fp = d.footprint();
        let Some(r) = Rect::bounding(fp) else { continue };
        let x0 = ((r.min.x / m).floor().max(0.0) as usize).min(w);
        let x1 = ((r.max.x / m).ceil().max(0.0) as usize).min(w);
        let y0 = ((r.min.y / m).floor().max(0.0) as usize).min(h);
        let y1 = ((r.max.y / m).ceil().max(0.0) as usize).min(h);
        let e = d.half_extent();
        for y in y0..y1 {
            for x in x0..x1 {
                let p = scene.pixel_center(x, y);
                if !point_in_polygon(p, &fp) {
                    continue;
                }
                let q = d.to_local(p);
                // Distance to the nearest edge, in pixels.
                let edge_px = (e.x - q.x.abs()).min(e.y - q.y.abs()) / m;
                let px = &mut bg[y * w + x];
                let o = d.opacity;
                match d.kind {
                    DistractorKind::PaperFragment => {
                        let s = paper.sample(q.x + 13.7, q.y + 7.3);
                        let shade = if edge_px < 1.0 { 0.82 } else { 1.04 };
                        *px = [0, 1, 2].map(|c| px[c] + ((s[c] * shade).min(255.0) - px[c]) * o);
                    }
                    DistractorKind::GlassPane => {
                        let k = if edge_px < 1.0 { 0.6 } else { 0.22 };
                        *px = px.map(|v| v + (255.0 - v) * k * o);
                    }
                }
            }
        }
    }
    bg
}

/// Composites paper, distractors, the leaf's soft shadow and the shaded leaf.
pub fn compose_scene(
    leaf: &LeafSurface,
    paper: &PaperSheet,
    scene: &SceneParams,
    shadow: &ShadowParams,
    lighting: &Lighting,
) -> Result<RasterImage> {
    scene.validate()?;
    shadow.validate()?;
    check_in_frame(leaf, scene)?;
    let shaded = shade(leaf, lighting.direction, lighting.ambient)?;
    let mut bg = render_background(paper, scene);
    let (w, h) = (scene.width, scene.height);
    let m = scene.mm_per_pixel();

    if shadow.strength > 0.0 {
        let sigma_px = shadow.size_mm / m;
        let off_px = shadow.offset_mm.length() / m;
        if let Some((x0, y0, x1, y1)) = leaf_pixel_window(leaf, scene, off_px + 3.0 * sigma_px + 3.0) {
            let mut s = Field::new(x1 - x0, y1 - y0);
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = scene.pixel_center(x, y) - shadow.offset_mm;
                    s.set(x - x0, y - y0, leaf_alpha_at(leaf, scene.pose.to_local(p)) as f32);
                }
            }
            let s = s.gaussian_blur(sigma_px);
            for y in y0..y1 {
                for x in x0..x1 {
                    let a = s.get(x - x0, y - y0) as f64;
                    if a > 0.0 {
                        let k = 1.0 - shadow.strength * a.min(1.0);
                        bg[y * w + x] = bg[y * w + x].map(|v| v * k);
                    }
                }
            }
        }
    }

    if let Some((x0, y0, x1, y1)) = leaf_pixel_window(leaf, scene, 1.0) {
        for y in y0..y1 {
            for x in x0..x1 {
                let local = scene.pose.to_local(scene.pixel_center(x, y));
                let a = leaf_alpha_at(leaf, local);
                if a <= 0.0 {
                    continue;
                }
                let t = leaf.frame.to_texel(local);
                let c = sample_rgb(&shaded, t.x, t.y);
                let px = &mut bg[y * w + x];
                *px = [0, 1, 2].map(|k| px[k] + (c[k] - px[k]) * a.min(1.0));
            }
        }
    }

    let mut out = RasterImage::new(w, h);
    for (i, c) in bg.iter().enumerate() {
        out.set(i % w, i / w, Rgb::from_f64(*c));
    }
    Ok(out)
}

/// Foreground iff the posed leaf alpha at the pixel center is at least 0.5.
pub fn render_mask(leaf: &LeafSurface, scene: &SceneParams) -> Result<BinaryMask> {
    scene.validate()?;
    let mut mask = BinaryMask::new(scene.width, scene.height);
    if let Some((x0, y0, x1, y1)) = leaf_pixel_window(leaf, scene, 1.0) {
        for y in y0..y1 {
            for x in x0..x1 {
                let local = scene.pose.to_local(scene.pixel_center(x, y));
                if leaf_alpha_at(leaf, local) >= 0.5 {
                    mask.set(x, y, true);
                }
            }
        }
    }
    if mask.is_empty() {
        return Err(Error::generation("leaf mask is empty"));
    }
    Ok(mask)
}

/// Sampling ranges for per-pass shadow and lighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassSampling {
    pub shadow_strength: (f64, f64),
    pub shadow_offset_mm: (f64, f64),
    pub shadow_size_mm: (f64, f64),
    pub light_elevation_deg: (f64, f64),
    pub ambient: (f64, f64),
}

impl Default for PassSampling {
    fn default() -> Self {
        Self {
            shadow_strength: (0.15, 0.45),
            shadow_offset_mm: (0.5, 3.0),
            shadow_size_mm: (0.4, 2.5),
            light_elevation_deg: (45.0, 85.0),
            ambient: (0.35, 0.6),
        }
    }
}

fn range(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl PassSampling {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("shadow_strength", self.shadow_strength, 0.0, 1.0),
            ("shadow_offset_mm", self.shadow_offset_mm, 0.0, f64::MAX),
            ("shadow_size_mm", self.shadow_size_mm, 0.0, f64::MAX),
            ("light_elevation_deg", self.light_elevation_deg, 0.0, 90.0),
            ("ambient", self.ambient, 0.0, 1.0),
        ];
        for (name, (lo, hi), min, max) in ranges {
            ensure(lo <= hi && lo >= min && hi <= max, || format!("{name} range ({lo}, {hi}) is invalid"))?;
        }
        Ok(())
    }

    pub fn sample(&self, seed: NoiseSeed, pass: usize) -> (ShadowParams, Lighting) {
        let mut rng = stream(seed.0, "render-pass", pass as u64);
        let shadow_angle = rng.random_range(0.0..std::f64::consts::TAU);
        let shadow = ShadowParams {
            strength: range(&mut rng, self.shadow_strength),
            offset_mm: Vec2::from_angle(shadow_angle) * range(&mut rng, self.shadow_offset_mm),
            size_mm: range(&mut rng, self.shadow_size_mm),
        };
        let elev = range(&mut rng, self.light_elevation_deg).to_radians();
        // Light comes from the side opposite the shadow.
        let az = shadow_angle + std::f64::consts::PI;
        let direction = Vec3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()).normalized();
        (shadow, Lighting { direction, ambient: range(&mut rng, self.ambient) })
    }
}

/// Four passes sharing pose, scale and mask, each with its own shadow and light.
pub fn render_passes(leaf: &LeafSurface, paper: &PaperSheet, scene: &SceneParams, seed: NoiseSeed) -> Result<Vec<RenderedDatapoint>> {
    render_passes_with(leaf, paper, scene, seed, &PassSampling::default())
}

pub fn render_passes_with(
    leaf: &LeafSurface,
    paper: &PaperSheet,
    scene: &SceneParams,
    seed: NoiseSeed,
    sampling: &PassSampling,
) -> Result<Vec<RenderedDatapoint>> {
    sampling.validate()?;
    let mask = render_mask(leaf, scene)?;
    (0..PASSES_PER_LEAF)
        .map(|pass_index| {
            let (shadow, lighting) = sampling.sample(seed, pass_index);
            Ok(RenderedDatapoint {
                image: compose_scene(leaf, paper, scene, &shadow, &lighting)?,
                mask: mask.clone(),
                scene: scene.clone(),
                shadow,
                lighting,
                pass_index,
            })
        })
        .collect()
}

/// Sampling ranges for distractor placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorSampling {
    pub max_count: usize,
    pub glass_probability: f64,
    pub scale: (f64, f64),
    /// Required clearance from the leaf mask, in pixels.
    pub clearance_px: usize,
}

impl Default for DistractorSampling {
    fn default() -> Self {
        Self { max_count: 2, glass_probability: 0.4, scale: (0.5, 1.2), clearance_px: 4 }
    }
}

fn footprint_hits(mask: &BinaryMask, scene: &SceneParams, fp: &[Vec2; 4]) -> bool {
    let m = scene.mm_per_pixel();
    let Some(r) = Rect::bounding(fp.iter().copied()) else { return false };
    let (w, h) = mask.dims();
    let x0 = ((r.min.x / m).floor().max(0.0) as usize).min(w);
    let x1 = ((r.max.x / m).ceil().max(0.0) as usize).min(w);
    let y0 = ((r.min.y / m).floor().max(0.0) as usize).min(h);
    let y1 = ((r.max.y / m).ceil().max(0.0) as usize).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            if mask.get(x, y) {
                let p = scene.pixel_center(x, y);
                let near_edge = (0..4).any(|k| distance_to_segment(p, fp[k], fp[(k + 1) % 4]) < m);
                if point_in_polygon(p, fp) || near_edge {
                    return true;
                }
            }
        }
    }
    false
}

/// Draws up to `max_count` distractors whose footprints stay clear of the
/// dilated leaf mask; candidates that collide are redrawn a few times, then
/// dropped.
pub fn place_distractors(mask: &BinaryMask, scene: &SceneParams, sampling: &DistractorSampling, seed: NoiseSeed) -> Vec<DistractorSpec> {
    let mut rng = stream(seed.0, "distractors", 0);
    let count = rng.random_range(0..=sampling.max_count);
    let keep_out = mask.dilate(sampling.clearance_px);
    let ext = scene.world_extent();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        for _attempt in 0..24 {
            let kind = if rng.random_bool(sampling.glass_probability.clamp(0.0, 1.0)) {
                DistractorKind::GlassPane
            } else {
                DistractorKind::PaperFragment
            };
            let d = DistractorSpec {
                kind,
                translation_mm: Vec2::new(rng.random_range(0.0..ext.x), rng.random_range(0.0..ext.y)),
                rotation: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                scale: (range(&mut rng, sampling.scale), range(&mut rng, sampling.scale)),
                opacity: match kind {
                    DistractorKind::PaperFragment => rng.random_range(0.85..=1.0),
                    DistractorKind::GlassPane => rng.random_range(0.25..=0.6),
                },
            };
            if !footprint_hits(&keep_out, scene, &d.footprint()) {
                out.push(d);
                break;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leaf_shape::{mesh_outline, sample_outline, species_curve, LeafMesh};
    use crate::leaf_texture::{compose_surface, LeafTextureParams, TextureFrame};
    use crate::paper::{render_paper, PaperParams};
    use crate::Species;

    fn leaf_mesh() -> LeafMesh {
        let o = sample_outline(&species_curve(Species::Beech, 60.0, 20.0).unwrap(), 120).unwrap();
        mesh_outline(&o, 2, Species::Beech).unwrap()
    }

    fn surface(mesh: &LeafMesh) -> LeafSurface {
        let frame = TextureFrame::around(mesh.outline.iter().copied(), 1.0, 6.0).unwrap();
        let p = LeafTextureParams {
            color_a: Rgb::new(60, 110, 40),
            color_b: Rgb::new(140, 170, 60),
            blend_scale: 3.0,
            vein_tint: Rgb::new(190, 200, 120),
            vein_opacity: 0.5,
            hole_density: 0.0,
            hole_radius_mm: (1.0, 2.0),
            spot_density: 0.0,
            spot_tint: Rgb::new(120, 80, 30),
            spot_radius_mm: (0.5, 1.0),
            edge_erosion_mm: 0.0,
            seed: NoiseSeed(2),
        };
        compose_surface(mesh, &frame, &Field::new(frame.width, frame.height), &p, 2.0).unwrap()
    }

    fn scene(gamma: f64) -> SceneParams {
        SceneParams {
            gamma,
            camera_extent_mm: 100.0,
            width: 256,
            height: 256,
            pose: LeafPose { translation_mm: Vec2::new(20.0 * gamma, 50.0 * gamma), rotation: 0.2 },
            distractors: vec![],
        }
    }

    fn sheet(s: &SceneParams) -> PaperSheet {
        let ext = s.world_extent();
        render_paper(&PaperParams::sample(NoiseSeed(4)), ext.x, ext.y, 1.0 / s.mm_per_pixel(), NoiseSeed(4)).unwrap()
    }

    #[test]
    fn mm_per_pixel_formula() {
        assert!((mm_per_pixel(1.0, 100.0, 1000) - 0.1).abs() < 1e-15);
        assert_eq!(scene(1.0).mm_per_pixel(), 100.0 / 256.0);
    }

    #[test]
    fn zero_strength_shadow_is_no_shadow() {
        let leaf = surface(&leaf_mesh());
        let s = scene(1.0);
        let p = sheet(&s);
        let l = Lighting::OVERHEAD;
        let a = compose_scene(&leaf, &p, &s, &ShadowParams::NONE, &l).unwrap();
        let b = compose_scene(&leaf, &p, &s, &ShadowParams { strength: 0.0, offset_mm: Vec2::new(2.0, 1.0), size_mm: 1.5 }, &l).unwrap();
        assert_eq!(a, b);
        let c = compose_scene(&leaf, &p, &s, &ShadowParams { strength: 0.5, offset_mm: Vec2::new(2.0, 1.0), size_mm: 1.5 }, &l).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn transparent_leaf_shows_background() {
        let mesh = leaf_mesh();
        let leaf = LeafSurface::transparent(surface(&mesh).frame);
        let s = scene(1.0);
        let p = sheet(&s);
        let sh = ShadowParams { strength: 0.8, offset_mm: Vec2::new(1.0, 1.0), size_mm: 1.0 };
        let out = compose_scene(&leaf, &p, &s, &sh, &Lighting::OVERHEAD).unwrap();
        assert_eq!(out, p.image);
        assert!(render_mask(&leaf, &s).is_err());
    }

    #[test]
    fn out_of_frame_is_a_placement_error() {
        let leaf = surface(&leaf_mesh());
        let mut s = scene(1.0);
        s.pose.translation_mm = Vec2::new(70.0, 50.0);
        let p = sheet(&s);
        assert!(matches!(compose_scene(&leaf, &p, &s, &ShadowParams::NONE, &Lighting::OVERHEAD), Err(Error::Placement(_))));
    }

    fn column_minima(img: &RasterImage) -> Vec<usize> {
        let prof: Vec<f64> = (0..img.width()).map(|x| (0..img.height()).map(|y| img.get(x, y).to_f64()[1]).sum()).collect();
        (1..prof.len() - 1).filter(|&i| prof[i] < prof[i - 1] && prof[i] <= prof[i + 1]).collect()
    }

    #[test]
    fn gamma_scales_grid_spacing() {
        let params = PaperParams { major: None, ..PaperParams::plain() };
        let tile = render_paper(&params, 40.0, 40.0, 16.0, NoiseSeed(0)).unwrap();
        let mesh = leaf_mesh();
        let leaf = LeafSurface::transparent(surface(&mesh).frame);
        let mut spacing = Vec::new();
        for gamma in [1.0, 2.0] {
            let s = SceneParams { gamma, camera_extent_mm: 40.0, width: 320, height: 64, ..scene(1.0) };
            let img = compose_scene(&leaf, &tile, &s, &ShadowParams::NONE, &Lighting::OVERHEAD).unwrap();
            let m = column_minima(&img);
            spacing.push((m[m.len() - 1] - m[0]) as f64 / (m.len() - 1) as f64);
        }
        assert!((spacing[0] - 8.0).abs() < 0.1, "{spacing:?}");
        assert!((spacing[1] / spacing[0] - 0.5).abs() < 0.02, "{spacing:?}");
    }

    #[test]
    fn mask_matches_projected_area() {
        let mesh = leaf_mesh();
        let leaf = surface(&mesh);
        for gamma in [0.8, 1.0, 1.25] {
            let s = scene(gamma);
            let mask = render_mask(&leaf, &s).unwrap();
            let area = crate::leaf_shape::projected_area(&mesh);
            let measured = mask.count() as f64 * s.mm_per_pixel().powi(2);
            assert!((measured - area).abs() / area < 0.02, "gamma {gamma}: {measured} vs {area}");
        }
    }

    #[test]
    fn passes_share_mask_and_differ() {
        let mesh = leaf_mesh();
        let leaf = surface(&mesh);
        for seed in 0..50u64 {
            let s = scene(1.0);
            let p = sheet(&s);
            let passes = render_passes(&leaf, &p, &s, NoiseSeed(seed)).unwrap();
            assert_eq!(passes.len(), 4);
            for i in 0..4 {
                assert_eq!(passes[i].mask, passes[0].mask);
                assert_eq!(passes[i].pass_index, i);
                for j in i + 1..4 {
                    assert_ne!(passes[i].image, passes[j].image, "seed {seed}: {i} vs {j}");
                }
            }
        }
    }

    #[test]
    fn distractors_avoid_mask_and_leave_it_unchanged() {
        let mesh = leaf_mesh();
        let leaf = surface(&mesh);
        let base = scene(1.0);
        let mask = render_mask(&leaf, &base).unwrap();
        let sampling = DistractorSampling { max_count: 4, ..Default::default() };
        let mut placed = 0;
        for seed in 0..40u64 {
            let ds = place_distractors(&mask, &base, &sampling, NoiseSeed(seed));
            placed += ds.len();
            let s = SceneParams { distractors: ds.clone(), ..base.clone() };
            assert_eq!(render_mask(&leaf, &s).unwrap(), mask);
            for d in &ds {
                let fp = d.footprint();
                for y in 0..s.height {
                    for x in 0..s.width {
                        if mask.get(x, y) {
                            assert!(!point_in_polygon(s.pixel_center(x, y), &fp));
                        }
                    }
                }
            }
            let p = sheet(&s);
            let with = compose_scene(&leaf, &p, &s, &ShadowParams::NONE, &Lighting::OVERHEAD).unwrap();
            let without = compose_scene(&leaf, &p, &base, &ShadowParams::NONE, &Lighting::OVERHEAD).unwrap();
            let core = mask.erode(1);
            for y in 0..s.height {
                for x in 0..s.width {
                    if core.get(x, y) {
                        assert_eq!(with.get(x, y), without.get(x, y));
                    }
                }
            }
        }
        assert!(placed > 10);
    }
}

//! Procedural leaf albedo, coverage and shading in a leaf-local texture frame.

use crate::error::{ensure, Result};
use crate::geom::{distance_to_segment, Vec2, Vec3};
use crate::leaf_shape::LeafMesh;
use crate::noise::{gradient_unchecked, value_unchecked, NoiseSeed};
use crate::raster::{Field, RasterImage, Rgb};
use crate::rng::stream;
use crate::venation::{height_to_normals, HeightMap, NormalMap};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

/// Axis-aligned texel grid over the leaf-local plane. Texel `(i, j)` covers
/// `origin + [i, i+1) / texels_per_mm` in x and likewise in y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureFrame {
    pub origin: Vec2,
    pub texels_per_mm: f64,
    pub width: usize,
    pub height: usize,
}

impl TextureFrame {
    /// Frame covering `points` plus `margin_mm` on every side.
    pub fn around(points: impl IntoIterator<Item = Vec2>, margin_mm: f64, texels_per_mm: f64) -> Result<Self> {
        ensure(texels_per_mm > 0.0 && texels_per_mm.is_finite(), || "texels_per_mm must be > 0".into())?;
        let r = crate::geom::Rect::bounding(points).ok_or_else(|| crate::Error::input("texture frame needs points"))?;
        let origin = Vec2::new(r.min.x - margin_mm, r.min.y - margin_mm);
        let width = ((r.width() + 2.0 * margin_mm) * texels_per_mm).ceil().max(1.0) as usize;
        let height = ((r.height() + 2.0 * margin_mm) * texels_per_mm).ceil().max(1.0) as usize;
        Ok(Self { origin, texels_per_mm, width, height })
    }

    pub fn texel_center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (i as f64 + 0.5) / self.texels_per_mm,
            self.origin.y + (j as f64 + 0.5) / self.texels_per_mm,
        )
    }

    /// Continuous texel coordinates of a leaf-local point.
    pub fn to_texel(&self, p: Vec2) -> Vec2 {
        Vec2::new((p.x - self.origin.x) * self.texels_per_mm, (p.y - self.origin.y) * self.texels_per_mm)
    }

    /// Normalized position in the frame, `[0, 1]^2` inside.
    pub fn uv(&self, p: Vec2) -> Vec2 {
        let t = self.to_texel(p);
        Vec2::new(t.x / self.width as f64, t.y / self.height as f64)
    }

    pub fn texel_area_mm2(&self) -> f64 {
        1.0 / (self.texels_per_mm * self.texels_per_mm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafTextureParams {
    pub color_a: Rgb,
    pub color_b: Rgb,
    /// Gradient-noise frequency in cycles per unit uv.
    pub blend_scale: f64,
    pub vein_tint: Rgb,
    pub vein_opacity: f64,
    /// Holes per cm^2 of blade.
    pub hole_density: f64,
    pub hole_radius_mm: (f64, f64),
    /// Spots per cm^2 of blade.
    pub spot_density: f64,
    pub spot_tint: Rgb,
    pub spot_radius_mm: (f64, f64),
    pub edge_erosion_mm: f64,
    pub seed: NoiseSeed,
}

impl LeafTextureParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.blend_scale > 0.0 && self.blend_scale.is_finite(), || "blend_scale must be > 0".into())?;
        ensure((0.0..=1.0).contains(&self.vein_opacity), || "vein_opacity must be in [0, 1]".into())?;
        ensure(self.hole_density >= 0.0 && self.hole_density.is_finite(), || "hole density must be >= 0".into())?;
        ensure(self.spot_density >= 0.0 && self.spot_density.is_finite(), || "spot density must be >= 0".into())?;
        for (name, (lo, hi)) in [("hole", self.hole_radius_mm), ("spot", self.spot_radius_mm)] {
            ensure(lo > 0.0 && lo <= hi && hi.is_finite(), || format!("{name} radius range must satisfy 0 < min <= max"))?;
        }
        ensure(self.edge_erosion_mm >= 0.0 && self.edge_erosion_mm.is_finite(), || "edge erosion must be >= 0".into())
    }
}

/// `lerp(a, b, g)` in channel units.
pub fn blend_colors(g: f64, a: Rgb, b: Rgb) -> [f64; 3] {
    if g <= 0.0 {
        return a.to_f64();
    }
    if g >= 1.0 {
        return b.to_f64();
    }
    a.lerp(b, g)
}

/// Base coloration at `uv`: `lerp(C1, C2, g)` with `g = (G(uv * scale) + 1) / 2`.
pub fn blend_base(uv: Vec2, params: &LeafTextureParams) -> [f64; 3] {
    let g = 0.5 * (gradient_unchecked(uv * params.blend_scale, params.seed.derive("leaf-blend")) + 1.0);
    blend_colors(g, params.color_a, params.color_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub center: Vec2,
    /// Nominal radius; the punched boundary stays within `[0.75, 1.25]` of it.
    pub radius: f64,
}

impl Hole {
    fn boundary_radius(&self, angle: f64, seed: NoiseSeed) -> f64 {
        let q = Vec2::from_angle(angle) * 1.5 + self.center;
        (self.radius * (1.0 + 0.25 * gradient_unchecked(q, seed))).max(0.75 * self.radius)
    }

    pub fn contains(&self, p: Vec2, seed: NoiseSeed) -> bool {
        let d = p - self.center;
        let r = d.length();
        if r < 0.75 * self.radius {
            return true;
        }
        if r > 1.25 * self.radius {
            return false;
        }
        r < self.boundary_radius(d.y.atan2(d.x), seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafSurface {
    pub frame: TextureFrame,
    pub albedo: RasterImage,
    pub alpha: Field,
    pub normals: NormalMap,
    pub holes: Vec<Hole>,
    pub spot_count: usize,
}

impl LeafSurface {
    /// Surface with no visible texels.
    pub fn transparent(frame: TextureFrame) -> Self {
        Self {
            frame,
            albedo: RasterImage::new(frame.width, frame.height),
            alpha: Field::new(frame.width, frame.height),
            normals: NormalMap::flat(frame.width, frame.height),
            holes: Vec::new(),
            spot_count: 0,
        }
    }

    /// Area of texels weighted by alpha, mm^2.
    pub fn covered_area_mm2(&self) -> f64 {
        self.alpha.data.iter().map(|&a| a as f64).sum::<f64>() * self.frame.texel_area_mm2()
    }
}

/// Supersampled coverage of the union of `polygons` (even-odd per polygon).
/// Each texel receives the fraction of its `ss x ss` sub-sample centers that
/// fall inside any polygon.
pub fn polygon_coverage(polygons: &[&[Vec2]], frame: &TextureFrame, ss: usize) -> Field {
    let ss = ss.max(1);
    let (w, h) = (frame.width, frame.height);
    let mut cov = Field::new(w, h);
    let sub_w = w * ss;
    let step = 1.0 / (frame.texels_per_mm * ss as f64);
    let mut row_hits = vec![0u16; w];
    let mut inside = vec![false; sub_w];
    let mut xs: Vec<f64> = Vec::new();
    for j in 0..h {
        row_hits.iter_mut().for_each(|v| *v = 0);
        for sj in 0..ss {
            let y = frame.origin.y + (j * ss + sj) as f64 * step + 0.5 * step;
            inside.iter_mut().for_each(|v| *v = false);
            for poly in polygons {
                xs.clear();
                let n = poly.len();
                for k in 0..n {
                    let (a, b) = (poly[k], poly[(k + 1) % n]);
                    if (a.y > y) != (b.y > y) {
                        xs.push(a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x));
                    }
                }
                xs.sort_by(f64::total_cmp);
                for pair in xs.chunks_exact(2) {
                    // Sub-sample centers x_c = origin + (c + 0.5) * step inside [x0, x1).
                    let c0 = ((pair[0] - frame.origin.x) / step - 0.5).ceil().max(0.0) as usize;
                    let c1 = (((pair[1] - frame.origin.x) / step - 0.5).ceil().max(0.0) as usize).min(sub_w);
                    for v in inside.iter_mut().take(c1).skip(c0) {
                        *v = true;
                    }
                }
            }
            for (c, &v) in inside.iter().enumerate() {
                if v {
                    row_hits[c / ss] += 1;
                }
            }
        }
        let norm = (ss * ss) as f32;
        for i in 0..w {
            cov.set(i, j, row_hits[i] as f32 / norm);
        }
    }
    cov
}

fn blade_area_cm2(mesh: &LeafMesh) -> f64 {
    crate::geom::signed_area(&mesh.outline).abs() / 100.0
}

fn poisson(mean: f64, rng: &mut impl Rng) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0)
}

fn sample_inside(mesh: &LeafMesh, rng: &mut impl Rng) -> Option<Vec2> {
    let r = crate::geom::Rect::bounding(mesh.outline.iter().copied())?;
    for _ in 0..256 {
        let p = Vec2::new(rng.random_range(r.min.x..=r.max.x), rng.random_range(r.min.y..=r.max.y));
        if crate::geom::point_in_polygon(p, &mesh.outline) {
            return Some(p);
        }
    }
    None
}

/// Distance from every texel center to the outline, up to `max_mm`
/// (texels farther away hold `f32::INFINITY`).
fn outline_distance(outline: &[Vec2], frame: &TextureFrame, max_mm: f64) -> Field {
    let mut d = Field::new(frame.width, frame.height);
    d.data.iter_mut().for_each(|v| *v = f32::INFINITY);
    let n = outline.len();
    for k in 0..n {
        let (a, b) = (outline[k], outline[(k + 1) % n]);
        let lo = frame.to_texel(Vec2::new(a.x.min(b.x) - max_mm, a.y.min(b.y) - max_mm));
        let hi = frame.to_texel(Vec2::new(a.x.max(b.x) + max_mm, a.y.max(b.y) + max_mm));
        let (i0, j0) = (lo.x.floor().max(0.0) as usize, lo.y.floor().max(0.0) as usize);
        let i1 = (hi.x.ceil().max(0.0) as usize).min(frame.width);
        let j1 = (hi.y.ceil().max(0.0) as usize).min(frame.height);
        for j in j0..j1 {
            for i in i0..i1 {
                let dist = distance_to_segment(frame.texel_center(i, j), a, b) as f32;
                if dist < d.get(i, j) {
                    d.set(i, j, dist);
                }
            }
        }
    }
    d
}

/// Builds the leaf surface. `height` must match the frame resolution; the
/// petiole, if any, is added to coverage but receives no holes or erosion.
pub fn compose_surface(
    mesh: &LeafMesh,
    frame: &TextureFrame,
    height: &HeightMap,
    params: &LeafTextureParams,
    z_scale: f64,
) -> Result<LeafSurface> {
    params.validate()?;
    ensure(height.width == frame.width && height.height == frame.height, || {
        format!(
            "height map is {}x{} but the texture frame is {}x{}",
            height.width, height.height, frame.width, frame.height
        )
    })?;
    ensure(mesh.outline.len() >= 3, || "mesh has no outline".into())?;
    let (w, h) = (frame.width, frame.height);
    let petiole = mesh.petiole.map(|p| p.polygon());
    let mut polys: Vec<&[Vec2]> = vec![&mesh.outline];
    if let Some(p) = &petiole {
        polys.push(p);
    }
    let mut alpha = polygon_coverage(&polys, frame, 4);

    let mut albedo = RasterImage::new(w, h);
    let vein_tint = params.vein_tint.to_f64();
    let mut colors: Vec<[f64; 3]> = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            let p = frame.texel_center(i, j);
            let mut c = blend_base(frame.uv(p), params);
            let t = params.vein_opacity * height.get(i, j) as f64;
            if t > 0.0 {
                c = [0, 1, 2].map(|k| c[k] + (vein_tint[k] - c[k]) * t);
            }
            colors.push(c);
        }
    }

    let mut rng = stream(params.seed.0, "leaf-features", 0);
    let area_cm2 = blade_area_cm2(mesh);

    let n_spots = poisson(params.spot_density * area_cm2, &mut rng);
    let spot_tint = params.spot_tint.to_f64();
    let mut spot_count = 0;
    for _ in 0..n_spots {
        let Some(c) = sample_inside(mesh, &mut rng) else { continue };
        let r = rng.random_range(params.spot_radius_mm.0..=params.spot_radius_mm.1);
        let strength = rng.random_range(0.45..0.85);
        spot_count += 1;
        let lo = frame.to_texel(Vec2::new(c.x - r, c.y - r));
        let hi = frame.to_texel(Vec2::new(c.x + r, c.y + r));
        for j in (lo.y.floor().max(0.0) as usize)..(hi.y.ceil().max(0.0) as usize).min(h) {
            for i in (lo.x.floor().max(0.0) as usize)..(hi.x.ceil().max(0.0) as usize).min(w) {
                let d = (frame.texel_center(i, j) - c).length() / r;
                if d < 1.0 {
                    // Soft falloff over the outer 40% of the radius.
                    let t = strength * ((1.0 - d) / 0.4).min(1.0);
                    let px = &mut colors[j * w + i];
                    *px = [0, 1, 2].map(|k| px[k] + (spot_tint[k] - px[k]) * t);
                }
            }
        }
    }

    let n_holes = poisson(params.hole_density * area_cm2, &mut rng);
    let hole_seed = params.seed.derive("hole-edge");
    let mut holes = Vec::with_capacity(n_holes);
    for _ in 0..n_holes {
        let Some(center) = sample_inside(mesh, &mut rng) else { continue };
        let radius = rng.random_range(params.hole_radius_mm.0..=params.hole_radius_mm.1);
        let hole = Hole { center, radius };
        let reach = 1.25 * radius;
        let lo = frame.to_texel(Vec2::new(center.x - reach, center.y - reach));
        let hi = frame.to_texel(Vec2::new(center.x + reach, center.y + reach));
        for j in (lo.y.floor().max(0.0) as usize)..(hi.y.ceil().max(0.0) as usize).min(h) {
            for i in (lo.x.floor().max(0.0) as usize)..(hi.x.ceil().max(0.0) as usize).min(w) {
                if hole.contains(frame.texel_center(i, j), hole_seed) {
                    alpha.set(i, j, 0.0);
                }
            }
        }
        holes.push(hole);
    }

    if params.edge_erosion_mm > 0.0 {
        let e = params.edge_erosion_mm;
        let dist = outline_distance(&mesh.outline, frame, e);
        let erosion_seed = params.seed.derive("edge-erosion");
        for j in 0..h {
            for i in 0..w {
                let d = dist.get(i, j) as f64;
                if d >= e || alpha.get(i, j) == 0.0 {
                    continue;
                }
                let p = frame.texel_center(i, j);
                if !crate::geom::point_in_polygon(p, &mesh.outline) {
                    continue;
                }
                let depth = e * (2.0 * value_unchecked(p * 0.35, erosion_seed) - 1.0).clamp(0.0, 1.0);
                if d < depth {
                    alpha.set(i, j, 0.0);
                }
            }
        }
    }

    for (k, c) in colors.iter().enumerate() {
        albedo.set(k % w, k / w, Rgb::from_f64(*c));
    }
    let normals = height_to_normals(height, z_scale)?;
    Ok(LeafSurface { frame: *frame, albedo, alpha, normals, holes, spot_count })
}

/// Lambertian shading: `albedo * (ambient + (1 - ambient) * max(0, n.l))`.
pub fn shade(surface: &LeafSurface, light_dir: Vec3, ambient: f64) -> Result<RasterImage> {
    ensure((light_dir.length() - 1.0).abs() < 1e-6, || "light direction must be a unit vector".into())?;
    ensure((0.0..=1.0).contains(&ambient), || format!("ambient must be in [0, 1], got {ambient}"))?;
    let (w, h) = surface.albedo.dims();
    let mut out = RasterImage::new(w, h);
    for j in 0..h {
        for i in 0..w {
            let a = surface.albedo.get(i, j);
            let k = ambient + (1.0 - ambient) * surface.normals.get(i, j).dot(light_dir).max(0.0);
            if k >= 1.0 {
                out.set(i, j, a);
            } else {
                out.set(i, j, Rgb::from_f64(a.to_f64().map(|v| v * k)));
            }
        }
    }
    Ok(out)
}

/// Texture palette presets.
pub fn species_palette(species: crate::Species) -> (Rgb, Rgb, Rgb, Rgb) {
    // (color_a, color_b, vein_tint, spot_tint)
    match species {
        crate::Species::Beech => (Rgb::new(118, 150, 52), Rgb::new(150, 172, 70), Rgb::new(176, 192, 110), Rgb::new(150, 128, 56)),
        crate::Species::Oak => (Rgb::new(58, 98, 38), Rgb::new(84, 120, 46), Rgb::new(120, 146, 78), Rgb::new(112, 78, 38)),
    }
}

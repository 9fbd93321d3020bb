//! Sampling of complete leaf parameter sets and the shape-to-surface build.

use crate::error::{ensure, Result};
use crate::geom::{Rect, Vec2};
use crate::leaf_shape::{
    displace_vertices, mesh_outline, perturb_controls, projected_area, sample_outline, species_curve, surface_area,
    DisplacementParams, LeafMesh, Outline, Petiole, ShapePreset,
};
use crate::leaf_texture::{compose_surface, species_palette, LeafSurface, LeafTextureParams, TextureFrame};
use crate::noise::NoiseSeed;
use crate::raster::Rgb;
use crate::rng::stream;
use crate::scene::{alpha_bounds, LeafPose};
use crate::venation::{rasterize_height, trace_veins, VeinSkeleton, VenationParams};
use crate::Species;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Ranges from which per-leaf parameters are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeafSampling {
    /// Multiplier applied to the species length range.
    pub size_scale: f64,
    /// Fraction of leaves rendered without vertex displacement.
    pub flat_fraction: f64,
    pub displacement_mm: (f64, f64),
    pub voronoi_density: f64,
    pub outline_samples: usize,
    pub mesh_rings: usize,
    pub texels_per_mm: f64,
    pub petiole_probability: f64,
    pub petiole_length_mm: (f64, f64),
    pub petiole_width_mm: (f64, f64),
    pub hole_density: (f64, f64),
    pub hole_radius_mm: (f64, f64),
    pub spot_density: (f64, f64),
    pub edge_erosion_mm: (f64, f64),
    pub vein_opacity: (f64, f64),
    pub branch_angle_deg: (f64, f64),
    pub vein_z_scale: f64,
}

impl Default for LeafSampling {
    fn default() -> Self {
        Self {
            size_scale: 1.0,
            flat_fraction: 0.2,
            displacement_mm: (0.5, 2.5),
            voronoi_density: 0.004,
            outline_samples: 160,
            mesh_rings: 3,
            texels_per_mm: 5.0,
            petiole_probability: 0.7,
            petiole_length_mm: (4.0, 9.0),
            petiole_width_mm: (0.8, 1.2),
            hole_density: (0.0, 0.03),
            hole_radius_mm: (0.6, 1.6),
            spot_density: (0.0, 0.3),
            edge_erosion_mm: (0.0, 0.3),
            vein_opacity: (0.35, 0.7),
            branch_angle_deg: (35.0, 55.0),
            vein_z_scale: 1.5,
        }
    }
}

fn pick(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl LeafSampling {
    pub fn validate(&self) -> Result<()> {
        ensure(self.size_scale > 0.0, || "size_scale must be > 0".into())?;
        ensure((0.0..=1.0).contains(&self.flat_fraction), || "flat_fraction must be in [0, 1]".into())?;
        ensure((0.0..=1.0).contains(&self.petiole_probability), || "petiole_probability must be in [0, 1]".into())?;
        ensure(self.outline_samples >= 8, || "outline_samples must be >= 8".into())?;
        ensure(self.mesh_rings >= 1, || "mesh_rings must be >= 1".into())?;
        ensure(self.texels_per_mm > 0.0, || "texels_per_mm must be > 0".into())?;
        ensure(self.voronoi_density > 0.0, || "voronoi_density must be > 0".into())?;
        ensure(self.vein_z_scale > 0.0, || "vein_z_scale must be > 0".into())?;
        for (name, (lo, hi)) in [
            ("displacement_mm", self.displacement_mm),
            ("petiole_length_mm", self.petiole_length_mm),
            ("petiole_width_mm", self.petiole_width_mm),
            ("hole_density", self.hole_density),
            ("hole_radius_mm", self.hole_radius_mm),
            ("spot_density", self.spot_density),
            ("edge_erosion_mm", self.edge_erosion_mm),
            ("vein_opacity", self.vein_opacity),
            ("branch_angle_deg", self.branch_angle_deg),
        ] {
            ensure(lo <= hi && lo >= 0.0 && hi.is_finite(), || format!("{name} range ({lo}, {hi}) is invalid"))?;
        }
        ensure(self.hole_radius_mm.0 > 0.0, || "hole radius must be > 0".into())?;
        ensure(self.vein_opacity.1 <= 1.0, || "vein opacity must be <= 1".into())?;
        ensure(self.branch_angle_deg.0 > 0.0 && self.branch_angle_deg.1 < 90.0, || "branch angle must be in (0, 90)".into())
    }
}

/// Everything needed to build one leaf deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafParams {
    pub species: Species,
    pub length_mm: f64,
    pub half_width_mm: f64,
    pub perturbation_mm: f64,
    pub outline_samples: usize,
    pub mesh_rings: usize,
    pub displacement: DisplacementParams,
    pub petiole: Option<Petiole>,
    pub venation: VenationParams,
    pub texture: LeafTextureParams,
    pub texels_per_mm: f64,
    pub vein_z_scale: f64,
    pub seed: NoiseSeed,
}

fn jitter_color(c: Rgb, amount: f64, rng: &mut impl Rng) -> Rgb {
    Rgb(c.0.map(|v| crate::raster::to_u8(v as f64 + rng.random_range(-amount..=amount))))
}

impl LeafParams {
    pub fn sample(species: Species, seed: NoiseSeed, s: &LeafSampling) -> Result<Self> {
        s.validate()?;
        let preset = ShapePreset::for_species(species);
        let mut rng = stream(seed.0, "leaf-params", 0);
        let length_mm = pick(&mut rng, preset.length_mm) * s.size_scale;
        let half_width_mm = length_mm * pick(&mut rng, preset.half_width_ratio);
        let flat = rng.random_bool(s.flat_fraction);
        let displacement = DisplacementParams {
            amplitude_mm: if flat { 0.0 } else { pick(&mut rng, s.displacement_mm) },
            voronoi_density: s.voronoi_density,
            seed: seed.derive("displacement"),
            pin_boundary: false,
        };
        let petiole = rng.random_bool(s.petiole_probability).then(|| Petiole {
            length_mm: pick(&mut rng, s.petiole_length_mm),
            width_mm: pick(&mut rng, s.petiole_width_mm),
            overlap_mm: 0.06 * length_mm,
        });
        let venation = VenationParams {
            branch_levels: 3,
            branches_per_level: match species {
                Species::Beech => rng.random_range(12..=18),
                Species::Oak => rng.random_range(10..=14),
            },
            branch_angle_deg: pick(&mut rng, s.branch_angle_deg),
            angle_jitter_deg: 6.0,
            step_sigma: 0.12,
            base_thickness: 0.9,
            thickness_decay: 0.45,
            step_len: 0.8,
            length_ratio: 0.5,
            tip_curvature: 0.6,
        };
        let (a, b, vein, spot) = species_palette(species);
        let texture = LeafTextureParams {
            color_a: jitter_color(a, 12.0, &mut rng),
            color_b: jitter_color(b, 12.0, &mut rng),
            blend_scale: rng.random_range(2.0..5.0),
            vein_tint: vein,
            vein_opacity: pick(&mut rng, s.vein_opacity),
            hole_density: pick(&mut rng, s.hole_density),
            hole_radius_mm: s.hole_radius_mm,
            spot_density: pick(&mut rng, s.spot_density),
            spot_tint: spot,
            spot_radius_mm: (0.3, 1.2),
            edge_erosion_mm: pick(&mut rng, s.edge_erosion_mm),
            seed: seed.derive("texture"),
        };
        Ok(Self {
            species,
            length_mm,
            half_width_mm,
            perturbation_mm: preset.perturbation * half_width_mm,
            outline_samples: s.outline_samples,
            mesh_rings: s.mesh_rings,
            displacement,
            petiole,
            venation,
            texture,
            texels_per_mm: s.texels_per_mm,
            vein_z_scale: s.vein_z_scale,
            seed,
        })
    }
}

/// A built leaf: geometry, vein skeleton (in mm) and texture.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub params: LeafParams,
    pub outline: Outline,
    pub mesh: LeafMesh,
    pub veins: VeinSkeleton,
    pub surface: LeafSurface,
}

impl Leaf {
    pub fn surface_area_mm2(&self) -> f64 {
        surface_area(&self.mesh)
    }

    pub fn projected_area_mm2(&self) -> f64 {
        projected_area(&self.mesh)
    }

    pub fn is_flat(&self) -> bool {
        self.mesh.vertices.iter().all(|v| v.z == 0.0)
    }
}

/// Builds the leaf from a fixed outline (used for presets and analytic shapes).
pub fn build_leaf_from_outline(params: &LeafParams, outline: Outline) -> Result<Leaf> {
    let flat = mesh_outline(&outline, params.mesh_rings, params.species)?;
    let mut mesh = displace_vertices(&flat, &params.displacement)?;
    mesh.petiole = params.petiole;

    let mut extent: Vec<Vec2> = outline.polygon.clone();
    if let Some(p) = &params.petiole {
        extent.extend(p.polygon());
    }
    let frame = TextureFrame::around(extent, 1.0, params.texels_per_mm)?;

    // Veins are traced in a rectangle spanning the blade and mapped so that
    // the rectangle's long sides follow the outline.
    let w_max = outline.stations.iter().map(|s| s.1).fold(0.0, f64::max);
    let bounds = Rect::new(Vec2::new(0.0, -w_max), Vec2::new(outline.length(), w_max));
    let skeleton = trace_veins(&params.venation, &bounds, params.seed.derive("veins"))?;
    let veins = skeleton.map(|p| Vec2::new(p.x, p.y * outline.half_width_at_x(p.x) / w_max), 1.0);
    let texel = veins.map(|p| frame.to_texel(p), params.texels_per_mm);
    let height = rasterize_height(&texel, frame.width, frame.height)?;
    let surface = compose_surface(&mesh, &frame, &height, &params.texture, params.vein_z_scale)?;
    Ok(Leaf { params: params.clone(), outline, mesh, veins, surface })
}

/// Full build: perturbed species outline, mesh, displacement, veins, texture.
pub fn build_leaf(params: &LeafParams) -> Result<Leaf> {
    let curve = species_curve(params.species, params.length_mm, params.half_width_mm)?;
    let curve = perturb_controls(&curve, params.perturbation_mm, params.seed.derive("outline"))?;
    let outline = sample_outline(&curve, params.outline_samples)?;
    build_leaf_from_outline(params, outline)
}

/// Random rotation and a translation that keeps the leaf inside a
/// `extent_mm`-sized frame with `margin_mm` clearance.
pub fn sample_pose(surface: &LeafSurface, extent_mm: Vec2, margin_mm: f64, seed: NoiseSeed) -> Result<LeafPose> {
    let r = alpha_bounds(surface).ok_or_else(|| crate::Error::generation("leaf has no visible texels"))?;
    let mut rng = stream(seed.0, "leaf-pose", 0);
    let rotation = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let rotated = Rect::bounding(r.corners().map(|c| c.rotate(rotation))).expect("corners");
    let lo = Vec2::new(margin_mm - rotated.min.x, margin_mm - rotated.min.y);
    let hi = Vec2::new(extent_mm.x - margin_mm - rotated.max.x, extent_mm.y - margin_mm - rotated.max.y);
    if lo.x > hi.x || lo.y > hi.y {
        return Err(crate::Error::Placement(format!(
            "leaf of {:.0} x {:.0} mm does not fit a {:.0} x {:.0} mm frame",
            rotated.width(),
            rotated.height(),
            extent_mm.x,
            extent_mm.y
        )));
    }
    let t = Vec2::new(pick(&mut rng, (lo.x, hi.x)), pick(&mut rng, (lo.y, hi.y)));
    Ok(LeafPose { translation_mm: t, rotation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leaf_shape::count_lobes;

    #[test]
    fn sampled_leaves_build_and_are_deterministic() {
        for s in 0..6u64 {
            let species = Species::ALL[s as usize % 2];
            let p = LeafParams::sample(species, NoiseSeed(s), &LeafSampling::default()).unwrap();
            let a = build_leaf(&p).unwrap();
            let b = build_leaf(&p).unwrap();
            assert_eq!(a, b);
            assert!(a.surface_area_mm2() >= a.projected_area_mm2());
            assert!((a.projected_area_mm2() - a.outline.area()).abs() / a.outline.area() < 1e-9);
            if p.displacement.amplitude_mm == 0.0 {
                assert!(a.is_flat());
                assert_eq!(a.surface_area_mm2(), a.projected_area_mm2());
            }
            if species == Species::Oak {
                assert!(count_lobes(&a.outline) >= 3);
            }
            // Veins were stamped into the normals somewhere.
            assert!(a.surface.normals.data.iter().any(|n| n.z < 0.999));
        }
    }

    #[test]
    fn pose_keeps_leaf_in_frame() {
        let p = LeafParams::sample(Species::Oak, NoiseSeed(3), &LeafSampling::default()).unwrap();
        let leaf = build_leaf(&p).unwrap();
        let ext = Vec2::new(200.0, 200.0);
        for s in 0..50 {
            let pose = sample_pose(&leaf.surface, ext, 2.0, NoiseSeed(s)).unwrap();
            let r = alpha_bounds(&leaf.surface).unwrap();
            for c in r.corners() {
                let w = pose.to_world(c);
                assert!(w.x >= 2.0 - 1e-9 && w.y >= 2.0 - 1e-9 && w.x <= 198.0 + 1e-9 && w.y <= 198.0 + 1e-9);
            }
        }
        assert!(sample_pose(&leaf.surface, Vec2::new(20.0, 20.0), 0.0, NoiseSeed(0)).is_err());
    }
}

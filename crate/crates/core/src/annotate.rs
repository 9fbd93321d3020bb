//! Per-datapoint annotation records and the mask/area consistency check.

use crate::error::{ensure, Error, Result};
use crate::leaf_shape::{projected_area, surface_area, LeafMesh};
use crate::paper::PaperPalette;
use crate::scene::{Lighting, RenderedDatapoint, ShadowParams};
use crate::Species;
use serde::{Deserialize, Serialize};

/// Allowed relative gap between the mask-derived area and the projected area.
pub const AREA_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Rendered,
    Inpainted,
    InpaintedFiltered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub species: Species,
    pub seed: u64,
    pub gamma: f64,
    pub mm_per_pixel: f64,
    /// Labeled blade area (3D mesh surface), petiole excluded.
    pub surface_area_mm2: f64,
    pub projected_area_mm2: f64,
    /// Exposed petiole area; drawn in the mask, excluded from both labels.
    pub petiole_area_mm2: f64,
    pub hole_count: usize,
    pub mask_pixel_count: u64,
    pub width: usize,
    pub height: usize,
    pub image_path: String,
    pub mask_path: String,
    pub edge_path: String,
    pub pass_index: usize,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inpainted_path: Option<String>,
    pub paper_palette: PaperPalette,
    pub shadow: ShadowParams,
    pub lighting: Lighting,
}

impl Annotation {
    pub fn mask_area_mm2(&self) -> f64 {
        self.mask_pixel_count as f64 * self.mm_per_pixel * self.mm_per_pixel
    }

    /// Relative gap between mask area and projected area.
    pub fn area_gap(&self) -> f64 {
        (self.mask_area_mm2() - self.projected_area_mm2).abs() / self.projected_area_mm2
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.id.is_empty(), || "annotation id is empty".into())?;
        ensure(self.projected_area_mm2 > 0.0, || format!("{}: projected area must be > 0", self.id))?;
        // Rounding slack: a flat mesh sums the same triangle terms both ways.
        ensure(self.surface_area_mm2 >= self.projected_area_mm2 * (1.0 - 1e-12), || {
            format!("{}: surface area below projected area", self.id)
        })?;
        ensure(self.mask_pixel_count > 0, || format!("{}: empty mask", self.id))?;
        ensure(self.mm_per_pixel > 0.0 && self.gamma > 0.0, || format!("{}: invalid scale", self.id))?;
        ensure(self.pass_index < crate::scene::PASSES_PER_LEAF, || format!("{}: pass index out of range", self.id))?;
        let gap = self.area_gap();
        if gap > AREA_TOLERANCE {
            return Err(Error::Annotation(format!(
                "{}: mask area {:.1} mm^2 differs from projected area {:.1} mm^2 by {:.2}%",
                self.id,
                self.mask_area_mm2(),
                self.projected_area_mm2,
                100.0 * gap
            )));
        }
        Ok(())
    }
}

/// Identification and file references for a datapoint.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMeta {
    pub id: String,
    pub seed: u64,
    pub image_path: String,
    pub mask_path: String,
    pub edge_path: String,
    pub paper_palette: PaperPalette,
    pub hole_count: usize,
}

/// Fills the record from a rendered datapoint and its mesh; fails with an
/// annotation error when the mask does not witness the projected area.
pub fn annotate_datapoint(dp: &RenderedDatapoint, mesh: &LeafMesh, meta: AnnotationMeta) -> Result<Annotation> {
    let a = Annotation {
        id: meta.id,
        species: mesh.species,
        seed: meta.seed,
        gamma: dp.scene.gamma,
        mm_per_pixel: dp.scene.mm_per_pixel(),
        surface_area_mm2: surface_area(mesh),
        projected_area_mm2: projected_area(mesh),
        petiole_area_mm2: mesh.petiole.map_or(0.0, |p| p.exposed_area()),
        hole_count: meta.hole_count,
        mask_pixel_count: dp.mask.count() as u64,
        width: dp.image.width(),
        height: dp.image.height(),
        image_path: meta.image_path,
        mask_path: meta.mask_path,
        edge_path: meta.edge_path,
        pass_index: dp.pass_index,
        provenance: Provenance::Rendered,
        inpainted_path: None,
        paper_palette: meta.paper_palette,
        shadow: dp.shadow,
        lighting: dp.lighting,
    };
    a.validate()?;
    Ok(a)
}

/// `|predicted - truth| / truth`.
pub fn relative_error(predicted: f64, truth: f64) -> Result<f64> {
    ensure(truth > 0.0 && truth.is_finite(), || format!("truth must be > 0, got {truth}"))?;
    ensure(predicted.is_finite(), || "prediction must be finite".into())?;
    Ok((predicted - truth).abs() / truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::leaf_shape::{mesh_outline, Outline};
    use crate::leaf_texture::{compose_surface, LeafTextureParams, TextureFrame};
    use crate::noise::NoiseSeed;
    use crate::paper::{render_paper, PaperParams};
    use crate::raster::{Field, Rgb};
    use crate::scene::{render_passes, LeafPose, SceneParams};
    use proptest::prelude::*;

    /// Disc of radius r as a mirrored profile w(x) = sqrt(r^2 - (x - r)^2).
    fn disc(r: f64, n: usize) -> LeafMesh {
        let stations = (0..n)
            .map(|i| {
                let x = 2.0 * r * i as f64 / (n - 1) as f64;
                let w = if i == 0 || i == n - 1 { 0.0 } else { (r * r - (x - r) * (x - r)).max(0.0).sqrt() };
                (x, w)
            })
            .collect();
        mesh_outline(&Outline::from_stations(stations).unwrap(), 2, Species::Beech).unwrap()
    }

    fn texture() -> LeafTextureParams {
        LeafTextureParams {
            color_a: Rgb::new(60, 110, 40),
            color_b: Rgb::new(100, 140, 50),
            blend_scale: 2.0,
            vein_tint: Rgb::new(150, 170, 90),
            vein_opacity: 0.0,
            hole_density: 0.0,
            hole_radius_mm: (1.0, 2.0),
            spot_density: 0.0,
            spot_tint: Rgb::new(100, 70, 30),
            spot_radius_mm: (0.5, 1.0),
            edge_erosion_mm: 0.0,
            seed: NoiseSeed(1),
        }
    }

    fn meta(id: &str) -> AnnotationMeta {
        AnnotationMeta {
            id: id.into(),
            seed: 7,
            image_path: "images/x.png".into(),
            mask_path: "masks/x.png".into(),
            edge_path: "edges/x.png".into(),
            paper_palette: PaperPalette { base: [240.0; 3], ink: [200.0, 100.0, 60.0] },
            hole_count: 0,
        }
    }

    #[test]
    fn disc_label_matches_pi_r_squared() {
        let r = 50.0;
        let mesh = disc(r, 801);
        let exact = std::f64::consts::PI * r * r;
        assert!((exact - 7853.98).abs() < 0.01);
        let label = surface_area(&mesh);
        assert!(relative_error(label, exact).unwrap() < 0.005, "{label}");

        let frame = TextureFrame::around(mesh.outline.iter().copied(), 1.0, 4.0).unwrap();
        let surf = compose_surface(&mesh, &frame, &Field::new(frame.width, frame.height), &texture(), 1.0).unwrap();
        let scene = SceneParams {
            gamma: 1.0,
            camera_extent_mm: 200.0,
            width: 512,
            height: 512,
            pose: LeafPose { translation_mm: Vec2::new(50.0, 100.0), rotation: 0.0 },
            distractors: vec![],
        };
        let paper = render_paper(&PaperParams::plain(), 200.0, 200.0, 512.0 / 200.0, NoiseSeed(0)).unwrap();
        let dp = render_passes(&surf, &paper, &scene, NoiseSeed(3)).unwrap().remove(0);
        let a = annotate_datapoint(&dp, &mesh, meta("disc_0")).unwrap();
        assert_eq!(a.surface_area_mm2, a.projected_area_mm2);
        assert!(relative_error(a.mask_area_mm2(), exact).unwrap() < 0.02);
        assert_eq!(a.mm_per_pixel, 200.0 / 512.0);
    }

    #[test]
    fn inconsistent_mask_is_rejected() {
        let mesh = disc(20.0, 200);
        let frame = TextureFrame::around(mesh.outline.iter().copied(), 1.0, 4.0).unwrap();
        let surf = compose_surface(&mesh, &frame, &Field::new(frame.width, frame.height), &texture(), 1.0).unwrap();
        let scene = SceneParams {
            gamma: 1.0,
            camera_extent_mm: 100.0,
            width: 200,
            height: 200,
            pose: LeafPose { translation_mm: Vec2::new(30.0, 50.0), rotation: 0.0 },
            distractors: vec![],
        };
        let paper = render_paper(&PaperParams::plain(), 100.0, 100.0, 2.0, NoiseSeed(0)).unwrap();
        let mut dp = render_passes(&surf, &paper, &scene, NoiseSeed(3)).unwrap().remove(0);
        assert!(annotate_datapoint(&dp, &mesh, meta("ok")).is_ok());
        dp.mask = dp.mask.dilate(2);
        assert!(matches!(annotate_datapoint(&dp, &mesh, meta("bad")), Err(Error::Annotation(_))));
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(relative_error(87.5, 100.0).unwrap(), 0.125);
        assert!((relative_error(112.9, 100.0).unwrap() - 0.129).abs() < 1e-12);
        assert!(relative_error(1.0, 0.0).is_err());
        assert!(relative_error(1.0, -3.0).is_err());
    }

    #[test]
    fn annotation_json_round_trip() {
        let a = Annotation {
            id: "000001_2".into(),
            species: Species::Oak,
            seed: u64::MAX,
            gamma: 1.1,
            mm_per_pixel: 0.4296875,
            surface_area_mm2: 2345.5,
            projected_area_mm2: 2300.25,
            petiole_area_mm2: 5.0,
            hole_count: 1,
            mask_pixel_count: 12458,
            width: 512,
            height: 512,
            image_path: "images/000001_2.png".into(),
            mask_path: "masks/000001_2.png".into(),
            edge_path: "edges/000001_2.png".into(),
            pass_index: 2,
            provenance: Provenance::Rendered,
            inpainted_path: None,
            paper_palette: PaperPalette { base: [240.0, 236.0, 220.0], ink: [200.0, 110.0, 60.0] },
            shadow: ShadowParams { strength: 0.3, offset_mm: Vec2::new(1.0, -0.5), size_mm: 1.2 },
            lighting: Lighting::OVERHEAD,
        };
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains("\"provenance\":\"rendered\""));
        assert!(!json.contains("inpainted_path"));
        assert_eq!(serde_json::from_str::<Annotation>(&json).unwrap(), a);
    }

    proptest! {
        #[test]
        fn relative_error_reflection_symmetry(t in 0.1f64..1e4, d in 0.0f64..0.09) {
            let d = d * t;
            let up = relative_error(t + d, t).unwrap();
            let down = relative_error(t - d, t).unwrap();
            prop_assert!((up - down).abs() <= 1e-12 * up.max(1.0));
        }
    }
}

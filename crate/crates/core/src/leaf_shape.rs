//! Leaf silhouettes, meshes and area measurement.
//!
//! A blade is described by a half-width profile along a straight midrib
//! (cubic Hermite keyframes over `t in [0, 1]`) and mirrored across the
//! midrib axis. The leaf-local frame has the base at the origin and the tip
//! at `(midrib_length_mm, 0)`.

use crate::error::{ensure, Error, Result};
use crate::geom::{is_simple_polygon, point_in_polygon, signed_area, Rect, Vec2, Vec3};
use crate::noise::{voronoi_unchecked, NoiseSeed};
use crate::rng::stream;
use crate::Species;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Hermite keyframe: position along the midrib, half-width in mm, and
/// incoming/outgoing slopes in mm per unit `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub t: f64,
    pub half_width: f64,
    pub in_tangent: f64,
    pub out_tangent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlineCurve {
    pub control_points: Vec<ControlPoint>,
    pub midrib_length_mm: f64,
    /// Recompute tangents from neighboring keys whenever keys move.
    pub auto_tangents: bool,
}

impl OutlineCurve {
    /// Validates an explicit-tangent curve.
    pub fn new(control_points: Vec<ControlPoint>, midrib_length_mm: f64) -> Result<Self> {
        let c = Self { control_points, midrib_length_mm, auto_tangents: false };
        c.validate()?;
        Ok(c)
    }

    /// Curve through `(t, half_width)` keys with clamped auto tangents.
    pub fn from_keys(keys: &[(f64, f64)], midrib_length_mm: f64) -> Result<Self> {
        let control_points = keys
            .iter()
            .map(|&(t, w)| ControlPoint { t, half_width: w, in_tangent: 0.0, out_tangent: 0.0 })
            .collect();
        let mut c = Self { control_points, midrib_length_mm, auto_tangents: true };
        c.validate()?;
        c.recompute_tangents();
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let cp = &self.control_points;
        ensure(cp.len() >= 2, || "outline needs at least two control points".into())?;
        ensure(self.midrib_length_mm > 0.0 && self.midrib_length_mm.is_finite(), || {
            format!("midrib length must be > 0, got {}", self.midrib_length_mm)
        })?;
        ensure(cp[0].t == 0.0 && cp[cp.len() - 1].t == 1.0, || "control points must span t = 0..1".into())?;
        ensure(cp.windows(2).all(|w| w[1].t > w[0].t), || "control point t must be strictly increasing".into())?;
        ensure(cp[0].half_width == 0.0 && cp[cp.len() - 1].half_width == 0.0, || {
            "first and last half-width must be 0".into()
        })?;
        ensure(cp.iter().all(|p| p.half_width >= 0.0 && p.half_width.is_finite()), || {
            "half-widths must be finite and >= 0".into()
        })?;
        ensure(cp.iter().all(|p| p.in_tangent.is_finite() && p.out_tangent.is_finite()), || {
            "tangents must be finite".into()
        })
    }

    /// Catmull-Rom slopes, flattened at local extrema so that keys are never
    /// overshot; end slopes are one-sided.
    fn recompute_tangents(&mut self) {
        let n = self.control_points.len();
        let pts: Vec<(f64, f64)> = self.control_points.iter().map(|p| (p.t, p.half_width)).collect();
        for i in 0..n {
            let slope = if i == 0 {
                (pts[1].1 - pts[0].1) / (pts[1].0 - pts[0].0)
            } else if i == n - 1 {
                (pts[n - 1].1 - pts[n - 2].1) / (pts[n - 1].0 - pts[n - 2].0)
            } else {
                let (l, c, r) = (pts[i - 1], pts[i], pts[i + 1]);
                if (c.1 - l.1) * (r.1 - c.1) <= 0.0 {
                    0.0
                } else {
                    (r.1 - l.1) / (r.0 - l.0)
                }
            };
            self.control_points[i].in_tangent = slope;
            self.control_points[i].out_tangent = slope;
        }
    }

    /// Half-width at `t`, cubic Hermite between keys; 0 outside `[0, 1]`.
    pub fn half_width_at(&self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        let cp = &self.control_points;
        let k = cp.partition_point(|p| p.t <= t).clamp(1, cp.len() - 1) - 1;
        let (a, b) = (cp[k], cp[k + 1]);
        let h = b.t - a.t;
        let s = (t - a.t) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * a.half_width + h10 * h * a.out_tangent + h01 * b.half_width + h11 * h * b.in_tangent
    }

    pub fn max_half_width(&self, samples: usize) -> f64 {
        (0..=samples)
            .map(|i| self.half_width_at(i as f64 / samples as f64))
            .fold(0.0, f64::max)
    }
}

/// `P' = P + N` on interior half-widths with `N ~ U[-amplitude, amplitude]`;
/// widths are clamped at 0 and the end keys stay closed.
pub fn perturb_controls(curve: &OutlineCurve, noise_amplitude_mm: f64, seed: NoiseSeed) -> Result<OutlineCurve> {
    ensure(noise_amplitude_mm >= 0.0 && noise_amplitude_mm.is_finite(), || {
        format!("perturbation amplitude must be >= 0, got {noise_amplitude_mm}")
    })?;
    curve.validate()?;
    if noise_amplitude_mm == 0.0 {
        return Ok(curve.clone());
    }
    let mut out = curve.clone();
    let n = out.control_points.len();
    let mut rng = stream(seed.0, "perturb-controls", 0);
    for p in &mut out.control_points[1..n - 1] {
        let d = rng.random_range(-noise_amplitude_mm..=noise_amplitude_mm);
        p.half_width = (p.half_width + d).max(0.0);
    }
    if out.auto_tangents {
        out.recompute_tangents();
    }
    out.validate()?;
    Ok(out)
}

/// Closed counter-clockwise blade outline plus the profile it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outline {
    pub polygon: Vec<Vec2>,
    /// `(x, half_width)` stations from base to tip; ends have zero width.
    pub stations: Vec<(f64, f64)>,
}

impl Outline {
    /// Mirrors a half-width profile. Interior stations must have positive width.
    pub fn from_stations(stations: Vec<(f64, f64)>) -> Result<Self> {
        ensure(stations.len() >= 3, || "profile needs at least three stations".into())?;
        let n = stations.len();
        ensure(stations.windows(2).all(|w| w[1].0 > w[0].0), || "station x must increase".into())?;
        ensure(stations[0].1 == 0.0 && stations[n - 1].1 == 0.0, || "profile ends must be closed".into())?;
        if let Some(&(x, w)) = stations[1..n - 1].iter().find(|s| !(s.1 > 1e-9)) {
            return Err(Error::generation(format!("outline pinches to width {w} at x = {x:.3} mm")));
        }
        let mut polygon = Vec::with_capacity(2 * n - 2);
        // Counter-clockwise with y up: along the -y side to the tip, back along +y.
        for &(x, w) in &stations {
            polygon.push(Vec2::new(x, -w));
        }
        for &(x, w) in stations[1..n - 1].iter().rev() {
            polygon.push(Vec2::new(x, w));
        }
        polygon[0].y = 0.0;
        polygon[n - 1].y = 0.0;
        Ok(Self { polygon, stations })
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.polygon).abs()
    }

    pub fn bounds(&self) -> Rect {
        Rect::bounding(self.polygon.iter().copied()).expect("outline has points")
    }

    pub fn length(&self) -> f64 {
        self.stations[self.stations.len() - 1].0 - self.stations[0].0
    }

    pub fn contains(&self, p: Vec2) -> bool {
        point_in_polygon(p, &self.polygon)
    }

    /// Linear interpolation of the half-width profile at midrib position `x`.
    pub fn half_width_at_x(&self, x: f64) -> f64 {
        let s = &self.stations;
        if x <= s[0].0 || x >= s[s.len() - 1].0 {
            return 0.0;
        }
        let k = s.partition_point(|p| p.0 <= x) - 1;
        let (a, b) = (s[k], s[k + 1]);
        a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
    }
}

/// Samples `n_samples` stations uniformly in `t` and mirrors them.
pub fn sample_outline(curve: &OutlineCurve, n_samples: usize) -> Result<Outline> {
    ensure(n_samples >= 8, || format!("need at least 8 outline samples, got {n_samples}"))?;
    curve.validate()?;
    let l = curve.midrib_length_mm;
    let stations = (0..n_samples)
        .map(|i| {
            let t = i as f64 / (n_samples - 1) as f64;
            let w = if i == 0 || i == n_samples - 1 { 0.0 } else { curve.half_width_at(t).max(0.0) };
            (t * l, w)
        })
        .collect();
    Outline::from_stations(stations)
}

/// Petiole strip attached at the blade base, pointing away from the tip.
/// It is drawn into the mask but carries no area label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Petiole {
    pub length_mm: f64,
    pub width_mm: f64,
    /// How far the strip reaches into the blade so the two overlap.
    pub overlap_mm: f64,
}

impl Petiole {
    pub fn polygon(&self) -> [Vec2; 4] {
        let hw = self.width_mm / 2.0;
        [
            Vec2::new(-self.length_mm, -hw),
            Vec2::new(self.overlap_mm, -hw),
            Vec2::new(self.overlap_mm, hw),
            Vec2::new(-self.length_mm, hw),
        ]
    }

    /// Area lying outside the blade (the overlap is counted by the blade).
    pub fn exposed_area(&self) -> f64 {
        self.length_mm * self.width_mm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub species: Species,
    /// Indices of vertices on the blade outline.
    pub boundary: Vec<u32>,
    /// Projected blade outline, counter-clockwise.
    pub outline: Vec<Vec2>,
    pub petiole: Option<Petiole>,
}

/// Minimum triangle area counted as non-degenerate, mm^2.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

impl LeafMesh {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for (i, t) in self.triangles.iter().enumerate() {
            ensure(t.iter().all(|&v| v < n), || format!("triangle {i} references a missing vertex"))?;
            ensure(self.triangle_area(i) > MIN_TRIANGLE_AREA, || format!("triangle {i} is degenerate"))?;
        }
        ensure(self.vertices.iter().all(|v| v.x.is_finite() && v.y.is_finite() && v.z.is_finite()), || {
            "non-finite vertex".into()
        })
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangles[i].map(|v| self.vertices[v as usize]);
        0.5 * (b - a).cross(c - a).length()
    }

    pub fn with_species(mut self, species: Species) -> Self {
        self.species = species;
        self
    }

    /// Wavefront OBJ text (vertices and 1-based faces).
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {} leaf, {} vertices, {} triangles", self.species, self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }
}

/// Ear-clipping triangulation of a simple polygon (either orientation).
pub fn triangulate(outline: &[Vec2]) -> Result<LeafMesh> {
    ensure(outline.len() >= 3, || "polygon needs at least three vertices".into())?;
    ensure(outline.iter().all(|p| p.is_finite()), || "non-finite polygon vertex".into())?;
    ensure(is_simple_polygon(outline), || "polygon is not simple".into())?;
    let ccw = signed_area(outline) > 0.0;
    let mut idx: Vec<usize> = (0..outline.len()).collect();
    if !ccw {
        idx.reverse();
    }
    let mut triangles = Vec::with_capacity(outline.len() - 2);
    let convex = |a: Vec2, b: Vec2, c: Vec2| (b - a).cross(c - b) > 0.0;
    let inside = |p: Vec2, a: Vec2, b: Vec2, c: Vec2| {
        (b - a).cross(p - a) >= 0.0 && (c - b).cross(p - b) >= 0.0 && (a - c).cross(p - c) >= 0.0
    };
    while idx.len() > 3 {
        let m = idx.len();
        let mut clipped = false;
        for i in 0..m {
            let (ia, ib, ic) = (idx[(i + m - 1) % m], idx[i], idx[(i + 1) % m]);
            let (a, b, c) = (outline[ia], outline[ib], outline[ic]);
            if !convex(a, b, c) {
                continue;
            }
            let blocked = idx
                .iter()
                .filter(|&&j| j != ia && j != ib && j != ic)
                .any(|&j| inside(outline[j], a, b, c) && outline[j] != a && outline[j] != b && outline[j] != c);
            if blocked {
                continue;
            }
            triangles.push([ia as u32, ib as u32, ic as u32]);
            idx.remove(i);
            clipped = true;
            break;
        }
        if !clipped {
            // Only collinear runs remain; drop the flattest vertex.
            let m = idx.len();
            let flat = (0..m)
                .min_by(|&i, &j| {
                    let area = |k: usize| {
                        let (a, b, c) = (outline[idx[(k + m - 1) % m]], outline[idx[k]], outline[idx[(k + 1) % m]]);
                        (b - a).cross(c - b).abs()
                    };
                    area(i).total_cmp(&area(j))
                })
                .expect("non-empty");
            idx.remove(flat);
        }
    }
    let (a, b, c) = (outline[idx[0]], outline[idx[1]], outline[idx[2]]);
    if (b - a).cross(c - a).abs() > 2.0 * MIN_TRIANGLE_AREA {
        triangles.push([idx[0] as u32, idx[1] as u32, idx[2] as u32]);
    }
    triangles.retain(|t| {
        let [a, b, c] = t.map(|v| outline[v as usize]);
        0.5 * (b - a).cross(c - a).abs() > MIN_TRIANGLE_AREA
    });
    Ok(LeafMesh {
        vertices: outline.iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect(),
        triangles,
        species: Species::Beech,
        boundary: (0..outline.len() as u32).collect(),
        outline: if ccw { outline.to_vec() } else { outline.iter().rev().copied().collect() },
        petiole: None,
    })
}

/// Structured mesh of a mirrored profile: every interior station carries
/// `2 * rings + 1` vertices spread across its width, the two end stations a
/// single vertex. The triangles tile the outline polygon exactly.
pub fn mesh_outline(outline: &Outline, rings: usize, species: Species) -> Result<LeafMesh> {
    ensure(rings >= 1, || "need at least one ring".into())?;
    let st = &outline.stations;
    let n = st.len();
    let r = rings as i64;
    let mut vertices = Vec::new();
    let mut boundary = Vec::new();
    // Vertex ids per station, ordered from -w to +w.
    let mut columns: Vec<Vec<u32>> = Vec::with_capacity(n);
    for (i, &(x, w)) in st.iter().enumerate() {
        if i == 0 || i == n - 1 {
            boundary.push(vertices.len() as u32);
            columns.push(vec![vertices.len() as u32]);
            vertices.push(Vec3::new(x, 0.0, 0.0));
            continue;
        }
        let mut col = Vec::with_capacity(2 * rings + 1);
        for k in -r..=r {
            let y = if k.abs() == r { w * k.signum() as f64 } else { w * k as f64 / r as f64 };
            if k.abs() == r {
                boundary.push(vertices.len() as u32);
            }
            col.push(vertices.len() as u32);
            vertices.push(Vec3::new(x, y, 0.0));
        }
        columns.push(col);
    }
    let mut triangles = Vec::new();
    for i in 0..n - 1 {
        let (a, b) = (&columns[i], &columns[i + 1]);
        match (a.len(), b.len()) {
            (1, 1) => {}
            (1, _) => {
                for k in 0..b.len() - 1 {
                    triangles.push([a[0], b[k], b[k + 1]]);
                }
            }
            (_, 1) => {
                for k in 0..a.len() - 1 {
                    triangles.push([a[k], b[0], a[k + 1]]);
                }
            }
            _ => {
                for k in 0..a.len() - 1 {
                    triangles.push([a[k], b[k], b[k + 1]]);
                    triangles.push([a[k], b[k + 1], a[k + 1]]);
                }
            }
        }
    }
    let mesh = LeafMesh {
        vertices,
        triangles,
        species,
        boundary,
        outline: outline.polygon.clone(),
        petiole: None,
    };
    mesh.validate()?;
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementParams {
    pub amplitude_mm: f64,
    /// Voronoi feature points per mm^2.
    pub voronoi_density: f64,
    pub seed: NoiseSeed,
    /// Keep outline vertices in the paper plane.
    #[serde(default)]
    pub pin_boundary: bool,
}

/// Sets each vertex height to `amplitude * V(xy)`; connectivity is untouched.
pub fn displace_vertices(mesh: &LeafMesh, params: &DisplacementParams) -> Result<LeafMesh> {
    ensure(params.amplitude_mm.is_finite() && params.amplitude_mm >= 0.0, || {
        format!("displacement amplitude must be finite and >= 0, got {}", params.amplitude_mm)
    })?;
    ensure(params.voronoi_density > 0.0, || "voronoi density must be > 0".into())?;
    mesh.validate()?;
    let mut out = mesh.clone();
    if params.amplitude_mm == 0.0 {
        return Ok(out);
    }
    let seed = params.seed.derive("displace");
    for v in &mut out.vertices {
        v.z = params.amplitude_mm * voronoi_unchecked(v.xy(), params.voronoi_density, seed);
    }
    if params.pin_boundary {
        for &b in &out.boundary {
            out.vertices[b as usize].z = 0.0;
        }
    }
    Ok(out)
}

/// Sum of 3D triangle areas.
pub fn surface_area(mesh: &LeafMesh) -> f64 {
    (0..mesh.triangles.len()).map(|i| mesh.triangle_area(i)).sum()
}

/// Sum of the absolute areas of the triangles projected onto the paper plane.
pub fn projected_area(mesh: &LeafMesh) -> f64 {
    mesh.triangles
        .iter()
        .map(|t| {
            let [a, b, c] = t.map(|v| mesh.vertices[v as usize]);
            let (ab, ac) = (b - a, c - a);
            // Same expression as the z term of `surface_area` so flat meshes agree exactly.
            0.5 * (ab.x * ac.y - ab.y * ac.x).powi(2).sqrt()
        })
        .sum()
}

/// Shape preset parameters for a species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapePreset {
    pub length_mm: (f64, f64),
    /// Maximum half-width as a fraction of length.
    pub half_width_ratio: (f64, f64),
    /// Perturbation amplitude as a fraction of the maximum half-width.
    pub perturbation: f64,
}

impl ShapePreset {
    pub fn for_species(species: Species) -> Self {
        match species {
            Species::Beech => Self { length_mm: (55.0, 100.0), half_width_ratio: (0.28, 0.36), perturbation: 0.06 },
            Species::Oak => Self { length_mm: (70.0, 125.0), half_width_ratio: (0.26, 0.33), perturbation: 0.05 },
        }
    }
}

/// Unperturbed outline keys for a species with unit maximum half-width.
pub fn species_keys(species: Species) -> Vec<(f64, f64)> {
    match species {
        // Ovate: widest a little below the middle.
        Species::Beech => vec![
            (0.0, 0.0),
            (0.06, 0.42),
            (0.18, 0.78),
            (0.42, 1.0),
            (0.66, 0.82),
            (0.84, 0.48),
            (0.95, 0.16),
            (1.0, 0.0),
        ],
        // Lobed: alternating lobes and sinuses, largest lobes past the middle.
        Species::Oak => vec![
            (0.0, 0.0),
            (0.05, 0.28),
            (0.13, 0.55),
            (0.21, 0.32),
            (0.31, 0.78),
            (0.40, 0.46),
            (0.51, 0.98),
            (0.61, 0.58),
            (0.71, 0.9),
            (0.80, 0.5),
            (0.88, 0.62),
            (0.95, 0.3),
            (1.0, 0.0),
        ],
    }
}

/// Species curve scaled to `length_mm` and maximum half-width `half_width_mm`.
pub fn species_curve(species: Species, length_mm: f64, half_width_mm: f64) -> Result<OutlineCurve> {
    let keys: Vec<(f64, f64)> = species_keys(species).into_iter().map(|(t, w)| (t, w * half_width_mm)).collect();
    OutlineCurve::from_keys(&keys, length_mm)
}

/// Counts strict local maxima of the sampled half-width profile.
pub fn count_lobes(outline: &Outline) -> usize {
    let w: Vec<f64> = outline.stations.iter().map(|s| s.1).collect();
    (1..w.len() - 1).filter(|&i| w[i] > w[i - 1] && w[i] >= w[i + 1]).count()
}

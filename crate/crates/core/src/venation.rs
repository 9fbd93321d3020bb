//! Vein skeletons from a jittered branching walker, their height map, and
//! normals derived from it.

use crate::error::{ensure, Result};
use crate::geom::{distance_to_segment, Rect, Vec2, Vec3};
use crate::noise::{brownian_path, BrownianPath, NoiseSeed};
use crate::raster::Field;
use crate::rng::stream;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VenationParams {
    /// Number of vein orders including the midrib.
    pub branch_levels: u32,
    pub branches_per_level: u32,
    pub branch_angle_deg: f64,
    pub angle_jitter_deg: f64,
    pub step_sigma: f64,
    pub base_thickness: f64,
    pub thickness_decay: f64,
    /// Walker step length in the units of the bounds.
    pub step_len: f64,
    /// Child length as a fraction of the parent length.
    pub length_ratio: f64,
    /// How strongly branches bend back toward the parent direction
    /// (per unit of normalized branch length); 0 keeps them straight.
    pub tip_curvature: f64,
}

impl VenationParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.branch_levels >= 1, || "branch_levels must be >= 1".into())?;
        ensure(self.branches_per_level >= 1, || "branches_per_level must be >= 1".into())?;
        ensure(self.branch_angle_deg > 0.0 && self.branch_angle_deg < 90.0, || {
            format!("branch angle must be in (0, 90) degrees, got {}", self.branch_angle_deg)
        })?;
        ensure(self.angle_jitter_deg >= 0.0 && self.angle_jitter_deg.is_finite(), || "angle jitter must be >= 0".into())?;
        ensure(self.step_sigma >= 0.0 && self.step_sigma.is_finite(), || "step_sigma must be >= 0".into())?;
        ensure(self.base_thickness > 0.0 && self.base_thickness.is_finite(), || "base thickness must be > 0".into())?;
        ensure(self.thickness_decay > 0.0 && self.thickness_decay <= 1.0, || "thickness decay must be in (0, 1]".into())?;
        ensure(self.step_len > 0.0 && self.step_len.is_finite(), || "step length must be > 0".into())?;
        ensure(self.length_ratio > 0.0 && self.length_ratio.is_finite(), || "length ratio must be > 0".into())?;
        ensure(self.tip_curvature >= 0.0 && self.tip_curvature.is_finite(), || "tip curvature must be >= 0".into())
    }

    pub fn thickness(&self, level: u32) -> f64 {
        self.base_thickness * self.thickness_decay.powi(level as i32)
    }

    /// Number of segments the spawning rule produces: `sum_l b^l`.
    pub fn segment_count(&self) -> usize {
        (0..self.branch_levels).map(|l| (self.branches_per_level as usize).pow(l)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VeinSegment {
    pub path: BrownianPath,
    pub thickness: f64,
    pub level: u32,
    /// -1 or +1 relative to the parent; 0 for the midrib.
    pub side: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VeinSkeleton {
    pub segments: Vec<VeinSegment>,
}

impl VeinSkeleton {
    pub fn empty() -> Self {
        Self { segments: Vec::new() }
    }

    pub fn midrib(&self) -> Option<&VeinSegment> {
        self.segments.iter().find(|s| s.level == 0)
    }

    /// Applies `f` to every point and scales thicknesses by `thickness_scale`.
    pub fn map(&self, f: impl Fn(Vec2) -> Vec2, thickness_scale: f64) -> VeinSkeleton {
        VeinSkeleton {
            segments: self
                .segments
                .iter()
                .map(|s| VeinSegment {
                    path: BrownianPath { points: s.path.points.iter().map(|&p| f(p)).collect(), step_sigma: s.path.step_sigma },
                    thickness: s.thickness * thickness_scale,
                    level: s.level,
                    side: s.side,
                })
                .collect(),
        }
    }
}

/// Walks one vein: a deterministic centerline whose heading relaxes from
/// `heading` toward `relax_to`, plus a lateral Brownian offset.
#[allow(clippy::too_many_arguments)]
fn walk(
    start: Vec2,
    heading: f64,
    relax_to: f64,
    curvature: f64,
    n_steps: usize,
    step_len: f64,
    step_sigma: f64,
    seed: NoiseSeed,
) -> Result<Vec<Vec2>> {
    // Straight Brownian walk along +x: its y values are the lateral offsets.
    let lateral = brownian_path(n_steps, 1.0, step_sigma, Vec2::ZERO, 0.0, seed)?;
    let mut pts = Vec::with_capacity(n_steps + 1);
    let mut center = start;
    pts.push(start);
    for i in 1..=n_steps {
        let s = (i as f64 - 0.5) / n_steps as f64;
        let theta = if curvature == 0.0 { heading } else { relax_to + (heading - relax_to) * (-curvature * s).exp() };
        let dir = Vec2::from_angle(theta);
        center += dir * step_len;
        pts.push(center + dir.perp() * lateral.points[i].y);
    }
    Ok(pts)
}

fn clip_to(points: &mut Vec<Vec2>, bounds: &Rect) {
    if let Some(k) = points.iter().position(|&p| !bounds.contains(p)) {
        points.truncate(k.max(1));
    }
}

/// Heading of a polyline at point `i` (forward difference, backward at the end).
fn local_heading(points: &[Vec2], i: usize, fallback: f64) -> f64 {
    let d = if i + 1 < points.len() {
        points[i + 1] - points[i]
    } else if i > 0 {
        points[i] - points[i - 1]
    } else {
        return fallback;
    };
    d.y.atan2(d.x)
}

/// Traces the midrib along the horizontal center line of `bounds` and
/// spawns `branches_per_level` children from every segment below the last
/// level, at evenly spaced jittered stations on alternating sides.
pub fn trace_veins(params: &VenationParams, bounds: &Rect, seed: NoiseSeed) -> Result<VeinSkeleton> {
    params.validate()?;
    ensure(bounds.width() > 0.0 && bounds.height() > 0.0, || "venation bounds must be non-empty".into())?;
    let mut rng = stream(seed.0, "venation", 0);
    let mut segments = Vec::with_capacity(params.segment_count());

    let cy = 0.5 * (bounds.min.y + bounds.max.y);
    let start = Vec2::new(bounds.min.x, cy);
    let n_mid = (bounds.width() / params.step_len).ceil().max(1.0) as usize;
    let mid_step = bounds.width() / n_mid as f64;
    let mut mid = walk(start, 0.0, 0.0, 0.0, n_mid, mid_step, params.step_sigma, seed.derive_index("vein", 0))?;
    // The last step lands exactly on the far edge; guard against rounding.
    if let Some(last) = mid.last_mut() {
        last.x = last.x.min(bounds.max.x);
    }
    clip_to(&mut mid, bounds);
    segments.push(VeinSegment {
        path: BrownianPath { points: mid, step_sigma: params.step_sigma },
        thickness: params.thickness(0),
        level: 0,
        side: 0,
    });

    let b = params.branches_per_level as usize;
    let angle = params.branch_angle_deg.to_radians();
    let jitter = params.angle_jitter_deg.to_radians();
    let mut frontier = 0..1;
    for level in 1..params.branch_levels {
        let next_start = segments.len();
        for parent in frontier.clone() {
            let parent_pts = segments[parent].path.points.clone();
            let parent_len = segments[parent].path.arc_length().max(params.step_len);
            let parent_side = segments[parent].side;
            let parent_dir = local_heading(&parent_pts, 0, 0.0);
            for k in 0..b {
                let offset = if b > 1 { rng.random_range(-0.3..0.3) } else { 0.0 };
                let frac = ((k as f64 + 0.5 + offset) / b as f64).clamp(0.0, 1.0);
                let station = ((parent_pts.len() - 1) as f64 * frac).round() as usize;
                // Midrib children alternate sides; higher orders continue on the outer side first.
                let side: i8 = if parent_side == 0 {
                    if k % 2 == 0 { 1 } else { -1 }
                } else if k % 2 == 0 {
                    parent_side
                } else {
                    -parent_side
                };
                let a = angle + if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
                let base_heading = local_heading(&parent_pts, station, parent_dir);
                let heading = base_heading + side as f64 * a;
                let len = parent_len * params.length_ratio;
                let n = (len / params.step_len).ceil().max(1.0) as usize;
                let id = segments.len() as u64;
                let mut pts = walk(
                    parent_pts[station],
                    heading,
                    base_heading,
                    params.tip_curvature,
                    n,
                    params.step_len,
                    params.step_sigma,
                    seed.derive_index("vein", id),
                )?;
                clip_to(&mut pts, bounds);
                segments.push(VeinSegment {
                    path: BrownianPath { points: pts, step_sigma: params.step_sigma },
                    thickness: params.thickness(level),
                    level,
                    side,
                });
            }
        }
        frontier = next_start..segments.len();
    }
    Ok(VeinSkeleton { segments })
}

/// Height values in `[0, 1]` on a pixel grid.
pub type HeightMap = Field;

/// Stamps each segment as a capsule of diameter `thickness` (pixel units,
/// pixel centers at integer + 0.5) with a rounded profile that falls to 0
/// half a pixel beyond the radius. Overlaps combine by max.
pub fn rasterize_height(skeleton: &VeinSkeleton, width: usize, height: usize) -> Result<HeightMap> {
    ensure(width > 0 && height > 0, || "height map resolution must be positive".into())?;
    let mut h = Field::new(width, height);
    for seg in &skeleton.segments {
        let r = seg.thickness / 2.0;
        let reach = r + 0.5;
        let pts = &seg.path.points;
        let pairs: Vec<(Vec2, Vec2)> = if pts.len() == 1 {
            vec![(pts[0], pts[0])]
        } else {
            pts.windows(2).map(|w| (w[0], w[1])).collect()
        };
        for (a, b) in pairs {
            let x0 = ((a.x.min(b.x) - reach - 0.5).floor().max(0.0)) as usize;
            let y0 = ((a.y.min(b.y) - reach - 0.5).floor().max(0.0)) as usize;
            let x1 = ((a.x.max(b.x) + reach + 0.5).ceil().max(0.0) as usize).min(width);
            let y1 = ((a.y.max(b.y) + reach + 0.5).ceil().max(0.0) as usize).min(height);
            for y in y0..y1 {
                for x in x0..x1 {
                    let d = distance_to_segment(Vec2::new(x as f64 + 0.5, y as f64 + 0.5), a, b);
                    if d < reach {
                        let q = d / reach;
                        let v = (1.0 - q * q).sqrt() as f32;
                        let cur = h.get(x, y);
                        if v > cur {
                            h.set(x, y, v.min(1.0));
                        }
                    }
                }
            }
        }
    }
    Ok(h)
}

/// Per-pixel unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vec3>,
}

impl NormalMap {
    pub fn flat(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![Vec3::new(0.0, 0.0, 1.0); width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> Vec3 {
        self.data[y * self.width + x]
    }

    /// Bilinear blend of neighboring normals, renormalized; clamps at borders.
    pub fn sample(&self, x: f64, y: f64) -> Vec3 {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let mix = |a: Vec3, b: Vec3, t: f64| Vec3::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t, a.z + (b.z - a.z) * t);
        let top = mix(self.get(x0, y0), self.get(x1, y0), tx);
        let bottom = mix(self.get(x0, y1), self.get(x1, y1), tx);
        mix(top, bottom, ty).normalized()
    }
}

/// Gradient of `h` in height units per pixel: central differences inside,
/// one-sided at the borders.
pub fn height_gradient(h: &HeightMap, x: usize, y: usize) -> (f64, f64) {
    let diff = |lo: f32, hi: f32, span: usize| (hi as f64 - lo as f64) / span as f64;
    let gx = if h.width < 2 {
        0.0
    } else if x == 0 {
        diff(h.get(0, y), h.get(1, y), 1)
    } else if x == h.width - 1 {
        diff(h.get(x - 1, y), h.get(x, y), 1)
    } else {
        diff(h.get(x - 1, y), h.get(x + 1, y), 2)
    };
    let gy = if h.height < 2 {
        0.0
    } else if y == 0 {
        diff(h.get(x, 0), h.get(x, 1), 1)
    } else if y == h.height - 1 {
        diff(h.get(x, y - 1), h.get(x, y), 1)
    } else {
        diff(h.get(x, y - 1), h.get(x, y + 1), 2)
    };
    (gx, gy)
}

/// `n = normalize(-z dh/dx, -z dh/dy, 1)`.
pub fn height_to_normals(h: &HeightMap, z_scale: f64) -> Result<NormalMap> {
    ensure(z_scale > 0.0 && z_scale.is_finite(), || format!("z_scale must be > 0, got {z_scale}"))?;
    let mut data = Vec::with_capacity(h.width * h.height);
    for y in 0..h.height {
        for x in 0..h.width {
            let (gx, gy) = height_gradient(h, x, y);
            data.push(Vec3::new(-z_scale * gx, -z_scale * gy, 1.0).normalized());
        }
    }
    Ok(NormalMap { width: h.width, height: h.height, data })
}

/// 16-bit big-endian grayscale samples of a height map.
pub fn height_to_gray16(h: &HeightMap) -> Vec<u16> {
    h.data.iter().map(|&v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16).collect()
}

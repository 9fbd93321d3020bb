//! Seeded 2D lattice noise (gradient, Voronoi, value) and Brownian paths.

use crate::error::{ensure, Result};
use crate::geom::Vec2;
use crate::rng::{lattice_hash, stream, tag_hash, unit_f64};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{SQRT_2, TAU};

/// Root of every random quantity in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseSeed(pub u64);

impl NoiseSeed {
    /// Child seed for an independent sub-generator.
    pub fn derive(self, tag: &str) -> NoiseSeed {
        NoiseSeed(crate::rng::hash_words(&[self.0, tag_hash(tag)]))
    }

    pub fn derive_index(self, tag: &str, index: u64) -> NoiseSeed {
        NoiseSeed(crate::rng::hash_words(&[self.0, tag_hash(tag), index]))
    }
}

const TAG_GRADIENT: u64 = 0x6772_6164; // "grad"
const TAG_VORONOI: u64 = 0x766f_726f; // "voro"
const TAG_VALUE: u64 = 0x7661_6c75; // "valu"

fn check_point(p: Vec2) -> Result<()> {
    ensure(p.is_finite(), || format!("non-finite noise query point ({}, {})", p.x, p.y))
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lattice_gradient(ix: i64, iy: i64, seed: NoiseSeed) -> Vec2 {
    Vec2::from_angle(unit_f64(lattice_hash(seed.0, TAG_GRADIENT, ix, iy)) * TAU)
}

/// Perlin-style gradient noise in `[-1, 1]`, zero on the integer lattice.
pub fn gradient_noise(p: Vec2, seed: NoiseSeed) -> Result<f64> {
    check_point(p)?;
    Ok(gradient_unchecked(p, seed))
}

#[inline]
pub(crate) fn gradient_unchecked(p: Vec2, seed: NoiseSeed) -> f64 {
    let (fx, fy) = (p.x.floor(), p.y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (dx, dy) = (p.x - fx, p.y - fy);
    let corner = |cx: i64, cy: i64| {
        let g = lattice_gradient(ix + cx, iy + cy, seed);
        g.x * (dx - cx as f64) + g.y * (dy - cy as f64)
    };
    let (u, v) = (fade(dx), fade(dy));
    let a = corner(0, 0) + (corner(1, 0) - corner(0, 0)) * u;
    let b = corner(0, 1) + (corner(1, 1) - corner(0, 1)) * u;
    // Unit gradients bound the raw value by sqrt(2)/2.
    ((a + (b - a) * v) * SQRT_2).clamp(-1.0, 1.0)
}

/// Jittered feature point of Voronoi cell `(cx, cy)` for the given density.
pub fn voronoi_feature_point(cx: i64, cy: i64, density: f64, seed: NoiseSeed) -> Vec2 {
    let cell = 1.0 / density.sqrt();
    let h = lattice_hash(seed.0, TAG_VORONOI, cx, cy);
    let jx = unit_f64(h);
    let jy = unit_f64(crate::rng::mix64(h));
    Vec2::new((cx as f64 + jx) * cell, (cy as f64 + jy) * cell)
}

/// Distance to the nearest feature point (F1) of a jittered grid with
/// `density` points per unit area, divided by the cell diagonal.
pub fn voronoi_noise(p: Vec2, density: f64, seed: NoiseSeed) -> Result<f64> {
    check_point(p)?;
    ensure(density > 0.0 && density.is_finite(), || format!("voronoi density must be > 0, got {density}"))?;
    Ok(voronoi_unchecked(p, density, seed))
}

pub(crate) fn voronoi_unchecked(p: Vec2, density: f64, seed: NoiseSeed) -> f64 {
    let cell = 1.0 / density.sqrt();
    let cx = (p.x / cell).floor() as i64;
    let cy = (p.y / cell).floor() as i64;
    // Ring 2 is needed: a neighbor two cells away can beat the own-cell point.
    let mut best = f64::INFINITY;
    for oy in -2..=2 {
        for ox in -2..=2 {
            let f = voronoi_feature_point(cx + ox, cy + oy, density, seed);
            let d = (f - p).dot(f - p);
            if d < best {
                best = d;
            }
        }
    }
    (best.sqrt() / (cell * SQRT_2)).min(1.0)
}

/// Stored random value of lattice point `(ix, iy)`, in `[0, 1)`.
pub fn lattice_value(ix: i64, iy: i64, seed: NoiseSeed) -> f64 {
    unit_f64(lattice_hash(seed.0, TAG_VALUE, ix, iy))
}

/// Bilinear interpolation of per-lattice random values, in `[0, 1]`.
pub fn value_noise(p: Vec2, seed: NoiseSeed) -> Result<f64> {
    check_point(p)?;
    Ok(value_unchecked(p, seed))
}

#[inline]
pub(crate) fn value_unchecked(p: Vec2, seed: NoiseSeed) -> f64 {
    let (fx, fy) = (p.x.floor(), p.y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (u, v) = (p.x - fx, p.y - fy);
    let v00 = lattice_value(ix, iy, seed);
    let v10 = lattice_value(ix + 1, iy, seed);
    let v01 = lattice_value(ix, iy + 1, seed);
    let v11 = lattice_value(ix + 1, iy + 1, seed);
    let a = v00 + (v10 - v00) * u;
    let b = v01 + (v11 - v01) * u;
    a + (b - a) * v
}

/// Weights of the gradient, Voronoi and value noise layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBlendWeights {
    pub w_gradient: f64,
    pub w_voronoi: f64,
    pub w_value: f64,
    /// Feature-point density of the Voronoi layer, per unit area.
    #[serde(default = "default_voronoi_density")]
    pub voronoi_density: f64,
}

fn default_voronoi_density() -> f64 {
    1.0
}

impl NoiseBlendWeights {
    pub fn new(w_gradient: f64, w_voronoi: f64, w_value: f64) -> Result<Self> {
        let w = Self { w_gradient, w_voronoi, w_value, voronoi_density: 1.0 };
        w.validate()?;
        Ok(w)
    }

    pub const fn zero() -> Self {
        Self { w_gradient: 0.0, w_voronoi: 0.0, w_value: 0.0, voronoi_density: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("gradient", self.w_gradient), ("voronoi", self.w_voronoi), ("value", self.w_value)] {
            ensure(w.is_finite() && w >= 0.0, || format!("{name} weight must be finite and >= 0, got {w}"))?;
        }
        ensure(self.voronoi_density > 0.0 && self.voronoi_density.is_finite(), || {
            format!("voronoi density must be > 0, got {}", self.voronoi_density)
        })
    }

    /// Expected value of the blend, used to center it around zero.
    pub fn mean(&self) -> f64 {
        0.5 * self.w_value + 0.5 * self.w_voronoi
    }
}

/// `w_G G(p) + w_V V(p) + w_S S(p)`.
pub fn blend_noise(p: Vec2, weights: &NoiseBlendWeights, seed: NoiseSeed) -> Result<f64> {
    check_point(p)?;
    weights.validate()?;
    Ok(blend_unchecked(p, weights, seed))
}

#[inline]
pub(crate) fn blend_unchecked(p: Vec2, w: &NoiseBlendWeights, seed: NoiseSeed) -> f64 {
    let mut acc = 0.0;
    if w.w_gradient != 0.0 {
        acc += w.w_gradient * gradient_unchecked(p, seed);
    }
    if w.w_voronoi != 0.0 {
        acc += w.w_voronoi * voronoi_unchecked(p, w.voronoi_density, seed);
    }
    if w.w_value != 0.0 {
        acc += w.w_value * value_unchecked(p, seed);
    }
    acc
}

/// Polyline whose lateral offset from a straight heading is a Gaussian
/// random walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianPath {
    pub points: Vec<Vec2>,
    pub step_sigma: f64,
}

impl BrownianPath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).length()).sum()
    }

    pub fn truncate(&mut self, len: usize) {
        self.points.truncate(len.max(1));
    }
}

/// Walks `n_steps` steps of length `step_len` along `heading`; after each
/// step the lateral offset receives an independent `N(0, step_sigma^2)`
/// increment.
pub fn brownian_path(
    n_steps: usize,
    step_len: f64,
    step_sigma: f64,
    start: Vec2,
    heading: f64,
    seed: NoiseSeed,
) -> Result<BrownianPath> {
    ensure(step_sigma >= 0.0 && step_sigma.is_finite(), || format!("step sigma must be >= 0, got {step_sigma}"))?;
    ensure(step_len.is_finite() && step_len >= 0.0, || format!("step length must be >= 0, got {step_len}"))?;
    ensure(start.is_finite() && heading.is_finite(), || "non-finite path start".to_string())?;
    let dir = Vec2::from_angle(heading);
    let normal = dir.perp();
    let mut rng = stream(seed.0, "brownian", 0);
    let mut offset = 0.0;
    let mut points = Vec::with_capacity(n_steps + 1);
    points.push(start);
    for k in 1..=n_steps {
        if step_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            offset += step_sigma * z;
        }
        points.push(start + dir * (k as f64 * step_len) + normal * offset);
    }
    Ok(BrownianPath { points, step_sigma })
}

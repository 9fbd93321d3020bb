//! Procedural millimeter-paper backgrounds.
//!
//! Each axis carries a sinusoidal stripe field `A sin(B x + phi) + D`. A
//! sharpening exponent turns the sinusoid into thin lines, a second,
//! lower-frequency stripe pair draws the bold line every `major_every`
//! minor lines, and the product of all factors darkens the paper base color
//! toward the ink color.

use crate::error::{ensure, Result};
use crate::geom::Vec2;
use crate::noise::{blend_unchecked, NoiseBlendWeights, NoiseSeed};
use crate::raster::{to_u8, RasterImage, Rgb};
use crate::rng::stream;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// One axis of the stripe field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripeParams {
    pub amplitude: f64,
    /// Radians per mm; `2 pi` gives 1 mm spacing.
    pub frequency: f64,
    pub phase: f64,
    pub baseline: f64,
}

impl StripeParams {
    pub fn millimeter(amplitude: f64, baseline: f64, phase: f64) -> Self {
        Self { amplitude, frequency: TAU, phase, baseline }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.frequency > 0.0 && self.frequency.is_finite(), || {
            format!("stripe frequency must be > 0, got {}", self.frequency)
        })?;
        ensure((0.0..=1.0).contains(&self.baseline), || {
            format!("stripe baseline {} outside [0, 1]", self.baseline)
        })?;
        ensure(self.amplitude >= 0.0, || format!("stripe amplitude {} < 0", self.amplitude))?;
        ensure(self.amplitude <= self.baseline.min(1.0 - self.baseline) + 1e-12, || {
            format!("stripe amplitude {} exceeds min(D, 1 - D)", self.amplitude)
        })?;
        ensure(self.phase.is_finite(), || "stripe phase must be finite".into())
    }

    pub fn period_mm(&self) -> f64 {
        TAU / self.frequency
    }
}

/// `A sin(B x + phi) + D`.
#[inline]
pub fn stripe_intensity(x: f64, p: &StripeParams) -> f64 {
    p.amplitude * (p.frequency * x + p.phase).sin() + p.baseline
}

/// Maps a stripe intensity onto a line profile. With `sharpness == 1` the
/// intensity is returned unchanged; larger values keep the minima and pull
/// everything else up to the stripe maximum, narrowing the lines.
#[inline]
pub fn sharpen(c: f64, p: &StripeParams, sharpness: f64) -> f64 {
    if p.amplitude == 0.0 || sharpness == 1.0 {
        return c;
    }
    let top = p.baseline + p.amplitude;
    let depth = ((top - c) / (2.0 * p.amplitude)).clamp(0.0, 1.0);
    top - 2.0 * p.amplitude * depth.powf(sharpness)
}

/// Per-sheet appearance controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaperAppearance {
    pub hue_shift_deg: f64,
    pub contrast: f64,
    /// Additive offset in 8-bit channel units.
    pub brightness: f64,
    pub saturation: f64,
    pub blend_weights: NoiseBlendWeights,
    pub noise_strength: f64,
    /// Noise lattice cells per mm.
    pub noise_scale: f64,
}

impl PaperAppearance {
    pub const fn identity() -> Self {
        Self {
            hue_shift_deg: 0.0,
            contrast: 1.0,
            brightness: 0.0,
            saturation: 1.0,
            blend_weights: NoiseBlendWeights::zero(),
            noise_strength: 0.0,
            noise_scale: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure((-180.0..=180.0).contains(&self.hue_shift_deg), || {
            format!("hue shift {} outside [-180, 180]", self.hue_shift_deg)
        })?;
        ensure(self.contrast > 0.0, || format!("contrast must be > 0, got {}", self.contrast))?;
        ensure(self.saturation >= 0.0, || format!("saturation must be >= 0, got {}", self.saturation))?;
        ensure(self.brightness.is_finite(), || "brightness must be finite".into())?;
        ensure((0.0..=1.0).contains(&self.noise_strength), || {
            format!("noise strength {} outside [0, 1]", self.noise_strength)
        })?;
        ensure(self.noise_scale > 0.0, || "noise scale must be > 0".into())?;
        self.blend_weights.validate()
    }

    fn is_color_identity(&self) -> bool {
        self.hue_shift_deg == 0.0
            && self.contrast == 1.0
            && self.brightness == 0.0
            && self.saturation == 1.0
    }
}

/// Bold lines every `every` minor lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MajorLines {
    pub every: u32,
    pub amplitude: f64,
    pub baseline: f64,
    pub sharpness: f64,
}

impl MajorLines {
    /// Stripe field whose minima coincide with every `every`-th minor minimum.
    pub fn stripes_for(&self, minor: &StripeParams) -> StripeParams {
        let k = f64::from(self.every);
        StripeParams {
            amplitude: self.amplitude,
            frequency: minor.frequency / k,
            phase: 1.5 * PI - (1.5 * PI - minor.phase) / k,
            baseline: self.baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperParams {
    pub stripes_x: StripeParams,
    pub stripes_y: StripeParams,
    pub sharpness: f64,
    pub major: Option<MajorLines>,
    pub base_color: Rgb,
    pub ink_color: Rgb,
    pub appearance: PaperAppearance,
    /// Gaussian post-blur in output pixels; 0 keeps the sheet sharp.
    pub blur_sigma_px: f64,
}

impl PaperParams {
    pub fn validate(&self) -> Result<()> {
        self.stripes_x.validate()?;
        self.stripes_y.validate()?;
        ensure(self.sharpness >= 1.0, || format!("sharpness must be >= 1, got {}", self.sharpness))?;
        if let Some(m) = &self.major {
            ensure(m.every >= 1, || "major_every must be >= 1".into())?;
            m.stripes_for(&self.stripes_x).validate()?;
            ensure(m.sharpness >= 1.0, || "major sharpness must be >= 1".into())?;
        }
        ensure(self.blur_sigma_px >= 0.0, || "blur must be >= 0".into())?;
        self.appearance.validate()
    }

    /// Plain analytic grid: no noise, no appearance change, no blur.
    pub fn plain() -> Self {
        Self {
            stripes_x: StripeParams::millimeter(0.2, 0.8, 0.0),
            stripes_y: StripeParams::millimeter(0.2, 0.8, 0.0),
            sharpness: 24.0,
            major: Some(MajorLines { every: 10, amplitude: 0.3, baseline: 0.7, sharpness: 600.0 }),
            base_color: Rgb::new(246, 241, 228),
            ink_color: Rgb::new(214, 112, 58),
            appearance: PaperAppearance::identity(),
            blur_sigma_px: 0.0,
        }
    }

    /// Random sheet drawn from a warm off-white palette and common ink colors.
    pub fn sample(seed: NoiseSeed) -> Self {
        const BASES: [Rgb; 5] = [
            Rgb::new(247, 243, 232),
            Rgb::new(240, 236, 222),
            Rgb::new(250, 247, 240),
            Rgb::new(236, 230, 212),
            Rgb::new(244, 238, 226),
        ];
        const INKS: [Rgb; 4] = [
            Rgb::new(214, 112, 58),
            Rgb::new(196, 92, 66),
            Rgb::new(92, 128, 178),
            Rgb::new(150, 150, 160),
        ];
        let mut rng = stream(seed.0, "paper-params", 0);
        let jitter = |c: Rgb, rng: &mut rand_chacha::ChaCha8Rng| {
            Rgb(c.0.map(|v| to_u8(v as f64 + rng.random_range(-4.0..4.0))))
        };
        let base_color = jitter(BASES[rng.random_range(0..BASES.len())], &mut rng);
        let ink_color = jitter(INKS[rng.random_range(0..INKS.len())], &mut rng);
        let amp = rng.random_range(0.12..0.25);
        let phase_x = rng.random_range(0.0..TAU);
        let phase_y = rng.random_range(0.0..TAU);
        let appearance = PaperAppearance {
            hue_shift_deg: rng.random_range(-8.0..8.0),
            contrast: rng.random_range(0.9..1.1),
            brightness: rng.random_range(-10.0..6.0),
            saturation: rng.random_range(0.8..1.15),
            blend_weights: NoiseBlendWeights {
                w_gradient: rng.random_range(0.2..1.0),
                w_voronoi: rng.random_range(0.0..0.4),
                w_value: rng.random_range(0.0..0.6),
                voronoi_density: rng.random_range(0.5..2.0),
            },
            noise_strength: rng.random_range(0.0..0.05),
            noise_scale: rng.random_range(0.04..0.25),
        };
        Self {
            stripes_x: StripeParams::millimeter(amp, 1.0 - amp, phase_x),
            stripes_y: StripeParams::millimeter(amp, 1.0 - amp, phase_y),
            sharpness: rng.random_range(14.0..40.0),
            major: Some(MajorLines {
                every: 10,
                amplitude: rng.random_range(0.2..0.4),
                baseline: 0.6,
                sharpness: rng.random_range(300.0..900.0),
            }),
            base_color,
            ink_color,
            appearance,
            blur_sigma_px: if rng.random_bool(0.3) { rng.random_range(0.3..1.2) } else { 0.0 },
        }
    }

    /// Ink coverage factor at `(x, y)` mm; 1 is bare paper.
    pub fn grid_factor(&self, x: f64, y: f64) -> f64 {
        let mut f = sharpen(stripe_intensity(x, &self.stripes_x), &self.stripes_x, self.sharpness)
            * sharpen(stripe_intensity(y, &self.stripes_y), &self.stripes_y, self.sharpness);
        if let Some(m) = &self.major {
            let mx = m.stripes_for(&self.stripes_x);
            let my = m.stripes_for(&self.stripes_y);
            f *= sharpen(stripe_intensity(x, &mx), &mx, m.sharpness)
                * sharpen(stripe_intensity(y, &my), &my, m.sharpness);
        }
        f
    }

    /// Analytic grid color before appearance changes, in channel units.
    pub fn grid_color(&self, x: f64, y: f64) -> [f64; 3] {
        self.ink_color.lerp(self.base_color, self.grid_factor(x, y))
    }
}

/// A rendered sheet with its physical calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct PaperSheet {
    pub image: RasterImage,
    pub grid_spacing_mm: f64,
    pub major_every: u32,
    pub pixels_per_mm: f64,
    pub width_mm: f64,
    pub height_mm: f64,
}

impl PaperSheet {
    /// Bilinear sample at physical coordinates; the sheet tiles periodically.
    pub fn sample(&self, x_mm: f64, y_mm: f64) -> [f64; 3] {
        let (w, h) = self.image.dims();
        let fx = x_mm * self.pixels_per_mm - 0.5;
        let fy = y_mm * self.pixels_per_mm - 0.5;
        let (x0, y0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - x0, fy - y0);
        let xi = |o: i64| (x0 as i64 + o).rem_euclid(w as i64) as usize;
        let yi = |o: i64| (y0 as i64 + o).rem_euclid(h as i64) as usize;
        let c00 = self.image.get(xi(0), yi(0)).to_f64();
        if tx == 0.0 && ty == 0.0 {
            return c00;
        }
        let c10 = self.image.get(xi(1), yi(0)).to_f64();
        let c01 = self.image.get(xi(0), yi(1)).to_f64();
        let c11 = self.image.get(xi(1), yi(1)).to_f64();
        [0, 1, 2].map(|c| {
            let a = c00[c] + (c10[c] - c00[c]) * tx;
            let b = c01[c] + (c11[c] - c01[c]) * tx;
            a + (b - a) * ty
        })
    }

    /// Color statistics of the sheet for paper/leaf separation.
    pub fn palette(&self) -> PaperPalette {
        PaperPalette::estimate(&self.image)
    }
}

/// Representative paper and ink colors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaperPalette {
    pub base: [f64; 3],
    pub ink: [f64; 3],
}

impl PaperPalette {
    /// Base is the per-channel median, ink the mean of the darkest 1% by luma.
    pub fn estimate(image: &RasterImage) -> Self {
        let px: Vec<Rgb> = image.pixels().collect();
        let mut base = [0.0; 3];
        for (c, b) in base.iter_mut().enumerate() {
            let mut ch: Vec<u8> = px.iter().map(|p| p.0[c]).collect();
            ch.sort_unstable();
            *b = f64::from(ch[ch.len() / 2]);
        }
        let luma = |p: &Rgb| 0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64;
        let mut by_luma = px;
        by_luma.sort_by(|a, b| luma(a).total_cmp(&luma(b)));
        let k = (by_luma.len() / 100).max(1);
        let mut ink = [0.0; 3];
        for p in &by_luma[..k] {
            for c in 0..3 {
                ink[c] += p.0[c] as f64 / k as f64;
            }
        }
        Self { base, ink }
    }
}

/// Renders a `width_mm` x `height_mm` sheet at `pixels_per_mm`.
pub fn render_paper(
    params: &PaperParams,
    width_mm: f64,
    height_mm: f64,
    pixels_per_mm: f64,
    seed: NoiseSeed,
) -> Result<PaperSheet> {
    ensure(width_mm > 0.0 && height_mm > 0.0, || {
        format!("paper size must be positive, got {width_mm}x{height_mm}")
    })?;
    ensure(pixels_per_mm > 0.0 && pixels_per_mm.is_finite(), || {
        format!("pixels_per_mm must be > 0, got {pixels_per_mm}")
    })?;
    params.validate()?;
    let w = (width_mm * pixels_per_mm).round().max(1.0) as usize;
    let h = (height_mm * pixels_per_mm).round().max(1.0) as usize;
    let mut image = RasterImage::new(w, h);
    for y in 0..h {
        let ym = (y as f64 + 0.5) / pixels_per_mm;
        for x in 0..w {
            let xm = (x as f64 + 0.5) / pixels_per_mm;
            image.set(x, y, Rgb::from_f64(params.grid_color(xm, ym)));
        }
    }
    let ap = &params.appearance;
    if !ap.is_color_identity() {
        image = adjust_appearance(&image, ap)?;
    }
    if ap.noise_strength > 0.0 {
        let noise_seed = seed.derive("paper-noise");
        let mean = ap.blend_weights.mean();
        for y in 0..h {
            for x in 0..w {
                let p = Vec2::new((x as f64 + 0.5) / pixels_per_mm, (y as f64 + 0.5) / pixels_per_mm)
                    * ap.noise_scale;
                let d = 255.0 * ap.noise_strength * (blend_unchecked(p, &ap.blend_weights, noise_seed) - mean);
                let c = image.get(x, y).to_f64();
                image.set(x, y, Rgb::from_f64(c.map(|v| v + d)));
            }
        }
    }
    if params.blur_sigma_px > 0.0 {
        image = image.gaussian_blur(params.blur_sigma_px);
    }
    Ok(PaperSheet {
        image,
        grid_spacing_mm: params.stripes_x.period_mm(),
        major_every: params.major.map_or(1, |m| m.every),
        pixels_per_mm,
        width_mm,
        height_mm,
    })
}

const MID_GRAY: f64 = 128.0;

/// Hue rotation, saturation scaling, contrast about mid-gray (128) and a
/// brightness offset, in that order, clamped to the channel range.
pub fn adjust_appearance(image: &RasterImage, ap: &PaperAppearance) -> Result<RasterImage> {
    ap.validate()?;
    let (w, h) = image.dims();
    let mut out = RasterImage::new(w, h);
    let touch_hsv = ap.hue_shift_deg != 0.0 || ap.saturation != 1.0;
    for y in 0..h {
        for x in 0..w {
            let mut c = image.get(x, y).to_f64();
            if touch_hsv {
                let (hh, s, v) = rgb_to_hsv(c);
                c = hsv_to_rgb((hh + ap.hue_shift_deg).rem_euclid(360.0), (s * ap.saturation).min(1.0), v);
            }
            let c = c.map(|v| (v - MID_GRAY) * ap.contrast + MID_GRAY + ap.brightness);
            out.set(x, y, Rgb::from_f64(c));
        }
    }
    Ok(out)
}

/// Channels in 0..=255; hue in degrees, saturation in [0, 1], value in channel units.
fn rgb_to_hsv(c: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = c;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

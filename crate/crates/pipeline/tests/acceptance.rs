//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use leafgen::config::GenerationConfig;
use leafgen::filter::{run_filter_stage, PredictionSource};
use leafgen::generate::{generate, GenerateOptions, IMAGES_DIR, MASKS_DIR, EDGES_DIR};
use leafgen::inpaint::{run_inpaint_stage, InpaintClient, MockBehavior, MockTransport, RetryPolicy, SamplerSettings, InpaintRequest};
use leafgen::io::{read_mask_png, read_rgb_png, write_mask_png};
use leafgen::manifest::{DatasetManifest, INPAINTED_MANIFEST, MANIFEST};
use leafgen::validate::validate_dataset;
use leafgen_core::annotate::{annotate_datapoint, relative_error, AnnotationMeta, Provenance};
use leafgen_core::edges::{canny, CannyParams, NMS_TIE_EPS};
use leafgen_core::geom::Vec2;
use leafgen_core::leaf::{build_leaf_from_outline, LeafParams, LeafSampling};
use leafgen_core::leaf_shape::{displace_vertices, mesh_outline, projected_area, surface_area, DisplacementParams, Outline};
use leafgen_core::leaf_texture::{compose_surface, shade, LeafTextureParams, TextureFrame};
use leafgen_core::metrics::{deviation, iou, mask_pixel_error, mean_relative_error, FilterDecision};
use leafgen_core::noise::{blend_noise, brownian_path, gradient_noise, value_noise, voronoi_noise, NoiseBlendWeights};
use leafgen_core::paper::{render_paper, PaperParams};
use leafgen_core::raster::Field;
use leafgen_core::rng::stream;
use leafgen_core::scene::{render_passes, LeafPose, SceneParams};
use leafgen_core::venation::height_to_normals;
use leafgen_core::{BinaryMask, NoiseSeed, RasterImage, Rgb, Species, Vec3};
use rand::Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>, what: &str) -> std::result::Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

struct Workspace {
    _root: tempfile::TempDir,
    big: PathBuf,
    small_a: PathBuf,
    small_b: PathBuf,
    small_c: PathBuf,
}

fn big_config(out: &Path) -> GenerationConfig {
    GenerationConfig { n_leaves: 250, master_seed: 2024, write_meshes: true, output_dir: out.into(), ..Default::default() }
}

fn small_config(out: &Path) -> GenerationConfig {
    GenerationConfig { n_leaves: 10, master_seed: 77, output_dir: out.into(), ..Default::default() }
}

// 1: 250 leaves -> 1000 complete datapoints, validate clean, under 10 minutes.
fn structural_fidelity(ws: &Workspace) -> Check {
    let cfg = big_config(&ws.big);
    let t = Instant::now();
    let s = ok(generate(&cfg, &GenerateOptions::default()), "generate")?;
    let elapsed = t.elapsed();
    ensure!(s.failures.is_empty(), "{} leaves failed", s.failures.len());
    let m = s.manifest.ok_or("no manifest written")?;
    ensure!(m.entries.len() == 1000, "{} datapoints, expected 1000", m.entries.len());
    let mut passes = [0usize; 4];
    for a in &m.entries {
        passes[a.pass_index] += 1;
        for p in [&a.image_path, &a.mask_path, &a.edge_path] {
            ensure!(ws.big.join(p).is_file(), "{}: missing {p}", a.id);
        }
    }
    ensure!(passes == [250; 4], "pass distribution {passes:?}");
    let r = ok(validate_dataset(&ws.big), "validate")?;
    ensure!(r.is_clean(), "{} violations, first: {:?}", r.violations.len(), r.violations.first());
    ensure!(elapsed < Duration::from_secs(600), "generation took {elapsed:?}");
    Ok(format!("1000 datapoints (250 x 4 passes), 0 violations, generated in {:.1}s", elapsed.as_secs_f64()))
}

fn obj_is_flat(text: &str) -> bool {
    text.lines()
        .filter(|l| l.starts_with("v "))
        .all(|l| l.split_whitespace().nth(3).and_then(|z| z.parse::<f64>().ok()) == Some(0.0))
}

// 2: mask area vs projected area within 2% for every datapoint; flat leaves
// have surface == projected to 1e-9.
fn area_consistency(ws: &Workspace) -> Check {
    let m = ok(DatasetManifest::read(&ws.big.join(MANIFEST)), "manifest")?;
    ensure!(m.entries.len() >= 500, "only {} datapoints", m.entries.len());
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    for a in &m.entries {
        let mask = ok(read_mask_png(&ws.big.join(&a.mask_path)), "mask")?;
        let area = mask.count() as f64 * a.mm_per_pixel * a.mm_per_pixel;
        let gap = (area - a.projected_area_mm2).abs() / a.projected_area_mm2;
        worst = worst.max(gap);
        ensure!(gap <= 0.02, "{}: mask/area gap {:.4}", a.id, gap);
        let leaf = a.id.split('_').next().unwrap_or_default();
        let obj = ok(std::fs::read_to_string(ws.big.join("meshes").join(format!("{leaf}.obj"))), "mesh")?;
        if obj_is_flat(&obj) {
            flat += 1;
            let rel = (a.surface_area_mm2 - a.projected_area_mm2).abs() / a.projected_area_mm2;
            ensure!(rel <= 1e-9, "{}: flat leaf with surface/projected gap {rel:e}", a.id);
        }
    }
    ensure!(flat > 0, "no flat leaves in the sample");
    Ok(format!("{} datapoints, worst gap {:.3}%, {} flat-leaf datapoints exact", m.entries.len(), 100.0 * worst, flat))
}

// 3: a disc of radius 50 mm.
fn disc_oracle() -> Check {
    let r = 50.0;
    let exact = std::f64::consts::PI * r * r;
    let n = 801;
    let stations = (0..n)
        .map(|i| {
            let x = 2.0 * r * i as f64 / (n - 1) as f64;
            let w = if i == 0 || i == n - 1 { 0.0 } else { (r * r - (x - r) * (x - r)).max(0.0).sqrt() };
            (x, w)
        })
        .collect();
    let outline = ok(Outline::from_stations(stations), "outline")?;
    let mut params = ok(LeafParams::sample(Species::Beech, NoiseSeed(5), &LeafSampling::default()), "params")?;
    params.displacement.amplitude_mm = 0.0;
    params.petiole = None;
    params.texture.hole_density = 0.0;
    params.texture.edge_erosion_mm = 0.0;
    let leaf = ok(build_leaf_from_outline(&params, outline), "build")?;
    let scene = SceneParams {
        gamma: 1.0,
        camera_extent_mm: 160.0,
        width: 512,
        height: 512,
        pose: LeafPose { translation_mm: Vec2::new(30.0, 80.0), rotation: 0.0 },
        distractors: vec![],
    };
    let paper = ok(render_paper(&PaperParams::sample(NoiseSeed(9)), 160.0, 160.0, 512.0 / 160.0, NoiseSeed(9)), "paper")?;
    let dp = ok(render_passes(&leaf.surface, &paper, &scene, NoiseSeed(3)), "render")?.remove(0);
    let meta = AnnotationMeta {
        id: "disc_0".into(),
        seed: 5,
        image_path: String::new(),
        mask_path: String::new(),
        edge_path: String::new(),
        paper_palette: paper.palette(),
        hole_count: 0,
    };
    let a = ok(annotate_datapoint(&dp, &leaf.mesh, meta), "annotate")?;
    let label_err = ok(relative_error(a.surface_area_mm2, exact), "re")?;
    let mask_err = ok(relative_error(a.mask_area_mm2(), exact), "re")?;
    ensure!(label_err <= 0.005, "label {:.2} mm^2 off by {:.3}%", a.surface_area_mm2, 100.0 * label_err);
    ensure!(mask_err <= 0.02, "mask area {:.2} mm^2 off by {:.3}%", a.mask_area_mm2(), 100.0 * mask_err);
    Ok(format!(
        "label {:.2} vs {:.2} mm^2 ({:.3}%), mask {:.2} mm^2 ({:.3}%)",
        a.surface_area_mm2,
        exact,
        100.0 * label_err,
        a.mask_area_mm2(),
        100.0 * mask_err
    ))
}

fn dataset_files(dir: &Path) -> std::result::Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for sub in [IMAGES_DIR, MASKS_DIR, EDGES_DIR] {
        let mut names: Vec<_> = ok(std::fs::read_dir(dir.join(sub)), sub)?.filter_map(|e| e.ok()).map(|e| e.file_name()).collect();
        names.sort();
        for n in names {
            let rel = format!("{sub}/{}", n.to_string_lossy());
            out.push((rel.clone(), ok(std::fs::read(dir.join(&rel)), &rel)?));
        }
    }
    Ok(out)
}

/// Manifest text with the timestamp blanked.
fn manifest_without_timestamp(dir: &Path) -> std::result::Result<String, String> {
    let mut m = ok(DatasetManifest::read(&dir.join(MANIFEST)), "manifest")?;
    m.header.created_at.clear();
    ok(m.to_jsonl(), "serialize")
}

// 4: identical reruns; interrupt + resume equals uninterrupted.
fn determinism(ws: &Workspace) -> Check {
    for dir in [&ws.small_a, &ws.small_b] {
        let s = ok(generate(&small_config(dir), &GenerateOptions::default()), "generate")?;
        ensure!(s.failures.is_empty(), "failures in {}", dir.display());
    }
    let c = small_config(&ws.small_c);
    let part = ok(generate(&c, &GenerateOptions { limit: Some(4) }), "interrupted run")?;
    ensure!(part.manifest.is_none(), "interrupted run wrote a manifest");
    let resumed = ok(generate(&c, &GenerateOptions::default()), "resume")?;
    ensure!(resumed.resumed_leaves == 4 && resumed.rendered_leaves == 6, "resume rendered {} and skipped {}", resumed.rendered_leaves, resumed.resumed_leaves);

    let a = dataset_files(&ws.small_a)?;
    ensure!(a.len() == 120, "{} files in run A", a.len());
    let ma = manifest_without_timestamp(&ws.small_a)?;
    for (name, dir) in [("rerun", &ws.small_b), ("resumed run", &ws.small_c)] {
        let b = dataset_files(dir)?;
        ensure!(a.len() == b.len(), "{name}: file count {} vs {}", b.len(), a.len());
        for ((pa, da), (pb, db)) in a.iter().zip(&b) {
            ensure!(pa == pb && da == db, "{name}: {pa} differs");
        }
        ensure!(ma == manifest_without_timestamp(dir)?, "{name}: manifest differs");
    }
    Ok("rerun and interrupted+resumed run are byte-identical to the first run (120 files, manifest)".into())
}

fn brute_counts(p: &[bool], t: &[bool]) -> (usize, usize, usize, usize, usize) {
    let (mut inter, mut uni, mut xor, mut np, mut nt) = (0, 0, 0, 0, 0);
    for (&a, &b) in p.iter().zip(t) {
        inter += (a && b) as usize;
        uni += (a || b) as usize;
        xor += (a != b) as usize;
        np += a as usize;
        nt += b as usize;
    }
    (inter, uni, xor, np, nt)
}

// 5: metric functions against per-pixel references.
fn metric_oracles() -> Check {
    let mut rng = stream(11, "metric-battery", 0);
    let mut pairs = 0;
    for k in 0..80 {
        let (w, h) = (rng.random_range(1..40usize), rng.random_range(1..40usize));
        let dt = rng.random_range(0.05..0.9);
        let mut t: Vec<bool> = (0..w * h).map(|_| rng.random_bool(dt)).collect();
        t[rng.random_range(0..w * h)] = true;
        let p: Vec<bool> = match k % 5 {
            0 => t.clone(),
            1 => t.iter().map(|&v| !v).collect(),
            2 => t.iter().map(|&v| v && rng.random_bool(0.7)).collect(),
            3 => t.iter().map(|&v| v || rng.random_bool(0.2)).collect(),
            _ => {
                let d = rng.random_range(0.0..1.0);
                (0..w * h).map(|_| rng.random_bool(d)).collect()
            }
        };
        let pm = ok(BinaryMask::from_bools(w, h, p.clone()), "mask")?;
        let tm = ok(BinaryMask::from_bools(w, h, t.clone()), "mask")?;
        let (inter, uni, xor, np, nt) = brute_counts(&p, &t);
        let want_iou = if uni == 0 { 1.0 } else { inter as f64 / uni as f64 };
        let want_mpe = (np as f64 - nt as f64).abs() / nt as f64;
        let want_dev = xor as f64 / nt as f64;
        let got = (ok(iou(&pm, &tm), "iou")?, ok(mask_pixel_error(&pm, &tm), "mpe")?, ok(deviation(&pm, &tm), "dev")?);
        ensure!((got.0 - want_iou).abs() <= 1e-12, "pair {k}: iou {} vs {want_iou}", got.0);
        ensure!((got.1 - want_mpe).abs() <= 1e-12, "pair {k}: mpe {} vs {want_mpe}", got.1);
        ensure!((got.2 - want_dev).abs() <= 1e-12, "pair {k}: deviation {} vs {want_dev}", got.2);
        pairs += 1;
    }
    let mre_cases: [(&[(f64, f64)], f64); 5] = [
        (&[(100.0, 100.0), (5.0, 5.0)], 0.0),
        (&[(110.0, 100.0), (90.0, 100.0)], 0.10),
        (&[(106.2, 100.0)], 0.062),
        (&[(87.5, 100.0)], 0.125),
        (&[(50.0, 200.0), (300.0, 200.0), (200.0, 200.0)], (0.75 + 0.5 + 0.0) / 3.0),
    ];
    for (pairs_in, want) in mre_cases {
        let got = ok(mean_relative_error(pairs_in), "mre")?;
        ensure!((got - want).abs() <= 1e-12, "mre {got} vs {want}");
    }
    // 100-pixel truth; +15 pixels sits exactly on the threshold, +16 is over.
    let truth = BinaryMask::from_fn(20, 20, |x, y| x < 10 && y < 10);
    let plus = |n: usize| BinaryMask::from_fn(20, 20, |x, y| (x < 10 && y < 10) || (y == 15 && x < n));
    let at = ok(deviation(&plus(15), &truth), "dev")?;
    let over = ok(deviation(&plus(16), &truth), "dev")?;
    ensure!(at == 0.15 && FilterDecision::new(at, 0.15).kept, "deviation {at} at threshold not kept");
    ensure!(over == 0.16 && !FilterDecision::new(over, 0.15).kept, "deviation {over} above threshold kept");
    Ok(format!("{pairs} mask pairs and {} MRE cases exact to 1e-12; 0.15 kept, 0.16 rejected", mre_cases.len()))
}

/// Straightforward Canny: 2D Gaussian convolution, Sobel, 4-sector
/// non-maximum suppression keeping near-ties, recursive 8-connected
/// hysteresis, border ring suppressed.
struct NaiveCanny {
    mag: Vec<f64>,
    nbr: Vec<(f64, f64)>,
    edges: Vec<bool>,
}

fn naive_canny(img: &RasterImage, p: &CannyParams) -> NaiveCanny {
    let (w, h) = img.dims();
    let at = |v: &[f64], x: isize, y: isize| v[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize];
    let gray: Vec<f64> = (0..w * h)
        .map(|i| {
            let c = img.get(i % w, i / w).0;
            (0.299f32 * c[0] as f32 + 0.587f32 * c[1] as f32 + 0.114f32 * c[2] as f32) as f64
        })
        .collect();
    let r = (3.0 * p.gaussian_sigma).ceil().max(1.0) as isize;
    let g = |i: isize| (-((i * i) as f64) / (2.0 * p.gaussian_sigma * p.gaussian_sigma)).exp();
    let norm: f64 = (-r..=r).map(g).sum::<f64>();
    let mut smooth = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    s += g(dx) * g(dy) * at(&gray, x + dx, y + dy);
                }
            }
            smooth[y as usize * w + x as usize] = s / (norm * norm);
        }
    }
    let mut mag = vec![0.0; w * h];
    let mut ang = vec![0.0; w * h];
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..3isize {
                for i in 0..3isize {
                    let v = at(&smooth, x + i - 1, y + j - 1);
                    gx += kx[j as usize][i as usize] * v;
                    gy += kx[i as usize][j as usize] * v;
                }
            }
            let k = y as usize * w + x as usize;
            mag[k] = (gx * gx + gy * gy).sqrt();
            ang[k] = gy.atan2(gx).to_degrees().rem_euclid(180.0);
        }
    }
    let mut nbr = vec![(0.0, 0.0); w * h];
    let mut thin = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let k = y * w + x;
            let a = ang[k];
            let (dx, dy): (isize, isize) = if !(22.5..157.5).contains(&a) {
                (1, 0)
            } else if a < 67.5 {
                (1, 1)
            } else if a < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let n1 = mag[((y as isize - dy) as usize) * w + (x as isize - dx) as usize];
            let n2 = mag[((y as isize + dy) as usize) * w + (x as isize + dx) as usize];
            nbr[k] = (n1, n2);
            let tol = NMS_TIE_EPS * mag[k].max(1.0);
            if mag[k] > 0.0 && mag[k] + tol >= n1 && mag[k] + tol >= n2 {
                thin[k] = mag[k];
            }
        }
    }
    let mut edges = vec![false; w * h];
    fn grow(k: usize, w: usize, h: usize, thin: &[f64], low: f64, edges: &mut [bool]) {
        let (x, y) = ((k % w) as isize, (k / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    let j = ny as usize * w + nx as usize;
                    if !edges[j] && thin[j] > 0.0 && thin[j] >= low {
                        edges[j] = true;
                        grow(j, w, h, thin, low, edges);
                    }
                }
            }
        }
    }
    for k in 0..w * h {
        if thin[k] > 0.0 && thin[k] >= p.high_threshold && !edges[k] {
            edges[k] = true;
            grow(k, w, h, &thin, p.low_threshold, &mut edges);
        }
    }
    NaiveCanny { mag, nbr, edges }
}

fn random_image(k: u64) -> RasterImage {
    let mut rng = stream(k, "canny-images", 0);
    let mut img = RasterImage::new(32, 32);
    let base = [rng.random_range(0..=255u8), rng.random_range(0..=255u8), rng.random_range(0..=255u8)];
    for y in 0..32 {
        for x in 0..32 {
            img.set(x, y, Rgb(base));
        }
    }
    for _ in 0..rng.random_range(1..6) {
        let (x0, y0) = (rng.random_range(0..32), rng.random_range(0..32));
        let (x1, y1) = (rng.random_range(x0..=32), rng.random_range(y0..=32));
        let c = Rgb::new(rng.random(), rng.random(), rng.random());
        for y in y0..y1 {
            for x in x0..x1 {
                img.set(x, y, c);
            }
        }
    }
    let noise = rng.random_range(0..60i32);
    for y in 0..32 {
        for x in 0..32 {
            let c = img.get(x, y).0;
            img.set(x, y, Rgb(c.map(|v| (v as i32 + rng.random_range(-noise..=noise)).clamp(0, 255) as u8)));
        }
    }
    img
}

// 6: Canny against the naive reference on 20 random 32x32 images.
fn canny_oracle() -> Check {
    let p = CannyParams::default();
    let mut total_edges = 0;
    let mut ties = 0;
    for k in 0..20 {
        let img = random_image(k);
        let got = ok(canny(&img, &p), "canny")?;
        let want = naive_canny(&img, &p);
        for i in 0..32 * 32 {
            if got.as_slice()[i] != want.edges[i] {
                // Only a magnitude tie within the documented slack may differ.
                let (m, (a, b)) = (want.mag[i], want.nbr[i]);
                let slack = 4.0 * NMS_TIE_EPS * m.max(1.0);
                let near = |v: f64| (m - v).abs() <= slack;
                let tie = near(a) || near(b) || near(p.low_threshold) || near(p.high_threshold);
                ensure!(tie, "image {k}: pixel ({}, {}) differs without a tie", i % 32, i / 32);
                ties += 1;
            }
        }
        total_edges += got.count();
    }
    ensure!(total_edges > 0, "no edges found in any test image");
    for v in [0u8, 1, 128, 254, 255] {
        let e = ok(canny(&RasterImage::filled(32, 32, Rgb::new(v, v, v)), &p), "canny")?;
        ensure!(e.is_empty(), "uniform image {v} produced edges");
    }
    Ok(format!("20 images, {total_edges} edge pixels, {ties} tie-break differences; uniform inputs empty"))
}

// 7: 20% of predictions corrupted beyond threshold -> exactly 20% rejected.
fn filter_fault_battery(ws: &Workspace) -> Check {
    let out = &ws.small_a;
    let m = ok(DatasetManifest::read(&out.join(MANIFEST)), "manifest")?;
    let n = m.entries.len();
    ensure!(n % 5 == 0 && n > 0, "{n} entries");
    let pred_dir = out.join("predictions");
    let mut corrupted = Vec::new();
    for (i, a) in m.entries.iter().enumerate() {
        let truth = ok(read_mask_png(&out.join(&a.mask_path)), "mask")?;
        let pred = if i % 5 == 2 {
            // Drop the top 30% of the foreground rows' pixels.
            let target = truth.count() * 3 / 10;
            let mut removed = 0;
            let mut p = truth.clone();
            'outer: for y in 0..p.height() {
                for x in 0..p.width() {
                    if p.get(x, y) {
                        p.set(x, y, false);
                        removed += 1;
                        if removed >= target {
                            break 'outer;
                        }
                    }
                }
            }
            corrupted.push(a.id.clone());
            p
        } else {
            truth
        };
        ok(write_mask_png(&pred_dir.join(format!("{}.png", a.id)), &pred), "write prediction")?;
    }
    let mut cfg = small_config(out).filter;
    cfg.predictions = pred_dir.to_string_lossy().into_owned();
    let o = ok(run_filter_stage(out, &cfg), "filter")?;
    let r = &o.report;
    ensure!(r.rejected * 5 == n && r.rejection_rate == 0.2, "rejection rate {} ({} of {n})", r.rejection_rate, r.rejected);
    let mut rejected: Vec<String> = o.rejected.iter().map(|a| a.id.clone()).collect();
    rejected.sort();
    ensure!(rejected == corrupted, "rejected set differs from corrupted set");
    ensure!(r.kept + r.rejected + r.unscored == n && r.unscored == 0, "partition sizes do not add up");

    // Recompute the report statistics directly.
    let src = PredictionSource::Directory(pred_dir.clone());
    let mut devs = Vec::new();
    let mut ious = Vec::new();
    for a in &m.entries {
        let truth = ok(read_mask_png(&out.join(&a.mask_path)), "mask")?;
        let pred = ok(src.predict(out, a), "predict")?.ok_or("missing prediction")?;
        devs.push(ok(deviation(&pred, &truth), "dev")?);
        ious.push(ok(iou(&pred, &truth), "iou")?);
    }
    let mean = devs.iter().sum::<f64>() / n as f64;
    let mut sorted = devs.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = |q: f64| sorted[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
    let stats = r.deviation.as_ref().ok_or("no deviation stats")?;
    ensure!((stats.mean - mean).abs() <= 1e-12, "mean deviation {} vs {mean}", stats.mean);
    ensure!(stats.p50 == rank(0.5) && stats.p90 == rank(0.9) && stats.p95 == rank(0.95), "percentiles differ");
    ensure!(stats.max == sorted[n - 1], "max differs");
    let mean_iou = ious.iter().sum::<f64>() / n as f64;
    ensure!((r.mean_iou.unwrap_or(f64::NAN) - mean_iou).abs() <= 1e-12, "mean iou differs");
    for (s, d) in r.entries.iter().zip(&devs) {
        ensure!(s.deviation == *d, "{}: deviation {} vs {d}", s.id, s.deviation);
    }
    let on_disk: serde_json::Value = ok(serde_json::from_slice(&ok(std::fs::read(out.join("report/filter_report.json")), "report")?), "report json")?;
    ensure!(on_disk["rejected"] == r.rejected && on_disk["threshold"] == 0.15, "report file disagrees");
    Ok(format!("{} of {n} rejected (rate {:.2}); mean/percentiles/max/iou match recomputation", r.rejected, r.rejection_rate))
}

// 8: identity mock leaves everything outside the feather band untouched;
// labels unchanged; in-flight cap respected; 3 failures -> 4 attempts.
fn inpaint_contract(ws: &Workspace) -> Check {
    let out = &ws.small_b;
    let before = ok(std::fs::read(out.join(MANIFEST)), "manifest")?;
    let cfg = {
        let mut c = small_config(out).inpaint;
        c.max_in_flight = 16;
        c
    };
    let mock = Arc::new(MockTransport::new(MockBehavior::Identity).with_delay(Duration::from_millis(5)));
    let client = InpaintClient::new(mock.clone(), RetryPolicy { retries: 3, base_backoff: Duration::from_millis(1) }, SamplerSettings { steps: 30, guidance: 7.5 }, 4);
    let (m, report) = ok(run_inpaint_stage(out, &cfg, &client), "inpaint stage")?;
    ensure!(report.failed == 0, "{} failures", report.failed);
    let after = ok(std::fs::read(out.join(MANIFEST)), "manifest")?;
    ensure!(before == after, "manifest.jsonl changed");
    let orig = ok(DatasetManifest::parse(&String::from_utf8_lossy(&before)), "parse")?;
    let inpainted = ok(DatasetManifest::read(&out.join(INPAINTED_MANIFEST)), "inpainted manifest")?;
    ensure!(inpainted.entries == m.entries, "returned manifest differs from the written one");
    let mut band_pixels = 0;
    for (a, b) in orig.entries.iter().zip(&inpainted.entries) {
        ensure!(b.provenance == Provenance::Inpainted, "{}: provenance {:?}", b.id, b.provenance);
        let mut relabeled = b.clone();
        relabeled.provenance = a.provenance;
        relabeled.inpainted_path = None;
        ensure!(
            ok(serde_json::to_string(&relabeled), "json")? == ok(serde_json::to_string(a), "json")?,
            "{}: annotation changed",
            a.id
        );
        let composite = ok(read_rgb_png(&out.join(&a.image_path)), "image")?;
        let result = ok(read_rgb_png(&out.join(b.inpainted_path.as_deref().unwrap_or_default())), "inpainted")?;
        let mask = ok(read_mask_png(&out.join(&a.mask_path)), "mask")?;
        let band = mask.boundary();
        band_pixels += band.count();
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if !band.get(x, y) {
                    ensure!(result.get(x, y) == composite.get(x, y), "{}: pixel ({x}, {y}) changed", a.id);
                }
            }
        }
    }
    let peak = mock.peak_in_flight();
    ensure!(peak <= 4, "peak in-flight {peak} exceeds cap 4");

    let flaky = Arc::new(MockTransport::new(MockBehavior::Flaky(3)));
    let c = InpaintClient::new(flaky.clone(), RetryPolicy { retries: 3, base_backoff: Duration::from_millis(1) }, SamplerSettings { steps: 30, guidance: 7.5 }, 4);
    let img = RasterImage::filled(8, 8, Rgb::new(1, 2, 3));
    let req = InpaintRequest {
        image: img.clone(),
        region_mask: BinaryMask::from_fn(8, 8, |x, _| x > 3),
        edge_condition: BinaryMask::new(8, 8),
        prompt: leafgen::inpaint::prompt_for(Species::Oak),
        request_seed: 1,
        timeout: Duration::from_secs(5),
    };
    let resp = c.inpaint(&req).map_err(|(e, n)| format!("flaky request failed after {n}: {e}"))?;
    ensure!(resp.attempts == 4 && flaky.calls() == 4 && resp.image == img, "flaky: {} attempts, {} calls", resp.attempts, flaky.calls());
    Ok(format!(
        "{} datapoints unchanged outside the {band_pixels}-pixel feather band, labels byte-identical, peak in-flight {peak}/4, retry scenario took 4 attempts",
        inpainted.entries.len()
    ))
}

// 9: property suites on sampled inputs.
fn property_suites() -> Check {
    const N: usize = 100_000;
    let mut rng = stream(3, "property-suites", 0);
    let weights = NoiseBlendWeights::new(0.5, 0.3, 0.2).map_err(|e| e.to_string())?;
    for i in 0..N {
        let p = random_point(&mut rng);
        let seed = NoiseSeed(rng.random());
        let density = rng.random_range(0.05..8.0);
        let g = ok(gradient_noise(p, seed), "gradient")?;
        let v = ok(voronoi_noise(p, density, seed), "voronoi")?;
        let s = ok(value_noise(p, seed), "value")?;
        ensure!((-1.0..=1.0).contains(&g), "gradient {g} at {p:?}");
        ensure!((0.0..=1.0).contains(&v), "voronoi {v} at {p:?}");
        ensure!((0.0..=1.0).contains(&s), "value {s} at {p:?}");
        if i % 10 == 0 {
            ensure!(
                gradient_noise(p, seed).ok() == Some(g) && voronoi_noise(p, density, seed).ok() == Some(v) && value_noise(p, seed).ok() == Some(s),
                "nondeterministic at {p:?}"
            );
            let b = ok(blend_noise(p, &weights, seed), "blend")?;
            ensure!(blend_noise(p, &weights, seed).ok() == Some(b), "blend nondeterministic");
        }
    }
    // Linearity in the weights.
    for _ in 0..10_000 {
        let p = random_point(&mut rng);
        let seed = NoiseSeed(rng.random());
        let (a, b) = (random_weights(&mut rng), random_weights(&mut rng));
        let sum = NoiseBlendWeights::new(a.w_gradient + b.w_gradient, a.w_voronoi + b.w_voronoi, a.w_value + b.w_value).unwrap();
        let lhs = ok(blend_noise(p, &sum, seed), "blend")?;
        let rhs = ok(blend_noise(p, &a, seed), "blend")? + ok(blend_noise(p, &b, seed), "blend")?;
        ensure!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "blend not linear: {lhs} vs {rhs}");
    }
    // Brownian increments: zero mean, variance within 5% of sigma^2.
    let sigma = 0.3;
    let mut incs = Vec::with_capacity(10_000 * 20);
    for k in 0..10_000u64 {
        let path = ok(brownian_path(20, 1.0, sigma, Vec2::new(0.0, 0.0), 0.0, NoiseSeed(k)), "brownian")?;
        incs.extend(path.points.windows(2).map(|w| w[1].y - w[0].y));
    }
    let mean = incs.iter().sum::<f64>() / incs.len() as f64;
    let n = incs.len() as f64;
    ensure!(mean.abs() < 4.0 * sigma / n.sqrt(), "brownian mean {mean}");
    let var = incs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    ensure!((var - sigma * sigma).abs() <= 0.05 * sigma * sigma, "brownian variance {var}");
    // Normals from random height fields are unit length.
    let mut normals = 0;
    for k in 0..40 {
        let mut f = Field::new(32, 32);
        for v in &mut f.data {
            *v = rng.random_range(0.0..1.0);
        }
        let n = ok(height_to_normals(&f, 0.5 + k as f64), "normals")?;
        for v in &n.data {
            ensure!((v.length() - 1.0).abs() <= 1e-6, "normal length {}", v.length());
            normals += 1;
        }
    }
    // Projection inequality on displaced meshes; equality when flat.
    let ring = |r: f64, n: usize| -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let x = 2.0 * r * i as f64 / (n - 1) as f64;
                (x, if i == 0 || i == n - 1 { 0.0 } else { (r * r - (x - r) * (x - r)).max(0.0).sqrt() })
            })
            .collect()
    };
    let base = ok(mesh_outline(&ok(Outline::from_stations(ring(10.0, 24)), "outline")?, 2, Species::Beech), "mesh")?;
    let mut meshes = 0;
    for k in 0..10_000u64 {
        let amp = if k % 10 == 0 { 0.0 } else { rng.random_range(0.0..5.0) };
        let d = DisplacementParams { amplitude_mm: amp, voronoi_density: rng.random_range(0.001..0.5), seed: NoiseSeed(k), pin_boundary: k % 2 == 0 };
        let m = ok(displace_vertices(&base, &d), "displace")?;
        let (s, p) = (surface_area(&m), projected_area(&m));
        ensure!(p <= s, "projected {p} > surface {s}");
        if amp == 0.0 {
            ensure!(p == s, "flat mesh: {p} != {s}");
        }
        meshes += 1;
    }
    // Shading: channels in range and monotone in ambient.
    let frame = ok(TextureFrame::around(base.outline.iter().copied(), 1.0, 4.0), "frame")?;
    let mut hf = Field::new(frame.width, frame.height);
    for v in &mut hf.data {
        *v = rng.random_range(0.0..1.0);
    }
    let tex = LeafTextureParams {
        color_a: Rgb::new(60, 110, 40),
        color_b: Rgb::new(250, 250, 250),
        blend_scale: 1.0,
        vein_tint: Rgb::new(150, 170, 90),
        vein_opacity: 0.5,
        hole_density: 0.0,
        hole_radius_mm: (0.5, 1.0),
        spot_density: 0.0,
        spot_tint: Rgb::new(100, 70, 30),
        spot_radius_mm: (0.5, 1.0),
        edge_erosion_mm: 0.0,
        seed: NoiseSeed(4),
    };
    let surf = ok(compose_surface(&base, &frame, &hf, &tex, 2.0), "surface")?;
    let mut shaded = 0;
    for k in 0..6 {
        let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.05..1.0)).normalized();
        let (a0, a1) = (0.1 * k as f64, 0.1 * k as f64 + 0.3);
        let lo = ok(shade(&surf, dir, a0), "shade")?;
        let hi = ok(shade(&surf, dir, a1), "shade")?;
        for (x, y) in lo.as_raw().iter().zip(hi.as_raw()) {
            ensure!(x <= y, "shading not monotone in ambient");
            shaded += 1;
        }
    }
    ensure!(shaded >= 10_000, "only {shaded} shaded samples");
    // Relative error symmetry and metric dominance.
    for _ in 0..10_000 {
        let t = rng.random_range(0.1..1e4);
        let d = rng.random_range(0.0..0.99) * t;
        let (u, l) = (ok(relative_error(t + d, t), "re")?, ok(relative_error(t - d, t), "re")?);
        ensure!((u - l).abs() <= 1e-12 * u.max(1.0), "relative error asymmetric at t={t}, d={d}");
    }
    for _ in 0..10_000 {
        let (w, h) = (rng.random_range(1..12usize), rng.random_range(1..12usize));
        let mut tb: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.5)).collect();
        tb[0] = true;
        let pb: Vec<bool> = tb.iter().map(|&v| if rng.random_bool(0.2) { !v } else { v }).collect();
        let (p, t) = (BinaryMask::from_bools(w, h, pb.clone()).unwrap(), BinaryMask::from_bools(w, h, tb.clone()).unwrap());
        let (dv, mp, io) = (deviation(&p, &t).unwrap(), mask_pixel_error(&p, &t).unwrap(), iou(&p, &t).unwrap());
        ensure!(dv >= mp, "deviation {dv} < pixel error {mp}");
        ensure!((io == 1.0) == (dv == 0.0) && (dv == 0.0) == (pb == tb), "identity equivalence broken");
    }
    Ok(format!(
        "{N} noise queries x3, 10000 blend/brownian/re/mask samples, {normals} normals, {meshes} meshes, {shaded} shaded channels"
    ))
}

fn random_point(rng: &mut impl Rng) -> Vec2 {
    Vec2::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0))
}

fn random_weights(rng: &mut impl Rng) -> NoiseBlendWeights {
    NoiseBlendWeights::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)).expect("weights")
}

fn main() {
    let root = tempfile::tempdir().expect("tempdir");
    let ws = Workspace {
        big: root.path().join("big"),
        small_a: root.path().join("small_a"),
        small_b: root.path().join("small_b"),
        small_c: root.path().join("small_c"),
        _root: root,
    };
    let criteria: Vec<(&str, Box<dyn Fn(&Workspace) -> Check>)> = vec![
        ("structural fidelity", Box::new(structural_fidelity)),
        ("area-label consistency", Box::new(area_consistency)),
        ("analytic disc oracle", Box::new(|_| disc_oracle())),
        ("determinism and resume", Box::new(determinism)),
        ("metric oracles", Box::new(|_| metric_oracles())),
        ("canny oracle", Box::new(|_| canny_oracle())),
        ("filter fault battery", Box::new(filter_fault_battery)),
        ("inpaint client contract", Box::new(inpaint_contract)),
        ("noise and shading properties", Box::new(|_| property_suites())),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| f(&ws))).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail}) [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({why}) [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Contact sheet of datapoints with mask outlines.

use crate::error::Result;
use crate::filter::PredictionSource;
use crate::io::{read_mask_png, write_rgb_png};
use crate::manifest::DatasetManifest;
use leafgen_core::{BinaryMask, RasterImage, Rgb};
use std::path::Path;

/// Nearest-neighbour downscale to a `tile` x `tile` thumbnail with the mask
/// boundary drawn in.
fn thumbnail(img: &RasterImage, mask: &BinaryMask, tile: usize) -> RasterImage {
    let (w, h) = img.dims();
    let edge = mask.boundary().dilate(tile.max(w) / tile.max(1) / 2);
    let mut t = RasterImage::new(tile, tile);
    for y in 0..tile {
        for x in 0..tile {
            let sx = ((x as f64 + 0.5) * w as f64 / tile as f64) as usize;
            let sy = ((y as f64 + 0.5) * h as f64 / tile as f64) as usize;
            let (sx, sy) = (sx.min(w - 1), sy.min(h - 1));
            t.set(x, y, if edge.get(sx, sy) { Rgb::new(20, 90, 230) } else { img.get(sx, sy) });
        }
    }
    t
}

/// Writes a grid of the first `n` datapoints of the manifest.
pub fn contact_sheet(dataset: &Path, manifest: &DatasetManifest, n: usize, tile: usize, dest: &Path) -> Result<usize> {
    let picked: Vec<_> = manifest.entries.iter().take(n).collect();
    let count = picked.len().max(1);
    let cols = (count as f64).sqrt().ceil() as usize;
    let rows = count.div_ceil(cols);
    let gap = 4;
    let mut sheet = RasterImage::filled(cols * (tile + gap) + gap, rows * (tile + gap) + gap, Rgb::new(40, 40, 40));
    for (k, a) in picked.iter().enumerate() {
        let img = PredictionSource::displayed_image(dataset, a)?;
        let mask = read_mask_png(&dataset.join(&a.mask_path))?;
        let t = thumbnail(&img, &mask, tile);
        let (ox, oy) = (gap + (k % cols) * (tile + gap), gap + (k / cols) * (tile + gap));
        for y in 0..tile {
            for x in 0..tile {
                sheet.set(ox + x, oy + y, t.get(x, y));
            }
        }
    }
    write_rgb_png(dest, &sheet)?;
    Ok(picked.len())
}

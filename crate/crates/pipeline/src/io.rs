//! Atomic file writes and PNG encoding.

use crate::error::{PipelineError, Result};
use image::{ImageBuffer, ImageFormat, Luma, Rgb as ImgRgb};
use leafgen_core::{BinaryMask, RasterImage};
use std::io::Cursor;
use std::path::{Path, PathBuf};

fn tmp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Writes via a sibling temp file and a rename, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let tmp = tmp_path(path);
    std::fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        PipelineError::io(path, e)
    })
}

pub fn encode_rgb_png(img: &RasterImage) -> Result<Vec<u8>> {
    let (w, h) = img.dims();
    let buf: ImageBuffer<ImgRgb<u8>, _> = ImageBuffer::from_raw(w as u32, h as u32, img.as_raw().to_vec())
        .ok_or_else(|| PipelineError::Internal("raster buffer size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| PipelineError::Internal(format!("png encode: {e}")))?;
    Ok(out.into_inner())
}

/// Masks are stored as 8-bit grayscale with values {0, 255}.
pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let (w, h) = mask.dims();
    let buf: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(w as u32, h as u32, mask.to_luma8())
        .ok_or_else(|| PipelineError::Internal("mask buffer size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| PipelineError::Internal(format!("png encode: {e}")))?;
    Ok(out.into_inner())
}

pub fn decode_rgb_png(bytes: &[u8]) -> std::result::Result<RasterImage, String> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| e.to_string())?;
    let rgb = img.into_rgb8();
    let (w, h) = rgb.dimensions();
    RasterImage::from_raw(w as usize, h as usize, rgb.into_raw()).map_err(|e| e.to_string())
}

/// Any nonzero-threshold grayscale PNG; values >= 128 are foreground.
pub fn decode_mask_png(bytes: &[u8]) -> std::result::Result<BinaryMask, String> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| e.to_string())?;
    let g = img.into_luma8();
    let (w, h) = g.dimensions();
    let data = g.into_raw().into_iter().map(|v| v >= 128).collect();
    BinaryMask::from_bools(w as usize, h as usize, data).map_err(|e| e.to_string())
}

pub fn write_rgb_png(path: &Path, img: &RasterImage) -> Result<()> {
    write_atomic(path, &encode_rgb_png(img)?)
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_atomic(path, &encode_mask_png(mask)?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| PipelineError::io(path, e))
}

pub fn read_rgb_png(path: &Path) -> Result<RasterImage> {
    decode_rgb_png(&read(path)?).map_err(|message| PipelineError::Image { path: path.into(), message })
}

pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    decode_mask_png(&read(path)?).map_err(|message| PipelineError::Image { path: path.into(), message })
}

/// Width and height from the PNG header without decoding pixels.
pub fn png_dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| PipelineError::Image { path: path.into(), message: e.to_string() })?;
    Ok((w as usize, h as usize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use leafgen_core::Rgb;

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = RasterImage::new(5, 3);
        img.set(1, 2, Rgb::new(10, 200, 30));
        let mask = BinaryMask::from_fn(5, 3, |x, y| (x + y) % 2 == 0);
        let p = dir.path().join("a/b/img.png");
        let m = dir.path().join("mask.png");
        write_rgb_png(&p, &img).unwrap();
        write_mask_png(&m, &mask).unwrap();
        assert_eq!(read_rgb_png(&p).unwrap(), img);
        assert_eq!(read_mask_png(&m).unwrap(), mask);
        assert_eq!(png_dimensions(&p).unwrap(), (5, 3));
        let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().contains(".tmp")).collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn corrupt_png_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not a png").unwrap();
        assert_eq!(read_rgb_png(&p).unwrap_err().exit_code(), 4);
        assert_eq!(read_rgb_png(&dir.path().join("missing.png")).unwrap_err().exit_code(), 4);
    }
}

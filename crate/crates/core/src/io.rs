//! 8-bit PNG I/O and atomic file writes.
//!
//! Reading maps `v8 -> v8 / 255`; writing maps `v -> round(255 v)` clamped
//! to `[0, 255]`.

use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat};

use crate::error::Result;
use crate::imaging::{ImagePlane, RgbImage};

pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn dequantize(v: u8) -> f64 {
    f64::from(v) / 255.0
}

/// Decodes any supported image file as RGB.
pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let img = image::open(path)?;
    Ok(from_dynamic(&img))
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage> {
    Ok(from_dynamic(&image::load_from_memory(bytes)?))
}

fn from_dynamic(img: &DynamicImage) -> RgbImage {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let channel = |k: usize| {
        let samples = rgb.pixels().map(|p| dequantize(p.0[k])).collect();
        ImagePlane::new(h, w, samples).expect("decoded image has nonzero size")
    };
    RgbImage::new(channel(0), channel(1), channel(2)).expect("channels share dimensions")
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let (h, w) = img.dims();
    let mut raw = Vec::with_capacity(h * w * 3);
    for ((&r, &g), &b) in img
        .r
        .as_slice()
        .iter()
        .zip(img.g.as_slice())
        .zip(img.b.as_slice())
    {
        raw.extend_from_slice(&[quantize(r), quantize(g), quantize(b)]);
    }
    let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized to image");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn encode_gray_png(plane: &ImagePlane) -> Result<Vec<u8>> {
    let raw = plane.as_slice().iter().map(|&v| quantize(v)).collect();
    let buf = GrayImage::from_raw(plane.width() as u32, plane.height() as u32, raw)
        .expect("buffer sized to plane");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_rgb_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    write_atomic(path, &encode_rgb_png(img)?)
}

pub fn write_gray_png(path: impl AsRef<Path>, plane: &ImagePlane) -> Result<()> {
    write_atomic(path, &encode_gray_png(plane)?)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp_name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn quantization_boundaries() {
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(0.5), 128);
        for v in 0..=255u8 {
            assert_eq!(quantize(dequantize(v)), v);
        }
    }

    #[test]
    fn png_round_trip_is_8bit_exact() {
        let img = synth::textured_image(9, 13, 1);
        let decoded = decode_rgb(&encode_rgb_png(&img).unwrap()).unwrap();
        assert_eq!(decoded.dims(), (9, 13));
        for (a, b) in img.g.as_slice().iter().zip(decoded.g.as_slice()) {
            assert_eq!(quantize(*a), quantize(*b));
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn gray_png_decodes_as_equal_channels() {
        let plane = ImagePlane::from_fn(4, 6, |r, c| (r * 6 + c) as f64 / 23.0);
        let back = decode_rgb(&encode_gray_png(&plane).unwrap()).unwrap();
        assert_eq!(back.r, back.b);
        assert_eq!(quantize(back.r.get(3, 5)), 255);
    }
}

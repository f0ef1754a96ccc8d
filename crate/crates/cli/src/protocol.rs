//! The synthesized-experiment protocol: downsample a high-resolution image,
//! interpolate it back, and let the network restore the luminance detail.
//! Chroma is interpolated only.

use vdsr_core::imaging::{make_ilr, rgb_to_chroma, rgb_to_luminance, ycbcr_to_rgb};
use vdsr_core::io::{dequantize, quantize};
use vdsr_core::metrics::score_pair;
use vdsr_core::net::forward;
use vdsr_core::{FeatureBatch, ImagePlane, NetworkModel, QualityScore, Result, RgbImage, Scale};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sr: RgbImage,
    pub bicubic: RgbImage,
    /// What the network added to the interpolated luminance.
    pub residual: ImagePlane,
}

struct Interpolated {
    y: ImagePlane,
    cb: ImagePlane,
    cr: ImagePlane,
}

fn interpolate(hr: &RgbImage, scale: Scale) -> Result<Interpolated> {
    let (cb, cr) = rgb_to_chroma(hr);
    Ok(Interpolated {
        y: make_ilr(&rgb_to_luminance(hr), scale)?,
        cb: make_ilr(&cb, scale)?,
        cr: make_ilr(&cr, scale)?,
    })
}

/// Bicubic reconstruction through the same colour path as [`synthesize`].
pub fn bicubic_baseline(hr: &RgbImage, scale: Scale) -> Result<RgbImage> {
    let ilr = interpolate(hr, scale)?;
    ycbcr_to_rgb(&ilr.y, &ilr.cb, &ilr.cr)
}

pub fn synthesize(model: &NetworkModel, hr: &RgbImage, scale: Scale) -> Result<Prediction> {
    let ilr = interpolate(hr, scale)?;
    let out = forward(model, &FeatureBatch::from_planes([&ilr.y])?)?;
    let sr_y = out.sr.plane(0);
    Ok(Prediction {
        sr: ycbcr_to_rgb(&sr_y, &ilr.cb, &ilr.cr)?,
        bicubic: ycbcr_to_rgb(&ilr.y, &ilr.cb, &ilr.cr)?,
        residual: out.residual.plane(0),
    })
}

/// Maps a signed residual into `[0, 1]` by `0.5 + v / (2 max|v|)`; an
/// all-zero residual becomes mid-gray. Returns the plane and `max|v|`.
pub fn stretch_residual(residual: &ImagePlane) -> (ImagePlane, f64) {
    let max_abs = residual
        .as_slice()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return (residual.map(|_| 0.5), 0.0);
    }
    (residual.map(|v| 0.5 + v / (2.0 * max_abs)), max_abs)
}

/// The image as it reads back after an 8-bit PNG round trip.
pub fn as_saved(img: &RgbImage) -> RgbImage {
    let q = |p: &ImagePlane| p.map(|v| dequantize(quantize(v)));
    RgbImage::new(q(&img.r), q(&img.g), q(&img.b)).expect("same dimensions")
}

/// Luminance PSNR/SSIM of a reconstruction as it would be saved to disk.
pub fn luminance_score(original: &RgbImage, reconstructed: &RgbImage) -> Result<QualityScore> {
    score_pair(
        &rgb_to_luminance(&as_saved(original)),
        &rgb_to_luminance(&as_saved(reconstructed)),
    )
}

//! Deterministic synthetic RGB scenes for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{ImagePlane, RgbImage};

const WAVE_GAIN: f64 = 1.0;
const RECTS: usize = 3;

/// Textured scene: a few oriented sinusoids plus hard-edged rectangles,
/// tinted per channel and scaled into `[0.05, 0.95]`.
pub fn textured_image(height: usize, width: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let waves: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let wavelength = rng.random_range(5.0..9.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.3..1.0) * WAVE_GAIN;
            let k = std::f64::consts::TAU / wavelength;
            (k * angle.cos(), k * angle.sin(), phase, amp)
        })
        .collect();
    let rects: Vec<(f64, f64, f64, f64, f64)> = (0..RECTS)
        .map(|_| {
            let r0 = rng.random_range(0.0..height as f64);
            let c0 = rng.random_range(0.0..width as f64);
            let rh = rng.random_range(2.0..(height as f64 / 3.0).max(3.0));
            let cw = rng.random_range(2.0..(width as f64 / 3.0).max(3.0));
            (r0, c0, r0 + rh, c0 + cw, rng.random_range(-2.5..2.5))
        })
        .collect();

    let raw = ImagePlane::from_fn(height, width, |r, c| {
        let (y, x) = (r as f64, c as f64);
        let mut v: f64 = waves
            .iter()
            .map(|&(ky, kx, ph, a)| a * (ky * y + kx * x + ph).sin())
            .sum();
        for &(r0, c0, r1, c1, level) in &rects {
            if y >= r0 && y < r1 && x >= c0 && x < c1 {
                v += level;
            }
        }
        v
    });
    let (lo, hi) = raw
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let base = raw.map(|v| (v - lo) / span);

    let mut channel = || {
        let gain: f64 = rng.random_range(0.6..0.9);
        let offset = rng.random_range(0.05..(0.95 - gain).max(0.051));
        base.map(|v| offset + gain * v)
    };
    let (r, g, b) = (channel(), channel(), channel());
    RgbImage::new(r, g, b).expect("channels share dimensions")
}

/// Flat colour image.
pub fn constant_image(height: usize, width: usize, rgb: [f64; 3]) -> RgbImage {
    RgbImage::new(
        ImagePlane::filled(height, width, rgb[0]),
        ImagePlane::filled(height, width, rgb[1]),
        ImagePlane::filled(height, width, rgb[2]),
    )
    .expect("channels share dimensions")
}

//! PSNR and single-scale SSIM on luminance planes.

use std::fmt;

use crate::error::{Error, Result};
use crate::imaging::ImagePlane;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    a.check_same_dims(b, "metric inputs")?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(peak^2 / MSE)` in dB; `f64::INFINITY` for identical planes.
pub fn psnr(a: &ImagePlane, b: &ImagePlane, peak: f64) -> Result<f64> {
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "peak must be positive, got {peak}"
        )));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable valid-region Gaussian filter.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps
                .iter()
                .zip(&line[x..x + SSIM_WINDOW])
                .map(|(t, v)| t * v)
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (k, t) in taps.iter().enumerate() {
            let line = &rows[(y + k) * ow..(y + k + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(line) {
                *o += t * v;
            }
        }
    }
    out
}

/// Mean SSIM over every window position fully inside the image.
pub fn ssim(a: &ImagePlane, b: &ImagePlane, peak: f64) -> Result<f64> {
    a.check_same_dims(b, "metric inputs")?;
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "peak must be positive, got {peak}"
        )));
    }
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::DegenerateInput(format!(
            "{h}x{w} planes are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let taps = gaussian_taps();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let (xa, xb) = (a.as_slice(), b.as_slice());
    let product =
        |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };

    let mu_a = filter_valid(xa, h, w, &taps);
    let mu_b = filter_valid(xb, h, w, &taps);
    let e_aa = filter_valid(&product(xa, xa), h, w, &taps);
    let e_bb = filter_valid(&product(xb, xb), h, w, &taps);
    let e_ab = filter_valid(&product(xa, xb), h, w, &taps);

    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// PSNR/SSIM pair at peak 1.0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityScore {
    pub psnr_db: f64,
    pub ssim: f64,
}

impl QualityScore {
    pub fn is_perfect(&self) -> bool {
        self.psnr_db == f64::INFINITY
    }
}

/// Renders as `PSNR/SSIM` with 2 and 3 decimals, e.g. `32.54/0.940`.
impl fmt::Display for QualityScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.psnr_db.is_infinite() {
            write!(f, "inf/{:.3}", self.ssim)
        } else {
            write!(f, "{:.2}/{:.3}", self.psnr_db, self.ssim)
        }
    }
}

pub fn score_pair(original: &ImagePlane, reconstructed: &ImagePlane) -> Result<QualityScore> {
    Ok(QualityScore {
        psnr_db: psnr(original, reconstructed, 1.0)?,
        ssim: ssim(original, reconstructed, 1.0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(h: usize, w: usize, seed: u64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImagePlane::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    fn noisy(base: &ImagePlane, amp: f64, seed: u64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        base.map(|v| v + amp * rng.random_range(-1.0..1.0))
    }

    /// Explicit per-window statistics with a 2-D Gaussian mask.
    fn ssim_oracle(a: &ImagePlane, b: &ImagePlane) -> f64 {
        let n = SSIM_WINDOW;
        let mut mask = vec![0.0; n * n];
        let c = (n / 2) as f64;
        for y in 0..n {
            for x in 0..n {
                let (dy, dx) = (y as f64 - c, x as f64 - c);
                mask[y * n + x] = (-(dy * dy + dx * dx) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            }
        }
        let s: f64 = mask.iter().sum();
        mask.iter_mut().for_each(|m| *m /= s);
        let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
        let (h, w) = a.dims();
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=h - n {
            for x0 in 0..=w - n {
                let (mut ma, mut mb) = (0.0, 0.0);
                for y in 0..n {
                    for x in 0..n {
                        ma += mask[y * n + x] * a.get(y0 + y, x0 + x);
                        mb += mask[y * n + x] * b.get(y0 + y, x0 + x);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for y in 0..n {
                    for x in 0..n {
                        let da = a.get(y0 + y, x0 + x) - ma;
                        let db = b.get(y0 + y, x0 + x) - mb;
                        va += mask[y * n + x] * da * da;
                        vb += mask[y * n + x] * db * db;
                        cov += mask[y * n + x] * da * db;
                    }
                }
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn psnr_of_identical_is_infinite() {
        let a = random_plane(5, 5, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_closed_form() {
        let a = ImagePlane::filled(8, 8, 0.0);
        let b = ImagePlane::filled(8, 8, 10.0 / 255.0);
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - 20.0 * 25.5f64.log10()).abs() <= 1e-9);
        assert!((p - 28.131).abs() < 5e-4);
    }

    #[test]
    fn psnr_matches_direct_formula() {
        let a = random_plane(17, 13, 2);
        let b = random_plane(17, 13, 3);
        let mut s = 0.0;
        for r in 0..17 {
            for c in 0..13 {
                s += (a.get(r, c) - b.get(r, c)).powi(2);
            }
        }
        let expect = 10.0 * (1.0 / (s / (17.0 * 13.0))).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - expect).abs() <= 1e-9);
        assert!((psnr(&a, &b, 255.0).unwrap() - (expect + 20.0 * 255f64.log10())).abs() <= 1e-9);
    }

    #[test]
    fn metric_errors() {
        let a = random_plane(12, 12, 1);
        let b = random_plane(12, 11, 1);
        assert!(matches!(psnr(&a, &b, 1.0), Err(Error::ShapeMismatch(_))));
        assert!(matches!(ssim(&a, &b, 1.0), Err(Error::ShapeMismatch(_))));
        let t = random_plane(10, 30, 1);
        assert!(matches!(ssim(&t, &t, 1.0), Err(Error::DegenerateInput(_))));
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = random_plane(20, 24, 4);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
        let c = ImagePlane::filled(16, 16, 0.5);
        assert_eq!(ssim(&c, &c.clone(), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn ssim_matches_windowed_oracle() {
        let a = random_plane(32, 32, 5);
        let b = noisy(&a, 0.2, 6);
        let s = ssim(&a, &b, 1.0).unwrap();
        assert!((s - ssim_oracle(&a, &b)).abs() <= 1e-10);
        let c = random_plane(32, 32, 7);
        assert!((ssim(&a, &c, 1.0).unwrap() - ssim_oracle(&a, &c)).abs() <= 1e-10);
    }

    #[test]
    fn score_rendering() {
        let a = random_plane(12, 12, 8);
        let s = score_pair(&a, &a).unwrap();
        assert!(s.is_perfect());
        assert_eq!(s.to_string(), "inf/1.000");
        let cell = QualityScore {
            psnr_db: 32.54,
            ssim: 0.940,
        };
        assert_eq!(cell.to_string(), "32.54/0.940");
        let cell = QualityScore {
            psnr_db: 29.55,
            ssim: 0.916,
        };
        assert_eq!(cell.to_string(), "29.55/0.916");
    }

    #[test]
    fn score_pair_composes() {
        let a = random_plane(14, 15, 9);
        let b = noisy(&a, 0.05, 10);
        let s = score_pair(&a, &b).unwrap();
        assert_eq!(s.psnr_db, psnr(&a, &b, 1.0).unwrap());
        assert!((s.ssim - ssim_oracle(&a, &b)).abs() <= 1e-10);
    }

    #[test]
    fn psnr_falls_with_noise_amplitude() {
        let base = random_plane(24, 24, 11).map(|v| 0.25 + 0.5 * v);
        let scores: Vec<f64> = [0.01, 0.02, 0.04]
            .iter()
            .map(|&amp| psnr(&base, &noisy(&base, amp, 12), 1.0).unwrap())
            .collect();
        assert!(scores[0] > scores[1] && scores[1] > scores[2]);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(seed_a in 0u64..1000, seed_b in 0u64..1000, amp in 0.0f64..0.5) {
            let a = random_plane(13, 16, seed_a);
            let b = noisy(&random_plane(13, 16, seed_b), amp, seed_a ^ seed_b);
            let (p1, p2) = (psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
            prop_assert_eq!(p1, p2);
            let (s1, s2) = (ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
            prop_assert!((s1 - s2).abs() <= 1e-12);
            prop_assert!(s1.abs() <= 1.0);
        }

        #[test]
        fn psnr_orders_inverse_to_mse(amps in prop::collection::vec(0.001f64..0.3, 2..6)) {
            let base = random_plane(12, 12, 3);
            let recs: Vec<ImagePlane> = amps.iter().enumerate().map(|(i, &a)| noisy(&base, a, i as u64)).collect();
            for x in &recs {
                for y in &recs {
                    let (mx, my) = (mse(&base, x).unwrap(), mse(&base, y).unwrap());
                    let (px, py) = (psnr(&base, x, 1.0).unwrap(), psnr(&base, y, 1.0).unwrap());
                    if mx < my {
                        prop_assert!(px > py);
                    }
                }
            }
        }
    }
}

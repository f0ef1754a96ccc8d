//! Planes, colour conversion, cubic resampling and patch extraction.
//!
//! Samples are real-valued and nominally live in `[0, 1]`; quantisation to
//! 8 bits only happens in [`crate::io`].

use std::fmt;

use crate::error::{Error, Result};

/// A single-channel image stored row-major.
#[derive(Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    samples: Vec<f64>,
}

impl fmt::Debug for ImagePlane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImagePlane")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, samples: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::DegenerateInput(format!(
                "plane must be at least 1x1, got {height}x{width}"
            )));
        }
        if samples.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {height}x{width} plane",
                samples.len()
            )));
        }
        Ok(Self {
            height,
            width,
            samples,
        })
    }

    /// Plane with every sample set to `value`.
    ///
    /// Panics if either dimension is zero.
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "plane dimensions must be nonzero");
        Self {
            height,
            width,
            samples: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "plane dimensions must be nonzero");
        let mut samples = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                samples.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            samples,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.samples[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.samples[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.samples
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.samples
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.samples[row * self.width..(row + 1) * self.width]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            samples: self.samples.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies the `size_h × size_w` block whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, size_h: usize, size_w: usize) -> Result<Self> {
        if size_h == 0 || size_w == 0 || row + size_h > self.height || col + size_w > self.width {
            return Err(Error::DegenerateInput(format!(
                "crop {size_h}x{size_w} at ({row},{col}) exceeds {}x{} plane",
                self.height, self.width
            )));
        }
        let mut samples = Vec::with_capacity(size_h * size_w);
        for r in row..row + size_h {
            samples.extend_from_slice(
                &self.samples[r * self.width + col..r * self.width + col + size_w],
            );
        }
        Ok(Self {
            height: size_h,
            width: size_w,
            samples,
        })
    }

    pub(crate) fn check_same_dims(&self, other: &Self, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Three planes of identical size.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub r: ImagePlane,
    pub g: ImagePlane,
    pub b: ImagePlane,
}

impl RgbImage {
    pub fn new(r: ImagePlane, g: ImagePlane, b: ImagePlane) -> Result<Self> {
        r.check_same_dims(&g, "rgb planes")?;
        r.check_same_dims(&b, "rgb planes")?;
        Ok(Self { r, g, b })
    }

    pub fn height(&self) -> usize {
        self.r.height()
    }

    pub fn width(&self) -> usize {
        self.r.width()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.r.dims()
    }
}

/// Integer magnification handled by the single multiscale network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scale {
    X2,
    X3,
    X4,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::X2, Scale::X3, Scale::X4];

    pub fn factor(self) -> usize {
        match self {
            Scale::X2 => 2,
            Scale::X3 => 3,
            Scale::X4 => 4,
        }
    }
}

impl TryFrom<usize> for Scale {
    type Error = Error;

    fn try_from(value: usize) -> Result<Self> {
        match value {
            2 => Ok(Scale::X2),
            3 => Ok(Scale::X3),
            4 => Ok(Scale::X4),
            other => Err(Error::InvalidParameter(format!(
                "scale factor must be 2, 3 or 4, got {other}"
            ))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.factor())
    }
}

// BT.601 full-range coefficients.
const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

/// Y channel of BT.601 full-range YCbCr, clamped to `[0, 1]`.
pub fn rgb_to_luminance(img: &RgbImage) -> ImagePlane {
    let samples = img
        .r
        .as_slice()
        .iter()
        .zip(img.g.as_slice())
        .zip(img.b.as_slice())
        .map(|((&r, &g), &b)| (KR * r + KG * g + KB * b).clamp(0.0, 1.0))
        .collect();
    ImagePlane {
        height: img.height(),
        width: img.width(),
        samples,
    }
}

/// Cb and Cr planes, offset by 0.5 so that neutral grey maps to 0.5.
pub fn rgb_to_chroma(img: &RgbImage) -> (ImagePlane, ImagePlane) {
    let n = img.r.len();
    let mut cb = Vec::with_capacity(n);
    let mut cr = Vec::with_capacity(n);
    for ((&r, &g), &b) in img
        .r
        .as_slice()
        .iter()
        .zip(img.g.as_slice())
        .zip(img.b.as_slice())
    {
        cb.push((0.5 - 0.168_736 * r - 0.331_264 * g + 0.5 * b).clamp(0.0, 1.0));
        cr.push((0.5 + 0.5 * r - 0.418_688 * g - 0.081_312 * b).clamp(0.0, 1.0));
    }
    let (height, width) = img.dims();
    (
        ImagePlane {
            height,
            width,
            samples: cb,
        },
        ImagePlane {
            height,
            width,
            samples: cr,
        },
    )
}

/// Inverse of [`rgb_to_luminance`] + [`rgb_to_chroma`]; output clamped to `[0, 1]`.
pub fn ycbcr_to_rgb(y: &ImagePlane, cb: &ImagePlane, cr: &ImagePlane) -> Result<RgbImage> {
    y.check_same_dims(cb, "ycbcr planes")?;
    y.check_same_dims(cr, "ycbcr planes")?;
    let n = y.len();
    let (mut r, mut g, mut b) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for ((&yv, &cbv), &crv) in y.as_slice().iter().zip(cb.as_slice()).zip(cr.as_slice()) {
        let (u, v) = (cbv - 0.5, crv - 0.5);
        r.push((yv + 1.402 * v).clamp(0.0, 1.0));
        g.push((yv - 0.344_136 * u - 0.714_136 * v).clamp(0.0, 1.0));
        b.push((yv + 1.772 * u).clamp(0.0, 1.0));
    }
    let (height, width) = y.dims();
    let plane = |samples| ImagePlane {
        height,
        width,
        samples,
    };
    Ok(RgbImage {
        r: plane(r),
        g: plane(g),
        b: plane(b),
    })
}

/// Cubic convolution kernel parameter (Catmull-Rom family).
pub const CUBIC_A: f64 = -0.5;

/// Keys' cubic convolution kernel.
pub fn cubic_kernel(t: f64) -> f64 {
    let a = CUBIC_A;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Four source taps and their weights for one output coordinate.
struct Taps {
    index: [usize; 4],
    weight: [f64; 4],
}

fn axis_taps(src_len: usize, dst_len: usize) -> Vec<Taps> {
    let ratio = src_len as f64 / dst_len as f64;
    let last = src_len as isize - 1;
    (0..dst_len)
        .map(|o| {
            // Pixel-centre alignment.
            let center = (o as f64 + 0.5) * ratio - 0.5;
            let base = center.floor();
            let frac = center - base;
            let base = base as isize;
            let mut index = [0usize; 4];
            let mut weight = [0.0; 4];
            for k in 0..4 {
                let offset = k as isize - 1;
                index[k] = (base + offset).clamp(0, last) as usize;
                weight[k] = cubic_kernel(frac - offset as f64);
            }
            Taps { index, weight }
        })
        .collect()
}

/// Separable cubic resampling with replicated borders, output clamped to `[0, 1]`.
pub fn bicubic_resize(src: &ImagePlane, out_h: usize, out_w: usize) -> Result<ImagePlane> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidParameter(format!(
            "resize target must be at least 1x1, got {out_h}x{out_w}"
        )));
    }
    let (in_h, in_w) = src.dims();
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(src.map(|v| v.clamp(0.0, 1.0)));
    }

    let col_taps = axis_taps(in_w, out_w);
    let row_taps = axis_taps(in_h, out_h);

    let mut horizontal = vec![0.0; in_h * out_w];
    for r in 0..in_h {
        let row = src.row(r);
        let out = &mut horizontal[r * out_w..(r + 1) * out_w];
        for (dst, taps) in out.iter_mut().zip(&col_taps) {
            *dst = taps
                .index
                .iter()
                .zip(&taps.weight)
                .map(|(&i, &w)| w * row[i])
                .sum();
        }
    }

    let mut samples = vec![0.0; out_h * out_w];
    for (r, taps) in row_taps.iter().enumerate() {
        let out = &mut samples[r * out_w..(r + 1) * out_w];
        for (&i, &w) in taps.index.iter().zip(&taps.weight) {
            let src_row = &horizontal[i * out_w..(i + 1) * out_w];
            for (dst, &v) in out.iter_mut().zip(src_row) {
                *dst += w * v;
            }
        }
        for v in out.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }

    Ok(ImagePlane {
        height: out_h,
        width: out_w,
        samples,
    })
}

fn check_scalable(hr: &ImagePlane, scale: Scale) -> Result<()> {
    let f = scale.factor();
    if hr.height() < f || hr.width() < f {
        return Err(Error::DegenerateInput(format!(
            "{}x{} plane is smaller than scale factor {f}",
            hr.height(),
            hr.width()
        )));
    }
    Ok(())
}

/// Bicubic downsample to `(floor(h/f), floor(w/f))`.
pub fn downscale(hr: &ImagePlane, scale: Scale) -> Result<ImagePlane> {
    check_scalable(hr, scale)?;
    let f = scale.factor();
    bicubic_resize(hr, hr.height() / f, hr.width() / f)
}

/// Interpolated low-resolution image: downsample by `scale`, then resize
/// straight back to the original dimensions.
pub fn make_ilr(hr: &ImagePlane, scale: Scale) -> Result<ImagePlane> {
    let lr = downscale(hr, scale)?;
    bicubic_resize(&lr, hr.height(), hr.width())
}

/// `hr - ilr`, unclamped.
pub fn residual_target(hr: &ImagePlane, ilr: &ImagePlane) -> Result<ImagePlane> {
    hr.check_same_dims(ilr, "residual target")?;
    Ok(ImagePlane {
        height: hr.height,
        width: hr.width,
        samples: hr
            .samples
            .iter()
            .zip(&ilr.samples)
            .map(|(h, l)| h - l)
            .collect(),
    })
}

/// Top-left offsets of square patches inside a source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    patch_size: usize,
    anchors: Vec<(usize, usize)>,
}

impl PatchGrid {
    /// Row-major grid of `count` anchors with `ceil(sqrt(count))` columns,
    /// spread evenly from the first to the last admissible offset.
    ///
    /// For six patches this is two rows at `{0, H-P}` and three columns at
    /// `{0, (W-P)/2, W-P}`.
    pub fn layout(height: usize, width: usize, patch_size: usize, count: usize) -> Result<Self> {
        if patch_size == 0 || count == 0 {
            return Err(Error::InvalidParameter(format!(
                "patch size and count must be positive, got {patch_size} and {count}"
            )));
        }
        if height < patch_size || width < patch_size {
            return Err(Error::DegenerateInput(format!(
                "{height}x{width} source is smaller than patch size {patch_size}"
            )));
        }
        let cols = (1..).find(|c| c * c >= count).unwrap_or(1);
        let rows = count.div_ceil(cols);
        let (span_h, span_w) = (height - patch_size, width - patch_size);
        if rows - 1 > span_h || cols - 1 > span_w {
            return Err(Error::InvalidParameter(format!(
                "{count} distinct {patch_size}px patches do not fit a {height}x{width} source"
            )));
        }
        let offset = |i: usize, n: usize, span: usize| if n == 1 { 0 } else { i * span / (n - 1) };
        let anchors = (0..count)
            .map(|k| {
                (
                    offset(k / cols, rows, span_h),
                    offset(k % cols, cols, span_w),
                )
            })
            .collect();
        Ok(Self {
            patch_size,
            anchors,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn anchors(&self) -> &[(usize, usize)] {
        &self.anchors
    }

    /// Copies every patch out of `src`, in anchor order.
    pub fn extract(&self, src: &ImagePlane) -> Result<Vec<ImagePlane>> {
        self.anchors
            .iter()
            .map(|&(r, c)| src.crop(r, c, self.patch_size, self.patch_size))
            .collect()
    }
}

pub fn patchify(src: &ImagePlane, patch_size: usize, count: usize) -> Result<Vec<ImagePlane>> {
    PatchGrid::layout(src.height(), src.width(), patch_size, count)?.extract(src)
}

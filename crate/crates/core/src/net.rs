//! Deep residual super-resolution network.
//!
//! A cascade of `k × k` zero-padded convolutions with a rectifier after every
//! layer except the last. The cascade predicts a residual image that is added
//! back onto the interpolated input:
//!
//! ```text
//! sr = ilr + conv_L(relu(... relu(conv_1(ilr))))
//! ```
//!
//! Batches are processed sample-by-sample on the rayon pool; gradient
//! reduction over a batch always happens in sample order so results do not
//! depend on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{ImagePlane, Scale};
use crate::loss::LossEstimator;

/// Only activation supported between layers.
pub const ACTIVATION_RELU: &str = "relu";

/// One convolution: `weights[out][in][ky][kx]` and `biases[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl ConvLayer {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        check_kernel(kernel)?;
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::InvalidParameter(
                "layer needs at least one channel in and out".into(),
            ));
        }
        if weights.len() != out_channels * in_channels * kernel * kernel {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for a {out_channels}x{in_channels}x{kernel}x{kernel} layer",
                weights.len()
            )));
        }
        if biases.len() != out_channels {
            return Err(Error::ShapeMismatch(format!(
                "{} biases for {out_channels} output channels",
                biases.len()
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel,
            weights,
            biases,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Result<Self> {
        Self::new(
            out_channels,
            in_channels,
            kernel,
            vec![0.0; out_channels * in_channels * kernel * kernel],
            vec![0.0; out_channels],
        )
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    #[inline]
    fn weight_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel + ky) * self.kernel + kx
    }

    /// `input` is `in_channels × h × w`, `out` is `out_channels × h × w`.
    fn forward_into(&self, input: &[f64], h: usize, w: usize, out: &mut [f64]) {
        let plane = h * w;
        for oc in 0..self.out_channels {
            let dst = &mut out[oc * plane..(oc + 1) * plane];
            dst.fill(self.biases[oc]);
            for ic in 0..self.in_channels {
                let src = &input[ic * plane..(ic + 1) * plane];
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let wv = self.weights[self.weight_index(oc, ic, ky, kx)];
                        if wv == 0.0 {
                            continue;
                        }
                        let win = Window::new(ky, kx, self.kernel, h, w);
                        for y in win.y0..win.y1 {
                            let sy = (y as isize + win.dy) as usize;
                            let s = &src[sy * w + (win.x0 as isize + win.dx) as usize..]
                                [..win.x1 - win.x0];
                            let d = &mut dst[y * w + win.x0..y * w + win.x1];
                            for (dv, sv) in d.iter_mut().zip(s) {
                                *dv += wv * sv;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and, when asked, writes
    /// the gradient w.r.t. `input` into `grad_input`.
    fn backward_into(
        &self,
        input: &[f64],
        grad_out: &[f64],
        h: usize,
        w: usize,
        grads: &mut LayerGradient,
        mut grad_input: Option<&mut [f64]>,
    ) {
        let plane = h * w;
        if let Some(gi) = grad_input.as_deref_mut() {
            gi.fill(0.0);
        }
        for oc in 0..self.out_channels {
            let g = &grad_out[oc * plane..(oc + 1) * plane];
            grads.biases[oc] += g.iter().sum::<f64>();
            for ic in 0..self.in_channels {
                let src = &input[ic * plane..(ic + 1) * plane];
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let idx = self.weight_index(oc, ic, ky, kx);
                        let wv = self.weights[idx];
                        let win = Window::new(ky, kx, self.kernel, h, w);
                        let mut acc = 0.0;
                        for y in win.y0..win.y1 {
                            let sy = (y as isize + win.dy) as usize;
                            let off = sy * w + (win.x0 as isize + win.dx) as usize;
                            let s = &src[off..off + win.x1 - win.x0];
                            let gr = &g[y * w + win.x0..y * w + win.x1];
                            acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(gi) = grad_input.as_deref_mut() {
                                let dst =
                                    &mut gi[ic * plane + off..ic * plane + off + win.x1 - win.x0];
                                for (dv, gv) in dst.iter_mut().zip(gr) {
                                    *dv += wv * gv;
                                }
                            }
                        }
                        grads.weights[idx] += acc;
                    }
                }
            }
        }
    }
}

/// Output rows/cols for which a kernel tap reads inside the input.
struct Window {
    dy: isize,
    dx: isize,
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

impl Window {
    fn new(ky: usize, kx: usize, kernel: usize, h: usize, w: usize) -> Self {
        let pad = (kernel / 2) as isize;
        let dy = ky as isize - pad;
        let dx = kx as isize - pad;
        let range = |d: isize, n: usize| {
            let lo = (-d).max(0) as usize;
            let hi = (n as isize - d).clamp(0, n as isize) as usize;
            (lo.min(hi), hi)
        };
        let (y0, y1) = range(dy, h);
        let (x0, x1) = range(dx, w);
        Self {
            dy,
            dx,
            y0,
            y1,
            x0,
            x1,
        }
    }
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "kernel size must be odd, got {kernel}"
        )));
    }
    Ok(())
}

/// Where a model's parameters came from and what it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMetadata {
    pub scales: Vec<Scale>,
    /// `None` until the model has been trained.
    pub estimator: Option<LossEstimator>,
    /// Free-form provenance, e.g. `fresh seed=7` or the digest of a start model.
    pub run: String,
}

impl Default for ModelMetadata {
    fn default() -> Self {
        Self {
            scales: Scale::ALL.to_vec(),
            estimator: None,
            run: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    layers: Vec<ConvLayer>,
    filters: usize,
    kernel: usize,
    pub metadata: ModelMetadata,
}

impl NetworkModel {
    /// Assembles a model, checking that channels chain from 1 to 1 through
    /// `filters`-wide interior layers sharing one kernel size.
    pub fn from_layers(layers: Vec<ConvLayer>, metadata: ModelMetadata) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidParameter("model needs at least one layer".into()))?;
        let kernel = first.kernel;
        let filters = first.out_channels;
        let depth = layers.len();
        if first.in_channels != 1 {
            return Err(Error::ShapeMismatch(
                "first layer must take one channel".into(),
            ));
        }
        if layers[depth - 1].out_channels != 1 {
            return Err(Error::ShapeMismatch(
                "last layer must emit one channel".into(),
            ));
        }
        let filters = if depth == 1 { 1 } else { filters };
        for (i, l) in layers.iter().enumerate() {
            if l.kernel != kernel {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} kernel {} != {kernel}",
                    l.kernel
                )));
            }
            let expect_in = if i == 0 { 1 } else { filters };
            let expect_out = if i + 1 == depth { 1 } else { filters };
            if l.in_channels != expect_in || l.out_channels != expect_out {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} is {}->{}, expected {expect_in}->{expect_out}",
                    l.in_channels, l.out_channels
                )));
            }
        }
        Ok(Self {
            layers,
            filters,
            kernel,
            metadata,
        })
    }

    /// Model of the given shape with every weight and bias zero.
    pub fn zeros(depth: usize, filters: usize, kernel: usize) -> Result<Self> {
        let layers = layer_shapes(depth, filters)?
            .into_iter()
            .map(|(o, i)| ConvLayer::zeros(o, i, kernel))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, ModelMetadata::default())
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn activation(&self) -> &'static str {
        ACTIVATION_RELU
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self.depth(), self.kernel)
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn bias_count(&self) -> usize {
        self.layers.iter().map(|l| l.biases.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Plain gradient step `w <- w - lr * g`.
    pub fn apply_gradients(&mut self, grads: &GradientSet, learning_rate: f64) -> Result<()> {
        grads.check_congruent(self)?;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, d) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= learning_rate * d;
            }
            for (b, d) in layer.biases.iter_mut().zip(&g.biases) {
                *b -= learning_rate * d;
            }
        }
        Ok(())
    }
}

fn layer_shapes(depth: usize, filters: usize) -> Result<Vec<(usize, usize)>> {
    if depth == 0 || filters == 0 {
        return Err(Error::InvalidParameter(
            "depth and filters must be positive".into(),
        ));
    }
    Ok((0..depth)
        .map(|i| {
            let inp = if i == 0 { 1 } else { filters };
            let out = if i + 1 == depth { 1 } else { filters };
            (out, inp)
        })
        .collect())
}

/// He-initialised model: weights ~ N(0, 2 / fan_in), biases zero.
pub fn init_model(depth: usize, filters: usize, kernel: usize, seed: u64) -> Result<NetworkModel> {
    check_kernel(kernel)?;
    if depth < 2 {
        return Err(Error::InvalidParameter(format!(
            "depth must be at least 2, got {depth}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_shapes(depth, filters)?
        .into_iter()
        .map(|(out, inp)| {
            let fan_in = (inp * kernel * kernel) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let weights = (0..out * inp * kernel * kernel)
                .map(|_| normal.sample(&mut rng))
                .collect();
            ConvLayer::new(out, inp, kernel, weights, vec![0.0; out])
        })
        .collect::<Result<Vec<_>>>()?;
    NetworkModel::from_layers(
        layers,
        ModelMetadata {
            run: format!("fresh seed={seed}"),
            ..ModelMetadata::default()
        },
    )
}

/// Side of the square input region that influences one output pixel.
pub fn receptive_field(depth: usize, kernel: usize) -> usize {
    depth * (kernel - 1) + 1
}

/// `batch × channels × height × width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureBatch {
    pub fn new(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if batch == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(Error::DegenerateInput(
                "feature batch dimensions must be nonzero".into(),
            ));
        }
        if data.len() != batch * channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {batch}x{channels}x{height}x{width} batch",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            data,
        })
    }

    /// Single-channel batch from equally sized planes.
    pub fn from_planes<'a>(planes: impl IntoIterator<Item = &'a ImagePlane>) -> Result<Self> {
        let mut iter = planes.into_iter().peekable();
        let (h, w) = iter
            .peek()
            .map(|p| p.dims())
            .ok_or_else(|| Error::DegenerateInput("no planes for batch".into()))?;
        let mut data = Vec::new();
        let mut batch = 0;
        for p in iter {
            if p.dims() != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "batch planes differ: {h}x{w} vs {}x{}",
                    p.height(),
                    p.width()
                )));
            }
            data.extend_from_slice(p.as_slice());
            batch += 1;
        }
        Self::new(batch, 1, h, w, data)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Channel 0 of sample `i` as a plane.
    pub fn plane(&self, i: usize) -> ImagePlane {
        let n = self.height * self.width;
        ImagePlane::new(self.height, self.width, self.sample(i)[..n].to_vec())
            .expect("batch dimensions are nonzero")
    }
}

/// Weight and bias gradients for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Per-layer gradients mirroring a [`NetworkModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn zeros_like(model: &NetworkModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }

    pub fn check_congruent(&self, model: &NetworkModel) -> Result<()> {
        let ok = self.layers.len() == model.layers.len()
            && self.layers.iter().zip(&model.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "gradient set does not match model".into(),
            ))
        }
    }
}

/// Output of [`forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `ilr + residual`.
    pub sr: FeatureBatch,
    /// What the convolution cascade predicted.
    pub residual: FeatureBatch,
}

/// Output of [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Backprop {
    pub params: GradientSet,
    /// Gradient w.r.t. the network input, skip connection included.
    pub input: FeatureBatch,
}

fn check_input(model: &NetworkModel, ilr: &FeatureBatch) -> Result<()> {
    if ilr.channels != 1 {
        return Err(Error::ShapeMismatch(format!(
            "network takes 1 input channel, got {}",
            ilr.channels
        )));
    }
    if ilr.height < model.kernel || ilr.width < model.kernel {
        return Err(Error::DegenerateInput(format!(
            "{}x{} input is smaller than the {k}x{k} kernel",
            ilr.height,
            ilr.width,
            k = model.kernel
        )));
    }
    Ok(())
}

/// Residual for one sample, optionally keeping every layer's input.
fn run_cascade(
    model: &NetworkModel,
    input: &[f64],
    h: usize,
    w: usize,
    keep: bool,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let plane = h * w;
    let mut trace = Vec::new();
    let mut current = input.to_vec();
    let last = model.layers.len() - 1;
    for (i, layer) in model.layers.iter().enumerate() {
        let mut out = vec![0.0; layer.out_channels * plane];
        layer.forward_into(&current, h, w, &mut out);
        if i != last {
            for v in out.iter_mut() {
                *v = v.max(0.0);
            }
        }
        let prev = std::mem::replace(&mut current, out);
        if keep {
            trace.push(prev);
        }
    }
    (current, trace)
}

pub fn forward(model: &NetworkModel, ilr: &FeatureBatch) -> Result<ForwardOutput> {
    check_input(model, ilr)?;
    let (h, w) = (ilr.height, ilr.width);
    let residuals: Vec<Vec<f64>> = (0..ilr.batch)
        .into_par_iter()
        .map(|i| run_cascade(model, ilr.sample(i), h, w, false).0)
        .collect();
    let residual: Vec<f64> = residuals.into_iter().flatten().collect();
    let sr = ilr.data.iter().zip(&residual).map(|(a, r)| a + r).collect();
    Ok(ForwardOutput {
        sr: FeatureBatch::new(ilr.batch, 1, h, w, sr)?,
        residual: FeatureBatch::new(ilr.batch, 1, h, w, residual)?,
    })
}

fn backward_sample(
    model: &NetworkModel,
    input: &[f64],
    grad_out: &[f64],
    h: usize,
    w: usize,
) -> (GradientSet, Vec<f64>) {
    let (_, trace) = run_cascade(model, input, h, w, true);
    let mut grads = GradientSet::zeros_like(model);
    let mut g = grad_out.to_vec();
    for (i, layer) in model.layers.iter().enumerate().rev() {
        let act = &trace[i];
        let mut gi = vec![0.0; act.len()];
        layer.backward_into(act, &g, h, w, &mut grads.layers[i], Some(&mut gi));
        if i > 0 {
            // Rectifier: pass gradient only where the activation was positive.
            for (gv, &a) in gi.iter_mut().zip(act) {
                if a <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        g = gi;
    }
    for (gv, go) in g.iter_mut().zip(grad_out) {
        *gv += go;
    }
    (grads, g)
}

/// Samples reduced together before being folded into the running sum.
const REDUCE_CHUNK: usize = 16;

/// Exact gradients of a scalar loss whose derivative w.r.t. the network
/// output is `grad_out`, summed over the batch in sample order.
pub fn backward(
    model: &NetworkModel,
    ilr: &FeatureBatch,
    grad_out: &FeatureBatch,
) -> Result<Backprop> {
    check_input(model, ilr)?;
    if grad_out.shape() != ilr.shape() {
        return Err(Error::ShapeMismatch(format!(
            "output gradient {:?} vs output {:?}",
            grad_out.shape(),
            ilr.shape()
        )));
    }
    let (h, w) = (ilr.height, ilr.width);
    let mut params = GradientSet::zeros_like(model);
    let mut input = Vec::with_capacity(ilr.data.len());
    let indices: Vec<usize> = (0..ilr.batch).collect();
    for chunk in indices.chunks(REDUCE_CHUNK) {
        let parts: Vec<(GradientSet, Vec<f64>)> = chunk
            .par_iter()
            .map(|&i| backward_sample(model, ilr.sample(i), grad_out.sample(i), h, w))
            .collect();
        for (g, gi) in parts {
            params.add_assign(&g);
            input.extend(gi);
        }
    }
    Ok(Backprop {
        params,
        input: FeatureBatch::new(ilr.batch, 1, h, w, input)?,
    })
}

/// Clamps every gradient element to `[-theta, theta]`.
pub fn clip_gradients(mut grads: GradientSet, theta: f64) -> Result<GradientSet> {
    if theta.is_nan() || theta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "clip threshold must be positive, got {theta}"
        )));
    }
    for v in grads.values_mut() {
        *v = v.clamp(-theta, theta);
    }
    Ok(grads)
}

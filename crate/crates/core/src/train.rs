//! Multiscale patch datasets and the SGD training loop.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{
    make_ilr, residual_target, rgb_to_luminance, ImagePlane, PatchGrid, RgbImage, Scale,
};
use crate::loss::{LossEstimator, ResidualMatrix};
use crate::net::{backward, clip_gradients, forward, FeatureBatch, NetworkModel};

pub const DEFAULT_PATCH_SIZE: usize = 41;
pub const DEFAULT_PATCHES_PER_IMAGE: usize = 6;
pub const DEFAULT_MINI_BATCH: usize = 64;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_EPOCHS_MSE: usize = 8;
pub const DEFAULT_EPOCHS_VAR_NORM: usize = 5;

/// One observation: interpolated input patch and the residual it should produce.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub ilr: ImagePlane,
    pub residual: ImagePlane,
    pub scale: Scale,
    /// Index of the source image in the list given to [`build_dataset`].
    pub source: usize,
}

/// Number of pairs [`build_dataset`] yields.
pub fn dataset_size(images: usize, per_image_count: usize, scales: usize) -> usize {
    images * per_image_count * scales
}

/// Luminance patches from every image at every scale, with identical
/// anchors on the HR plane and its ILR.
pub fn build_dataset(
    images: &[RgbImage],
    scales: &[Scale],
    patch_size: usize,
    per_image_count: usize,
) -> Result<Vec<PatchPair>> {
    if images.is_empty() {
        return Err(Error::DegenerateInput(
            "no images to build a dataset from".into(),
        ));
    }
    if scales.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one scale is required".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(dataset_size(images.len(), per_image_count, scales.len()));
    for (source, img) in images.iter().enumerate() {
        let (h, w) = img.dims();
        let grid = PatchGrid::layout(h, w, patch_size, per_image_count)
            .map_err(|e| Error::DegenerateInput(format!("image {source} ({h}x{w}): {e}")))?;
        let hr = rgb_to_luminance(img);
        for &scale in scales {
            let ilr = make_ilr(&hr, scale)
                .map_err(|e| Error::DegenerateInput(format!("image {source}: {e}")))?;
            for (hr_patch, ilr_patch) in grid.extract(&hr)?.into_iter().zip(grid.extract(&ilr)?) {
                pairs.push(PatchPair {
                    residual: residual_target(&hr_patch, &ilr_patch)?,
                    ilr: ilr_patch,
                    scale,
                    source,
                });
            }
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub mini_batch: usize,
    /// Zero is accepted and leaves the model untouched.
    pub learning_rate: f64,
    /// Element-wise gradient clamp; `None` means `0.01 / learning_rate`.
    pub clip_theta: Option<f64>,
    pub estimator: LossEstimator,
    pub scales: Vec<Scale>,
    pub patch_size: usize,
    pub seed: u64,
}

impl TrainingConfig {
    /// Reference settings for `estimator`: batch 64, rate 0.1, and 8 epochs
    /// for MSE or 5 for Var-norm.
    pub fn for_estimator(estimator: LossEstimator) -> Self {
        let epochs = match estimator {
            LossEstimator::Mse => DEFAULT_EPOCHS_MSE,
            LossEstimator::VarNorm { .. } => DEFAULT_EPOCHS_VAR_NORM,
        };
        Self {
            epochs,
            mini_batch: DEFAULT_MINI_BATCH,
            learning_rate: DEFAULT_LEARNING_RATE,
            clip_theta: None,
            estimator,
            scales: Scale::ALL.to_vec(),
            patch_size: DEFAULT_PATCH_SIZE,
            seed: 0,
        }
    }

    pub fn effective_clip_theta(&self) -> f64 {
        match self.clip_theta {
            Some(t) => t,
            None if self.learning_rate > 0.0 => 0.01 / self.learning_rate,
            None => f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.mini_batch == 0 {
            return Err(Error::InvalidParameter(
                "epochs and mini-batch must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.scales.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one scale is required".into(),
            ));
        }
        let theta = self.effective_clip_theta();
        if theta.is_nan() || theta <= 0.0 {
            return Err(Error::InvalidParameter(
                "clip threshold must be positive".into(),
            ));
        }
        if let LossEstimator::VarNorm { stability_r } = self.estimator {
            LossEstimator::var_norm(stability_r)?;
        }
        Ok(())
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::for_estimator(LossEstimator::Mse)
    }
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub rmse: f64,
    pub loss: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} rmse={:?} loss={:?} seconds={:.3}",
            self.epoch, self.rmse, self.loss, self.seconds
        )
    }
}

impl FromStr for EpochLog {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Format {
            what: "epoch log line",
            reason: format!("{why}: {s:?}"),
        };
        let (mut epoch, mut rmse, mut loss, mut seconds) = (None, None, None, None);
        for field in s.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| bad("expected key=value"))?;
            match k {
                "epoch" => epoch = Some(v.parse().map_err(|_| bad("epoch"))?),
                "rmse" => rmse = Some(v.parse().map_err(|_| bad("rmse"))?),
                "loss" => loss = Some(v.parse().map_err(|_| bad("loss"))?),
                "seconds" => seconds = Some(v.parse().map_err(|_| bad("seconds"))?),
                _ => return Err(bad("unknown key")),
            }
        }
        Ok(EpochLog {
            epoch: epoch.ok_or_else(|| bad("missing epoch"))?,
            rmse: rmse.ok_or_else(|| bad("missing rmse"))?,
            loss: loss.ok_or_else(|| bad("missing loss"))?,
            seconds: seconds.ok_or_else(|| bad("missing seconds"))?,
        })
    }
}

/// Root mean squared element-wise difference.
pub fn epoch_rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::DegenerateInput("no predictions".into()));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sum / predictions.len() as f64).sqrt())
}

/// Stacks the batch's prediction errors `pred - target` into one matrix.
fn batch_residuals(predicted: &FeatureBatch, pairs: &[&PatchPair]) -> Result<ResidualMatrix> {
    let mut entries = Vec::with_capacity(predicted.as_slice().len());
    for (i, pair) in pairs.iter().enumerate() {
        let pred = predicted.sample(i);
        entries.extend(
            pred.iter()
                .zip(pair.residual.as_slice())
                .map(|(p, t)| p - t),
        );
    }
    ResidualMatrix::new(
        predicted.batch() * predicted.height(),
        predicted.width(),
        entries,
    )
}

/// Runs `cfg.epochs` of mini-batch SGD, calling `on_epoch` after each epoch.
pub fn train_with(
    mut model: NetworkModel,
    data: &[PatchPair],
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(NetworkModel, Vec<EpochLog>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::DegenerateInput("empty training set".into()));
    }
    let dims = data[0].ilr.dims();
    if let Some(p) = data
        .iter()
        .find(|p| p.ilr.dims() != dims || p.residual.dims() != dims)
    {
        return Err(Error::ShapeMismatch(format!(
            "patch from source {} is {}x{}, expected {}x{}",
            p.source,
            p.ilr.height(),
            p.ilr.width(),
            dims.0,
            dims.1
        )));
    }
    let theta = cfg.effective_clip_theta();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut sq_sum, mut count, mut loss_sum, mut batches) = (0.0, 0usize, 0.0, 0usize);

        for (bi, idx) in order.chunks(cfg.mini_batch).enumerate() {
            let pairs: Vec<&PatchPair> = idx.iter().map(|&i| &data[i]).collect();
            let ilr = FeatureBatch::from_planes(pairs.iter().map(|p| &p.ilr))?;
            let predicted = forward(&model, &ilr)?.residual;
            let f = batch_residuals(&predicted, &pairs)?;
            let eval = cfg.estimator.evaluate(&f)?;
            if !eval.loss.is_finite() {
                return Err(Error::DivergenceDetected {
                    epoch,
                    batch: bi,
                    reason: format!("loss is {}", eval.loss),
                });
            }
            sq_sum += f.as_slice().iter().map(|x| x * x).sum::<f64>();
            count += f.len();
            loss_sum += eval.loss;
            batches += 1;

            let grad_out = FeatureBatch::new(
                ilr.batch(),
                1,
                ilr.height(),
                ilr.width(),
                eval.gradient.into_vec(),
            )?;
            let grads = clip_gradients(backward(&model, &ilr, &grad_out)?.params, theta)?;
            model.apply_gradients(&grads, cfg.learning_rate)?;
        }

        if !model.all_finite() {
            return Err(Error::DivergenceDetected {
                epoch,
                batch: batches.saturating_sub(1),
                reason: "non-finite parameter".into(),
            });
        }
        let log = EpochLog {
            epoch,
            rmse: (sq_sum / count as f64).sqrt(),
            loss: loss_sum / batches as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);
    }

    model.metadata.estimator = Some(cfg.estimator);
    model.metadata.scales = cfg.scales.clone();
    Ok((model, logs))
}

pub fn train(
    model: NetworkModel,
    data: &[PatchPair],
    cfg: &TrainingConfig,
) -> Result<(NetworkModel, Vec<EpochLog>)> {
    train_with(model, data, cfg, |_| {})
}

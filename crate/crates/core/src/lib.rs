//! Single-image super-resolution with a deep residual CNN.
//!
//! The network sees the luminance of an interpolated low-resolution image
//! (ILR) and predicts the residual that restores high-frequency detail. Its
//! regression layer can use either mean squared error or the
//! variance-normalized estimator in [`loss`].

pub mod error;
pub mod format;
pub mod imaging;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use imaging::{ImagePlane, RgbImage, Scale};
pub use loss::{LossEstimator, LossEvaluation, ResidualMatrix};
pub use metrics::QualityScore;
pub use net::{FeatureBatch, GradientSet, NetworkModel};
pub use train::{EpochLog, PatchPair, TrainingConfig};

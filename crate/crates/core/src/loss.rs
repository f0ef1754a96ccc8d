//! Regression-layer loss estimators.
//!
//! Both estimators act on the residual matrix `F = prediction - target`.
//! MSE weights every element by the constant `1/N`. The variance-normalized
//! estimator ("Var-norm") weights every element by
//!
//! ```text
//! s = 1 / (R + var(|F|))
//! ```
//!
//! so its influence function is the straight line `psi(x) = s * x` whose
//! slope shrinks as the spread of the absolute errors grows. `var` is the
//! population variance over all elements of `F`, and `s` is held fixed
//! within an iteration: no derivative is taken through the variance term.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Stability parameter used when none is given.
pub const DEFAULT_STABILITY_R: f64 = 0.1;

/// Estimation errors `F` laid out row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl ResidualMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {rows}x{cols} residual matrix",
                entries.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.entries
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::DegenerateInput("empty residual matrix".into()));
        }
        Ok(())
    }

    fn with_entries(&self, entries: Vec<f64>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }
}

/// Which estimator sits in the regression layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossEstimator {
    Mse,
    VarNorm { stability_r: f64 },
}

impl LossEstimator {
    pub fn var_norm(stability_r: f64) -> Result<Self> {
        check_stability(stability_r)?;
        Ok(LossEstimator::VarNorm { stability_r })
    }

    /// Short identifier used in file headers and on the command line.
    pub fn id(&self) -> &'static str {
        match self {
            LossEstimator::Mse => "mse",
            LossEstimator::VarNorm { .. } => "var-norm",
        }
    }

    pub fn stability_r(&self) -> Option<f64> {
        match *self {
            LossEstimator::Mse => None,
            LossEstimator::VarNorm { stability_r } => Some(stability_r),
        }
    }

    /// Loss value, output gradient and slope for one residual matrix.
    pub fn evaluate(&self, f: &ResidualMatrix) -> Result<LossEvaluation> {
        f.ensure_nonempty()?;
        let slope = match *self {
            LossEstimator::Mse => 1.0 / f.len() as f64,
            LossEstimator::VarNorm { stability_r } => varnorm_slope(f, stability_r)?,
        };
        let sum_sq: f64 = f.entries.iter().map(|x| x * x).sum();
        let gradient = f.with_entries(f.entries.iter().map(|x| slope * x).collect());
        Ok(LossEvaluation {
            loss: 0.5 * slope * sum_sq,
            gradient,
            slope,
        })
    }
}

impl fmt::Display for LossEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossEstimator::Mse => f.write_str("mse"),
            LossEstimator::VarNorm { stability_r } => write!(f, "var-norm(R={stability_r})"),
        }
    }
}

/// Parses `mse` or `var-norm`; the latter gets [`DEFAULT_STABILITY_R`].
impl FromStr for LossEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mse" => Ok(LossEstimator::Mse),
            "var-norm" | "varnorm" | "var_norm" => Ok(LossEstimator::VarNorm {
                stability_r: DEFAULT_STABILITY_R,
            }),
            other => Err(Error::InvalidParameter(format!(
                "unknown estimator {other:?} (expected mse or var-norm)"
            ))),
        }
    }
}

/// Result of [`LossEstimator::evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossEvaluation {
    pub loss: f64,
    /// Derivative of `loss` w.r.t. each entry of `F`, same shape as `F`.
    pub gradient: ResidualMatrix,
    /// Per-element weight of the influence function.
    pub slope: f64,
}

fn check_stability(r: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "stability parameter R must be positive and finite, got {r}"
        )));
    }
    Ok(())
}

/// Population variance of `|F|`.
pub fn var_abs(f: &ResidualMatrix) -> Result<f64> {
    f.ensure_nonempty()?;
    let n = f.len() as f64;
    let mean = f.entries.iter().map(|x| x.abs()).sum::<f64>() / n;
    Ok(f.entries
        .iter()
        .map(|x| {
            let d = x.abs() - mean;
            d * d
        })
        .sum::<f64>()
        / n)
}

/// `1 / (R + var(|F|))`.
pub fn varnorm_slope(f: &ResidualMatrix, stability_r: f64) -> Result<f64> {
    check_stability(stability_r)?;
    Ok(1.0 / (stability_r + var_abs(f)?))
}

/// Element-wise influence function `x / (R + var(|F|))`.
pub fn varnorm_psi(f: &ResidualMatrix, stability_r: f64) -> Result<ResidualMatrix> {
    check_stability(stability_r)?;
    let denom = stability_r + var_abs(f)?;
    Ok(f.with_entries(f.entries.iter().map(|x| x / denom).collect()))
}

//! Training settings from a `key=value` file, overridden by flags.
//!
//! Keys are the flag names without the leading dashes: `estimator`, `r`, `epochs`,
//! `batch`, `lr`, `clip-theta`, `seed`, `depth`, `filters`, `kernel`.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::str::FromStr;

use vdsr_core::loss::DEFAULT_STABILITY_R;
use vdsr_core::train::{DEFAULT_LEARNING_RATE, DEFAULT_MINI_BATCH};
use vdsr_core::{LossEstimator, Scale, TrainingConfig};

use crate::{CliError, CliResult};

pub const DEFAULT_DEPTH: usize = 20;
pub const DEFAULT_FILTERS: usize = 64;
pub const DEFAULT_KERNEL: usize = 3;

/// Partially specified training settings; `None` falls back to a default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSettings {
    pub estimator: Option<String>,
    pub r: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub clip_theta: Option<f64>,
    pub seed: Option<u64>,
    pub depth: Option<usize>,
    pub filters: Option<usize>,
    pub kernel: Option<usize>,
}

/// Fully materialized settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTrain {
    pub config: TrainingConfig,
    pub depth: usize,
    pub filters: usize,
    pub kernel: usize,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Input(format!("config key '{key}': cannot parse '{value}'")))
}

impl TrainSettings {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut s = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Input(format!("config line {}: expected key=value", n + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "estimator" => s.estimator = Some(value.to_string()),
                "r" => s.r = Some(parse_value(key, value)?),
                "epochs" => s.epochs = Some(parse_value(key, value)?),
                "batch" => s.batch = Some(parse_value(key, value)?),
                "lr" => s.lr = Some(parse_value(key, value)?),
                "clip-theta" => s.clip_theta = Some(parse_value(key, value)?),
                "seed" => s.seed = Some(parse_value(key, value)?),
                "depth" => s.depth = Some(parse_value(key, value)?),
                "filters" => s.filters = Some(parse_value(key, value)?),
                "kernel" => s.kernel = Some(parse_value(key, value)?),
                _ => {
                    return Err(CliError::Input(format!(
                        "config line {}: unknown key '{key}'",
                        n + 1
                    )))
                }
            }
        }
        Ok(s)
    }

    /// Fields set in `other` win.
    pub fn overridden_by(self, other: &TrainSettings) -> Self {
        Self {
            estimator: other.estimator.clone().or(self.estimator),
            r: other.r.or(self.r),
            epochs: other.epochs.or(self.epochs),
            batch: other.batch.or(self.batch),
            lr: other.lr.or(self.lr),
            clip_theta: other.clip_theta.or(self.clip_theta),
            seed: other.seed.or(self.seed),
            depth: other.depth.or(self.depth),
            filters: other.filters.or(self.filters),
            kernel: other.kernel.or(self.kernel),
        }
    }

    pub fn resolve(&self, scales: Vec<Scale>, patch_size: usize) -> CliResult<ResolvedTrain> {
        let r = self.r.unwrap_or(DEFAULT_STABILITY_R);
        let estimator = match self.estimator.as_deref().unwrap_or("mse") {
            "mse" => LossEstimator::Mse,
            "var-norm" => LossEstimator::var_norm(r)?,
            other => {
                return Err(CliError::Input(format!(
                    "unknown estimator '{other}' (expected mse or var-norm)"
                )))
            }
        };
        let mut config = TrainingConfig::for_estimator(estimator);
        if let Some(e) = self.epochs {
            config.epochs = e;
        }
        config.mini_batch = self.batch.unwrap_or(DEFAULT_MINI_BATCH);
        config.learning_rate = self.lr.unwrap_or(DEFAULT_LEARNING_RATE);
        config.clip_theta = self.clip_theta;
        config.seed = self.seed.unwrap_or(0);
        config.scales = scales;
        config.patch_size = patch_size;
        config.validate()?;
        Ok(ResolvedTrain {
            config,
            depth: self.depth.unwrap_or(DEFAULT_DEPTH),
            filters: self.filters.unwrap_or(DEFAULT_FILTERS),
            kernel: self.kernel.unwrap_or(DEFAULT_KERNEL),
        })
    }
}

impl ResolvedTrain {
    /// Every setting with its effective value, for manifests.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let c = &self.config;
        let mut m = BTreeMap::new();
        m.insert("estimator".into(), c.estimator.id().into());
        if let Some(r) = c.estimator.stability_r() {
            m.insert("r".into(), format!("{r:?}"));
        }
        m.insert("epochs".into(), c.epochs.to_string());
        m.insert("batch".into(), c.mini_batch.to_string());
        m.insert("lr".into(), format!("{:?}", c.learning_rate));
        m.insert(
            "clip-theta".into(),
            format!("{:?}", c.effective_clip_theta()),
        );
        m.insert("seed".into(), c.seed.to_string());
        m.insert("depth".into(), self.depth.to_string());
        m.insert("filters".into(), self.filters.to_string());
        m.insert("kernel".into(), self.kernel.to_string());
        m.insert("patch-size".into(), c.patch_size.to_string());
        m.insert("scales".into(), scales_to_string(&c.scales));
        m
    }
}

pub fn scales_to_string(scales: &[Scale]) -> String {
    scales
        .iter()
        .map(|s| s.factor().to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Parses `2,3,4`; order is kept, duplicates are rejected.
pub fn parse_scales(text: &str) -> CliResult<Vec<Scale>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let f: usize = parse_value("scales", part.trim())?;
        let s = Scale::try_from(f)?;
        if out.contains(&s) {
            return Err(CliError::Input(format!("scale {f} listed twice")));
        }
        out.push(s);
    }
    Ok(out)
}

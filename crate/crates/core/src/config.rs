//! Experiment configuration: one TOML file drives the whole pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StructureParams;
use crate::p2d::{P2dParams, UniformComponent};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Entries shared by each pair of user features.
    pub pair_dim: usize,
    /// Entries owned by each user feature alone.
    pub solo_dim: usize,
    pub cold_start_variance: f64,
    pub l2_reg: f64,
    pub step_size: f64,
    pub adagrad_epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Ticks per incremental training batch (and table regeneration).
    pub period_ticks: u64,
    /// Impression downsampling factor `r_ds >= 1`.
    pub downsample: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct P2dConfig {
    pub beta: f64,
    pub uniform: UniformComponent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Draw from the conversion-prediction distribution table.
    ConversionDco,
    /// Draw combinations uniformly at random.
    Uniform,
    /// Smoothed click-through counting fed through the same SoftMax; a
    /// simplified stand-in for a click-optimizing baseline.
    CtrCounting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketConfig {
    pub name: String,
    pub share: f64,
    pub policy: PolicyKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportConfig {
    /// Metrics window on occurrence ticks, half-open; defaults to the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_start: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_end: Option<u64>,
    /// Bucket the lifts are computed for; defaults to the first
    /// conversion-dco bucket.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_bucket: Option<String>,
    /// Baseline buckets; defaults to every other bucket.
    #[serde(default)]
    pub baselines: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub ticks: u64,
    pub ticks_per_day: u64,
    /// Path to the world config, relative to this file's directory.
    pub world: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub p2d: P2dConfig,
    pub buckets: Vec<BucketConfig>,
    #[serde(default)]
    pub report: ReportConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Parse(format!("experiment config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ticks == 0 {
            return Err(Error::config("ticks", "must be >= 1"));
        }
        if self.ticks_per_day == 0 {
            return Err(Error::config("ticks_per_day", "must be >= 1"));
        }
        if self.training.period_ticks == 0 {
            return Err(Error::config("training.period_ticks", "must be >= 1"));
        }
        if !(self.training.downsample >= 1.0 && self.training.downsample.is_finite()) {
            return Err(Error::config("training.downsample", "must be finite and >= 1"));
        }
        if !(self.model.cold_start_variance >= 0.0) {
            return Err(Error::config("model.cold_start_variance", "must be >= 0"));
        }
        if !(self.model.l2_reg >= 0.0) {
            return Err(Error::config("model.l2_reg", "must be >= 0"));
        }
        if !(self.model.step_size > 0.0) {
            return Err(Error::config("model.step_size", "must be > 0"));
        }
        if !(self.model.adagrad_epsilon > 0.0) {
            return Err(Error::config("model.adagrad_epsilon", "must be > 0"));
        }
        if !(self.p2d.beta >= 0.0 && self.p2d.beta.is_finite()) {
            return Err(Error::config("p2d.beta", "must be finite and >= 0"));
        }
        self.p2d.uniform.validate()?;
        if self.buckets.is_empty() {
            return Err(Error::config("buckets", "at least one bucket"));
        }
        let mut share_sum = 0.0;
        let mut names = std::collections::BTreeSet::new();
        for (i, bucket) in self.buckets.iter().enumerate() {
            if bucket.name.is_empty() {
                return Err(Error::config(format!("buckets[{i}].name"), "must not be empty"));
            }
            if !names.insert(bucket.name.clone()) {
                return Err(Error::config(
                    format!("buckets[{i}].name"),
                    "bucket names must be unique",
                ));
            }
            if !(bucket.share > 0.0 && bucket.share.is_finite()) {
                return Err(Error::config(format!("buckets[{i}].share"), "must be > 0"));
            }
            share_sum += bucket.share;
        }
        if (share_sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("buckets", format!("shares sum to {share_sum}, expected 1")));
        }
        if let Some(target) = &self.report.target_bucket {
            if !names.contains(target) {
                return Err(Error::config("report.target_bucket", "names an unknown bucket"));
            }
        }
        for (i, baseline) in self.report.baselines.iter().enumerate() {
            if !names.contains(baseline) {
                return Err(Error::config(
                    format!("report.baselines[{i}]"),
                    "names an unknown bucket",
                ));
            }
        }
        if let (Some(a), Some(b)) = (self.report.window_start, self.report.window_end) {
            if a >= b {
                return Err(Error::config("report.window_end", "window must be non-empty"));
            }
        }
        Ok(())
    }

    /// Resolves the world config path relative to this config's directory.
    pub fn world_path(&self, config_path: &Path) -> PathBuf {
        if self.world.is_absolute() {
            self.world.clone()
        } else {
            config_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(&self.world)
        }
    }

    /// Builds the model structure for a world with the given segment keys.
    pub fn structure_for(&self, segment_key_count: usize) -> StructureParams {
        StructureParams {
            user_feature_count: segment_key_count,
            pair_dim: self.model.pair_dim,
            solo_dim: self.model.solo_dim,
            cold_start_variance: self.model.cold_start_variance,
            l2_reg: self.model.l2_reg,
            step_size: self.model.step_size,
            adagrad_epsilon: self.model.adagrad_epsilon,
        }
    }

    /// The table-generation parameters of this experiment.
    pub fn p2d_params(&self) -> P2dParams {
        P2dParams {
            beta: self.p2d.beta,
            uniform: self.p2d.uniform,
            downsample: self.training.downsample,
        }
    }

    /// Target bucket of the report: configured, or the first conversion-dco
    /// bucket.
    pub fn report_target(&self) -> Option<String> {
        if let Some(target) = &self.report.target_bucket {
            return Some(target.clone());
        }
        self.buckets
            .iter()
            .find(|b| b.policy == PolicyKind::ConversionDco)
            .map(|b| b.name.clone())
    }

    /// Baseline buckets of the report: configured, or every non-target bucket.
    pub fn report_baselines(&self, target: &str) -> Vec<String> {
        if !self.report.baselines.is_empty() {
            return self.report.baselines.clone();
        }
        self.buckets
            .iter()
            .filter(|b| b.name != target)
            .map(|b| b.name.clone())
            .collect()
    }
}

#[cfg(test)]
pub(crate) fn test_experiment_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 42,
        ticks: 96,
        ticks_per_day: 24,
        world: PathBuf::from("world.toml"),
        out_dir: None,
        model: ModelConfig {
            pair_dim: 2,
            solo_dim: 2,
            cold_start_variance: 0.01,
            l2_reg: 0.0,
            step_size: 0.1,
            adagrad_epsilon: 1e-8,
        },
        training: TrainingConfig {
            period_ticks: 4,
            downsample: 10.0,
        },
        p2d: P2dConfig {
            beta: 13.86,
            uniform: UniformComponent::Total(0.1),
        },
        buckets: vec![
            BucketConfig {
                name: "conversion-dco".into(),
                share: 0.8,
                policy: PolicyKind::ConversionDco,
            },
            BucketConfig {
                name: "uniform".into(),
                share: 0.1,
                policy: PolicyKind::Uniform,
            },
            BucketConfig {
                name: "ctr-counting".into(),
                share: 0.1,
                policy: PolicyKind::CtrCounting,
            },
        ],
        report: ReportConfig::default(),
    }
}

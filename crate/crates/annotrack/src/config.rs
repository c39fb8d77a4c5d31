//! Run configuration: a TOML file with sensible defaults, dotted-path
//! `key=value` overrides, and an environment override for the output root.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::PredictorKind;

/// Environment variable that overrides `run.out_dir` when set.
pub const OUT_DIR_ENV: &str = "ANNOTRACK_OUT_DIR";

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { out_dir: default_out_dir(), seed: 7 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub sequences: usize,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub anchor_interval: usize,
    pub sigma_pos: f64,
    pub sigma_scale: f64,
    pub p_drift: f64,
    pub drift_scale: f64,
    pub conf_noise: f64,
    pub map_side: usize,
    pub map_noise: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = crate::synth::SynthConfig::default();
        SynthSection {
            sequences: 8,
            frame_count: d.frame_count,
            width: d.width,
            height: d.height,
            anchor_interval: d.anchor_interval,
            sigma_pos: d.sigma_pos,
            sigma_scale: d.sigma_scale,
            p_drift: d.p_drift,
            drift_scale: d.drift_scale,
            conf_noise: d.conf_noise,
            map_side: d.map_side,
            map_noise: d.map_noise,
        }
    }
}

impl SynthSection {
    pub fn to_synth_config(&self, seed: u64, video_id: String) -> crate::synth::SynthConfig {
        crate::synth::SynthConfig {
            seed,
            video_id,
            frame_count: self.frame_count,
            width: self.width,
            height: self.height,
            anchor_interval: self.anchor_interval,
            sigma_pos: self.sigma_pos,
            sigma_scale: self.sigma_scale,
            p_drift: self.p_drift,
            drift_scale: self.drift_scale,
            conf_noise: self.conf_noise,
            map_side: self.map_side,
            map_noise: self.map_noise,
        }
    }
}

fn parse_kind(s: &str) -> Result<PredictorKind> {
    match s {
        "lstm" => Ok(PredictorKind::Lstm),
        "feedforward" => Ok(PredictorKind::FeedForward),
        other => Err(Error::invalid(format!("unknown predictor kind `{other}` (lstm|feedforward)"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub feature_dim: usize,
    pub hidden: usize,
    pub window_len: usize,
    pub map_side: usize,
    pub mask_rows: usize,
    pub mask_cols: usize,
    /// "lstm" or "feedforward"
    pub kind: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            feature_dim: 64,
            hidden: 128,
            window_len: 20,
            map_side: 32,
            mask_rows: 64,
            mask_cols: 64,
            kind: "lstm".to_string(),
        }
    }
}

impl ModelSection {
    pub fn predictor_kind(&self) -> Result<PredictorKind> {
        parse_kind(&self.kind)
    }

    pub fn to_assess_config(&self, seed: u64) -> Result<crate::assess::AssessConfig> {
        Ok(crate::assess::AssessConfig {
            feature_dim: self.feature_dim,
            hidden: self.hidden,
            window_len: self.window_len,
            map_side: self.map_side,
            kind: self.predictor_kind()?,
            seed,
        })
    }

    pub fn to_geometry_config(&self, seed: u64) -> Result<crate::refine::GeometryConfig> {
        Ok(crate::refine::GeometryConfig {
            feature_dim: self.feature_dim,
            hidden: self.hidden,
            window_len: self.window_len,
            map_side: self.map_side,
            mask_rows: self.mask_rows,
            mask_cols: self.mask_cols,
            kind: self.predictor_kind()?,
            seed,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = crate::assess::TrainConfig::default();
        TrainSection { lr: d.lr, batch_size: d.batch_size, epochs: d.epochs }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> crate::assess::TrainConfig {
        crate::assess::TrainConfig { lr: self.lr, batch_size: self.batch_size, epochs: self.epochs, seed }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    pub tau: f64,
    pub failure_threshold: f64,
    pub stride: usize,
    /// Oracle mask distractor count in the synthetic benchmark.
    pub distractors: usize,
    pub mask_noise: f64,
}

impl Default for InferSection {
    fn default() -> Self {
        let d = crate::infer::InferenceConfig::default();
        InferSection {
            tau: d.tau,
            failure_threshold: d.failure_threshold,
            stride: d.stride,
            distractors: 2,
            mask_noise: 0.005,
        }
    }
}

impl InferSection {
    pub fn to_inference_config(&self) -> crate::infer::InferenceConfig {
        crate::infer::InferenceConfig {
            tau: self.tau,
            failure_threshold: self.failure_threshold,
            stride: self.stride,
            ..crate::infer::InferenceConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub synth: SynthSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub infer: InferSection,
}

impl RunConfig {
    /// Load from TOML, apply `key=value` dotted-path overrides, then the
    /// output-dir environment override.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut value: toml::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse().map_err(|e: toml::de::Error| Error::Parse {
                    path: p.to_path_buf(),
                    line: 0,
                    message: e.to_string(),
                })?
            }
            None => toml::Value::Table(Default::default()),
        };
        for set in sets {
            apply_set(&mut value, set)?;
        }
        let mut cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| Error::invalid(e.to_string()))?;
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            cfg.run.out_dir = PathBuf::from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.synth.sequences == 0 {
            return Err(Error::invalid("synth.sequences must be > 0"));
        }
        if self.model.window_len == 0 || self.infer.stride == 0 {
            return Err(Error::invalid("window_len and stride must be > 0"));
        }
        self.model.predictor_kind()?;
        self.infer.to_inference_config().validate()?;
        Ok(())
    }
}

/// Apply one `a.b.c=value` override to a TOML tree. The value is parsed as
/// TOML (so strings need no quotes only when they look like bare words we
/// can wrap ourselves).
fn apply_set(root: &mut toml::Value, set: &str) -> Result<()> {
    let (key, raw) = set
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("override `{set}` is not of the form key=value")))?;
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Value>() {
        Ok(toml::Value::Table(t)) => t.get("v").cloned().unwrap(),
        _ => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::invalid(format!("override `{key}` crosses a non-table value")))?;
        if i == parts.len() - 1 {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!()
}

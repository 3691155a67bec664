//! Model snapshot files: line-delimited JSON with a header record followed by
//! one record per feature-value vector.
//!
//! Floats round-trip exactly (shortest-exact decimal encoding), vectors are
//! written in key order, and loading a snapshot and saving it again
//! reproduces the bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureKey, FeatureValueVector, ModelState, StructureParams};

pub const SNAPSHOT_FORMAT: &str = "dco-model-v1";

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header {
        format: String,
        structure: StructureParams,
        user_features: Vec<String>,
        bias: f64,
        bias_accum: f64,
        rng_seed: u64,
        periods_trained: u64,
        skipped_events: u64,
    },
    Vector {
        feature: String,
        value: String,
        weights: Vec<f64>,
        grad_accum: Vec<f64>,
    },
}

pub fn save_snapshot_string(model: &ModelState) -> String {
    let mut out = String::new();
    let header = Record::Header {
        format: SNAPSHOT_FORMAT.to_string(),
        structure: model.structure().clone(),
        user_features: model.user_features().to_vec(),
        bias: model.bias(),
        bias_accum: model.bias_accum(),
        rng_seed: model.rng_seed(),
        periods_trained: model.periods_trained(),
        skipped_events: model.skipped_events(),
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for (key, vector) in model.vectors() {
        let record = Record::Vector {
            feature: key.feature.clone(),
            value: key.value.clone(),
            weights: vector.weights.clone(),
            grad_accum: vector.grad_accum.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("vector serializes"));
        out.push('\n');
    }
    out
}

pub fn save_snapshot(model: &ModelState, path: &Path) -> Result<()> {
    fs::write(path, save_snapshot_string(model))?;
    Ok(())
}

pub fn load_snapshot_str(text: &str) -> Result<ModelState> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Parse("empty model snapshot".into()))?;
    let header: Record = serde_json::from_str(first)
        .map_err(|e| Error::Parse(format!("snapshot line 1: {e}")))?;
    let (structure, user_features, bias, bias_accum, rng_seed, periods_trained, skipped_events) =
        match header {
            Record::Header {
                format,
                structure,
                user_features,
                bias,
                bias_accum,
                rng_seed,
                periods_trained,
                skipped_events,
            } => {
                if format != SNAPSHOT_FORMAT {
                    return Err(Error::Parse(format!(
                        "snapshot format `{format}`, expected `{SNAPSHOT_FORMAT}`"
                    )));
                }
                (
                    structure,
                    user_features,
                    bias,
                    bias_accum,
                    rng_seed,
                    periods_trained,
                    skipped_events,
                )
            }
            Record::Vector { .. } => {
                return Err(Error::Parse("snapshot does not start with a header record".into()))
            }
        };
    structure.validate().map_err(|e| Error::Parse(format!("snapshot header: {e}")))?;
    if user_features.len() != structure.user_feature_count {
        return Err(Error::Parse(
            "snapshot user feature list does not match structure".into(),
        ));
    }

    let mut vectors = BTreeMap::new();
    for (idx, line) in lines {
        let record: Record = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("snapshot line {}: {e}", idx + 1)))?;
        match record {
            Record::Header { .. } => {
                return Err(Error::Parse(format!("snapshot line {}: duplicate header", idx + 1)))
            }
            Record::Vector {
                feature,
                value,
                weights,
                grad_accum,
            } => {
                let expected = if user_features.iter().any(|f| *f == feature) {
                    structure.value_dim()
                } else {
                    structure.combined_dim()
                };
                if weights.len() != expected || grad_accum.len() != weights.len() {
                    return Err(Error::Parse(format!(
                        "snapshot line {}: vector `{feature}={value}` has length {}, expected {expected}",
                        idx + 1,
                        weights.len()
                    )));
                }
                let key = FeatureKey::new(feature, value);
                if vectors
                    .insert(key.clone(), FeatureValueVector { weights, grad_accum })
                    .is_some()
                {
                    return Err(Error::Parse(format!(
                        "snapshot line {}: duplicate vector `{key}`",
                        idx + 1
                    )));
                }
            }
        }
    }

    Ok(ModelState::restore(
        structure,
        user_features,
        bias,
        bias_accum,
        vectors,
        rng_seed,
        periods_trained,
        skipped_events,
    ))
}

pub fn load_snapshot(path: &Path) -> Result<ModelState> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("reading snapshot {}: {e}", path.display())))?;
    load_snapshot_str(&text)
}

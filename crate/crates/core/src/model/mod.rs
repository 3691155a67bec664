//! Incremental latent-factor event-prediction model.
//!
//! Every feature value (user or ad side) owns a learned dense vector. User
//! vectors of dimension `value_dim` are expanded and multiplied entrywise
//! into a `combined_dim` vector (see [`construct`]); ad vectors of dimension
//! `combined_dim` are summed. The predicted event probability for a
//! (user, ad) pair is `sigmoid(bias + user · ad)`.
//!
//! Training is one-pass online gradient descent on LogLoss with lazy L2 and
//! per-coordinate AdaGrad step sizes (see [`train`]).

mod construct;
mod snapshot;
mod train;

pub use construct::{aggregate_multivalue, build_ad_vector, build_user_vector};
pub use snapshot::{load_snapshot, load_snapshot_str, save_snapshot, save_snapshot_string};
pub use train::{event_gradients, event_loss, materialize, train_event, EventGradients, TrainOutcome};

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::key_seed;

/// Predictions are kept strictly inside (0, 1); the sigmoid itself rounds to
/// 0.0 or 1.0 for |score| beyond ~37.
const PRED_EPS: f64 = 1e-15;

/// Clamp bound applied inside [`logloss`], per the numeric-safety contract.
const LOGLOSS_EPS: f64 = 1e-12;

/// Structural hyper-parameters of the model.
///
/// `value_dim()` and `combined_dim()` follow from the block construction:
/// each pair of user features shares `pair_dim` entries and each feature owns
/// `solo_dim` entries of its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureParams {
    /// Number of user features (the configured segment keys).
    pub user_feature_count: usize,
    /// Entries allocated to each pair of user features.
    pub pair_dim: usize,
    /// Entries allocated to each user feature alone.
    pub solo_dim: usize,
    /// Variance of the zero-mean Gaussian cold-start initialization.
    pub cold_start_variance: f64,
    /// L2 coefficient, applied lazily to the vectors touched by an event.
    pub l2_reg: f64,
    /// Base online gradient descent step size.
    pub step_size: f64,
    /// Denominator guard of the AdaGrad step.
    pub adagrad_epsilon: f64,
}

impl StructureParams {
    /// Dimension of a single user feature value vector:
    /// `(K - 1) * pair_dim + solo_dim`.
    pub fn value_dim(&self) -> usize {
        (self.user_feature_count - 1) * self.pair_dim + self.solo_dim
    }

    /// Dimension of the combined user (and ad) vector:
    /// `C(K, 2) * pair_dim + K * solo_dim`.
    pub fn combined_dim(&self) -> usize {
        let k = self.user_feature_count;
        k * (k - 1) / 2 * self.pair_dim + k * self.solo_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.user_feature_count == 0 {
            return Err(Error::Structural("user_feature_count must be >= 1".into()));
        }
        if self.value_dim() == 0 {
            return Err(Error::Structural(
                "value_dim is zero; pair_dim and solo_dim cannot both be zero".into(),
            ));
        }
        if !(self.cold_start_variance >= 0.0 && self.cold_start_variance.is_finite()) {
            return Err(Error::Structural("cold_start_variance must be finite and >= 0".into()));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return Err(Error::Structural("l2_reg must be finite and >= 0".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Structural("step_size must be finite and > 0".into()));
        }
        if !(self.adagrad_epsilon > 0.0 && self.adagrad_epsilon.is_finite()) {
            return Err(Error::Structural("adagrad_epsilon must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// Identifies one learned vector: a (feature name, value string) pair.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub feature: String,
    pub value: String,
}

impl FeatureKey {
    pub fn new(feature: impl Into<String>, value: impl Into<String>) -> Self {
        FeatureKey {
            feature: feature.into(),
            value: value.into(),
        }
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.feature, self.value)
    }
}

/// A learned vector plus its AdaGrad accumulator (sum of squared gradients).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureValueVector {
    pub weights: Vec<f64>,
    pub grad_accum: Vec<f64>,
}

impl FeatureValueVector {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// The full model: bias, per-feature-value vectors, and structure.
///
/// Training mutates the state and is single-writer; clones act as immutable
/// snapshots for concurrent readers (table generation, serving).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    structure: StructureParams,
    user_features: Vec<String>,
    bias: f64,
    bias_accum: f64,
    vectors: BTreeMap<FeatureKey, FeatureValueVector>,
    rng_seed: u64,
    periods_trained: u64,
    skipped_events: u64,
}

impl ModelState {
    pub fn new(structure: StructureParams, user_features: Vec<String>, rng_seed: u64) -> Result<Self> {
        structure.validate()?;
        if user_features.len() != structure.user_feature_count {
            return Err(Error::Structural(format!(
                "expected {} user features, got {}",
                structure.user_feature_count,
                user_features.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &user_features {
            if !seen.insert(name.clone()) {
                return Err(Error::Structural(format!("duplicate user feature `{name}`")));
            }
        }
        Ok(ModelState {
            structure,
            user_features,
            bias: 0.0,
            bias_accum: 0.0,
            vectors: BTreeMap::new(),
            rng_seed,
            periods_trained: 0,
            skipped_events: 0,
        })
    }

    pub fn structure(&self) -> &StructureParams {
        &self.structure
    }

    pub fn user_features(&self) -> &[String] {
        &self.user_features
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn set_bias(&mut self, bias: f64) {
        self.bias = bias;
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Count of training periods applied so far; also names the snapshot.
    pub fn periods_trained(&self) -> u64 {
        self.periods_trained
    }

    pub fn version(&self) -> String {
        format!("period-{:06}", self.periods_trained)
    }

    /// Events dropped because a non-finite gradient or weight was produced.
    pub fn skipped_events(&self) -> u64 {
        self.skipped_events
    }

    pub fn vector_count(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_user_feature(&self, name: &str) -> bool {
        self.user_features.iter().any(|f| f == name)
    }

    /// Expected vector length for a feature: `value_dim` for user features,
    /// `combined_dim` for everything else.
    pub fn expected_len(&self, feature: &str) -> usize {
        if self.is_user_feature(feature) {
            self.structure.value_dim()
        } else {
            self.structure.combined_dim()
        }
    }

    pub fn vector(&self, key: &FeatureKey) -> Option<&FeatureValueVector> {
        self.vectors.get(key)
    }

    pub fn vector_mut(&mut self, key: &FeatureKey) -> Option<&mut FeatureValueVector> {
        self.vectors.get_mut(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &FeatureKey> {
        self.vectors.keys()
    }

    /// Draws the zero-mean Gaussian initialization for a fresh feature value.
    ///
    /// Deterministic in (rng_seed, key): repeated calls return the same
    /// vector, and an ephemeral read (e.g. table generation) agrees with what
    /// training would later persist. `len` must match the structure's
    /// expectation for the key's feature.
    pub fn cold_start_vector(&self, key: &FeatureKey, len: usize) -> Result<FeatureValueVector> {
        let expected = self.expected_len(&key.feature);
        if len != expected {
            return Err(Error::Structural(format!(
                "cold start for `{key}` requested length {len}, structure expects {expected}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key_seed(self.rng_seed, &key.feature, &key.value));
        let normal = Normal::new(0.0, self.structure.cold_start_variance.sqrt())
            .map_err(|e| Error::Structural(format!("cold start distribution: {e}")))?;
        let weights = (0..len).map(|_| normal.sample(&mut rng)).collect();
        Ok(FeatureValueVector {
            weights,
            grad_accum: vec![0.0; len],
        })
    }

    /// Stored vector, or the deterministic cold-start value without persisting
    /// it. Read-side consumers (table generation, loss probes) use this.
    pub fn vector_or_cold(&self, key: &FeatureKey) -> Result<Cow<'_, FeatureValueVector>> {
        let expected = self.expected_len(&key.feature);
        match self.vectors.get(key) {
            Some(v) => {
                if v.len() != expected {
                    return Err(Error::Structural(format!(
                        "vector `{key}` has length {}, structure expects {expected}",
                        v.len()
                    )));
                }
                Ok(Cow::Borrowed(v))
            }
            None => Ok(Cow::Owned(self.cold_start_vector(key, expected)?)),
        }
    }

    /// Stored vector, cold-starting and persisting it on first touch.
    /// The training path uses this.
    pub fn ensure_vector(&mut self, key: &FeatureKey) -> Result<&mut FeatureValueVector> {
        if !self.vectors.contains_key(key) {
            let fresh = self.cold_start_vector(key, self.expected_len(&key.feature))?;
            self.vectors.insert(key.clone(), fresh);
        }
        Ok(self.vectors.get_mut(key).expect("just inserted"))
    }

    pub(crate) fn note_skipped_event(&mut self) {
        self.skipped_events += 1;
    }

    pub(crate) fn note_period(&mut self) {
        self.periods_trained += 1;
    }

    pub(crate) fn restore(
        structure: StructureParams,
        user_features: Vec<String>,
        bias: f64,
        bias_accum: f64,
        vectors: BTreeMap<FeatureKey, FeatureValueVector>,
        rng_seed: u64,
        periods_trained: u64,
        skipped_events: u64,
    ) -> Self {
        ModelState {
            structure,
            user_features,
            bias,
            bias_accum,
            vectors,
            rng_seed,
            periods_trained,
            skipped_events,
        }
    }

    pub(crate) fn bias_accum(&self) -> f64 {
        self.bias_accum
    }

    pub(crate) fn set_bias_state(&mut self, bias: f64, bias_accum: f64) {
        self.bias = bias;
        self.bias_accum = bias_accum;
    }

    pub(crate) fn vectors(&self) -> &BTreeMap<FeatureKey, FeatureValueVector> {
        &self.vectors
    }
}

/// An ad-side feature: one or more weighted values.
///
/// Categorical features are the single-value special case; the weights come
/// with the data and are not learned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdFeature {
    pub name: String,
    /// (value, weight) pairs; must be non-empty when the feature is used.
    pub values: Vec<(String, f64)>,
}

impl AdFeature {
    pub fn single(name: impl Into<String>, value: impl Into<String>) -> Self {
        AdFeature {
            name: name.into(),
            values: vec![(value.into(), 1.0)],
        }
    }

    pub fn multi(name: impl Into<String>, values: impl IntoIterator<Item = (String, f64)>) -> Self {
        AdFeature {
            name: name.into(),
            values: values.into_iter().collect(),
        }
    }

    /// Unit-weight multi-value feature over the given values.
    pub fn unit_multi(name: impl Into<String>, values: impl IntoIterator<Item = String>) -> Self {
        AdFeature {
            name: name.into(),
            values: values.into_iter().map(|v| (v, 1.0)).collect(),
        }
    }
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Predicted event probability `sigmoid(bias + user · ad)`, strictly in (0, 1).
pub fn predict(model: &ModelState, user_vec: &[f64], ad_vec: &[f64]) -> Result<f64> {
    let dim = model.structure().combined_dim();
    if user_vec.len() != dim || ad_vec.len() != dim {
        return Err(Error::Structural(format!(
            "predict expects vectors of length {dim}, got {} and {}",
            user_vec.len(),
            ad_vec.len()
        )));
    }
    let score: f64 = model.bias() + dot(user_vec, ad_vec);
    Ok(sigmoid(score).clamp(PRED_EPS, 1.0 - PRED_EPS))
}

/// Logistic loss of a prediction against a 0/1 label. The prediction is
/// clamped to `[1e-12, 1 - 1e-12]` first; the L2 penalty is accounted for in
/// the gradient step, not here.
pub fn logloss(pred: f64, label: f64) -> f64 {
    let p = pred.clamp(LOGLOSS_EPS, 1.0 - LOGLOSS_EPS);
    -(1.0 - label) * (1.0 - p).ln() - label * p.ln()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

//! User and ad vector construction.
//!
//! The combined vector of dimension `combined_dim` is laid out as all
//! `C(K, 2)` pair blocks of size `pair_dim` in lexicographic (i, j) order
//! (i < j), followed by the K solo blocks of size `solo_dim` in feature
//! order. A user feature's own `value_dim` vector holds its pair blocks in
//! ascending order of the other feature's index, then its solo block.
//!
//! To build the user vector, each feature's vector is expanded to the
//! combined dimension by placing its blocks into their slots and filling
//! everything else with 1s; the K expanded vectors are then multiplied
//! entrywise. Ad vectors are a plain sum of the ads' feature vectors, with
//! multi-value features aggregated by [`aggregate_multivalue`] first.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{AdFeature, FeatureKey, ModelState, StructureParams};

/// Lexicographic rank of the pair (a, b), a < b, among all pairs of `count`.
fn pair_rank(count: usize, a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < count);
    a * count - a * (a + 1) / 2 + (b - a - 1)
}

/// Maps each coordinate of feature `k`'s own vector to its slot in the
/// combined vector.
fn slot_map(structure: &StructureParams, k: usize) -> Vec<usize> {
    let count = structure.user_feature_count;
    let o = structure.pair_dim;
    let s = structure.solo_dim;
    let pair_slots = count * (count - 1) / 2 * o;
    let mut map = Vec::with_capacity(structure.value_dim());
    for other in (0..count).filter(|&j| j != k) {
        let (i, j) = (k.min(other), k.max(other));
        let base = pair_rank(count, i, j) * o;
        map.extend(base..base + o);
    }
    let own = pair_slots + k * s;
    map.extend(own..own + s);
    map
}

/// Combined-vector slots of feature `k`'s coordinates, in coordinate order.
pub(crate) fn feature_slots(structure: &StructureParams, k: usize) -> impl Iterator<Item = usize> {
    slot_map(structure, k).into_iter()
}

fn expand(structure: &StructureParams, k: usize, weights: &[f64]) -> Vec<f64> {
    let mut out = vec![1.0; structure.combined_dim()];
    for (coord, slot) in slot_map(structure, k).into_iter().enumerate() {
        out[slot] = weights[coord];
    }
    out
}

/// The per-feature pieces of a user vector; kept around for gradient
/// computation.
pub(crate) struct UserParts {
    pub keys: Vec<FeatureKey>,
    /// Each feature's vector expanded to the combined dimension.
    pub expanded: Vec<Vec<f64>>,
    /// Entrywise product of the expanded vectors: the user vector.
    pub combined: Vec<f64>,
}

impl UserParts {
    /// Product over all expanded vectors except feature `k`, at `slot`.
    pub fn product_except(&self, k: usize, slot: usize) -> f64 {
        self.expanded
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, e)| e[slot])
            .product()
    }
}

pub(crate) fn build_user_parts(model: &ModelState, user: &[(String, String)]) -> Result<UserParts> {
    let expected = model.user_features();
    if user.len() != expected.len() {
        return Err(Error::Structural(format!(
            "expected {} user feature values, got {}",
            expected.len(),
            user.len()
        )));
    }
    let mut keys = Vec::with_capacity(user.len());
    let mut expanded = Vec::with_capacity(user.len());
    for (k, ((name, value), expected_name)) in user.iter().zip(expected).enumerate() {
        if name != expected_name {
            return Err(Error::Structural(format!(
                "user feature {k} is `{name}`, expected `{expected_name}`"
            )));
        }
        let key = FeatureKey::new(name.clone(), value.clone());
        let vec = model.vector_or_cold(&key)?;
        expanded.push(expand(model.structure(), k, &vec.weights));
        keys.push(key);
    }
    let dim = model.structure().combined_dim();
    let mut combined = vec![1.0; dim];
    for e in &expanded {
        for (c, x) in combined.iter_mut().zip(e) {
            *c *= x;
        }
    }
    Ok(UserParts {
        keys,
        expanded,
        combined,
    })
}

/// Builds the combined user vector for an ordered list of (feature, value)
/// pairs, one per configured user feature. Unseen values cold-start
/// deterministically without being persisted.
pub fn build_user_vector(model: &ModelState, user: &[(String, String)]) -> Result<Vec<f64>> {
    Ok(build_user_parts(model, user)?.combined)
}

/// Weighted multi-value aggregation: `(1 / sqrt(n)) * sum_i w_i * v_i`.
pub fn aggregate_multivalue(vectors: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    if vectors.len() != weights.len() {
        return Err(Error::Structural(format!(
            "{} vectors but {} weights",
            vectors.len(),
            weights.len()
        )));
    }
    let n = vectors.len();
    if n == 0 {
        return Err(Error::EmptyFeature("aggregate_multivalue".into()));
    }
    let dim = vectors[0].len();
    for v in vectors {
        if v.len() != dim {
            return Err(Error::Structural("multi-value vectors differ in length".into()));
        }
    }
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = vec![0.0; dim];
    for (v, w) in vectors.iter().zip(weights) {
        for (o, x) in out.iter_mut().zip(*v) {
            *o += w * x;
        }
    }
    for o in &mut out {
        *o *= scale;
    }
    Ok(out)
}

/// One resolved ad-side value: its key and the coefficient it contributes to
/// the ad vector (`weight / sqrt(n)` of its owning feature).
pub(crate) struct AdValue {
    pub key: FeatureKey,
    pub coeff: f64,
}

pub(crate) struct AdParts {
    pub values: Vec<AdValue>,
    pub combined: Vec<f64>,
}

pub(crate) fn build_ad_parts(model: &ModelState, features: &[AdFeature]) -> Result<AdParts> {
    let dim = model.structure().combined_dim();
    let mut seen_features = BTreeSet::new();
    let mut values = Vec::new();
    let mut combined = vec![0.0; dim];
    for feature in features {
        if model.is_user_feature(&feature.name) {
            return Err(Error::Structural(format!(
                "`{}` is a user feature and cannot appear on the ad side",
                feature.name
            )));
        }
        if !seen_features.insert(feature.name.clone()) {
            return Err(Error::Structural(format!(
                "ad feature `{}` appears more than once",
                feature.name
            )));
        }
        let n = feature.values.len();
        if n == 0 {
            return Err(Error::EmptyFeature(feature.name.clone()));
        }
        let scale = 1.0 / (n as f64).sqrt();
        for (value, weight) in &feature.values {
            let key = FeatureKey::new(feature.name.clone(), value.clone());
            let vec = model.vector_or_cold(&key)?;
            let coeff = weight * scale;
            for (c, x) in combined.iter_mut().zip(&vec.weights) {
                *c += coeff * x;
            }
            values.push(AdValue { key, coeff });
        }
    }
    Ok(AdParts { values, combined })
}

/// Builds the ad vector: the sum over ad features of each feature's
/// aggregated vector. Unseen values cold-start deterministically without
/// being persisted.
pub fn build_ad_vector(model: &ModelState, features: &[AdFeature]) -> Result<Vec<f64>> {
    Ok(build_ad_parts(model, features)?.combined)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use crate::model::{predict, ModelState, StructureParams};
    use proptest::prelude::*;

    fn any_structure() -> impl Strategy<Value = StructureParams> {
        (1usize..=4, 0usize..=3, 0usize..=3)
            .prop_filter("value_dim must be positive", |(k, o, s)| (k - 1) * o + s > 0)
            .prop_map(|(k, o, s)| StructureParams {
                user_feature_count: k,
                pair_dim: o,
                solo_dim: s,
                cold_start_variance: 0.05,
                l2_reg: 0.0,
                step_size: 0.1,
                adagrad_epsilon: 1e-8,
            })
    }

    proptest! {
        #[test]
        fn user_vector_length_follows_the_dimension_law(structure in any_structure(), seed in 0u64..1000) {
            let k = structure.user_feature_count;
            let expected = k * (k - 1) / 2 * structure.pair_dim + k * structure.solo_dim;
            let names: Vec<String> = (0..k).map(|i| format!("f{i}")).collect();
            let model = ModelState::new(structure, names.clone(), seed).unwrap();
            let user: Vec<(String, String)> =
                names.into_iter().map(|f| (f, "v".to_string())).collect();
            prop_assert_eq!(build_user_vector(&model, &user).unwrap().len(), expected);
        }

        #[test]
        fn predictions_stay_strictly_inside_unit_interval(
            structure in any_structure(),
            seed in 0u64..1000,
            bias in -50.0f64..50.0,
            scale in -100.0f64..100.0,
        ) {
            let k = structure.user_feature_count;
            let dim = structure.combined_dim();
            let names: Vec<String> = (0..k).map(|i| format!("f{i}")).collect();
            let mut model = ModelState::new(structure, names, seed).unwrap();
            model.set_bias(bias);
            let user = vec![scale; dim];
            let ad = vec![scale; dim];
            let p = predict(&model, &user, &ad).unwrap();
            prop_assert!(p > 0.0 && p < 1.0);
        }

        #[test]
        fn aggregate_is_permutation_invariant(
            pairs in proptest::collection::vec((proptest::collection::vec(-2.0f64..2.0, 4), -2.0f64..2.0), 1..6),
            shuffle_seed in 0u64..100,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let vectors: Vec<&[f64]> = pairs.iter().map(|(v, _)| v.as_slice()).collect();
            let weights: Vec<f64> = pairs.iter().map(|(_, w)| *w).collect();
            let base = aggregate_multivalue(&vectors, &weights).unwrap();

            let mut order: Vec<usize> = (0..pairs.len()).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed);
            order.shuffle(&mut rng);
            let shuffled_vectors: Vec<&[f64]> = order.iter().map(|&i| vectors[i]).collect();
            let shuffled_weights: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
            let permuted = aggregate_multivalue(&shuffled_vectors, &shuffled_weights).unwrap();
            for (a, b) in base.iter().zip(&permuted) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

//! Online gradient descent on LogLoss with lazy L2 and AdaGrad steps.
//!
//! For one event the loss is `logloss(p, y) + (l2/2) * sum ||v||^2` over the
//! vectors the event touches; the bias is not regularized. Per-coordinate
//! steps are `step_size / sqrt(adagrad_epsilon + accum)` where `accum` is the
//! running sum of squared gradients including the current one.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::construct::{build_ad_parts, build_user_parts};
use crate::model::{dot, logloss, predict, AdFeature, FeatureKey, ModelState};

/// Gradient of one event's loss with respect to the bias and every touched
/// feature-value vector (data term plus L2).
#[derive(Clone, Debug)]
pub struct EventGradients {
    pub prediction: f64,
    pub bias: f64,
    pub by_key: BTreeMap<FeatureKey, Vec<f64>>,
}

/// Result of a single training step.
#[derive(Clone, Copy, Debug)]
pub struct TrainOutcome {
    /// Prediction before the update.
    pub prediction: f64,
    /// False when the event was skipped because of a non-finite gradient.
    pub applied: bool,
}

fn check_label(label: f64) -> Result<()> {
    if !(label.is_finite() && (0.0..=1.0).contains(&label)) {
        return Err(Error::Structural(format!("label {label} outside [0, 1]")));
    }
    Ok(())
}

/// Persists cold-start vectors for every feature value the event touches.
pub fn materialize(model: &mut ModelState, user: &[(String, String)], ad: &[AdFeature]) -> Result<()> {
    for (k, (name, value)) in user.iter().enumerate() {
        let expected = model.user_features().get(k);
        if expected.map(String::as_str) != Some(name.as_str()) {
            return Err(Error::Structural(format!(
                "user feature {k} is `{name}`, expected `{}`",
                expected.cloned().unwrap_or_default()
            )));
        }
        model.ensure_vector(&FeatureKey::new(name.clone(), value.clone()))?;
    }
    for feature in ad {
        if feature.values.is_empty() {
            return Err(Error::EmptyFeature(feature.name.clone()));
        }
        for (value, _) in &feature.values {
            model.ensure_vector(&FeatureKey::new(feature.name.clone(), value.clone()))?;
        }
    }
    Ok(())
}

/// The event loss as a pure function of the model: LogLoss of the prediction
/// plus the L2 penalty over the unique vectors the event touches. Used by the
/// finite-difference checks.
pub fn event_loss(
    model: &ModelState,
    user: &[(String, String)],
    ad: &[AdFeature],
    label: f64,
) -> Result<f64> {
    check_label(label)?;
    let user_parts = build_user_parts(model, user)?;
    let ad_parts = build_ad_parts(model, ad)?;
    let p = predict(model, &user_parts.combined, &ad_parts.combined)?;
    let mut loss = logloss(p, label);
    let l2 = model.structure().l2_reg;
    if l2 > 0.0 {
        let mut unique: BTreeSet<&FeatureKey> = user_parts.keys.iter().collect();
        unique.extend(ad_parts.values.iter().map(|v| &v.key));
        for key in unique {
            let v = model.vector_or_cold(key)?;
            loss += 0.5 * l2 * dot(&v.weights, &v.weights);
        }
    }
    Ok(loss)
}

/// Analytic gradients of [`event_loss`] through the vector construction.
pub fn event_gradients(
    model: &ModelState,
    user: &[(String, String)],
    ad: &[AdFeature],
    label: f64,
) -> Result<EventGradients> {
    check_label(label)?;
    let user_parts = build_user_parts(model, user)?;
    let ad_parts = build_ad_parts(model, ad)?;
    let p = predict(model, &user_parts.combined, &ad_parts.combined)?;
    let residual = p - label;
    let l2 = model.structure().l2_reg;

    let mut by_key: BTreeMap<FeatureKey, Vec<f64>> = BTreeMap::new();

    // Ad side: score is linear in each value vector with its coefficient.
    for value in &ad_parts.values {
        let grad = by_key
            .entry(value.key.clone())
            .or_insert_with(|| vec![0.0; user_parts.combined.len()]);
        for (g, u) in grad.iter_mut().zip(&user_parts.combined) {
            *g += residual * value.coeff * u;
        }
    }

    // User side: d(score)/d(v_k[c]) = ad[slot] * prod of the other features'
    // expanded entries at that slot.
    let structure = model.structure();
    for (k, key) in user_parts.keys.iter().enumerate() {
        let value_dim = structure.value_dim();
        let grad = by_key.entry(key.clone()).or_insert_with(|| vec![0.0; value_dim]);
        debug_assert_eq!(grad.len(), value_dim);
        for (coord, slot) in super::construct::feature_slots(structure, k).enumerate() {
            grad[coord] += residual * ad_parts.combined[slot] * user_parts.product_except(k, slot);
        }
    }

    // Lazy L2 on every unique touched vector.
    if l2 > 0.0 {
        let mut unique: BTreeSet<FeatureKey> = user_parts.keys.iter().cloned().collect();
        unique.extend(ad_parts.values.iter().map(|v| v.key.clone()));
        for key in unique {
            let stored = model.vector_or_cold(&key)?;
            let grad = by_key.get_mut(&key).expect("touched key has a gradient entry");
            for (g, w) in grad.iter_mut().zip(&stored.weights) {
                *g += l2 * w;
            }
        }
    }

    Ok(EventGradients {
        prediction: p,
        bias: residual,
        by_key,
    })
}

/// One online training step: cold-start what is missing, compute gradients,
/// and apply AdaGrad updates. A non-finite gradient or weight skips the whole
/// event and bumps the model's diagnostics counter.
pub fn train_event(
    model: &mut ModelState,
    user: &[(String, String)],
    ad: &[AdFeature],
    label: f64,
) -> Result<TrainOutcome> {
    materialize(model, user, ad)?;
    let grads = event_gradients(model, user, ad, label)?;

    let finite = grads.bias.is_finite()
        && grads
            .by_key
            .values()
            .all(|g| g.iter().all(|x| x.is_finite()));
    if !finite {
        model.note_skipped_event();
        return Ok(TrainOutcome {
            prediction: grads.prediction,
            applied: false,
        });
    }

    let step = model.structure().step_size;
    let eps = model.structure().adagrad_epsilon;

    // Stage every update, commit only if all results are finite.
    let mut staged: Vec<(FeatureKey, Vec<f64>, Vec<f64>)> = Vec::with_capacity(grads.by_key.len());
    let mut all_finite = true;
    for (key, grad) in &grads.by_key {
        let current = model.vector(key).expect("materialized");
        let mut weights = Vec::with_capacity(grad.len());
        let mut accum = Vec::with_capacity(grad.len());
        for ((w, a), g) in current.weights.iter().zip(&current.grad_accum).zip(grad) {
            let na = a + g * g;
            let nw = w - step / (eps + na).sqrt() * g;
            all_finite &= nw.is_finite() && na.is_finite();
            weights.push(nw);
            accum.push(na);
        }
        staged.push((key.clone(), weights, accum));
    }
    let bias_accum = model.bias_accum() + grads.bias * grads.bias;
    let bias = model.bias() - step / (eps + bias_accum).sqrt() * grads.bias;
    all_finite &= bias.is_finite() && bias_accum.is_finite();

    if !all_finite {
        model.note_skipped_event();
        return Ok(TrainOutcome {
            prediction: grads.prediction,
            applied: false,
        });
    }

    for (key, weights, accum) in staged {
        let v = model.vector_mut(&key).expect("materialized");
        v.weights = weights;
        v.grad_accum = accum;
    }
    model.set_bias_state(bias, bias_accum);
    Ok(TrainOutcome {
        prediction: grads.prediction,
        applied: true,
    })
}

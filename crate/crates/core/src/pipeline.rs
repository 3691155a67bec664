//! Turns the logged event stream into the auxiliary model's training stream.
//!
//! Impressions become negatives (downsampled by a Bernoulli keep of
//! `1 / r_ds`), conversions become positives and are never dropped, and the
//! two are never joined: the impression behind a conversion stays in the
//! negative stream, which is why predictions need the bias correction of
//! [`crate::p2d::correct_prediction`]. Clicks do not feed this model.
//!
//! Conversions enter the stream at their report tick, not their occurrence
//! tick; the event log is already ordered by visibility.

use rand::Rng;

use crate::error::{Error, Result};
use crate::events::{Event, EventKind};
use crate::model::{train_event, AdFeature, ModelState};
use crate::p2d::Catalog;

/// Reserved value of the combination-assets feature for non-DCO traffic.
pub const NONDCO_VALUE: &str = "NONDCO";

/// Name of the combination-assets ad feature.
pub const ASSETS_FEATURE: &str = "assets";

/// Reserved value filled in for absent user features.
pub const UNKNOWN_VALUE: &str = "unknown";

/// The combination-assets ad feature: one unit-weight value per rendered
/// asset, or the NONDCO sentinel when the ad has no assets. Ties combinations
/// that share assets together so conversion patterns transfer between them.
pub fn assets_feature(rendered_assets: &[String]) -> AdFeature {
    if rendered_assets.is_empty() {
        AdFeature::single(ASSETS_FEATURE, NONDCO_VALUE)
    } else {
        AdFeature::unit_multi(ASSETS_FEATURE, rendered_assets.iter().cloned())
    }
}

/// One labeled example for the auxiliary model.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    /// Report tick; training consumes examples in non-decreasing `at` order.
    pub at: u64,
    pub user: Vec<(String, String)>,
    pub ad: Vec<AdFeature>,
    pub label: f64,
}

/// Event-to-example transformation parameters.
pub struct ExamplePipeline<'a> {
    pub catalog: &'a Catalog,
    pub segment_keys: &'a [String],
    /// Impression downsampling factor `r_ds >= 1`; impressions are kept with
    /// probability `1 / r_ds`.
    pub downsample: f64,
}

impl ExamplePipeline<'_> {
    fn example(&self, event: &Event, label: f64) -> Result<TrainingExample> {
        let ad = self
            .catalog
            .get(&event.ad_id)
            .ok_or_else(|| Error::Structural(format!("ad `{}` not in catalog", event.ad_id)))?;
        let mut features = ad.standard_features.clone();
        features.push(assets_feature(&event.rendered_assets));
        let user = self
            .segment_keys
            .iter()
            .map(|key| {
                let value = event
                    .user
                    .get(key)
                    .cloned()
                    .unwrap_or_else(|| UNKNOWN_VALUE.to_string());
                (key.clone(), value)
            })
            .collect();
        Ok(TrainingExample {
            at: event.report_tick(),
            user,
            ad: features,
            label,
        })
    }

    /// Labels and downsamples one batch of events, preserving input order.
    /// Every impression consumes exactly one RNG draw so the stream can be
    /// replayed from a log with the same seed.
    pub fn label_and_sample(&self, events: &[Event], rng: &mut impl Rng) -> Result<Vec<TrainingExample>> {
        debug_assert!(self.downsample >= 1.0);
        let keep = 1.0 / self.downsample;
        let mut examples = Vec::new();
        for event in events {
            match event.kind {
                EventKind::Impression => {
                    if rng.random::<f64>() < keep {
                        examples.push(self.example(event, 0.0)?);
                    }
                }
                EventKind::Conversion => examples.push(self.example(event, 1.0)?),
                EventKind::Click => {}
            }
        }
        Ok(examples)
    }
}

/// Applies one period's batch in report-tick order and returns an immutable
/// snapshot of the updated model.
pub fn train_period(model: &mut ModelState, examples: &[TrainingExample]) -> Result<ModelState> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| examples[i].at);
    for i in order {
        let ex = &examples[i];
        train_event(model, &ex.user, &ex.ad, ex.label)?;
    }
    model.note_period();
    Ok(model.clone())
}

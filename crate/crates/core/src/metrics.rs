//! Bucket metrics and lift reports.
//!
//! Metrics are computed over the traffic of DCO ads that recorded at least
//! one conversion inside the window; the inclusion set is shared by all
//! buckets. Conversions are attributed to their occurrence tick, so
//! conversions still unreported when the log ends are missing — a mild edge
//! effect shared by every bucket.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::BucketConfig;
use crate::error::{Error, Result};
use crate::events::{Event, EventKind};
use crate::p2d::Catalog;

/// Half-open window on occurrence ticks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsWindow {
    pub start: u64,
    pub end: u64,
}

impl MetricsWindow {
    pub fn contains(&self, tick: u64) -> bool {
        (self.start..self.end).contains(&tick)
    }
}

/// Restricts the log to events of DCO ads that had at least one conversion
/// occurring inside the window, across all buckets symmetrically.
pub fn filter_scope<'a>(
    events: &'a [Event],
    catalog: &Catalog,
    window: &MetricsWindow,
) -> Vec<&'a Event> {
    let in_scope: BTreeSet<&str> = events
        .iter()
        .filter(|e| {
            e.kind == EventKind::Conversion
                && window.contains(e.timestamp)
                && catalog.get(&e.ad_id).is_some_and(|ad| ad.is_dco())
        })
        .map(|e| e.ad_id.as_str())
        .collect();
    events
        .iter()
        .filter(|e| window.contains(e.timestamp) && in_scope.contains(e.ad_id.as_str()))
        .collect()
}

/// Raw counts and rates of one bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub bucket: String,
    pub share: f64,
    pub impressions: u64,
    pub clicks: u64,
    pub conversions: u64,
    pub spend: f64,
    pub cvr: f64,
    pub ctr: f64,
    pub cpm: f64,
    /// Absent when the bucket has no conversions.
    pub cpa: Option<f64>,
    /// Impressions normalized by the bucket's traffic share, making delivery
    /// comparable across buckets.
    pub delivery: f64,
}

pub fn bucket_metrics(scoped: &[&Event], buckets: &[BucketConfig]) -> Vec<BucketMetrics> {
    buckets
        .iter()
        .map(|bucket| {
            let mut impressions = 0u64;
            let mut clicks = 0u64;
            let mut conversions = 0u64;
            let mut spend = 0.0;
            for event in scoped.iter().filter(|e| e.bucket == bucket.name) {
                match event.kind {
                    EventKind::Impression => impressions += 1,
                    EventKind::Click => {
                        clicks += 1;
                        spend += event.price_paid.unwrap_or(0.0);
                    }
                    EventKind::Conversion => conversions += 1,
                }
            }
            let imp = impressions as f64;
            BucketMetrics {
                bucket: bucket.name.clone(),
                share: bucket.share,
                impressions,
                clicks,
                conversions,
                spend,
                cvr: if impressions > 0 { conversions as f64 / imp } else { 0.0 },
                ctr: if impressions > 0 { clicks as f64 / imp } else { 0.0 },
                cpm: if impressions > 0 { 1000.0 * spend / imp } else { 0.0 },
                cpa: if conversions > 0 { Some(spend / conversions as f64) } else { None },
                delivery: imp / bucket.share,
            }
        })
        .collect()
}

/// Why a lift cell is absent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftAbsent {
    NonPositiveBaseline,
    NonPositiveMetric,
}

/// Relative lift in percent: `(metric / baseline - 1) * 100` for strictly
/// positive inputs.
pub fn lift(metric: f64, baseline: f64) -> std::result::Result<f64, LiftAbsent> {
    if !(baseline > 0.0) || !baseline.is_finite() {
        return Err(LiftAbsent::NonPositiveBaseline);
    }
    if !(metric > 0.0) || !metric.is_finite() {
        return Err(LiftAbsent::NonPositiveMetric);
    }
    Ok((metric / baseline - 1.0) * 100.0)
}

/// Table-style lift formatting: one decimal from 10% up, two below.
pub fn format_lift(value: &std::result::Result<f64, LiftAbsent>) -> String {
    match value {
        Ok(v) if v.abs() >= 10.0 => format!("{v:.1}%"),
        Ok(v) => format!("{v:.2}%"),
        Err(_) => "n/a".to_string(),
    }
}

/// Two-proportion z-test; returns (z, two-sided p). `None` when degenerate
/// (no trials, or a pooled rate of exactly 0 or 1).
pub fn two_proportion_z(c1: u64, n1: u64, c2: u64, n2: u64) -> Option<(f64, f64)> {
    if n1 == 0 || n2 == 0 {
        return None;
    }
    let p1 = c1 as f64 / n1 as f64;
    let p2 = c2 as f64 / n2 as f64;
    let pooled = (c1 + c2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if !(se > 0.0) {
        return None;
    }
    let z = (p1 - p2) / se;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = 2.0 * (1.0 - normal.cdf(z.abs()));
    Some((z, p))
}

/// One row of the lift table: the target bucket against one baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftRow {
    pub baseline: String,
    pub cvr_lift: std::result::Result<f64, LiftAbsent>,
    pub ctr_lift: std::result::Result<f64, LiftAbsent>,
    pub delivery_lift: std::result::Result<f64, LiftAbsent>,
    pub cpm_lift: std::result::Result<f64, LiftAbsent>,
    pub cpa_lift: std::result::Result<f64, LiftAbsent>,
    /// Two-sided p-value of the CVR two-proportion z-test. Approximate:
    /// delayed conversions mildly violate independence at window edges.
    pub cvr_p_value: Option<f64>,
}

/// The full report document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub window: MetricsWindow,
    pub target_bucket: String,
    pub scoped_ads: Vec<String>,
    pub buckets: Vec<BucketMetrics>,
    pub rows: Vec<LiftRow>,
}

pub fn build_report(
    events: &[Event],
    catalog: &Catalog,
    buckets: &[BucketConfig],
    window: MetricsWindow,
    target: &str,
    baselines: &[String],
) -> Result<ReportDoc> {
    let scoped = filter_scope(events, catalog, &window);
    let scoped_ads: BTreeSet<String> = scoped.iter().map(|e| e.ad_id.clone()).collect();
    let metrics = bucket_metrics(&scoped, buckets);
    let target_metrics = metrics
        .iter()
        .find(|m| m.bucket == target)
        .ok_or_else(|| Error::config("report.target_bucket", "not present in bucket metrics"))?
        .clone();
    let mut rows = Vec::new();
    for baseline in baselines {
        let base = metrics
            .iter()
            .find(|m| m.bucket == *baseline)
            .ok_or_else(|| Error::config("report.baselines", "not present in bucket metrics"))?;
        let cpa_lift = match (target_metrics.cpa, base.cpa) {
            (Some(t), Some(b)) => lift(t, b),
            (None, _) => Err(LiftAbsent::NonPositiveMetric),
            (_, None) => Err(LiftAbsent::NonPositiveBaseline),
        };
        rows.push(LiftRow {
            baseline: baseline.clone(),
            cvr_lift: lift(target_metrics.cvr, base.cvr),
            ctr_lift: lift(target_metrics.ctr, base.ctr),
            delivery_lift: lift(target_metrics.delivery, base.delivery),
            cpm_lift: lift(target_metrics.cpm, base.cpm),
            cpa_lift,
            cvr_p_value: two_proportion_z(
                target_metrics.conversions,
                target_metrics.impressions,
                base.conversions,
                base.impressions,
            )
            .map(|(_, p)| p),
        });
    }
    Ok(ReportDoc {
        window,
        target_bucket: target.to_string(),
        scoped_ads: scoped_ads.into_iter().collect(),
        buckets: metrics,
        rows,
    })
}

/// Renders the human-readable report: per-bucket counts plus the lift table.
pub fn render_report(doc: &ReportDoc) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "window: ticks [{}, {})\n",
        doc.window.start, doc.window.end
    ));
    out.push_str(&format!(
        "scope: {} DCO ad(s) with >= 1 conversion in window\n",
        doc.scoped_ads.len()
    ));
    out.push_str(&format!("target bucket: {}\n\n", doc.target_bucket));

    out.push_str(&format!(
        "{:<16} {:>12} {:>9} {:>12} {:>12} {:>9} {:>9} {:>9} {:>9}\n",
        "bucket", "impressions", "clicks", "conversions", "spend", "CVR", "CTR", "CPM", "CPA"
    ));
    for m in &doc.buckets {
        out.push_str(&format!(
            "{:<16} {:>12} {:>9} {:>12} {:>12.4} {:>9.5} {:>9.5} {:>9.4} {:>9}\n",
            m.bucket,
            m.impressions,
            m.clicks,
            m.conversions,
            m.spend,
            m.cvr,
            m.ctr,
            m.cpm,
            m.cpa.map_or("n/a".to_string(), |c| format!("{c:.4}")),
        ));
    }

    out.push_str(&format!(
        "\n{:<16} {:>9} {:>9} {:>14} {:>9} {:>9} {:>12}\n",
        "baseline", "CVR lift", "CTR lift", "Delivery lift", "CPM lift", "CPA lift", "CVR p-value"
    ));
    for row in &doc.rows {
        out.push_str(&format!(
            "{:<16} {:>9} {:>9} {:>14} {:>9} {:>9} {:>12}\n",
            row.baseline,
            format_lift(&row.cvr_lift),
            format_lift(&row.ctr_lift),
            format_lift(&row.delivery_lift),
            format_lift(&row.cpm_lift),
            format_lift(&row.cpa_lift),
            row.cvr_p_value
                .map_or("n/a".to_string(), |p| format!("{p:.3e}")),
        ));
    }
    out
}

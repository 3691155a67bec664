//! Post-auction serving: score eligible ads, pick the first-price winner,
//! and for DCO winners draw a combination from the distribution table.
//!
//! Combination selection never feeds back into scoring; the auction outcome
//! is the same whether a winner's table entry is uniform, skewed, or missing.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::p2d::{enumerate_combinations, DcoAd, DistributionTable, Segment};
use crate::pipeline::UNKNOWN_VALUE;

/// Bidding strategy of a listing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pricing {
    /// Manual cost per click: the advertiser bids directly.
    Mcpc { bid: f64 },
    /// Optimized cost per click: the effective bid is
    /// `pconv * target cost-per-action`; the advertiser still pays per click.
    Ocpc { tcpa: f64 },
}

/// An auction-eligible ad.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdListing {
    pub ad_id: String,
    pub pricing: Pricing,
    pub dco: Option<DcoAd>,
}

impl AdListing {
    pub fn is_dco(&self) -> bool {
        self.dco.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = match self.pricing {
            Pricing::Mcpc { bid } => bid > 0.0 && bid.is_finite(),
            Pricing::Ocpc { tcpa } => tcpa > 0.0 && tcpa.is_finite(),
        };
        if !positive {
            return Err(Error::Structural(format!(
                "ad `{}` must have a strictly positive bid or tCPA",
                self.ad_id
            )));
        }
        if let Some(dco) = &self.dco {
            dco.validate()?;
            if dco.ad_id != self.ad_id {
                return Err(Error::Structural(format!(
                    "listing `{}` wraps DCO ad `{}`",
                    self.ad_id, dco.ad_id
                )));
            }
        }
        Ok(())
    }
}

/// What the advertiser effectively bids per click for this request.
pub fn effective_bid(ad: &AdListing, pconv: f64) -> f64 {
    match ad.pricing {
        Pricing::Mcpc { bid } => bid,
        Pricing::Ocpc { tcpa } => pconv * tcpa,
    }
}

/// Auction score: `effective_bid * pctr`.
pub fn score_ad(ad: &AdListing, pctr: f64, pconv: f64) -> f64 {
    effective_bid(ad, pconv) * pctr
}

/// A listing with its score for one request.
#[derive(Clone, Debug)]
pub struct ScoredAd<'a> {
    pub ad: &'a AdListing,
    pub score: f64,
    pub effective_bid: f64,
}

/// First-price winner: highest score, ties broken by smallest ad id. The
/// winner pays its own effective bid per click. Returns `None` on an empty
/// list (no fill).
pub fn run_auction<'a, 'b>(eligible: &'b [ScoredAd<'a>]) -> Option<&'b ScoredAd<'a>> {
    eligible.iter().reduce(|best, candidate| {
        if candidate.score > best.score
            || (candidate.score == best.score && candidate.ad.ad_id < best.ad.ad_id)
        {
            candidate
        } else {
            best
        }
    })
}

/// Result of one serving decision.
#[derive(Clone, Debug, PartialEq)]
pub struct AuctionOutcome {
    pub winner: String,
    pub score: f64,
    pub price_per_click: f64,
    pub segment: Segment,
    /// Present exactly when the winner is a DCO ad.
    pub rendered_combination: Option<Vec<String>>,
}

/// Projects the user's features onto the segment keys, filling absent keys
/// with the reserved unknown value.
pub fn extract_segment(user: &BTreeMap<String, String>, segment_keys: &[String]) -> Segment {
    Segment(
        segment_keys
            .iter()
            .map(|key| user.get(key).cloned().unwrap_or_else(|| UNKNOWN_VALUE.to_string()))
            .collect(),
    )
}

/// One categorical draw from an (unnormalized) weight vector. Consumes
/// exactly one uniform variate.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    debug_assert!(!probs.is_empty());
    let total: f64 = probs.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        x -= p;
        if x < 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws the combination to render for a DCO winner: a categorical sample
/// from the table entry, a uniform draw over the ad's combinations when the
/// (ad, segment) entry is missing, and an error when the ad is known to
/// neither the table nor the catalog.
pub fn draw_combination(
    table: &DistributionTable,
    catalog_ad: Option<&DcoAd>,
    ad_id: &str,
    segment: &Segment,
    rng: &mut impl Rng,
) -> Result<Vec<String>> {
    if let Some(probs) = table.distribution(ad_id, segment) {
        let combos = table
            .combinations(ad_id)
            .expect("table entries imply combinations");
        let idx = sample_categorical(probs, rng);
        return Ok(combos[idx].clone());
    }
    if let Some(combos) = table.combinations(ad_id) {
        let idx = sample_categorical(&vec![1.0; combos.len()], rng);
        return Ok(combos[idx].clone());
    }
    if let Some(ad) = catalog_ad {
        let combos = enumerate_combinations(ad);
        let idx = sample_categorical(&vec![1.0; combos.len()], rng);
        return Ok(combos[idx].clone());
    }
    Err(Error::Serving(format!(
        "DCO ad `{ad_id}` is known to neither the distribution table nor the catalog"
    )))
}

//! Synthetic marketplace ground truth.
//!
//! A world is generated deterministically from its config: segment arrival
//! weights, per-(ad, combination, segment) true click and conversion
//! probabilities, a conversion reporting-delay distribution capped at a
//! horizon, and the static main ranking model every bucket shares. The main
//! model scores are the combination-uniform averages of the ground truth, so
//! auction outcomes do not depend on the combination policy under test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AdFeature;
use crate::p2d::{
    enumerate_combinations, enumerate_segments, validate_token, AttributeAssets, Catalog,
    CatalogAd, DcoAd, Segment,
};
use crate::serving::{AdListing, Pricing};
use crate::util::stream_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalConfig {
    /// Every segment is equally likely.
    Uniform,
    /// Seeded random weights in [0.5, 1.5], normalized.
    Random,
}

/// Conversion reporting-delay distribution, in ticks. Sampling maps one
/// pre-drawn uniform variate so every impression consumes the same amount of
/// randomness whether or not it converts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayConfig {
    Constant { ticks: u64 },
    Uniform { max_ticks: u64 },
    Geometric { mean_ticks: f64 },
}

impl DelayConfig {
    pub fn sample(&self, u: f64) -> u64 {
        match *self {
            DelayConfig::Constant { ticks } => ticks,
            DelayConfig::Uniform { max_ticks } => {
                ((u * (max_ticks + 1) as f64) as u64).min(max_ticks)
            }
            DelayConfig::Geometric { mean_ticks } => {
                if mean_ticks <= 0.0 {
                    return 0;
                }
                let p = 1.0 / (mean_ticks + 1.0);
                let k = (1.0 - u).ln() / (1.0 - p).ln();
                if k.is_finite() && k >= 0.0 {
                    k as u64
                } else {
                    0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcoAdsConfig {
    pub count: usize,
    pub attribute_names: Vec<String>,
    pub attribute_sizes: Vec<usize>,
    pub base_ctr: f64,
    /// Relative spread of per-combination click rates, in [0, 1).
    pub ctr_jitter: f64,
    pub base_cvr: f64,
    /// Conversion-rate multiplier of one combination per ad; 1.0 means no
    /// combination stands out.
    pub dominant_cvr_multiplier: f64,
    pub tcpa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub daily_budget: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonDcoAdsConfig {
    pub count: usize,
    pub base_ctr: f64,
    pub base_cvr: f64,
    pub bid: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub daily_budget: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub users_per_tick: u32,
    pub segment_keys: Vec<String>,
    pub segment_domains: Vec<Vec<String>>,
    pub arrival: ArrivalConfig,
    /// Reporting-delay cap in ticks.
    pub delay_horizon_ticks: u64,
    /// Relative spread of per-segment rate multipliers, in [0, 1). Applies
    /// to all combinations of an ad equally.
    #[serde(default)]
    pub segment_jitter: f64,
    pub delay: DelayConfig,
    pub dco_ads: DcoAdsConfig,
    pub nondco_ads: NonDcoAdsConfig,
}

impl WorldConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("world", format!("cannot read {}: {e}", path.display())))?;
        let cfg: WorldConfig = toml::from_str(&text)
            .map_err(|e| Error::Parse(format!("world config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.users_per_tick == 0 {
            return Err(Error::config("world.users_per_tick", "must be >= 1"));
        }
        if self.segment_keys.is_empty() {
            return Err(Error::config("world.segment_keys", "at least one segment key"));
        }
        if self.segment_keys.len() != self.segment_domains.len() {
            return Err(Error::config(
                "world.segment_domains",
                "one domain per segment key",
            ));
        }
        for (i, key) in self.segment_keys.iter().enumerate() {
            validate_token(key, "segment key")
                .map_err(|e| Error::config(format!("world.segment_keys[{i}]"), e.to_string()))?;
        }
        for (i, domain) in self.segment_domains.iter().enumerate() {
            if domain.is_empty() {
                return Err(Error::config(
                    format!("world.segment_domains[{i}]"),
                    "domain must not be empty",
                ));
            }
            for value in domain {
                validate_token(value, "segment value").map_err(|e| {
                    Error::config(format!("world.segment_domains[{i}]"), e.to_string())
                })?;
            }
        }
        let rate = |field: &str, x: f64| {
            if (0.0..=1.0).contains(&x) && x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, "must lie in [0, 1]"))
            }
        };
        rate("world.dco_ads.base_ctr", self.dco_ads.base_ctr)?;
        rate("world.dco_ads.base_cvr", self.dco_ads.base_cvr)?;
        rate("world.nondco_ads.base_ctr", self.nondco_ads.base_ctr)?;
        rate("world.nondco_ads.base_cvr", self.nondco_ads.base_cvr)?;
        if !(0.0..1.0).contains(&self.dco_ads.ctr_jitter) {
            return Err(Error::config("world.dco_ads.ctr_jitter", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.segment_jitter) {
            return Err(Error::config("world.segment_jitter", "must lie in [0, 1)"));
        }
        if !(self.dco_ads.dominant_cvr_multiplier >= 0.0) {
            return Err(Error::config(
                "world.dco_ads.dominant_cvr_multiplier",
                "must be >= 0",
            ));
        }
        if self.dco_ads.count > 0 {
            if self.dco_ads.attribute_names.len() != self.dco_ads.attribute_sizes.len()
                || self.dco_ads.attribute_names.is_empty()
            {
                return Err(Error::config(
                    "world.dco_ads.attribute_sizes",
                    "one size per attribute name, at least one attribute",
                ));
            }
            if self.dco_ads.attribute_sizes.iter().any(|&s| s == 0 || s > 3) {
                return Err(Error::config(
                    "world.dco_ads.attribute_sizes",
                    "each attribute carries 1 to 3 assets",
                ));
            }
            if !(self.dco_ads.tcpa > 0.0) {
                return Err(Error::config("world.dco_ads.tcpa", "must be > 0"));
            }
        }
        if self.nondco_ads.count > 0 && !(self.nondco_ads.bid > 0.0) {
            return Err(Error::config("world.nondco_ads.bid", "must be > 0"));
        }
        Ok(())
    }
}

/// True click/conversion probabilities of one (combination, segment) cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtrCvr {
    pub ctr: f64,
    pub cvr: f64,
}

/// One marketplace ad plus its ground truth.
#[derive(Clone, Debug)]
pub struct WorldAd {
    pub listing: AdListing,
    pub standard_features: Vec<AdFeature>,
    /// Rendered asset tuples; a single empty tuple for non-DCO ads.
    pub combinations: Vec<Vec<String>>,
    /// `truth[combination][segment]`.
    pub truth: Vec<Vec<CtrCvr>>,
    /// Static main-model click probability per segment (shared by all
    /// buckets), the combination-uniform average of the true ctr.
    pub main_pctr: Vec<f64>,
    /// Static main-model conversion-given-click probability per segment.
    pub main_pconv: Vec<f64>,
    pub daily_budget: Option<f64>,
}

/// The generated world: segments, arrival weights, and ads with ground truth.
#[derive(Clone, Debug)]
pub struct WorldModel {
    pub config: WorldConfig,
    pub segments: Vec<Segment>,
    /// Normalized arrival probability per segment.
    pub arrival: Vec<f64>,
    pub ads: Vec<WorldAd>,
}

fn jitter(rng: &mut ChaCha8Rng, spread: f64) -> f64 {
    if spread == 0.0 {
        1.0
    } else {
        1.0 + spread * (rng.random::<f64>() * 2.0 - 1.0)
    }
}

const RATE_FLOOR: f64 = 1e-6;
const RATE_CEIL: f64 = 0.95;

impl WorldModel {
    pub fn generate(config: &WorldConfig) -> Result<WorldModel> {
        config.validate()?;
        let segments = enumerate_segments(&config.segment_domains)?;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, "world"));

        let arrival = match config.arrival {
            ArrivalConfig::Uniform => vec![1.0 / segments.len() as f64; segments.len()],
            ArrivalConfig::Random => {
                let raw: Vec<f64> = (0..segments.len())
                    .map(|_| 0.5 + rng.random::<f64>())
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / total).collect()
            }
        };

        let category_pool = ["sports", "electronics", "finance", "travel", "food"];
        let mut ads = Vec::new();

        for i in 0..config.dco_ads.count {
            let ad_id = format!("dco-{i:02}");
            let attributes: Vec<AttributeAssets> = config
                .dco_ads
                .attribute_names
                .iter()
                .zip(&config.dco_ads.attribute_sizes)
                .map(|(name, &size)| AttributeAssets {
                    name: name.clone(),
                    assets: (0..size)
                        .map(|j| format!("{}{i:02}x{j}", &name[..1]))
                        .collect(),
                })
                .collect();
            let standard_features = standard_features(&ad_id, i, &category_pool, &mut rng);
            let dco = DcoAd::new(ad_id.clone(), standard_features.clone(), attributes)?;
            let combinations = enumerate_combinations(&dco);
            let dominant = rng.random_range(0..combinations.len());

            let combo_ctr: Vec<f64> = (0..combinations.len())
                .map(|_| config.dco_ads.base_ctr * jitter(&mut rng, config.dco_ads.ctr_jitter))
                .collect();
            let segment_mult: Vec<f64> = (0..segments.len())
                .map(|_| jitter(&mut rng, config.segment_jitter))
                .collect();

            let truth: Vec<Vec<CtrCvr>> = (0..combinations.len())
                .map(|c| {
                    let cvr_base = if c == dominant {
                        config.dco_ads.base_cvr * config.dco_ads.dominant_cvr_multiplier
                    } else {
                        config.dco_ads.base_cvr
                    };
                    segment_mult
                        .iter()
                        .map(|m| CtrCvr {
                            ctr: (combo_ctr[c] * m).clamp(RATE_FLOOR, RATE_CEIL),
                            cvr: (cvr_base * m).clamp(RATE_FLOOR, RATE_CEIL),
                        })
                        .collect()
                })
                .collect();

            let listing = AdListing {
                ad_id: ad_id.clone(),
                pricing: Pricing::Ocpc { tcpa: config.dco_ads.tcpa },
                dco: Some(dco),
            };
            listing.validate()?;
            ads.push(finish_ad(
                listing,
                standard_features,
                combinations,
                truth,
                config.dco_ads.daily_budget,
            ));
        }

        for i in 0..config.nondco_ads.count {
            let ad_id = format!("plain-{i:02}");
            let standard_features =
                standard_features(&ad_id, config.dco_ads.count + i, &category_pool, &mut rng);
            let segment_mult: Vec<f64> = (0..segments.len())
                .map(|_| jitter(&mut rng, config.segment_jitter))
                .collect();
            let truth: Vec<Vec<CtrCvr>> = vec![segment_mult
                .iter()
                .map(|m| CtrCvr {
                    ctr: (config.nondco_ads.base_ctr * m).clamp(RATE_FLOOR, RATE_CEIL),
                    cvr: (config.nondco_ads.base_cvr * m).clamp(RATE_FLOOR, RATE_CEIL),
                })
                .collect()];
            let listing = AdListing {
                ad_id,
                pricing: Pricing::Mcpc { bid: config.nondco_ads.bid },
                dco: None,
            };
            listing.validate()?;
            ads.push(finish_ad(
                listing,
                standard_features,
                vec![vec![]],
                truth,
                config.nondco_ads.daily_budget,
            ));
        }

        Ok(WorldModel {
            config: config.clone(),
            segments,
            arrival,
            ads,
        })
    }

    /// Catalog view of the world's ads.
    pub fn catalog(&self) -> Result<Catalog> {
        Catalog::new(self.ads.iter().map(|ad| CatalogAd {
            ad_id: ad.listing.ad_id.clone(),
            standard_features: ad.standard_features.clone(),
            attributes: ad
                .listing
                .dco
                .as_ref()
                .map(|d| d.attributes.clone())
                .unwrap_or_default(),
        }))
    }

    pub fn segment_index(&self, segment: &Segment) -> Option<usize> {
        self.segments.iter().position(|s| s == segment)
    }
}

fn standard_features(
    ad_id: &str,
    index: usize,
    category_pool: &[&str],
    rng: &mut ChaCha8Rng,
) -> Vec<AdFeature> {
    let n_categories = 1 + rng.random_range(0..2usize);
    let mut categories: Vec<String> = Vec::new();
    for _ in 0..n_categories {
        let pick = category_pool[rng.random_range(0..category_pool.len())].to_string();
        if !categories.contains(&pick) {
            categories.push(pick);
        }
    }
    vec![
        AdFeature::single("ad", ad_id),
        AdFeature::single("campaign", format!("camp-{index:02}")),
        AdFeature::single("advertiser", format!("adv-{:02}", index % 3)),
        AdFeature::unit_multi("category", categories),
    ]
}

fn finish_ad(
    listing: AdListing,
    standard_features: Vec<AdFeature>,
    combinations: Vec<Vec<String>>,
    truth: Vec<Vec<CtrCvr>>,
    daily_budget: Option<f64>,
) -> WorldAd {
    let n_segments = truth[0].len();
    let n_combos = combinations.len() as f64;
    let main_pctr: Vec<f64> = (0..n_segments)
        .map(|s| truth.iter().map(|combo| combo[s].ctr).sum::<f64>() / n_combos)
        .collect();
    let main_pconv: Vec<f64> = (0..n_segments)
        .map(|s| truth.iter().map(|combo| combo[s].cvr).sum::<f64>() / n_combos)
        .collect();
    WorldAd {
        listing,
        standard_features,
        combinations,
        truth,
        main_pctr,
        main_pconv,
        daily_budget,
    }
}

#[cfg(test)]
pub(crate) fn test_world_config() -> WorldConfig {
    WorldConfig {
        seed: 7,
        users_per_tick: 50,
        segment_keys: vec!["gender".into(), "device".into()],
        segment_domains: vec![
            ["m", "f", "u"].map(String::from).to_vec(),
            ["mob", "desk", "tab", "unk"].map(String::from).to_vec(),
        ],
        arrival: ArrivalConfig::Uniform,
        delay: DelayConfig::Constant { ticks: 0 },
        delay_horizon_ticks: 720,
        segment_jitter: 0.0,
        dco_ads: DcoAdsConfig {
            count: 2,
            attribute_names: vec!["title".into(), "image".into()],
            attribute_sizes: vec![2, 2],
            base_ctr: 0.05,
            ctr_jitter: 0.0,
            base_cvr: 0.02,
            dominant_cvr_multiplier: 3.0,
            tcpa: 50.0,
            daily_budget: None,
        },
        nondco_ads: NonDcoAdsConfig {
            count: 1,
            base_ctr: 0.05,
            base_cvr: 0.01,
            bid: 0.04,
            daily_budget: None,
        },
    }
}

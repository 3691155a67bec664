//! The A/B experiment loop: serve per tick, log events, train the auxiliary
//! model each period, and regenerate the combination distributions.
//!
//! All buckets share the world's static main ranking model, so the auction
//! winner for a given arrival does not depend on any bucket's combination
//! policy; only the post-auction draw differs. Every arrival consumes a fixed
//! number of RNG draws (segment, bucket, combination when the winner is DCO,
//! click, conversion, delay) so runs that differ only in policy stay aligned
//! draw-for-draw.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, PolicyKind};
use crate::error::{Error, Result};
use crate::events::{Event, EventKind};
use crate::model::ModelState;
use crate::p2d::{generate_table, softmax_distribution, Catalog, DcoAd, DistributionTable};
use crate::pipeline::{train_period, ExamplePipeline};
use crate::serving::{
    draw_combination, run_auction, sample_categorical, score_ad, AuctionOutcome, ScoredAd,
};
use crate::sim::world::WorldModel;
use crate::util::stream_seed;

/// The uniform distribution over an ad's combinations.
pub fn uniform_policy(combination_count: usize) -> Vec<f64> {
    assert!(combination_count >= 1);
    vec![1.0 / combination_count as f64; combination_count]
}

/// Per-combination impression/click tallies for the counting baseline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClickCounter {
    pub impressions: u64,
    pub clicks: u64,
}

/// Counting baseline: smoothed click-through estimates
/// `(clicks + 1) / (impressions + 2)` fed through the same SoftMax transform.
/// This is a deliberately simplified stand-in for a click-optimizing DCO
/// system, not a successive-elimination reimplementation.
pub fn ctr_counting_policy(counters: &[ClickCounter], beta: f64, uniform_mass: f64) -> Vec<f64> {
    let estimates: Vec<f64> = counters
        .iter()
        .map(|c| (c.clicks + 1) as f64 / (c.impressions + 2) as f64)
        .collect();
    softmax_distribution(&estimates, beta, uniform_mass)
}

/// Everything a finished run produces.
pub struct ExperimentOutput {
    /// The event log in visibility order: conversions appear at their report
    /// tick.
    pub events: Vec<Event>,
    pub model: ModelState,
    pub table: Option<DistributionTable>,
    pub catalog: Catalog,
}

pub struct Experiment {
    config: ExperimentConfig,
    world: WorldModel,
    catalog: Catalog,
    dco_ads: Vec<DcoAd>,
    model: ModelState,
    table: Option<DistributionTable>,
    ctr_counters: Vec<Vec<ClickCounter>>,
    ctr_dists: Vec<Option<Vec<f64>>>,
    queue: BTreeMap<u64, Vec<Event>>,
    log: Vec<Event>,
    trained_upto: usize,
    sim_rng: ChaCha8Rng,
    train_rng: ChaCha8Rng,
    spend_today: Vec<f64>,
    current_day: u64,
    /// Test/analysis knob: conversions whose report tick exceeds this are
    /// dropped from the world after sampling, leaving all RNG streams intact.
    /// Used to verify that unreported conversions cannot influence training.
    suppress_reports_after: Option<u64>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, world: WorldModel) -> Result<Self> {
        config.validate()?;
        let catalog = world.catalog()?;
        let dco_ads = catalog.dco_ads();
        let structure = config.structure_for(world.config.segment_keys.len());
        let model = ModelState::new(structure, world.config.segment_keys.clone(), config.seed)?;
        let ctr_counters = world
            .ads
            .iter()
            .map(|ad| vec![ClickCounter::default(); ad.combinations.len()])
            .collect();
        let ctr_dists = vec![None; world.ads.len()];
        let spend_today = vec![0.0; world.ads.len()];
        let sim_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, "sim"));
        let train_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, "train"));
        Ok(Experiment {
            config,
            world,
            catalog,
            dco_ads,
            model,
            table: None,
            ctr_counters,
            ctr_dists,
            queue: BTreeMap::new(),
            log: Vec::new(),
            trained_upto: 0,
            sim_rng,
            train_rng,
            spend_today,
            current_day: 0,
            suppress_reports_after: None,
        })
    }

    pub fn set_suppress_reports_after(&mut self, tick: u64) {
        self.suppress_reports_after = Some(tick);
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn table(&self) -> Option<&DistributionTable> {
        self.table.as_ref()
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    /// Runs the configured number of ticks, training at every period boundary
    /// and once more at the end so the final snapshot and table cover the
    /// whole log.
    pub fn run(&mut self) -> Result<()> {
        for tick in 0..self.config.ticks {
            if tick > 0 && tick % self.config.training.period_ticks == 0 {
                self.training_boundary()?;
            }
            self.release_due(tick);
            let day = tick / self.config.ticks_per_day;
            if day != self.current_day {
                self.current_day = day;
                self.spend_today.iter_mut().for_each(|s| *s = 0.0);
            }
            for _ in 0..self.world.config.users_per_tick {
                self.arrival(tick)?;
            }
        }
        self.training_boundary()?;
        Ok(())
    }

    pub fn into_output(self) -> ExperimentOutput {
        ExperimentOutput {
            events: self.log,
            model: self.model,
            table: self.table,
            catalog: self.catalog,
        }
    }

    fn training_boundary(&mut self) -> Result<()> {
        let pipeline = ExamplePipeline {
            catalog: &self.catalog,
            segment_keys: &self.world.config.segment_keys,
            downsample: self.config.training.downsample,
        };
        let examples =
            pipeline.label_and_sample(&self.log[self.trained_upto..], &mut self.train_rng)?;
        self.trained_upto = self.log.len();
        train_period(&mut self.model, &examples)?;
        self.table = Some(generate_table(
            &self.model,
            &self.dco_ads,
            &self.world.config.segment_domains,
            &self.config.p2d_params(),
        )?);
        for (i, ad) in self.world.ads.iter().enumerate() {
            if ad.listing.is_dco() {
                let mass = self.config.p2d.uniform.total_mass(ad.combinations.len());
                self.ctr_dists[i] = Some(ctr_counting_policy(
                    &self.ctr_counters[i],
                    self.config.p2d.beta,
                    mass,
                ));
            }
        }
        Ok(())
    }

    fn release_due(&mut self, tick: u64) {
        let due: Vec<u64> = self.queue.range(..=tick).map(|(k, _)| *k).collect();
        for key in due {
            let events = self.queue.remove(&key).expect("key seen in range");
            self.log.extend(events);
        }
    }

    fn arrival(&mut self, tick: u64) -> Result<()> {
        let seg_idx = sample_categorical(&self.world.arrival, &mut self.sim_rng);
        let bucket_idx = {
            let shares: Vec<f64> = self.config.buckets.iter().map(|b| b.share).collect();
            sample_categorical(&shares, &mut self.sim_rng)
        };

        let eligible: Vec<usize> = (0..self.world.ads.len())
            .filter(|&i| match self.world.ads[i].daily_budget {
                Some(cap) => self.spend_today[i] < cap,
                None => true,
            })
            .collect();
        let (winner_id, winner_score, ad_idx, price_per_click) = {
            let scored: Vec<ScoredAd> = eligible
                .iter()
                .map(|&i| {
                    let ad = &self.world.ads[i];
                    let pctr = ad.main_pctr[seg_idx];
                    let pconv = ad.main_pconv[seg_idx];
                    ScoredAd {
                        ad: &ad.listing,
                        score: score_ad(&ad.listing, pctr, pconv),
                        effective_bid: crate::serving::effective_bid(&ad.listing, pconv),
                    }
                })
                .collect();
            let Some(winner) = run_auction(&scored) else {
                return Ok(()); // no fill
            };
            let idx = self
                .world
                .ads
                .iter()
                .position(|a| a.listing.ad_id == winner.ad.ad_id)
                .expect("winner is a world ad");
            (
                winner.ad.ad_id.clone(),
                winner.score,
                idx,
                winner.effective_bid,
            )
        };

        let segment = self.world.segments[seg_idx].clone();
        let is_dco = self.world.ads[ad_idx].listing.is_dco();
        let combo_idx = if is_dco {
            self.draw_combo_index(bucket_idx, ad_idx, &segment)?
        } else {
            0
        };
        let outcome = AuctionOutcome {
            winner: winner_id,
            score: winner_score,
            price_per_click,
            segment,
            rendered_combination: is_dco
                .then(|| self.world.ads[ad_idx].combinations[combo_idx].clone()),
        };
        debug_assert_eq!(outcome.rendered_combination.is_some(), is_dco);

        let user: BTreeMap<String, String> = self
            .world
            .config
            .segment_keys
            .iter()
            .cloned()
            .zip(outcome.segment.values().iter().cloned())
            .collect();
        let bucket_name = self.config.buckets[bucket_idx].name.clone();
        let winner_id = outcome.winner;
        let assets = outcome.rendered_combination.unwrap_or_default();

        self.log.push(Event {
            timestamp: tick,
            kind: EventKind::Impression,
            bucket: bucket_name.clone(),
            user: user.clone(),
            ad_id: winner_id.clone(),
            rendered_assets: assets.clone(),
            price_paid: None,
            conversion_delay: None,
        });
        if self.world.ads[ad_idx].listing.is_dco() {
            self.ctr_counters[ad_idx][combo_idx].impressions += 1;
        }

        let truth = self.world.ads[ad_idx].truth[combo_idx][seg_idx];
        let clicked = self.sim_rng.random::<f64>() < truth.ctr;
        if clicked {
            self.spend_today[ad_idx] += price_per_click;
            self.log.push(Event {
                timestamp: tick,
                kind: EventKind::Click,
                bucket: bucket_name.clone(),
                user: user.clone(),
                ad_id: winner_id.clone(),
                rendered_assets: assets.clone(),
                price_paid: Some(price_per_click),
                conversion_delay: None,
            });
            if self.world.ads[ad_idx].listing.is_dco() {
                self.ctr_counters[ad_idx][combo_idx].clicks += 1;
            }
        }

        let converted = self.sim_rng.random::<f64>() < truth.cvr;
        // The delay variate is drawn unconditionally to keep runs that differ
        // only in combination policy aligned draw-for-draw.
        let delay_u = self.sim_rng.random::<f64>();
        if converted {
            let delay = self
                .world
                .config
                .delay
                .sample(delay_u)
                .min(self.world.config.delay_horizon_ticks);
            let report = tick + delay;
            let event = Event {
                timestamp: tick,
                kind: EventKind::Conversion,
                bucket: bucket_name,
                user,
                ad_id: winner_id,
                rendered_assets: assets,
                price_paid: None,
                conversion_delay: Some(delay),
            };
            if self.suppress_reports_after.is_some_and(|t| report > t) {
                // dropped from the world; randomness already consumed
            } else if report == tick {
                self.log.push(event);
            } else {
                self.queue.entry(report).or_default().push(event);
            }
        }
        Ok(())
    }

    /// One combination draw according to the bucket's policy. Consumes
    /// exactly one RNG variate on every path.
    fn draw_combo_index(
        &mut self,
        bucket_idx: usize,
        ad_idx: usize,
        segment: &crate::p2d::Segment,
    ) -> Result<usize> {
        let n = self.world.ads[ad_idx].combinations.len();
        let ad_id = &self.world.ads[ad_idx].listing.ad_id;
        match self.config.buckets[bucket_idx].policy {
            PolicyKind::Uniform => Ok(sample_categorical(&uniform_policy(n), &mut self.sim_rng)),
            PolicyKind::CtrCounting => match &self.ctr_dists[ad_idx] {
                Some(dist) => Ok(sample_categorical(dist, &mut self.sim_rng)),
                None => Ok(sample_categorical(&uniform_policy(n), &mut self.sim_rng)),
            },
            PolicyKind::ConversionDco => match &self.table {
                Some(table) => {
                    let dco = self.world.ads[ad_idx].listing.dco.as_ref();
                    let tuple = draw_combination(table, dco, ad_id, segment, &mut self.sim_rng)?;
                    self.world.ads[ad_idx]
                        .combinations
                        .iter()
                        .position(|c| *c == tuple)
                        .ok_or_else(|| {
                            Error::Serving(format!("drawn combination unknown to ad `{ad_id}`"))
                        })
                }
                None => Ok(sample_categorical(&uniform_policy(n), &mut self.sim_rng)),
            },
        }
    }
}

/// Builds and runs one experiment, returning its artifacts.
pub fn run_experiment(config: ExperimentConfig, world: WorldModel) -> Result<ExperimentOutput> {
    let mut experiment = Experiment::new(config, world)?;
    experiment.run()?;
    Ok(experiment.into_output())
}

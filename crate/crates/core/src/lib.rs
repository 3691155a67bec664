//! Conversion-driven dynamic creative optimization.
//!
//! A DCO ad carries several assets per attribute (titles, images,
//! descriptions); every pick of one asset per attribute is a renderable
//! combination. This crate favors combinations with a high predicted
//! conversion rate while leaving the ad auction untouched:
//!
//! * [`model`] — an incremental latent-factor event-prediction model trained
//!   with online gradient descent and per-coordinate AdaGrad steps.
//! * [`pipeline`] — turns logged impressions and delayed conversions into the
//!   model's training stream (labeling, impression downsampling, no joins).
//! * [`p2d`] — converts per-combination predictions into per-segment sampling
//!   distributions via a SoftMax with a uniform exploration component.
//! * [`serving`] — first-price auction scoring plus the post-auction
//!   combination draw.
//! * [`sim`] — a synthetic marketplace with ground-truth click/conversion
//!   probabilities, delayed conversion reporting, and A/B bucket orchestration.
//! * [`metrics`] — per-bucket rates and lift reports against control buckets.

pub mod commands;
pub mod config;
pub mod error;
pub mod events;
pub mod metrics;
pub mod model;
pub mod p2d;
pub mod pipeline;
pub mod serving;
pub mod sim;
pub(crate) mod util;

pub use error::{Error, Result};

//! Marketplace event records and the line-delimited event log.
//!
//! One JSON object per line. The reader ignores fields it does not know,
//! so logs may carry extra annotations.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Impression,
    Click,
    Conversion,
}

/// One logged marketplace event.
///
/// `timestamp` is the occurrence tick. Conversions additionally carry the
/// reporting delay; they appear in the log at `report_tick()`, which is when
/// training may first see them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub timestamp: u64,
    pub kind: EventKind,
    pub bucket: String,
    pub user: BTreeMap<String, String>,
    pub ad_id: String,
    /// Assets of the rendered combination; empty for non-DCO ads.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rendered_assets: Vec<String>,
    /// Price charged for the click (clicks only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_paid: Option<f64>,
    /// Ticks between occurrence and reporting (conversions only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversion_delay: Option<u64>,
}

impl Event {
    /// Tick at which the event becomes visible to training.
    pub fn report_tick(&self) -> u64 {
        self.timestamp + self.conversion_delay.unwrap_or(0)
    }
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<()> {
    let mut out = Vec::new();
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("reading event log {}: {e}", path.display())))?;
    parse_events(&text)
}

pub fn parse_events(text: &str) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("event log line {}: {e}", idx + 1)))?;
        events.push(event);
    }
    Ok(events)
}

//! Predictions to distributions.
//!
//! For every (DCO ad, traffic segment) pair: build the segment's user vector,
//! predict the conversion rate of each asset combination, bias-correct for
//! impression downsampling and the no-join training scheme, and convert the
//! corrected predictions into a sampling distribution with a SoftMax plus a
//! uniform exploration component.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_ad_vector, build_user_vector, predict, AdFeature, ModelState};
use crate::pipeline::assets_feature;

/// Characters with meaning in the table file; identifiers must avoid them.
const RESERVED: &[char] = &['\t', '\n', '\r', ',', '|', '+'];

pub fn validate_token(token: &str, what: &str) -> Result<()> {
    if token.is_empty() {
        return Err(Error::Structural(format!("{what} must not be empty")));
    }
    if token.contains(RESERVED) {
        return Err(Error::Structural(format!(
            "{what} `{token}` contains a reserved character (tab, newline, comma, `|`, or `+`)"
        )));
    }
    Ok(())
}

/// One native ad attribute and its uploaded assets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeAssets {
    pub name: String,
    pub assets: Vec<String>,
}

/// A DCO ad: standard features plus per-attribute asset lists. Renderable
/// combinations are the Cartesian product of the attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcoAd {
    pub ad_id: String,
    pub standard_features: Vec<AdFeature>,
    pub attributes: Vec<AttributeAssets>,
}

impl DcoAd {
    pub fn new(
        ad_id: impl Into<String>,
        standard_features: Vec<AdFeature>,
        attributes: Vec<AttributeAssets>,
    ) -> Result<Self> {
        let ad = DcoAd {
            ad_id: ad_id.into(),
            standard_features,
            attributes,
        };
        ad.validate()?;
        Ok(ad)
    }

    pub fn validate(&self) -> Result<()> {
        validate_token(&self.ad_id, "ad id")?;
        if self.attributes.is_empty() {
            return Err(Error::Structural(format!(
                "DCO ad `{}` has no attributes",
                self.ad_id
            )));
        }
        for attribute in &self.attributes {
            if attribute.assets.is_empty() || attribute.assets.len() > 3 {
                return Err(Error::Structural(format!(
                    "attribute `{}` of ad `{}` has {} assets; the product allows 1 to 3",
                    attribute.name,
                    self.ad_id,
                    attribute.assets.len()
                )));
            }
            for asset in &attribute.assets {
                validate_token(asset, "asset id")?;
            }
        }
        Ok(())
    }

    pub fn combination_count(&self) -> usize {
        self.attributes.iter().map(|a| a.assets.len()).product()
    }
}

/// A traffic segment: one value per configured segment key, in key order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Segment(pub Vec<String>);

impl Segment {
    pub fn values(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join("/"))
    }
}

/// All segments: the Cartesian product of the segment key domains, in
/// lexicographic order over the configured domain orderings.
pub fn enumerate_segments(segment_key_domains: &[Vec<String>]) -> Result<Vec<Segment>> {
    if segment_key_domains.is_empty() {
        return Err(Error::config("segment_domains", "at least one segment key is required"));
    }
    for (i, domain) in segment_key_domains.iter().enumerate() {
        if domain.is_empty() {
            return Err(Error::config(
                format!("segment_domains[{i}]"),
                "segment key domain must not be empty",
            ));
        }
    }
    Ok(segment_key_domains
        .iter()
        .map(|d| d.iter().cloned())
        .multi_cartesian_product()
        .map(Segment)
        .collect())
}

/// All asset combinations of a DCO ad, lexicographic by attribute order.
/// Stable across calls.
pub fn enumerate_combinations(ad: &DcoAd) -> Vec<Vec<String>> {
    ad.attributes
        .iter()
        .map(|a| a.assets.iter().cloned())
        .multi_cartesian_product()
        .collect()
}

/// Undoes the downsampling and no-join bias of the raw prediction:
/// `min(1, raw / (r_ds * (1 - raw)))`.
pub fn correct_prediction(raw: f64, downsample: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&raw), "raw prediction {raw}");
    debug_assert!(downsample >= 1.0);
    if raw >= 1.0 {
        return 1.0;
    }
    (raw / (downsample * (1.0 - raw))).min(1.0)
}

/// Turns corrected predictions into a sampling distribution:
/// `Q_c = (1 - lambda) * softmax(-beta * (1 - P_c / P_max)) + lambda / n`.
///
/// `uniform_mass` is the total probability assigned to the uniform component.
/// Degenerate inputs (all predictions zero or non-finite scores) fall back to
/// the uniform distribution so new ads start in full exploration.
pub fn softmax_distribution(preds: &[f64], beta: f64, uniform_mass: f64) -> Vec<f64> {
    let n = preds.len();
    assert!(n >= 1, "softmax over an empty prediction set");
    debug_assert!((0.0..=1.0).contains(&uniform_mass));
    debug_assert!(beta >= 0.0);
    let max = preds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return vec![1.0 / n as f64; n];
    }
    let weights: Vec<f64> = preds.iter().map(|p| (-beta * (1.0 - p / max)).exp()).collect();
    let total: f64 = weights.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return vec![1.0 / n as f64; n];
    }
    weights
        .into_iter()
        .map(|w| (1.0 - uniform_mass) * w / total + uniform_mass / n as f64)
        .collect()
}

/// Uniform exploration component, either as total probability mass or as
/// mass per combination. Per-combination mass resolves against each ad's own
/// combination count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniformComponent {
    Total(f64),
    PerCombination(f64),
}

impl UniformComponent {
    /// Total uniform mass for a distribution over `n` combinations.
    pub fn total_mass(&self, n: usize) -> f64 {
        match *self {
            UniformComponent::Total(m) => m,
            UniformComponent::PerCombination(per) => (per * n as f64).min(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            UniformComponent::Total(m) => (0.0..=1.0).contains(&m),
            UniformComponent::PerCombination(per) => per >= 0.0 && per.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("p2d.uniform", "uniform mass out of range"))
        }
    }
}

/// Parameters of table generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct P2dParams {
    pub beta: f64,
    pub uniform: UniformComponent,
    /// Impression downsampling factor used when training the model.
    pub downsample: f64,
}

impl P2dParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("p2d.beta", "must be finite and >= 0"));
        }
        self.uniform.validate()?;
        if !(self.downsample >= 1.0 && self.downsample.is_finite()) {
            return Err(Error::config("training.downsample", "must be finite and >= 1"));
        }
        Ok(())
    }
}

/// Per-(ad, segment) combination distributions, plus the combination list of
/// every covered ad.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionTable {
    pub model_version: String,
    pub params: P2dParams,
    combinations: BTreeMap<String, Vec<Vec<String>>>,
    entries: BTreeMap<(String, Segment), Vec<f64>>,
}

impl DistributionTable {
    pub fn new(model_version: String, params: P2dParams) -> Self {
        DistributionTable {
            model_version,
            params,
            combinations: BTreeMap::new(),
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, ad_id: &str, combinations: &[Vec<String>], segment: Segment, probs: Vec<f64>) {
        debug_assert_eq!(combinations.len(), probs.len());
        self.combinations
            .entry(ad_id.to_string())
            .or_insert_with(|| combinations.to_vec());
        self.entries.insert((ad_id.to_string(), segment), probs);
    }

    pub fn distribution(&self, ad_id: &str, segment: &Segment) -> Option<&[f64]> {
        self.entries
            .get(&(ad_id.to_string(), segment.clone()))
            .map(Vec::as_slice)
    }

    pub fn combinations(&self, ad_id: &str) -> Option<&[Vec<String>]> {
        self.combinations.get(ad_id).map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(String, Segment), &Vec<f64>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Runs the full prediction-to-distribution pass over every (ad, segment)
/// pair against an immutable model snapshot. Feature values the model has not
/// seen cold-start deterministically for the prediction without being
/// persisted.
pub fn generate_table(
    model: &ModelState,
    ads: &[DcoAd],
    segment_domains: &[Vec<String>],
    params: &P2dParams,
) -> Result<DistributionTable> {
    params.validate()?;
    if segment_domains.len() != model.user_features().len() {
        return Err(Error::Structural(format!(
            "{} segment domains for {} model user features",
            segment_domains.len(),
            model.user_features().len()
        )));
    }
    let segments = enumerate_segments(segment_domains)?;
    let mut table = DistributionTable::new(model.version(), params.clone());
    for ad in ads {
        ad.validate()?;
        let combinations = enumerate_combinations(ad);
        let assets_features: Vec<AdFeature> =
            combinations.iter().map(|c| assets_feature(c)).collect();
        let uniform_mass = params.uniform.total_mass(combinations.len());
        for segment in &segments {
            let user: Vec<(String, String)> = model
                .user_features()
                .iter()
                .cloned()
                .zip(segment.values().iter().cloned())
                .collect();
            let user_vec = build_user_vector(model, &user)?;
            let mut corrected = Vec::with_capacity(combinations.len());
            for assets in &assets_features {
                let mut features = ad.standard_features.clone();
                features.push(assets.clone());
                let ad_vec = build_ad_vector(model, &features)?;
                let raw = predict(model, &user_vec, &ad_vec)?;
                corrected.push(correct_prediction(raw, params.downsample));
            }
            let probs = softmax_distribution(&corrected, params.beta, uniform_mass);
            table.insert(&ad.ad_id, &combinations, segment.clone(), probs);
        }
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Table file format
// ---------------------------------------------------------------------------

pub const TABLE_FORMAT: &str = "dco-table-v1";

/// Writes the table as text: `#`-prefixed header lines followed by one row
/// per (ad, segment) with tab-separated fields
/// `ad_id  segment-values  combinations  probabilities`. Probabilities use 17
/// significant digits, which round-trips f64 exactly.
pub fn save_table_string(table: &DistributionTable) -> String {
    let mut out = String::new();
    out.push_str(&format!("#{TABLE_FORMAT}\n"));
    out.push_str(&format!("#model_version={}\n", table.model_version));
    out.push_str(&format!("#beta={:.16e}\n", table.params.beta));
    let uniform = match table.params.uniform {
        UniformComponent::Total(m) => format!("total:{m:.16e}"),
        UniformComponent::PerCombination(per) => format!("per_combination:{per:.16e}"),
    };
    out.push_str(&format!("#uniform={uniform}\n"));
    out.push_str(&format!("#downsample={:.16e}\n", table.params.downsample));
    for ((ad_id, segment), probs) in &table.entries {
        let combos = table
            .combinations
            .get(ad_id)
            .expect("every entry's ad has combinations");
        let combos_field = combos.iter().map(|c| c.join("+")).join("|");
        let probs_field = probs.iter().map(|p| format!("{p:.16e}")).join(",");
        out.push_str(&format!(
            "{ad_id}\t{}\t{combos_field}\t{probs_field}\n",
            segment.values().join(",")
        ));
    }
    out
}

pub fn save_table(table: &DistributionTable, path: &Path) -> Result<()> {
    fs::write(path, save_table_string(table))?;
    Ok(())
}

pub fn load_table_str(text: &str) -> Result<DistributionTable> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::Parse("empty table file".into()))?;
    if first != format!("#{TABLE_FORMAT}") {
        return Err(Error::Parse(format!(
            "table format line `{first}`, expected `#{TABLE_FORMAT}`"
        )));
    }
    let mut model_version = None;
    let mut beta = None;
    let mut uniform = None;
    let mut downsample = None;
    let mut table: Option<DistributionTable> = None;

    let parse_f64 = |line: usize, what: &str, raw: &str| -> Result<f64> {
        raw.parse::<f64>()
            .map_err(|e| Error::Parse(format!("table line {line}: {what}: {e}")))
    };

    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let (key, value) = rest
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("table line {lineno}: malformed header")))?;
            match key {
                "model_version" => model_version = Some(value.to_string()),
                "beta" => beta = Some(parse_f64(lineno, "beta", value)?),
                "uniform" => {
                    let (kind, raw) = value.split_once(':').ok_or_else(|| {
                        Error::Parse(format!("table line {lineno}: malformed uniform header"))
                    })?;
                    let parsed = parse_f64(lineno, "uniform", raw)?;
                    uniform = Some(match kind {
                        "total" => UniformComponent::Total(parsed),
                        "per_combination" => UniformComponent::PerCombination(parsed),
                        other => {
                            return Err(Error::Parse(format!(
                                "table line {lineno}: unknown uniform kind `{other}`"
                            )))
                        }
                    });
                }
                "downsample" => downsample = Some(parse_f64(lineno, "downsample", value)?),
                other => return Err(Error::Parse(format!("table line {lineno}: unknown header `{other}`"))),
            }
            continue;
        }
        let table = match table {
            Some(ref mut t) => t,
            None => {
                let params = P2dParams {
                    beta: beta.ok_or_else(|| Error::Parse("table missing beta header".into()))?,
                    uniform: uniform
                        .ok_or_else(|| Error::Parse("table missing uniform header".into()))?,
                    downsample: downsample
                        .ok_or_else(|| Error::Parse("table missing downsample header".into()))?,
                };
                let version = model_version
                    .clone()
                    .ok_or_else(|| Error::Parse("table missing model_version header".into()))?;
                table = Some(DistributionTable::new(version, params));
                table.as_mut().expect("just set")
            }
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!(
                "table line {lineno}: expected 4 tab-separated fields, got {}",
                fields.len()
            )));
        }
        let ad_id = fields[0].to_string();
        let segment = Segment(fields[1].split(',').map(String::from).collect());
        let combos: Vec<Vec<String>> = fields[2]
            .split('|')
            .map(|c| c.split('+').map(String::from).collect())
            .collect();
        let probs = fields[3]
            .split(',')
            .map(|p| parse_f64(lineno, "probability", p))
            .collect::<Result<Vec<f64>>>()?;
        if probs.len() != combos.len() {
            return Err(Error::Parse(format!(
                "table line {lineno}: {} combinations but {} probabilities",
                combos.len(),
                probs.len()
            )));
        }
        if let Some(existing) = table.combinations(&ad_id) {
            if existing != combos.as_slice() {
                return Err(Error::Parse(format!(
                    "table line {lineno}: combinations of `{ad_id}` differ between rows"
                )));
            }
        }
        table.insert(&ad_id, &combos, segment, probs);
    }

    // A table with headers but no rows is legal (no DCO ads in the catalog).
    match table {
        Some(t) => Ok(t),
        None => {
            let params = P2dParams {
                beta: beta.ok_or_else(|| Error::Parse("table missing beta header".into()))?,
                uniform: uniform
                    .ok_or_else(|| Error::Parse("table missing uniform header".into()))?,
                downsample: downsample
                    .ok_or_else(|| Error::Parse("table missing downsample header".into()))?,
            };
            let version = model_version
                .ok_or_else(|| Error::Parse("table missing model_version header".into()))?;
            Ok(DistributionTable::new(version, params))
        }
    }
}

pub fn load_table(path: &Path) -> Result<DistributionTable> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("reading table {}: {e}", path.display())))?;
    load_table_str(&text)
}

// ---------------------------------------------------------------------------
// Ad catalog
// ---------------------------------------------------------------------------

pub const CATALOG_FORMAT: &str = "dco-catalog-v1";

/// One catalog ad: standard features plus, for DCO ads, the attribute asset
/// lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogAd {
    pub ad_id: String,
    pub standard_features: Vec<AdFeature>,
    #[serde(default)]
    pub attributes: Vec<AttributeAssets>,
}

impl CatalogAd {
    pub fn is_dco(&self) -> bool {
        !self.attributes.is_empty()
    }

    pub fn to_dco(&self) -> Option<DcoAd> {
        if !self.is_dco() {
            return None;
        }
        Some(DcoAd {
            ad_id: self.ad_id.clone(),
            standard_features: self.standard_features.clone(),
            attributes: self.attributes.clone(),
        })
    }
}

/// The ad catalog consumed by training and table generation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Catalog {
    ads: BTreeMap<String, CatalogAd>,
}

impl Catalog {
    pub fn new(ads: impl IntoIterator<Item = CatalogAd>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for ad in ads {
            validate_token(&ad.ad_id, "ad id")?;
            if let Some(dco) = ad.to_dco() {
                dco.validate()?;
            }
            if map.insert(ad.ad_id.clone(), ad).is_some() {
                return Err(Error::Structural("duplicate ad id in catalog".into()));
            }
        }
        Ok(Catalog { ads: map })
    }

    pub fn get(&self, ad_id: &str) -> Option<&CatalogAd> {
        self.ads.get(ad_id)
    }

    pub fn ads(&self) -> impl Iterator<Item = &CatalogAd> {
        self.ads.values()
    }

    pub fn len(&self) -> usize {
        self.ads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ads.is_empty()
    }

    /// The DCO ads of the catalog, in ad-id order.
    pub fn dco_ads(&self) -> Vec<DcoAd> {
        self.ads.values().filter_map(CatalogAd::to_dco).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum CatalogRecord {
    Header { format: String },
    Ad(CatalogAd),
}

pub fn save_catalog_string(catalog: &Catalog) -> String {
    let mut out = String::new();
    let header = CatalogRecord::Header {
        format: CATALOG_FORMAT.to_string(),
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for ad in catalog.ads() {
        let record = CatalogRecord::Ad(ad.clone());
        out.push_str(&serde_json::to_string(&record).expect("ad serializes"));
        out.push('\n');
    }
    out
}

pub fn save_catalog(catalog: &Catalog, path: &Path) -> Result<()> {
    fs::write(path, save_catalog_string(catalog))?;
    Ok(())
}

pub fn load_catalog_str(text: &str) -> Result<Catalog> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::Parse("empty catalog".into()))?;
    match serde_json::from_str(first)
        .map_err(|e| Error::Parse(format!("catalog line 1: {e}")))?
    {
        CatalogRecord::Header { format } if format == CATALOG_FORMAT => {}
        CatalogRecord::Header { format } => {
            return Err(Error::Parse(format!(
                "catalog format `{format}`, expected `{CATALOG_FORMAT}`"
            )))
        }
        CatalogRecord::Ad(_) => {
            return Err(Error::Parse("catalog does not start with a header record".into()))
        }
    }
    let mut ads = Vec::new();
    for (idx, line) in lines {
        match serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("catalog line {}: {e}", idx + 1)))?
        {
            CatalogRecord::Header { .. } => {
                return Err(Error::Parse(format!("catalog line {}: duplicate header", idx + 1)))
            }
            CatalogRecord::Ad(ad) => ads.push(ad),
        }
    }
    Catalog::new(ads)
}

pub fn load_catalog(path: &Path) -> Result<Catalog> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("reading catalog {}: {e}", path.display())))?;
    load_catalog_str(&text)
}

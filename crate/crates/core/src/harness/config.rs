use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::GridSearchConfig;
use crate::features::ScaleMode;
use crate::flow::{AssemblyConfig, DeviceInventory};
use crate::metrics::SILHOUETTE_EXACT_LIMIT;
use crate::pcap::{open_capture, MacAddr};
use crate::stream::CfTreeParams;
use crate::synth::{self, ArchetypeFile, DeviceArchetype, NoveltyTier};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("holdout device {mac} appears in baseline capture {capture}")]
    HoldoutInBaseline { mac: MacAddr, capture: PathBuf },
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
}

impl ConfigError {
    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClustererKind {
    Dbscan,
    Birch,
    Minibatch,
}

impl ClustererKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClustererKind::Dbscan => "dbscan",
            ClustererKind::Birch => "birch",
            ClustererKind::Minibatch => "minibatch",
        }
    }
}

impl std::str::FromStr for ClustererKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dbscan" => Ok(ClustererKind::Dbscan),
            "birch" => Ok(ClustererKind::Birch),
            "minibatch" => Ok(ClustererKind::Minibatch),
            other => Err(ConfigError::field("clusterer", format!("unknown clusterer {other:?} (expected dbscan, birch or minibatch)"))),
        }
    }
}

fn default_seed() -> u64 {
    42
}
fn default_dataset_id() -> String {
    "unnamed".into()
}
fn default_clusterer() -> String {
    "dbscan".into()
}
fn default_true() -> bool {
    true
}
fn default_background() -> f64 {
    0.0
}

/// Experiment configuration file (TOML). Exactly one of `[captures]` and
/// `[synthetic]` must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_dataset_id")]
    pub dataset_id: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Kept as text so an unknown name is reported as a field error.
    #[serde(default = "default_clusterer")]
    pub clusterer: String,
    #[serde(default)]
    pub captures: Option<CapturesSection>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
    #[serde(default)]
    pub flow: AssemblyConfig,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub dbscan: DbscanSection,
    #[serde(default)]
    pub birch: CfTreeParams,
    #[serde(default)]
    pub minibatch: MinibatchSection,
    #[serde(default)]
    pub stream: StreamSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapturesSection {
    /// `mac,device_name` CSV.
    pub labels: PathBuf,
    pub baseline: Vec<PathBuf>,
    #[serde(default)]
    pub stream: Vec<PathBuf>,
    /// Held-out device MAC -> novelty tier.
    #[serde(default)]
    pub holdout: BTreeMap<String, String>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    /// Include the five stock archetypes.
    #[serde(default = "default_true")]
    pub stock: bool,
    /// Extra archetype definitions.
    #[serde(default)]
    pub archetypes: Option<PathBuf>,
    /// One held-out archetype per listed tier, active from `cutoff_s`.
    #[serde(default)]
    pub holdout_tiers: Vec<String>,
    pub duration_s: f64,
    /// Baseline/stream boundary in simulated seconds; defaults to `duration_s`.
    #[serde(default)]
    pub cutoff_s: Option<f64>,
    /// Share of baseline-window flows drawn from a diffuse background archetype.
    #[serde(default = "default_background")]
    pub background_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesSection {
    pub scale: ScaleMode,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection { scale: ScaleMode::Zscore }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbscanSection {
    pub eps: Option<f64>,
    pub min_pts: Option<usize>,
    /// Grid-search eps/min_pts; forced when either is unset.
    pub tune: bool,
    pub grid_min_pts: Vec<usize>,
    pub eps_multipliers: Vec<f64>,
}

impl Default for DbscanSection {
    fn default() -> Self {
        let g = GridSearchConfig::default();
        DbscanSection { eps: None, min_pts: None, tune: true, grid_min_pts: g.min_pts, eps_multipliers: g.eps_multipliers }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinibatchSection {
    /// Defaults to the number of devices seen in the baseline.
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSection {
    pub batch_size: usize,
}

impl Default for StreamSection {
    fn default() -> Self {
        StreamSection { batch_size: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub purity_threshold: f64,
    pub silhouette_sample: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection { purity_threshold: 0.8, silhouette_sample: SILHOUETTE_EXACT_LIMIT }
    }
}

/// Resolved data source of a plan.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Captures {
        inventory: DeviceInventory,
        baseline: Vec<PathBuf>,
        stream: Vec<PathBuf>,
        cache_dir: Option<PathBuf>,
    },
    Synthetic(SyntheticPlan),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPlan {
    /// Baseline-period archetypes (stock plus file-defined).
    pub archetypes: Vec<DeviceArchetype>,
    /// Held-out archetypes, already shifted to start at the cutoff.
    pub holdouts: Vec<DeviceArchetype>,
    /// Background archetype, active over the baseline window only.
    pub background: Option<DeviceArchetype>,
    pub duration_s: f64,
    pub cutoff_s: f64,
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub clusterer: ClustererKind,
    pub source: DataSource,
    pub holdout: BTreeMap<MacAddr, NoveltyTier>,
}

impl ExperimentPlan {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn grid_config(&self) -> GridSearchConfig {
        GridSearchConfig {
            min_pts: self.config.dbscan.grid_min_pts.clone(),
            eps_multipliers: self.config.dbscan.eps_multipliers.clone(),
            silhouette_sample: self.config.metrics.silhouette_sample,
            seed: self.config.seed,
        }
    }
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `dotted.key=value` overrides, creating tables as needed.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<(), ConfigError> {
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| ConfigError::field(ov.clone(), "override must look like key=value"))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::field(key, "empty key segment"));
        }
        let mut cur = &mut *table;
        for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
            let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| ConfigError::field(parts[..=i].join("."), "is not a table"))?;
        }
        cur.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    }
    Ok(())
}

/// Parses config text with overrides applied; no file-system checks.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    apply_overrides(&mut table, overrides)?;
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(config).expect("config serializes")))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require_file(field: &str, path: &Path) -> Result<(), ConfigError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(ConfigError::field(field, format!("{} does not exist", path.display())))
    }
}

fn validate_common(c: &ExperimentConfig) -> Result<(), ConfigError> {
    let f = &c.flow;
    if !(f.idle_timeout > 0.0 && f.idle_timeout.is_finite()) {
        return Err(ConfigError::field("flow.idle_timeout", "must be positive"));
    }
    if !(f.reorder_tolerance >= 0.0 && f.reorder_tolerance.is_finite()) {
        return Err(ConfigError::field("flow.reorder_tolerance", "must be non-negative"));
    }
    if f.max_packets_per_flow == 0 {
        return Err(ConfigError::field("flow.max_packets_per_flow", "must be at least 1"));
    }
    let d = &c.dbscan;
    if d.eps.is_some_and(|e| !(e > 0.0 && e.is_finite())) {
        return Err(ConfigError::field("dbscan.eps", "must be positive"));
    }
    if d.min_pts == Some(0) {
        return Err(ConfigError::field("dbscan.min_pts", "must be at least 1"));
    }
    if d.grid_min_pts.is_empty() || d.grid_min_pts.contains(&0) {
        return Err(ConfigError::field("dbscan.grid_min_pts", "must be a non-empty list of positive integers"));
    }
    if d.eps_multipliers.is_empty() || d.eps_multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(ConfigError::field("dbscan.eps_multipliers", "must be a non-empty list of positive numbers"));
    }
    if !(c.birch.threshold > 0.0 && c.birch.threshold.is_finite()) {
        return Err(ConfigError::field("birch.threshold", "must be positive"));
    }
    if c.birch.branching_factor < 2 {
        return Err(ConfigError::field("birch.branching_factor", "must be at least 2"));
    }
    if c.minibatch.k == Some(0) {
        return Err(ConfigError::field("minibatch.k", "must be at least 1"));
    }
    if c.stream.batch_size == 0 {
        return Err(ConfigError::field("stream.batch_size", "must be at least 1"));
    }
    let m = &c.metrics;
    if !(m.purity_threshold > 0.0 && m.purity_threshold <= 1.0) {
        return Err(ConfigError::field("metrics.purity_threshold", "must be in (0, 1]"));
    }
    if m.silhouette_sample < 2 {
        return Err(ConfigError::field("metrics.silhouette_sample", "must be at least 2"));
    }
    Ok(())
}

fn parse_tier(field: &str, s: &str) -> Result<NoveltyTier, ConfigError> {
    s.parse().map_err(|e: String| ConfigError::field(field, e))
}

fn synthetic_plan(s: &SyntheticSection, base: &Path) -> Result<(SyntheticPlan, BTreeMap<MacAddr, NoveltyTier>), ConfigError> {
    if !(s.duration_s > 0.0 && s.duration_s.is_finite()) {
        return Err(ConfigError::field("synthetic.duration_s", "must be positive"));
    }
    let cutoff_s = s.cutoff_s.unwrap_or(s.duration_s);
    if !(cutoff_s > 0.0 && cutoff_s <= s.duration_s) {
        return Err(ConfigError::field("synthetic.cutoff_s", "must be in (0, duration_s]"));
    }
    if !(0.0..1.0).contains(&s.background_fraction) {
        return Err(ConfigError::field("synthetic.background_fraction", "must be in [0, 1)"));
    }
    let mut archetypes = if s.stock { synth::stock_archetypes() } else { Vec::new() };
    if let Some(p) = &s.archetypes {
        let path = resolve(base, p);
        require_file("synthetic.archetypes", &path)?;
        let file = ArchetypeFile::read(&path).map_err(|e| ConfigError::File { path: path.clone(), message: e.to_string() })?;
        archetypes.extend(file.archetypes);
    }
    if archetypes.is_empty() {
        return Err(ConfigError::field("synthetic", "no archetypes (stock = false and no archetype file)"));
    }
    let mut holdouts = Vec::new();
    let mut holdout = BTreeMap::new();
    for (i, t) in s.holdout_tiers.iter().enumerate() {
        let tier = parse_tier(&format!("synthetic.holdout_tiers[{i}]"), t)?;
        let mut a = synth::tier_archetype(tier);
        a.active_from = cutoff_s;
        if holdout.insert(a.mac, tier).is_some() {
            return Err(ConfigError::field(format!("synthetic.holdout_tiers[{i}]"), format!("tier {t} listed twice")));
        }
        holdouts.push(a);
    }
    let mut macs = std::collections::BTreeSet::new();
    for a in archetypes.iter().chain(&holdouts) {
        if !macs.insert(a.mac) {
            return Err(ConfigError::field("synthetic.archetypes", format!("duplicate archetype MAC {}", a.mac)));
        }
    }
    let background = (s.background_fraction > 0.0).then(|| {
        let device_rate: f64 = archetypes.iter().map(|a| a.flows_per_hour).sum();
        synth::diffuse_archetype(device_rate * s.background_fraction / (1.0 - s.background_fraction))
    });
    if let Some(b) = &background {
        if macs.contains(&b.mac) {
            return Err(ConfigError::field("synthetic.archetypes", format!("MAC {} is reserved for background traffic", b.mac)));
        }
    }
    Ok((SyntheticPlan { archetypes, holdouts, background, duration_s: s.duration_s, cutoff_s }, holdout))
}

fn captures_source(
    c: &CapturesSection,
    base: &Path,
) -> Result<(DataSource, BTreeMap<MacAddr, NoveltyTier>), ConfigError> {
    let labels = resolve(base, &c.labels);
    require_file("captures.labels", &labels)?;
    let inventory =
        DeviceInventory::read_csv(&labels).map_err(|e| ConfigError::File { path: labels.clone(), message: e.to_string() })?;
    if c.baseline.is_empty() {
        return Err(ConfigError::field("captures.baseline", "at least one baseline capture is required"));
    }
    let paths = |field: &str, list: &[PathBuf]| -> Result<Vec<PathBuf>, ConfigError> {
        list.iter()
            .enumerate()
            .map(|(i, p)| {
                let path = resolve(base, p);
                require_file(&format!("{field}[{i}]"), &path)?;
                Ok(path)
            })
            .collect()
    };
    let baseline = paths("captures.baseline", &c.baseline)?;
    let stream = paths("captures.stream", &c.stream)?;
    let mut holdout = BTreeMap::new();
    for (mac, tier) in &c.holdout {
        let field = format!("captures.holdout.{mac}");
        let m: MacAddr = mac.parse().map_err(|_| ConfigError::field(&field, format!("invalid MAC address {mac:?}")))?;
        if !inventory.devices.contains_key(&m) {
            return Err(ConfigError::field(&field, format!("holdout device {m} is not in the label inventory")));
        }
        holdout.insert(m, parse_tier(&field, tier)?);
    }
    let source = DataSource::Captures { inventory, baseline, stream, cache_dir: c.cache_dir.as_ref().map(|d| resolve(base, d)) };
    Ok((source, holdout))
}

/// Verifies that no packet of a baseline capture involves a holdout device.
fn check_holdout_exclusion(baseline: &[PathBuf], holdout: &BTreeMap<MacAddr, NoveltyTier>) -> Result<(), ConfigError> {
    if holdout.is_empty() {
        return Ok(());
    }
    for path in baseline {
        let file_err = |e: &dyn std::fmt::Display| ConfigError::File { path: path.clone(), message: e.to_string() };
        for rec in open_capture(path).map_err(|e| file_err(&e))? {
            let pkt = match rec {
                Ok(p) => p,
                Err(crate::pcap::PcapError::FrameTooShort(_)) => continue,
                Err(e) => return Err(file_err(&e)),
            };
            for mac in [pkt.src_mac, pkt.dst_mac] {
                if holdout.contains_key(&mac) {
                    return Err(ConfigError::HoldoutInBaseline { mac, capture: path.clone() });
                }
            }
        }
    }
    Ok(())
}

/// Validates a parsed config into a plan. Relative paths resolve against `base`.
pub fn plan_from_config(config: ExperimentConfig, base: &Path) -> Result<ExperimentPlan, ConfigError> {
    let clusterer: ClustererKind = config.clusterer.parse()?;
    validate_common(&config)?;
    let (source, holdout) = match (&config.captures, &config.synthetic) {
        (Some(_), Some(_)) => return Err(ConfigError::field("captures", "give either [captures] or [synthetic], not both")),
        (None, None) => return Err(ConfigError::field("captures", "one of [captures] or [synthetic] is required")),
        (Some(c), None) => {
            let (source, holdout) = captures_source(c, base)?;
            if let DataSource::Captures { baseline, .. } = &source {
                check_holdout_exclusion(baseline, &holdout)?;
            }
            (source, holdout)
        }
        (None, Some(s)) => {
            let (plan, holdout) = synthetic_plan(s, base)?;
            (DataSource::Synthetic(plan), holdout)
        }
    };
    let config_hash = config_hash(&config);
    Ok(ExperimentPlan { config, config_hash, clusterer, source, holdout })
}

/// Reads, overrides and validates a config file.
pub fn build_plan(path: impl AsRef<Path>, overrides: &[String]) -> Result<ExperimentPlan, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File { path: path.to_path_buf(), message: e.to_string() })?;
    let config = parse_config(&text, overrides)?;
    plan_from_config(config, path.parent().unwrap_or_else(|| Path::new(".")))
}

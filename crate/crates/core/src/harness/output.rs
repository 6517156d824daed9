use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{write_score_table, GridCell};
use crate::metrics::EvaluationReport;
use crate::pcap::{MacAddr, Timestamp};
use crate::synth::NoveltyTier;

/// One clustered flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipRow {
    pub phase: String,
    pub device_mac: MacAddr,
    pub device: String,
    pub flow_start: String,
    /// DBSCAN label (-1 noise), CF subcluster id or k-means centroid.
    pub cluster: i64,
    /// Global cluster after the CF tree's global step (RQ2 only).
    pub global_cluster: Option<i64>,
}

impl MembershipRow {
    pub fn new(phase: &str, device_mac: MacAddr, device: &str, flow_start: Timestamp, cluster: i64, global: Option<i64>) -> Self {
        MembershipRow {
            phase: phase.into(),
            device_mac,
            device: device.into(),
            flow_start: flow_start.to_string(),
            cluster,
            global_cluster: global,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub x: f64,
    pub y: f64,
    pub cluster: i64,
    pub device: String,
}

/// Purity/Share detail of one held-out device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyRow {
    pub device_mac: MacAddr,
    pub device: String,
    pub tier: NoveltyTier,
    pub purity: f64,
    pub share: f64,
    pub n_total: u64,
    pub valid_subclusters: usize,
}

/// Everything one experiment run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub report: EvaluationReport,
    pub membership: Vec<MembershipRow>,
    pub projection: Vec<ProjectionRow>,
    pub novelty: Vec<NoveltyRow>,
    pub grid: Option<Vec<GridCell>>,
    /// Human-readable run log (config hash, counts, timings).
    pub log: Vec<String>,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        wtr.write_record(header)?;
    }
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()
}

/// Writes `report.json`, `membership.csv`, `projection.csv`, `run.log`, and
/// when present `scores.csv` and `novelty.csv`, into `dir` (created if absent).
pub fn write_artifacts(dir: &Path, art: &RunArtifacts) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), art.report.to_json() + "\n")?;
    write_rows(
        &dir.join("membership.csv"),
        &art.membership,
        &["phase", "device_mac", "device", "flow_start", "cluster", "global_cluster"],
    )?;
    write_rows(&dir.join("projection.csv"), &art.projection, &["x", "y", "cluster", "device"])?;
    if !art.novelty.is_empty() {
        write_rows(&dir.join("novelty.csv"), &art.novelty, &[])?;
    }
    if let Some(cells) = &art.grid {
        write_score_table(fs::File::create(dir.join("scores.csv"))?, cells).map_err(std::io::Error::other)?;
    }
    let mut log = fs::File::create(dir.join("run.log"))?;
    for line in &art.log {
        writeln!(log, "{line}")?;
    }
    Ok(())
}

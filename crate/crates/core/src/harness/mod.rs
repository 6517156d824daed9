//! End-to-end experiments: the static DBSCAN baseline (RQ1) and streaming
//! adaptation to held-out devices (RQ2).

mod config;
mod output;
mod pca;

pub use config::{
    apply_overrides, build_plan, config_hash, parse_config, plan_from_config, CapturesSection, ClustererKind, ConfigError,
    DataSource, DbscanSection, ExperimentConfig, ExperimentPlan, FeaturesSection, MetricsSection, MinibatchSection,
    StreamSection, SyntheticPlan, SyntheticSection,
};
pub use output::{write_artifacts, MembershipRow, NoveltyRow, ProjectionRow, RunArtifacts};
pub use pca::Pca;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::cache::{self, CacheError};
use crate::cluster::{dbscan, default_grid, grid_search, ClusterError, DbscanParams};
use crate::features::{extract_flow, FeatureVector, Scaler};
use crate::metrics::{self, EvaluationReport, MetricError, Provenance};
use crate::pcap::{MacAddr, Timestamp};
use crate::stream::{timed_update, CfTree, IncrementalModel, MiniBatchKMeans, StreamError};
use crate::synth::{self, SynthError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Input(#[from] CacheError),
    #[error("degenerate result: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Cluster(ClusterError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl From<ClusterError> for HarnessError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::DegenerateGrid(cells) => {
                HarnessError::Degenerate(format!("no grid setting of {} produced two or more clusters", cells.len()))
            }
            other => HarnessError::Cluster(other),
        }
    }
}

impl HarnessError {
    /// Process exit code: 2 configuration, 3 input parsing, 4 degenerate
    /// result, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Input(_) => 3,
            HarnessError::Degenerate(_) => 4,
            _ => 1,
        }
    }
}

/// Feature vectors of one experiment, split at the baseline/stream boundary
/// and ordered by flow start.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub baseline: Vec<FeatureVector>,
    pub stream: Vec<FeatureVector>,
    pub names: BTreeMap<MacAddr, String>,
}

impl Dataset {
    pub fn name(&self, mac: &MacAddr) -> String {
        self.names.get(mac).cloned().unwrap_or_else(|| mac.to_string())
    }
}

fn sort_by_start(v: &mut [FeatureVector]) {
    v.sort_by_key(|f| (f.flow_start, f.device_mac));
}

fn synthetic_dataset(plan: &ExperimentPlan, s: &SyntheticPlan) -> Result<Dataset, HarnessError> {
    let seed = plan.seed();
    let mut archetypes = s.archetypes.clone();
    archetypes.extend(s.holdouts.iter().cloned());
    let mut flows = synth::generate_flows(&archetypes, s.duration_s, seed, &plan.config.flow)?;
    if let Some(bg) = &s.background {
        flows.extend(synth::generate_flows(std::slice::from_ref(bg), s.cutoff_s, seed ^ 0xB4C6_6A0D, &plan.config.flow)?);
    }
    let cutoff = Timestamp(synth::EPOCH_SECS * Timestamp::NANOS_PER_SEC + (s.cutoff_s * 1e9).round() as i64);
    let (mut baseline, mut stream): (Vec<FeatureVector>, Vec<FeatureVector>) =
        flows.iter().map(|f| extract_flow(&f.flow)).partition(|v| v.flow_start < cutoff);
    sort_by_start(&mut baseline);
    sort_by_start(&mut stream);
    let mut names: BTreeMap<MacAddr, String> = archetypes.iter().map(|a| (a.mac, a.name.clone())).collect();
    if let Some(bg) = &s.background {
        names.insert(bg.mac, bg.name.clone());
    }
    Ok(Dataset { baseline, stream, names })
}

fn capture_features(
    paths: &[std::path::PathBuf],
    inventory: &crate::flow::DeviceInventory,
    plan: &ExperimentPlan,
    cache_dir: Option<&Path>,
) -> Result<Vec<FeatureVector>, HarnessError> {
    let mut out = Vec::new();
    for p in paths {
        let vectors = match cache_dir {
            Some(dir) => cache::cached_extract(p, inventory, &plan.config.flow, dir)?.vectors,
            None => cache::extract_capture(p, inventory, &plan.config.flow)?.0,
        };
        out.extend(vectors);
    }
    sort_by_start(&mut out);
    Ok(out)
}

/// Generates or extracts the plan's feature vectors.
pub fn load_dataset(plan: &ExperimentPlan) -> Result<Dataset, HarnessError> {
    match &plan.source {
        DataSource::Synthetic(s) => synthetic_dataset(plan, s),
        DataSource::Captures { inventory, baseline, stream, cache_dir } => {
            let dir = std::env::var_os(cache::CACHE_ENV).map(std::path::PathBuf::from).or_else(|| cache_dir.clone());
            let baseline = capture_features(baseline, inventory, plan, dir.as_deref())?;
            let stream = capture_features(stream, inventory, plan, dir.as_deref())?;
            if let Some(v) = baseline.iter().find(|v| plan.holdout.contains_key(&v.device_mac)) {
                return Err(ConfigError::Field {
                    field: format!("captures.holdout.{}", v.device_mac),
                    message: format!("holdout device {} has baseline flows", v.device_mac),
                }
                .into());
            }
            Ok(Dataset { baseline, stream, names: inventory.devices.clone() })
        }
    }
}

fn provenance(plan: &ExperimentPlan) -> Provenance {
    Provenance {
        config_hash: plan.config_hash.clone(),
        dataset_id: plan.config.dataset_id.clone(),
        seed: plan.seed(),
        clusterer: plan.clusterer.as_str().into(),
    }
}

fn fit_scaler(baseline: &[FeatureVector], plan: &ExperimentPlan) -> Result<Scaler, HarnessError> {
    Scaler::fit(baseline, plan.config.features.scale)
        .map_err(|e| HarnessError::Degenerate(format!("cannot fit feature scaler on the baseline: {e}")))
}

fn projection_rows(pca: &Option<Pca>, points: &[Vec<f64>], clusters: &[i64], devices: &[String]) -> Vec<ProjectionRow> {
    let Some(pca) = pca else { return Vec::new() };
    points
        .iter()
        .zip(clusters)
        .zip(devices)
        .map(|((p, &cluster), device)| {
            let (x, y) = pca.project(p);
            ProjectionRow { x, y, cluster, device: device.clone() }
        })
        .collect()
}

fn header_log(plan: &ExperimentPlan, data: &Dataset) -> Vec<String> {
    vec![
        format!("config_hash={}", plan.config_hash),
        format!("dataset_id={}", plan.config.dataset_id),
        format!("seed={}", plan.seed()),
        format!("clusterer={}", plan.clusterer.as_str()),
        format!("baseline_flows={} stream_flows={}", data.baseline.len(), data.stream.len()),
    ]
}

/// RQ1: scale the baseline, optionally grid-search DBSCAN parameters, cluster
/// and score on noise-filtered points.
pub fn run_rq1(plan: &ExperimentPlan) -> Result<RunArtifacts, HarnessError> {
    let start = Instant::now();
    let data = load_dataset(plan)?;
    let load_s = start.elapsed().as_secs_f64();
    let mut art = rq1_on_dataset(plan, &data, false)?;
    art.log.insert(5, format!("load_s={load_s:.6}"));
    Ok(art)
}

/// RQ1 with the grid search forced on; the score table is part of the output.
pub fn run_tune(plan: &ExperimentPlan) -> Result<RunArtifacts, HarnessError> {
    let data = load_dataset(plan)?;
    rq1_on_dataset(plan, &data, true)
}

pub fn rq1_on_dataset(plan: &ExperimentPlan, data: &Dataset, force_tune: bool) -> Result<RunArtifacts, HarnessError> {
    if plan.clusterer != ClustererKind::Dbscan {
        return Err(ConfigError::Field {
            field: "clusterer".into(),
            message: format!("RQ1 runs DBSCAN, not {}", plan.clusterer.as_str()),
        }
        .into());
    }
    let vectors = &data.baseline;
    let distinct: BTreeSet<MacAddr> = vectors.iter().map(|v| v.device_mac).collect();
    if distinct.len() < 2 {
        return Err(HarnessError::Degenerate(format!("baseline holds {} device(s); need at least two", distinct.len())));
    }
    let mut log = header_log(plan, data);
    let scaler = fit_scaler(vectors, plan)?;
    let points = scaler.transform_all(vectors);
    let truth: Vec<MacAddr> = vectors.iter().map(|v| v.device_mac).collect();
    log.push(format!("scaler={}", scaler.fingerprint()));

    let dcfg = &plan.config.dbscan;
    let t0 = Instant::now();
    let (params, grid) = match (dcfg.eps, dcfg.min_pts) {
        (Some(eps), Some(min_pts)) if !dcfg.tune && !force_tune => (DbscanParams::new(eps, min_pts)?, None),
        _ => {
            let gcfg = plan.grid_config();
            let grid = default_grid(&points, &gcfg)?;
            if grid.is_empty() {
                return Err(HarnessError::Degenerate("every k-distance knee is zero".into()));
            }
            let gs = grid_search(&points, &truth, &grid, &gcfg)?;
            log.push(format!("grid_cells={} grid_s={:.6}", gs.cells.len(), t0.elapsed().as_secs_f64()));
            (gs.best, Some(gs.cells))
        }
    };
    let t1 = Instant::now();
    let assignment = dbscan(&points, params)?;
    log.push(format!("dbscan eps={} min_pts={} cluster_s={:.6}", params.eps, params.min_pts, t1.elapsed().as_secs_f64()));
    if assignment.n_clusters < 2 {
        return Err(HarnessError::Degenerate(format!("{} cluster(s) after noise filtering", assignment.n_clusters)));
    }
    let kept: Vec<usize> = (0..points.len()).filter(|&i| !assignment.is_noise(i)).collect();
    let nmi = metrics::nmi(
        &kept.iter().map(|&i| assignment.labels[i]).collect::<Vec<_>>(),
        &kept.iter().map(|&i| truth[i]).collect::<Vec<_>>(),
    )?;
    let silhouette =
        metrics::silhouette_sampled(&points, &assignment.labels, plan.config.metrics.silhouette_sample, plan.seed())?;

    let report = EvaluationReport {
        setting_model: format!("RQ1: DBSCAN (eps={:.6}, min_pts={})", params.eps, params.min_pts),
        n_clusters: Some(assignment.n_clusters),
        noise_pct: Some(assignment.noise_fraction * 100.0),
        nmi: Some(nmi),
        silhouette: Some(silhouette),
        known_accuracy_post: None,
        novel_purity: None,
        novel_share: None,
        update_time_s: None,
        provenance: provenance(plan),
    };
    let devices: Vec<String> = vectors.iter().map(|v| data.name(&v.device_mac)).collect();
    let membership = vectors
        .iter()
        .zip(&assignment.labels)
        .zip(&devices)
        .map(|((v, &c), d)| MembershipRow::new("baseline", v.device_mac, d, v.flow_start, c, None))
        .collect();
    let projection = projection_rows(&Pca::fit(&points), &points, &assignment.labels, &devices);
    Ok(RunArtifacts { report, membership, projection, novelty: Vec::new(), grid, log })
}

enum StreamModel {
    Birch(CfTree),
    MiniBatch(Box<MiniBatchKMeans>),
}

impl StreamModel {
    fn as_dyn(&mut self) -> &mut dyn IncrementalModel {
        match self {
            StreamModel::Birch(t) => t,
            StreamModel::MiniBatch(m) => m.as_mut(),
        }
    }

    fn predict(&self, p: &[f64]) -> Result<usize, StreamError> {
        match self {
            StreamModel::Birch(t) => t.predict(p),
            StreamModel::MiniBatch(m) => m.predict(p),
        }
    }
}

/// RQ2: fit the incremental model on the baseline, stream the evaluation
/// flows through timed updates, then score globally and per held-out device.
pub fn run_rq2(plan: &ExperimentPlan) -> Result<RunArtifacts, HarnessError> {
    let data = load_dataset(plan)?;
    rq2_on_dataset(plan, &data)
}

pub fn rq2_on_dataset(plan: &ExperimentPlan, data: &Dataset) -> Result<RunArtifacts, HarnessError> {
    let cfg = &plan.config;
    if plan.clusterer == ClustererKind::Dbscan {
        return Err(ConfigError::Field { field: "clusterer".into(), message: "RQ2 needs birch or minibatch".into() }.into());
    }
    if data.baseline.is_empty() {
        return Err(HarnessError::Degenerate("baseline is empty".into()));
    }
    if data.stream.is_empty() {
        return Err(HarnessError::Degenerate("no flows after the baseline/stream boundary".into()));
    }
    let mut log = header_log(plan, data);
    let scaler = fit_scaler(&data.baseline, plan)?;
    let base_pts = scaler.transform_all(&data.baseline);
    let stream_pts = scaler.transform_all(&data.stream);
    let base_truth: Vec<MacAddr> = data.baseline.iter().map(|v| v.device_mac).collect();
    log.push(format!("scaler={}", scaler.fingerprint()));

    let (mut model, setting) = match plan.clusterer {
        ClustererKind::Birch => (
            StreamModel::Birch(CfTree::new(cfg.birch)?),
            format!("RQ2: BIRCH (threshold={}, branching_factor={})", cfg.birch.threshold, cfg.birch.branching_factor),
        ),
        _ => {
            let k = cfg.minibatch.k.unwrap_or_else(|| base_truth.iter().collect::<BTreeSet<_>>().len());
            (StreamModel::MiniBatch(Box::new(MiniBatchKMeans::new(k, plan.seed())?)), format!("RQ2: MiniBatchKMeans (k={k})"))
        }
    };
    let t0 = Instant::now();
    for chunk in base_pts.chunks(cfg.stream.batch_size) {
        model.as_dyn().partial_fit(chunk)?;
    }
    log.push(format!("baseline_fit_s={:.6}", t0.elapsed().as_secs_f64()));
    let base_assign: Vec<usize> = base_pts.iter().map(|p| model.predict(p)).collect::<Result<_, _>>()?;
    let baseline_map = metrics::majority_map(&base_assign, &base_truth);

    let mut times = Vec::new();
    for chunk in stream_pts.chunks(cfg.stream.batch_size) {
        times.push(timed_update(model.as_dyn(), chunk)?.elapsed);
    }
    let update_time = times.iter().sum::<f64>() / times.len() as f64;
    log.push(format!("stream_batches={} mean_update_s={update_time:.9}", times.len()));

    // post-adaptation assignments of every flow
    let all_pts: Vec<&Vec<f64>> = base_pts.iter().chain(&stream_pts).collect();
    let all_vecs: Vec<&FeatureVector> = data.baseline.iter().chain(&data.stream).collect();
    let assign: Vec<usize> = all_pts.iter().map(|p| model.predict(p)).collect::<Result<_, _>>()?;
    let global_of: Vec<usize> = match &model {
        StreamModel::Birch(t) => t.global_clusters(None),
        StreamModel::MiniBatch(m) => (0..m.centroids().len()).collect(),
    };
    let global: Vec<i64> = assign.iter().map(|&c| global_of[c] as i64).collect();
    let truth_all: Vec<MacAddr> = all_vecs.iter().map(|v| v.device_mac).collect();
    let nmi = metrics::nmi(&global, &truth_all)?;
    let silhouette = match metrics::silhouette_sampled(&all_pts, &global, cfg.metrics.silhouette_sample, plan.seed()) {
        Ok(s) => Some(s),
        Err(MetricError::SingleCluster) => None,
        Err(e) => return Err(e.into()),
    };
    let n_clusters = global.iter().collect::<BTreeSet<_>>().len();

    let n_base = base_pts.len();
    let stream_assign = &assign[n_base..];
    let mut novelty = Vec::new();
    for (&mac, &tier) in &plan.holdout {
        let is_novel: Vec<bool> = data.stream.iter().map(|v| v.device_mac == mac).collect();
        let n_total = is_novel.iter().filter(|&&b| b).count() as u64;
        if n_total == 0 {
            log.push(format!("holdout {mac} has no stream flows"));
            continue;
        }
        let ev = metrics::novelty_eval(stream_assign, &is_novel, cfg.metrics.purity_threshold, n_total)?;
        novelty.push(NoveltyRow {
            device_mac: mac,
            device: data.name(&mac),
            tier,
            purity: ev.purity,
            share: ev.share,
            n_total,
            valid_subclusters: ev.valid.len(),
        });
    }
    let mean = |f: fn(&NoveltyRow) -> f64| (!novelty.is_empty()).then(|| novelty.iter().map(f).sum::<f64>() / novelty.len() as f64);
    let (novel_purity, novel_share) = (mean(|r| r.purity), mean(|r| r.share));

    let known: Vec<usize> = (0..data.stream.len()).filter(|&i| !plan.holdout.contains_key(&data.stream[i].device_mac)).collect();
    let known_accuracy_post = if known.is_empty() {
        None
    } else {
        let a: Vec<usize> = known.iter().map(|&i| stream_assign[i]).collect();
        let t: Vec<MacAddr> = known.iter().map(|&i| data.stream[i].device_mac).collect();
        Some(metrics::known_accuracy_post(&baseline_map, &a, &t)?)
    };
    if let StreamModel::Birch(t) = &model {
        log.push(format!("subclusters={} height={}", t.n_leaves(), t.height()));
    }

    let report = EvaluationReport {
        setting_model: setting,
        n_clusters: Some(n_clusters),
        noise_pct: None,
        nmi: Some(nmi),
        silhouette,
        known_accuracy_post,
        novel_purity,
        novel_share,
        update_time_s: Some(update_time),
        provenance: provenance(plan),
    };
    let devices: Vec<String> = all_vecs.iter().map(|v| data.name(&v.device_mac)).collect();
    let membership = all_vecs
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let phase = if i < n_base { "baseline" } else { "stream" };
            MembershipRow::new(phase, v.device_mac, &devices[i], v.flow_start, assign[i] as i64, Some(global[i]))
        })
        .collect();
    let owned: Vec<Vec<f64>> = all_pts.iter().map(|p| (*p).clone()).collect();
    let projection = projection_rows(&Pca::fit(&base_pts), &owned, &global, &devices);
    Ok(RunArtifacts { report, membership, projection, novelty, grid: None, log })
}

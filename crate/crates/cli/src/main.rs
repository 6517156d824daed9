//! `flowprofiler` command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{error, info};

use flowprofiler::cache::{self, CacheError};
use flowprofiler::features::{extract_flow, Scaler};
use flowprofiler::flow::{DeviceInventory, FlowError};
use flowprofiler::harness::{
    self, build_plan, write_artifacts, ConfigError, DataSource, ExperimentPlan, HarnessError, MembershipRow, Pca,
    ProjectionRow, RunArtifacts,
};
use flowprofiler::metrics::EvaluationReport;
use flowprofiler::pcap::Timestamp;
use flowprofiler::synth;

#[derive(Parser, Debug)]
#[command(name = "flowprofiler", version, about = "Per-device flow profiling, clustering and novelty experiments")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract per-flow features from captures into the feature cache.
    Extract(ExtractArgs),
    /// Grid-search DBSCAN parameters on the baseline and write the score table.
    Tune(RunArgs),
    /// Static DBSCAN baseline experiment.
    Rq1(RunArgs),
    /// Streaming adaptation experiment with held-out devices.
    Rq2(RunArgs),
    /// Generate a labeled synthetic corpus as pcap files.
    Synth(RunArgs),
    /// Collect report.json files into one CSV table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// `mac,device_name` CSV of monitored devices.
    #[arg(long)]
    labels: PathBuf,
    /// Cache directory (FLOWPROFILER_CACHE takes precedence).
    #[arg(long, default_value = "feature-cache")]
    out: PathBuf,
    #[command(flatten)]
    flow: FlowArgs,
    #[arg(required = true)]
    captures: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct FlowArgs {
    /// Idle timeout in seconds.
    #[arg(long)]
    idle_timeout: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Parent of the timestamped run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config clusterer (dbscan, birch, minibatch).
    #[arg(long)]
    clusterer: Option<String>,
    /// Config override `dotted.key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run directories or report.json files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure { code: e.exit_code() as u8, error: e.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure { code: 2, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        [log::LevelFilter::Info, log::LevelFilter::Debug, log::LevelFilter::Trace][usize::from(cli.verbose.min(2))]
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    let result = match cli.command {
        Command::Extract(a) => cmd_extract(&a),
        Command::Tune(a) => cmd_experiment("tune", &a),
        Command::Rq1(a) => cmd_experiment("rq1", &a),
        Command::Rq2(a) => cmd_experiment("rq2", &a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{:#}", f.error);
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn plan_for(args: &RunArgs) -> Result<ExperimentPlan, Failure> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(c) = &args.clusterer {
        overrides.push(format!("clusterer=\"{c}\""));
    }
    Ok(build_plan(&args.config, &overrides)?)
}

/// Creates `<out>/<command>-<local time>[-n]`.
fn run_dir(out: &Path, command: &str) -> anyhow::Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S").to_string();
    let mut dir = out.join(format!("{command}-{stamp}"));
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = out.join(format!("{command}-{stamp}-{n}"));
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn finish_run(command: &str, out: &Path, mut art: RunArtifacts, started: Instant) -> Result<(), Failure> {
    let dir = run_dir(out, command)?;
    art.log.push(format!("command={command}"));
    art.log.push(format!("wall_s={:.6}", started.elapsed().as_secs_f64()));
    write_artifacts(&dir, &art).with_context(|| format!("writing artifacts to {}", dir.display()))?;
    info!("wrote {}", dir.display());
    println!("{}", dir.display());
    Ok(())
}

fn cmd_experiment(command: &str, args: &RunArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let plan = plan_for(args)?;
    info!("{command}: config {} (hash {})", args.config.display(), plan.config_hash);
    let art = match command {
        "tune" => harness::run_tune(&plan)?,
        "rq1" => harness::run_rq1(&plan)?,
        _ => harness::run_rq2(&plan)?,
    };
    let r = &art.report;
    info!(
        "{}: clusters={:?} nmi={:?} silhouette={:?} noise_pct={:?} purity={:?} share={:?} known_acc={:?}",
        r.setting_model, r.n_clusters, r.nmi, r.silhouette, r.noise_pct, r.novel_purity, r.novel_share, r.known_accuracy_post
    );
    finish_run(command, &args.out, art, started)
}

fn input_failure(e: CacheError) -> Failure {
    Failure { code: 3, error: e.into() }
}

fn cmd_extract(args: &ExtractArgs) -> Result<(), Failure> {
    if !args.labels.is_file() {
        return Err(Failure { code: 2, error: anyhow::anyhow!("{}: labels file not found", args.labels.display()) });
    }
    let inventory = DeviceInventory::read_csv(&args.labels).map_err(|e| {
        let code = if matches!(e, FlowError::Io(_)) { 2 } else { 3 };
        Failure { code, error: anyhow::Error::new(e).context(format!("{}", args.labels.display())) }
    })?;
    let mut assembly = flowprofiler::flow::AssemblyConfig::default();
    if let Some(t) = args.flow.idle_timeout {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure { code: 2, error: anyhow::anyhow!("--idle-timeout must be positive") });
        }
        assembly.idle_timeout = t;
    }
    for c in &args.captures {
        if !c.is_file() {
            return Err(Failure { code: 2, error: anyhow::anyhow!("{}: capture not found", c.display()) });
        }
    }
    let dir = cache::cache_dir(&args.out);
    for c in &args.captures {
        let got = cache::cached_extract(c, &inventory, &assembly, &dir).map_err(input_failure)?;
        let status = if got.hit { "cache hit" } else { "extracted" };
        info!("{}: {status}, {} flows -> {}", c.display(), got.vectors.len(), got.csv_path.display());
        println!("{}\t{}\t{}", status, got.vectors.len(), got.csv_path.display());
    }
    Ok(())
}

/// Writes the plan's synthetic corpus as `baseline.pcap`, `stream.pcap` (when
/// the cutoff precedes the end), `labels.csv` and a ready-to-run
/// `captures.toml`, plus the usual run artifacts with ground-truth device
/// indices in place of cluster ids.
fn cmd_synth(args: &RunArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let plan = plan_for(args)?;
    let DataSource::Synthetic(s) = &plan.source else {
        return Err(ConfigError::Field { field: "synthetic".into(), message: "synth needs a [synthetic] section".into() }.into());
    };
    let mut archetypes = s.archetypes.clone();
    archetypes.extend(s.holdouts.iter().cloned());
    let mut flows = synth::generate_flows(&archetypes, s.duration_s, plan.seed(), &plan.config.flow).map_err(HarnessError::from)?;
    if let Some(bg) = &s.background {
        let extra = synth::generate_flows(std::slice::from_ref(bg), s.cutoff_s, plan.seed() ^ 0xB4C6_6A0D, &plan.config.flow)
            .map_err(HarnessError::from)?;
        flows.extend(extra);
        archetypes.push(bg.clone());
    }
    flows.sort_by_key(|f| (f.flow.acc.first_ts, f.flow.key));
    let cutoff = Timestamp(synth::EPOCH_SECS * Timestamp::NANOS_PER_SEC + (s.cutoff_s * 1e9).round() as i64);
    let (baseline, stream): (Vec<_>, Vec<_>) = flows.into_iter().partition(|f| f.flow.acc.first_ts < cutoff);

    let dir = run_dir(&args.out, "synth")?;
    let inventory = synth::inventory_of(&archetypes);
    let write = |name: &str, part: &[synth::SyntheticFlow]| -> anyhow::Result<Option<String>> {
        if part.is_empty() {
            return Ok(None);
        }
        synth::write_pcap(part, dir.join(name)).with_context(|| format!("writing {name}"))?;
        Ok(Some(name.to_string()))
    };
    let base_name = write("baseline.pcap", &baseline)?;
    let stream_name = write("stream.pcap", &stream)?;
    let mut labels = Vec::new();
    inventory.write_csv(&mut labels).map_err(anyhow::Error::from)?;
    fs::write(dir.join("labels.csv"), labels).context("writing labels.csv")?;
    let holdout: Vec<String> = plan.holdout.iter().map(|(m, t)| format!("\"{m}\" = \"{}\"", format!("{t:?}").to_lowercase())).collect();
    let captures_toml = format!(
        "dataset_id = \"{}-pcap\"\nseed = {}\n\n[captures]\nlabels = \"labels.csv\"\nbaseline = [{}]\nstream = [{}]\nholdout = {{ {} }}\n",
        plan.config.dataset_id,
        plan.seed(),
        base_name.map(|n| format!("\"{n}\"")).unwrap_or_default(),
        stream_name.map(|n| format!("\"{n}\"")).unwrap_or_default(),
        holdout.join(", ")
    );
    fs::write(dir.join("captures.toml"), captures_toml).context("writing captures.toml")?;

    // ground-truth views of the generated flows
    let index: std::collections::BTreeMap<_, i64> = archetypes.iter().enumerate().map(|(i, a)| (a.mac, i as i64)).collect();
    let all: Vec<(&str, &synth::SyntheticFlow)> =
        baseline.iter().map(|f| ("baseline", f)).chain(stream.iter().map(|f| ("stream", f))).collect();
    let vectors: Vec<_> = all.iter().map(|(_, f)| extract_flow(&f.flow)).collect();
    let name_of = |m| inventory.name(m).unwrap_or("?").to_string();
    let membership = all
        .iter()
        .zip(&vectors)
        .map(|((phase, _), v)| MembershipRow::new(phase, v.device_mac, &name_of(&v.device_mac), v.flow_start, index[&v.device_mac], None))
        .collect();
    let mut projection = Vec::new();
    if !vectors.is_empty() {
        let n_base = baseline.len().max(1).min(vectors.len());
        if let Ok(scaler) = Scaler::fit(&vectors[..n_base], plan.config.features.scale) {
            let pts = scaler.transform_all(&vectors);
            if let Some(pca) = Pca::fit(&pts[..n_base]) {
                for (p, v) in pts.iter().zip(&vectors) {
                    let (x, y) = pca.project(p);
                    projection.push(ProjectionRow { x, y, cluster: index[&v.device_mac], device: name_of(&v.device_mac) });
                }
            }
        }
    }
    let counts = synth::flow_counts(&baseline.iter().chain(&stream).cloned().collect::<Vec<_>>());
    let mut log = vec![
        format!("config_hash={}", plan.config_hash),
        format!("dataset_id={}", plan.config.dataset_id),
        format!("seed={}", plan.seed()),
        format!("baseline_flows={} stream_flows={}", baseline.len(), stream.len()),
    ];
    log.extend(counts.iter().map(|(m, n)| format!("device {m} {} flows={n}", name_of(m))));
    let report = EvaluationReport {
        setting_model: format!("synthetic corpus ({} devices)", archetypes.len()),
        n_clusters: Some(archetypes.len()),
        noise_pct: None,
        nmi: None,
        silhouette: None,
        known_accuracy_post: None,
        novel_purity: None,
        novel_share: None,
        update_time_s: None,
        provenance: flowprofiler::metrics::Provenance {
            config_hash: plan.config_hash.clone(),
            dataset_id: plan.config.dataset_id.clone(),
            seed: plan.seed(),
            clusterer: "none".into(),
        },
    };
    log.iter().for_each(|l| info!("{l}"));
    let mut art = RunArtifacts { report, membership, projection, novelty: Vec::new(), grid: None, log };
    art.log.push(format!("wall_s={:.6}", started.elapsed().as_secs_f64()));
    write_artifacts(&dir, &art).with_context(|| format!("writing artifacts to {}", dir.display()))?;
    println!("{}", dir.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), Failure> {
    let mut reports = Vec::new();
    for input in &args.inputs {
        let path = if input.is_dir() { input.join("report.json") } else { input.clone() };
        let text = fs::read_to_string(&path)
            .map_err(|e| Failure { code: 2, error: anyhow::Error::new(e).context(path.display().to_string()) })?;
        let report: EvaluationReport = serde_json::from_str(&text)
            .map_err(|e| Failure { code: 3, error: anyhow::Error::new(e).context(path.display().to_string()) })?;
        reports.push(report);
    }
    match &args.out {
        Some(p) => {
            let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            EvaluationReport::write_csv(f, &reports).context("writing report CSV")?;
        }
        None => EvaluationReport::write_csv(std::io::stdout().lock(), &reports).context("writing report CSV")?,
    }
    Ok(())
}

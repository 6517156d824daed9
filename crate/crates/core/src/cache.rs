//! Per-capture feature extraction with an on-disk CSV cache keyed by the
//! capture's content hash and the extraction configuration.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{extract_flow, read_features_csv, write_features_csv, FeatureError, FeatureVector};
use crate::flow::{assemble, AssemblyConfig, AssemblyStats, DeviceInventory, FlowError};
use crate::pcap::{open_capture, PcapError};

/// Environment variable that overrides the cache directory.
pub const CACHE_ENV: &str = "FLOWPROFILER_CACHE";
const CACHE_FORMAT: &str = "flowprofiler-features-v1";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Capture { path: PathBuf, source: PcapError },
    #[error("{path}: {source}")]
    Features { path: PathBuf, source: FeatureError },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CacheError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CacheError::Io { path: path.to_path_buf(), source }
    }
}

/// Contents of `<capture>.meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub format: String,
    pub capture_sha256: String,
    pub config_hash: String,
    pub n_flows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedFeatures {
    pub vectors: Vec<FeatureVector>,
    pub hit: bool,
    pub csv_path: PathBuf,
}

/// Cache directory: `FLOWPROFILER_CACHE` if set, otherwise `default`.
pub fn cache_dir(default: impl Into<PathBuf>) -> PathBuf {
    std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| default.into())
}

/// Hash of everything besides the capture bytes that affects extraction.
pub fn extraction_config_hash(inventory: &DeviceInventory, assembly: &AssemblyConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        format: &'a str,
        inventory: &'a DeviceInventory,
        assembly: &'a AssemblyConfig,
    }
    let json = serde_json::to_vec(&Key { format: CACHE_FORMAT, inventory, assembly }).expect("key serializes");
    hex::encode(Sha256::digest(json))
}

pub fn file_sha256(path: &Path) -> Result<String, CacheError> {
    let mut f = BufReader::new(File::open(path).map_err(|e| CacheError::io(path, e))?);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CacheError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Decodes, assembles and extracts one capture. Frames shorter than an
/// Ethernet header are skipped; any other decode error aborts.
pub fn extract_capture(
    path: &Path,
    inventory: &DeviceInventory,
    assembly: &AssemblyConfig,
) -> Result<(Vec<FeatureVector>, AssemblyStats), CacheError> {
    let capture_err = |source| CacheError::Capture { path: path.to_path_buf(), source };
    let mut packets = Vec::new();
    for rec in open_capture(path).map_err(capture_err)? {
        match rec {
            Ok(p) => packets.push(p),
            Err(PcapError::FrameTooShort(n)) => log::debug!("{}: skipped {n}-byte frame", path.display()),
            Err(e) => return Err(capture_err(e)),
        }
    }
    let asm = assemble(&packets, inventory.macs(), *assembly)?;
    Ok((asm.flows.iter().map(extract_flow).collect(), asm.stats))
}

fn cache_paths(capture: &Path, dir: &Path) -> (PathBuf, PathBuf) {
    let name = capture.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "capture".into());
    (dir.join(format!("{name}.features.csv")), dir.join(format!("{name}.meta.json")))
}

fn read_cached(csv_path: &Path, meta_path: &Path, expect: &CacheMeta) -> Option<Vec<FeatureVector>> {
    let meta: CacheMeta = serde_json::from_slice(&fs::read(meta_path).ok()?).ok()?;
    if &meta != expect {
        return None;
    }
    let vectors = read_features_csv(BufReader::new(File::open(csv_path).ok()?)).ok()?;
    (vectors.len() == meta.n_flows).then_some(vectors)
}

/// Returns the capture's features, extracting and caching them on a miss.
///
/// Values always come back as stored in the cache CSV (nine significant
/// digits), so a hit and a miss yield identical vectors.
pub fn cached_extract(
    capture: &Path,
    inventory: &DeviceInventory,
    assembly: &AssemblyConfig,
    dir: &Path,
) -> Result<CachedFeatures, CacheError> {
    let (csv_path, meta_path) = cache_paths(capture, dir);
    let mut meta = CacheMeta {
        format: CACHE_FORMAT.into(),
        capture_sha256: file_sha256(capture)?,
        config_hash: extraction_config_hash(inventory, assembly),
        n_flows: 0,
    };
    if let Ok(m) = serde_json::from_slice::<CacheMeta>(&fs::read(&meta_path).unwrap_or_default()) {
        meta.n_flows = m.n_flows;
        if let Some(vectors) = read_cached(&csv_path, &meta_path, &meta) {
            log::info!("cache hit for {} ({} flows)", capture.display(), vectors.len());
            return Ok(CachedFeatures { vectors, hit: true, csv_path });
        }
    }
    let (vectors, stats) = extract_capture(capture, inventory, assembly)?;
    log::info!(
        "extracted {} flows from {} ({} monitored packets, {} dropped out of order)",
        vectors.len(),
        capture.display(),
        stats.monitored_packets,
        stats.dropped_out_of_order
    );
    fs::create_dir_all(dir).map_err(|e| CacheError::io(dir, e))?;
    let mut buf = Vec::new();
    write_features_csv(&mut buf, &vectors).map_err(|source| CacheError::Features { path: csv_path.clone(), source })?;
    let quantized = read_features_csv(buf.as_slice()).map_err(|source| CacheError::Features { path: csv_path.clone(), source })?;
    fs::write(&csv_path, &buf).map_err(|e| CacheError::io(&csv_path, e))?;
    meta.n_flows = quantized.len();
    let w = BufWriter::new(File::create(&meta_path).map_err(|e| CacheError::io(&meta_path, e))?);
    serde_json::to_writer_pretty(w, &meta).map_err(|e| CacheError::io(&meta_path, e.into()))?;
    Ok(CachedFeatures { vectors: quantized, hit: false, csv_path })
}

//! Per-flow feature vectors: one static column (initial TTL mode) followed
//! by 25 behavioral columns, plus standardization for clustering.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::flow::{FlowAccumulator, FlowRecord, SIZE_BINS};
use crate::pcap::{MacAddr, Timestamp};

pub const N_FEATURES: usize = 26;
pub const N_BEHAVIORAL: usize = 25;
pub const TOP_PORTS: usize = 3;

/// Column names in vector order; also the feature-cache CSV header.
pub const COLUMN_NAMES: [&str; N_FEATURES] = [
    "initial_ttl_mode",
    "iat_mean",
    "iat_std",
    "iat_median",
    "iat_max",
    "total_packets",
    "total_bytes",
    "flow_duration",
    "packet_rate",
    "byte_rate",
    "tcp_ratio",
    "udp_ratio",
    "pkt_size_bin_0",
    "pkt_size_bin_1",
    "pkt_size_bin_2",
    "pkt_size_bin_3",
    "pkt_size_bin_4",
    "pkt_size_bin_5",
    "pkt_size_bin_6",
    "pkt_size_bin_7",
    "top_dst_port_0_val",
    "top_dst_port_1_val",
    "top_dst_port_2_val",
    "top_dst_port_0_ratio",
    "top_dst_port_1_ratio",
    "top_dst_port_2_ratio",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("need at least {needed} vectors to fit a scaler, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("point has {got} dimensions, scaler expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature csv: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub initial_ttl_mode: f64,
    pub iat_mean: f64,
    pub iat_std: f64,
    pub iat_median: f64,
    pub iat_max: f64,
    pub total_packets: f64,
    pub total_bytes: f64,
    pub flow_duration: f64,
    pub packet_rate: f64,
    pub byte_rate: f64,
    pub tcp_ratio: f64,
    pub udp_ratio: f64,
    pub pkt_size_bins: [f64; SIZE_BINS],
    pub top_dst_port_vals: [f64; TOP_PORTS],
    pub top_dst_port_ratios: [f64; TOP_PORTS],
    pub device_mac: MacAddr,
    pub flow_start: Timestamp,
}

impl FeatureVector {
    /// Numeric columns in [`COLUMN_NAMES`] order.
    pub fn values(&self) -> [f64; N_FEATURES] {
        let mut v = [0.0; N_FEATURES];
        v[0] = self.initial_ttl_mode;
        v[1] = self.iat_mean;
        v[2] = self.iat_std;
        v[3] = self.iat_median;
        v[4] = self.iat_max;
        v[5] = self.total_packets;
        v[6] = self.total_bytes;
        v[7] = self.flow_duration;
        v[8] = self.packet_rate;
        v[9] = self.byte_rate;
        v[10] = self.tcp_ratio;
        v[11] = self.udp_ratio;
        v[12..20].copy_from_slice(&self.pkt_size_bins);
        v[20..23].copy_from_slice(&self.top_dst_port_vals);
        v[23..26].copy_from_slice(&self.top_dst_port_ratios);
        v
    }

    pub fn from_values(v: &[f64; N_FEATURES], device_mac: MacAddr, flow_start: Timestamp) -> Self {
        let mut pkt_size_bins = [0.0; SIZE_BINS];
        pkt_size_bins.copy_from_slice(&v[12..20]);
        let mut top_dst_port_vals = [0.0; TOP_PORTS];
        top_dst_port_vals.copy_from_slice(&v[20..23]);
        let mut top_dst_port_ratios = [0.0; TOP_PORTS];
        top_dst_port_ratios.copy_from_slice(&v[23..26]);
        FeatureVector {
            initial_ttl_mode: v[0],
            iat_mean: v[1],
            iat_std: v[2],
            iat_median: v[3],
            iat_max: v[4],
            total_packets: v[5],
            total_bytes: v[6],
            flow_duration: v[7],
            packet_rate: v[8],
            byte_rate: v[9],
            tcp_ratio: v[10],
            udp_ratio: v[11],
            pkt_size_bins,
            top_dst_port_vals,
            top_dst_port_ratios,
            device_mac,
            flow_start,
        }
    }
}

fn median_of_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Most frequent TTL, smallest value on ties; 0 when no IP packet was seen.
fn ttl_mode(acc: &FlowAccumulator) -> f64 {
    let mut best: Option<(u8, u64)> = None;
    for (&ttl, &count) in &acc.ttl_counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((ttl, count));
        }
    }
    best.map_or(0.0, |(ttl, _)| f64::from(ttl))
}

pub fn extract(acc: &FlowAccumulator, device_mac: MacAddr) -> FeatureVector {
    let total = acc.total_packets.max(1) as f64;

    let mut gaps: Vec<f64> = acc.packet_timestamps.windows(2).map(|w| w[1].seconds_since(w[0])).collect();
    let (iat_mean, iat_std, iat_median, iat_max) = if gaps.is_empty() {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let n = gaps.len() as f64;
        let mean = gaps.iter().sum::<f64>() / n;
        let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n;
        gaps.sort_by(f64::total_cmp);
        (mean, var.sqrt(), median_of_sorted(&gaps), *gaps.last().expect("non-empty"))
    };

    let flow_duration = acc.last_ts.seconds_since(acc.first_ts);
    let (packet_rate, byte_rate) = if flow_duration > 0.0 {
        (acc.total_packets as f64 / flow_duration, acc.total_bytes as f64 / flow_duration)
    } else {
        (0.0, 0.0)
    };

    let mut pkt_size_bins = [0.0; SIZE_BINS];
    for (p, &c) in pkt_size_bins.iter_mut().zip(&acc.size_bins) {
        *p = c as f64 / total;
    }

    let mut ports: Vec<(u16, u64)> = acc.dst_port_counts.iter().map(|(&p, &c)| (p, c)).collect();
    ports.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut top_dst_port_vals = [0.0; TOP_PORTS];
    let mut top_dst_port_ratios = [0.0; TOP_PORTS];
    for (slot, &(port, count)) in ports.iter().take(TOP_PORTS).enumerate() {
        top_dst_port_vals[slot] = f64::from(port);
        top_dst_port_ratios[slot] = count as f64 / acc.outbound_packets.max(1) as f64;
    }

    FeatureVector {
        initial_ttl_mode: ttl_mode(acc),
        iat_mean,
        iat_std,
        iat_median,
        iat_max,
        total_packets: acc.total_packets as f64,
        total_bytes: acc.total_bytes as f64,
        flow_duration,
        packet_rate,
        byte_rate,
        tcp_ratio: acc.tcp_count as f64 / total,
        udp_ratio: acc.udp_count as f64 / total,
        pkt_size_bins,
        top_dst_port_vals,
        top_dst_port_ratios,
        device_mac,
        flow_start: acc.first_ts,
    }
}

pub fn extract_flow(flow: &FlowRecord) -> FeatureVector {
    extract(&flow.acc, flow.key.device_mac)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    #[default]
    Zscore,
    None,
}

/// Per-column standardization fitted on a reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mode: ScaleMode,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(vectors: &[FeatureVector], mode: ScaleMode) -> Result<Self, FeatureError> {
        let rows: Vec<[f64; N_FEATURES]> = vectors.iter().map(FeatureVector::values).collect();
        Self::fit_rows(&rows, mode)
    }

    pub fn fit_rows<R: AsRef<[f64]>>(rows: &[R], mode: ScaleMode) -> Result<Self, FeatureError> {
        if rows.len() < 2 {
            return Err(FeatureError::InsufficientData { needed: 2, got: rows.len() });
        }
        let dim = rows[0].as_ref().len();
        if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != dim) {
            return Err(FeatureError::DimensionMismatch { expected: dim, got: bad.as_ref().len() });
        }
        if mode == ScaleMode::None {
            return Ok(Scaler { mode, mean: vec![0.0; dim], std: vec![1.0; dim] });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r.as_ref()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Scaler { mode, mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / std` per column; zero-variance columns map to 0.
    pub fn transform_values(&self, x: &[f64]) -> Vec<f64> {
        if self.mode == ScaleMode::None {
            return x.to_vec();
        }
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| if *s > 0.0 { (x - m) / s } else { 0.0 })
            .collect()
    }

    pub fn transform(&self, v: &FeatureVector) -> Vec<f64> {
        self.transform_values(&v.values())
    }

    pub fn transform_all(&self, vectors: &[FeatureVector]) -> Vec<Vec<f64>> {
        vectors.iter().map(|v| self.transform(v)).collect()
    }

    /// Inverse on non-degenerate columns; zero-variance columns return the mean.
    pub fn inverse_transform(&self, z: &[f64]) -> Vec<f64> {
        if self.mode == ScaleMode::None {
            return z.to_vec();
        }
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| if *s > 0.0 { z * s + m } else { *m })
            .collect()
    }

    /// Hex SHA-256 over the fitted parameters, for tying model snapshots to a scaler.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update([u8::from(self.mode == ScaleMode::Zscore)]);
        for x in self.mean.iter().chain(&self.std) {
            h.update(x.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// `%.9g`-style rendering: 9 significant digits, trailing zeros trimmed.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_features_csv(w: impl Write, vectors: &[FeatureVector]) -> Result<(), FeatureError> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = COLUMN_NAMES.to_vec();
    header.extend(["device_mac", "flow_start"]);
    wtr.write_record(&header)?;
    for v in vectors {
        let mut row: Vec<String> = v.values().iter().map(|&x| format_sig9(x)).collect();
        row.push(v.device_mac.to_string());
        row.push(v.flow_start.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn parse_timestamp(s: &str) -> Option<Timestamp> {
    let (secs, frac) = s.split_once('.').unwrap_or((s, "0"));
    let secs: i64 = secs.parse().ok()?;
    if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let nanos: u32 = format!("{frac:0<9}").parse().ok()?;
    Some(Timestamp::from_parts(secs, nanos))
}

pub fn read_features_csv(r: impl Read) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let expected: Vec<&str> = COLUMN_NAMES.iter().copied().chain(["device_mac", "flow_start"]).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(FeatureError::Format("unexpected header".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| FeatureError::Format(format!("row {}: bad {what}", i + 2));
        let mut vals = [0.0; N_FEATURES];
        for (j, slot) in vals.iter_mut().enumerate() {
            *slot = rec[j].parse().map_err(|_| bad(COLUMN_NAMES[j]))?;
        }
        let mac: MacAddr = rec[N_FEATURES].parse().map_err(|_| bad("device_mac"))?;
        let ts = parse_timestamp(&rec[N_FEATURES + 1]).ok_or_else(|| bad("flow_start"))?;
        out.push(FeatureVector::from_values(&vals, mac, ts));
    }
    Ok(out)
}

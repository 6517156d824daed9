//! Packet-to-profile toolkit for IoT device fingerprinting.
//!
//! Classic pcap captures are decoded ([`pcap`]), grouped into per-device
//! bidirectional flows ([`flow`]) and turned into 26-column feature vectors
//! ([`features`]). Baseline device profiles come from density-based
//! clustering ([`cluster`]); a CF tree or mini-batch k-means ([`stream`])
//! then adapts the profile as new devices appear. [`metrics`] scores both
//! stages, [`synth`] generates labeled traffic with known ground truth, and
//! [`harness`] runs the end-to-end experiments.

pub mod cache;
pub mod cluster;
pub mod features;
pub mod flow;
pub mod harness;
pub mod metrics;
pub mod pcap;
pub mod stream;
pub mod synth;

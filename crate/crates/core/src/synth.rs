//! Labeled synthetic traffic from parameterized device archetypes.
//!
//! Each archetype emits flows as a Poisson process; every flow picks a
//! protocol and remote port from the archetype's mixes and draws packet gaps
//! from a log-normal distribution and packet sizes from a mixture over the
//! eight feature size bins. Generated flows carry both their packets (for
//! writing captures) and the accumulator those packets produce.

use std::collections::{BTreeMap, HashMap};
use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{AssemblyConfig, DeviceInventory, FlowAccumulator, FlowKey, FlowRecord, SIZE_BINS, SIZE_BIN_EDGES};
use crate::pcap::{self, MacAddr, PacketRecord, PcapError, Timestamp, ETHERTYPE_IPV4, IPPROTO_ICMP, IPPROTO_TCP, IPPROTO_UDP, TCP_ACK, TCP_PSH, TCP_SYN};

/// Simulated time zero: 2023-11-14T22:13:20Z.
pub const EPOCH_SECS: i64 = 1_700_000_000;
const EPHEMERAL_LO: u16 = 49152;
const MAX_FRAME: u32 = 1518;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("archetype {name}: {problem}")]
    InvalidArchetype { name: String, problem: String },
    #[error("no archetypes given")]
    NoArchetypes,
    #[error("no flows to write")]
    NoFlows,
    #[error("archetype file: {0}")]
    Parse(String),
    #[error(transparent)]
    Pcap(#[from] PcapError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMix {
    pub tcp: f64,
    pub udp: f64,
    pub other: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPort {
    pub port: u16,
    pub weight: f64,
}

/// Linear change of the log-normal gap parameters per simulated day.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub iat_mu_per_day: f64,
    pub iat_sigma_per_day: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoveltyTier {
    Low,
    Medium,
    High,
}

impl std::str::FromStr for NoveltyTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(NoveltyTier::Low),
            "medium" => Ok(NoveltyTier::Medium),
            "high" => Ok(NoveltyTier::High),
            other => Err(format!("unknown novelty tier {other:?} (expected low, medium or high)")),
        }
    }
}

fn default_outbound() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceArchetype {
    pub mac: MacAddr,
    pub name: String,
    /// Log-space mean of packet gaps (seconds).
    pub iat_mu: f64,
    /// Log-space standard deviation of packet gaps.
    pub iat_sigma: f64,
    pub size_mix: [f64; SIZE_BINS],
    pub protocol_mix: ProtocolMix,
    pub ports: Vec<WeightedPort>,
    /// Initial TTL of device-sent packets.
    pub ttl: u8,
    pub flows_per_hour: f64,
    /// Inclusive packet-count range per flow.
    pub packets_per_flow: [u32; 2],
    #[serde(default)]
    pub drift: Option<Drift>,
    /// Redraw gap, size, port and protocol parameters for every flow.
    #[serde(default)]
    pub diffuse: bool,
    /// First second (simulated) at which the device is active.
    #[serde(default)]
    pub active_from: f64,
    /// Probability that a packet after the first is device-to-remote.
    #[serde(default = "default_outbound")]
    pub outbound_fraction: f64,
}

impl DeviceArchetype {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |problem: String| Err(SynthError::InvalidArchetype { name: self.name.clone(), problem });
        let close = |x: f64| (x - 1.0).abs() <= 1e-9;
        if self.size_mix.iter().any(|&w| w < 0.0) || !close(self.size_mix.iter().sum()) {
            return bad("size_mix must be non-negative and sum to 1".into());
        }
        let pm = self.protocol_mix;
        if [pm.tcp, pm.udp, pm.other].iter().any(|&w| w < 0.0) || !close(pm.tcp + pm.udp + pm.other) {
            return bad("protocol_mix must be non-negative and sum to 1".into());
        }
        if self.ports.is_empty() && !self.diffuse {
            return bad("port profile is empty".into());
        }
        if !self.ports.is_empty() && (self.ports.iter().any(|p| p.weight < 0.0) || !close(self.ports.iter().map(|p| p.weight).sum())) {
            return bad("port weights must be non-negative and sum to 1".into());
        }
        if !(self.flows_per_hour > 0.0 && self.flows_per_hour.is_finite()) {
            return bad(format!("flows_per_hour must be positive, got {}", self.flows_per_hour));
        }
        let [lo, hi] = self.packets_per_flow;
        if lo == 0 || lo > hi {
            return bad(format!("packets_per_flow range [{lo}, {hi}] is invalid"));
        }
        if !(self.iat_sigma >= 0.0 && self.iat_mu.is_finite() && self.iat_sigma.is_finite()) {
            return bad("iat parameters must be finite with sigma >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.outbound_fraction) {
            return bad("outbound_fraction must be within [0, 1]".into());
        }
        if self.active_from < 0.0 {
            return bad("active_from must be non-negative".into());
        }
        Ok(())
    }

    fn device_ip(&self) -> Ipv4Addr {
        let m = self.mac.0;
        Ipv4Addr::new(10, m[3], m[4], m[5].max(1))
    }
}

fn mac(last: u8) -> MacAddr {
    MacAddr([0x02, 0x1f, 0x9a, 0x00, 0x00, last])
}

fn single_port(port: u16) -> Vec<WeightedPort> {
    vec![WeightedPort { port, weight: 1.0 }]
}

const TCP_ONLY: ProtocolMix = ProtocolMix { tcp: 1.0, udp: 0.0, other: 0.0 };
const UDP_ONLY: ProtocolMix = ProtocolMix { tcp: 0.0, udp: 1.0, other: 0.0 };

/// The five stock archetypes: camera, plug, sensor, hub and speaker.
pub fn stock_archetypes() -> Vec<DeviceArchetype> {
    vec![
        DeviceArchetype {
            mac: mac(0x01),
            name: "camera".into(),
            iat_mu: -3.0,
            iat_sigma: 0.4,
            size_mix: [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.4, 0.6],
            protocol_mix: TCP_ONLY,
            ports: single_port(554),
            ttl: 64,
            flows_per_hour: 120.0,
            packets_per_flow: [40, 50],
            drift: None,
            diffuse: false,
            active_from: 0.0,
            outbound_fraction: 0.75,
        },
        DeviceArchetype {
            mac: mac(0x02),
            name: "plug".into(),
            iat_mu: 0.5,
            iat_sigma: 0.3,
            size_mix: [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            protocol_mix: TCP_ONLY,
            ports: single_port(8883),
            ttl: 255,
            flows_per_hour: 90.0,
            packets_per_flow: [8, 10],
            drift: None,
            diffuse: false,
            active_from: 0.0,
            outbound_fraction: 0.75,
        },
        DeviceArchetype {
            mac: mac(0x03),
            name: "sensor".into(),
            iat_mu: 1.5,
            iat_sigma: 0.25,
            size_mix: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            protocol_mix: UDP_ONLY,
            ports: single_port(5683),
            ttl: 30,
            flows_per_hour: 90.0,
            packets_per_flow: [4, 6],
            drift: None,
            diffuse: false,
            active_from: 0.0,
            outbound_fraction: 0.75,
        },
        DeviceArchetype {
            mac: mac(0x04),
            name: "hub".into(),
            iat_mu: -1.0,
            iat_sigma: 0.3,
            size_mix: [0.0, 0.0, 0.7, 0.3, 0.0, 0.0, 0.0, 0.0],
            protocol_mix: TCP_ONLY,
            ports: single_port(8443),
            ttl: 128,
            flows_per_hour: 100.0,
            packets_per_flow: [18, 24],
            drift: None,
            diffuse: false,
            active_from: 0.0,
            outbound_fraction: 0.75,
        },
        DeviceArchetype {
            mac: mac(0x05),
            name: "speaker".into(),
            iat_mu: -2.0,
            iat_sigma: 0.3,
            size_mix: [0.0, 0.0, 0.0, 0.0, 0.6, 0.4, 0.0, 0.0],
            protocol_mix: UDP_ONLY,
            ports: single_port(4070),
            ttl: 64,
            flows_per_hour: 100.0,
            packets_per_flow: [25, 32],
            drift: None,
            diffuse: false,
            active_from: 0.0,
            outbound_fraction: 0.75,
        },
    ]
}

/// A held-out archetype at the given novelty tier: a camera clone with a new
/// MAC (low), the plug's ports with shifted sizes and timing (medium), or
/// disjoint everything (high).
pub fn tier_archetype(tier: NoveltyTier) -> DeviceArchetype {
    let stock = stock_archetypes();
    match tier {
        NoveltyTier::Low => DeviceArchetype { mac: mac(0x11), name: "camera-2".into(), ..stock[0].clone() },
        NoveltyTier::Medium => DeviceArchetype {
            mac: mac(0x12),
            name: "plug-other-make".into(),
            iat_mu: 2.2,
            iat_sigma: 0.3,
            size_mix: [0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
            packets_per_flow: [14, 18],
            ..stock[1].clone()
        },
        NoveltyTier::High => DeviceArchetype {
            mac: mac(0x13),
            name: "thermostat".into(),
            iat_mu: -0.3,
            iat_sigma: 0.3,
            size_mix: [0.0, 0.0, 0.0, 0.5, 0.0, 0.5, 0.0, 0.0],
            protocol_mix: UDP_ONLY,
            ports: single_port(9999),
            ttl: 100,
            flows_per_hour: 40.0,
            packets_per_flow: [28, 34],
            drift: None,
            diffuse: false,
            active_from: 0.0,
            outbound_fraction: 0.75,
        },
    }
}

/// Background traffic whose parameters are redrawn per flow.
pub fn diffuse_archetype(flows_per_hour: f64) -> DeviceArchetype {
    DeviceArchetype {
        mac: mac(0xee),
        name: "background".into(),
        iat_mu: 0.0,
        iat_sigma: 1.0,
        size_mix: [0.125; SIZE_BINS],
        protocol_mix: ProtocolMix { tcp: 0.45, udp: 0.45, other: 0.1 },
        ports: Vec::new(),
        ttl: 64,
        flows_per_hour,
        packets_per_flow: [1, 60],
        drift: None,
        diffuse: true,
        active_from: 0.0,
        outbound_fraction: 0.5,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeFile {
    #[serde(rename = "archetype")]
    pub archetypes: Vec<DeviceArchetype>,
}

impl ArchetypeFile {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let file: ArchetypeFile = toml::from_str(text).map_err(|e| SynthError::Parse(e.to_string()))?;
        for a in &file.archetypes {
            a.validate()?;
        }
        Ok(file)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// A generated flow with its packets in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFlow {
    pub flow: FlowRecord,
    pub packets: Vec<PacketRecord>,
}

pub fn inventory_of(archetypes: &[DeviceArchetype]) -> DeviceInventory {
    DeviceInventory { devices: archetypes.iter().map(|a| (a.mac, a.name.clone())).collect() }
}

fn pick_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
            if target < w {
                return i;
            }
            target -= w;
        }
    }
    last
}

fn frame_len_in_bin<R: Rng>(rng: &mut R, bin: usize, protocol: u8) -> u32 {
    // Ethernet + IPv4 + transport headers must fit
    let min_frame = match protocol {
        IPPROTO_TCP => 54,
        IPPROTO_UDP => 42,
        _ => 42,
    };
    let lo = SIZE_BIN_EDGES[bin].max(min_frame);
    let hi = SIZE_BIN_EDGES.get(bin + 1).map_or(MAX_FRAME, |&next| next - 1);
    rng.random_range(lo..=hi.max(lo))
}

fn remote_ip(port: u16, salt: u8) -> IpAddr {
    let [a, b] = port.to_be_bytes();
    IpAddr::V4(Ipv4Addr::new(198, 18u8.wrapping_add(salt & 1), a, b.max(1)))
}

/// Remote hosts sit a fixed number of hops away, so their TTL is a function
/// of the remote endpoint.
fn server_ttl(remote_port: u16) -> u8 {
    let initial: u8 = if remote_port.is_multiple_of(2) { 64 } else { 128 };
    initial - 4 - (remote_port % 13) as u8
}

struct FlowPlan {
    protocol: u8,
    remote_port: u16,
    iat: LogNormal<f64>,
    size_mix: [f64; SIZE_BINS],
    n_packets: u32,
    server_ttl: u8,
    device_ttl: u8,
}

fn plan_flow<R: Rng>(rng: &mut R, a: &DeviceArchetype, start_rel: f64) -> FlowPlan {
    let pm = a.protocol_mix;
    let protocol = [IPPROTO_TCP, IPPROTO_UDP, IPPROTO_ICMP][pick_weighted(rng, &[pm.tcp, pm.udp, pm.other])];
    if a.diffuse {
        let remote_port = rng.random_range(1..=65535);
        let mut size_mix = [0.0; SIZE_BINS];
        size_mix.iter_mut().for_each(|w| *w = rng.random::<f64>().powi(3));
        let total: f64 = size_mix.iter().sum();
        size_mix.iter_mut().for_each(|w| *w /= total);
        let mu = rng.random_range(-5.0..2.5);
        let sigma = rng.random_range(0.2..1.5);
        return FlowPlan {
            protocol,
            remote_port,
            iat: LogNormal::new(mu, sigma).expect("valid log-normal"),
            size_mix,
            n_packets: rng.random_range(a.packets_per_flow[0]..=a.packets_per_flow[1]),
            server_ttl: server_ttl(remote_port),
            device_ttl: rng.random_range(16..=255),
        };
    }
    let weights: Vec<f64> = a.ports.iter().map(|p| p.weight).collect();
    let remote_port = a.ports[pick_weighted(rng, &weights)].port;
    let days = start_rel / 86_400.0;
    let drift = a.drift.unwrap_or_default();
    let mu = a.iat_mu + drift.iat_mu_per_day * days;
    let sigma = (a.iat_sigma + drift.iat_sigma_per_day * days).max(0.0);
    FlowPlan {
        protocol,
        remote_port,
        iat: LogNormal::new(mu, sigma).expect("valid log-normal"),
        size_mix: a.size_mix,
        n_packets: rng.random_range(a.packets_per_flow[0]..=a.packets_per_flow[1]),
        server_ttl: server_ttl(remote_port),
        device_ttl: a.ttl,
    }
}

/// Allocates device-side ports so no two concurrently open flows of a device
/// share a 5-tuple.
struct PortAllocator {
    next: u16,
    busy_until: HashMap<u16, i64>,
}

impl PortAllocator {
    fn new() -> Self {
        PortAllocator { next: EPHEMERAL_LO, busy_until: HashMap::new() }
    }

    fn take(&mut self, start_ns: i64, guard_ns: i64) -> u16 {
        loop {
            let port = self.next;
            self.next = if self.next == u16::MAX { EPHEMERAL_LO } else { self.next + 1 };
            if self.busy_until.get(&port).is_none_or(|&until| until + guard_ns < start_ns) {
                return port;
            }
        }
    }

    fn hold(&mut self, port: u16, until_ns: i64) {
        self.busy_until.insert(port, until_ns);
    }
}

fn generate_archetype(a: &DeviceArchetype, duration: f64, seed: u64, config: &AssemblyConfig, out: &mut Vec<SyntheticFlow>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arrivals = Exp::new(a.flows_per_hour / 3600.0).expect("positive rate");
    let timeout_ns = (config.idle_timeout * 1e9).round() as i64;
    let base_ns = EPOCH_SECS * Timestamp::NANOS_PER_SEC;
    let device_ip = IpAddr::V4(a.device_ip());
    let gateway = MacAddr([0x02, 0x1f, 0x9a, 0xff, 0xff, 0xfe]);
    let mut ports = PortAllocator::new();

    let mut t = a.active_from;
    loop {
        t += arrivals.sample(&mut rng);
        if t >= duration {
            break;
        }
        let plan = plan_flow(&mut rng, a, t);
        let start_ns = base_ns + (t * 1e9).round() as i64;
        let device_port = ports.take(start_ns, timeout_ns);
        let remote = remote_ip(plan.remote_port, a.mac.0[5]);
        let has_ports = plan.protocol != IPPROTO_ICMP;

        let mut packets = Vec::with_capacity(plan.n_packets as usize);
        let mut ts_ns = start_ns;
        for k in 0..plan.n_packets {
            if k > 0 {
                ts_ns += (plan.iat.sample(&mut rng) * 1e9).round() as i64;
            }
            let outbound = k == 0 || rng.random::<f64>() < a.outbound_fraction;
            let bin = pick_weighted(&mut rng, &plan.size_mix);
            let frame_len = frame_len_in_bin(&mut rng, bin, plan.protocol);
            let (src_mac, dst_mac, src_ip, dst_ip, ttl) = if outbound {
                (a.mac, gateway, device_ip, remote, plan.device_ttl)
            } else {
                (gateway, a.mac, remote, device_ip, plan.server_ttl)
            };
            let (sp, dp) = if outbound { (device_port, plan.remote_port) } else { (plan.remote_port, device_port) };
            let tcp_flags = (plan.protocol == IPPROTO_TCP).then_some(if k == 0 { TCP_SYN } else { TCP_ACK | TCP_PSH });
            packets.push(PacketRecord {
                timestamp: Timestamp(ts_ns),
                src_mac,
                dst_mac,
                ethertype: ETHERTYPE_IPV4,
                src_ip: Some(src_ip),
                dst_ip: Some(dst_ip),
                ip_ttl: Some(ttl),
                protocol: Some(plan.protocol),
                src_port: has_ports.then_some(sp),
                dst_port: has_ports.then_some(dp),
                frame_len,
                tcp_flags,
            });
        }
        ports.hold(device_port, ts_ns);

        // split wherever a gap exceeds the idle timeout, as re-assembly would
        let mut segment: Vec<PacketRecord> = Vec::new();
        for pkt in packets {
            if let Some(last) = segment.last() {
                if pkt.timestamp.0 - last.timestamp.0 > timeout_ns {
                    out.push(finish_flow(a.mac, std::mem::take(&mut segment)));
                }
            }
            segment.push(pkt);
        }
        out.push(finish_flow(a.mac, segment));
    }
}

fn finish_flow(device: MacAddr, packets: Vec<PacketRecord>) -> SyntheticFlow {
    let first = &packets[0];
    let key = FlowKey::new(device, first);
    let mut acc = FlowAccumulator::new(first, first.src_mac == device);
    for p in &packets[1..] {
        acc.push(p, p.src_mac == device);
    }
    SyntheticFlow { flow: FlowRecord { key, acc }, packets }
}

/// Per-archetype sub-seed so archetypes can be generated independently.
fn sub_seed(seed: u64, index: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1)
}

/// Generates every archetype's flows over `[active_from, duration)` simulated
/// seconds. Output is ordered by `(first_ts, key)` and fully determined by
/// `seed`. Flows are split wherever a gap exceeds `config.idle_timeout`.
pub fn generate_flows(
    archetypes: &[DeviceArchetype],
    duration: f64,
    seed: u64,
    config: &AssemblyConfig,
) -> Result<Vec<SyntheticFlow>, SynthError> {
    if archetypes.is_empty() {
        return Err(SynthError::NoArchetypes);
    }
    for a in archetypes {
        a.validate()?;
    }
    let mut out = Vec::new();
    for (i, a) in archetypes.iter().enumerate() {
        generate_archetype(a, duration, sub_seed(seed, i), config, &mut out);
    }
    out.sort_by_key(|f| (f.flow.acc.first_ts, f.flow.key));
    Ok(out)
}

/// All packets of `flows` merged into capture order (stable on equal times).
pub fn packets_in_order(flows: &[SyntheticFlow]) -> Vec<PacketRecord> {
    let mut all: Vec<PacketRecord> = flows.iter().flat_map(|f| f.packets.iter().cloned()).collect();
    all.sort_by_key(|p| p.timestamp);
    all
}

/// Writes the flows' packets as one classic pcap (nanosecond timestamps).
pub fn write_pcap(flows: &[SyntheticFlow], path: impl AsRef<Path>) -> Result<(), SynthError> {
    if flows.is_empty() {
        return Err(SynthError::NoFlows);
    }
    pcap::write_records(path, &packets_in_order(flows))?;
    Ok(())
}

/// Archetype name per MAC, counts of generated flows.
pub fn flow_counts(flows: &[SyntheticFlow]) -> BTreeMap<MacAddr, usize> {
    let mut m = BTreeMap::new();
    for f in flows {
        *m.entry(f.flow.key.device_mac).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::extract_flow;

    #[test]
    fn stock_and_tier_archetypes_validate() {
        for a in stock_archetypes() {
            a.validate().unwrap();
        }
        for t in [NoveltyTier::Low, NoveltyTier::Medium, NoveltyTier::High] {
            tier_archetype(t).validate().unwrap();
        }
        diffuse_archetype(10.0).validate().unwrap();
        let macs: std::collections::BTreeSet<_> = stock_archetypes().iter().map(|a| a.mac).collect();
        assert_eq!(macs.len(), 5);
    }

    #[test]
    fn invalid_archetype_rejected() {
        let mut a = stock_archetypes()[0].clone();
        a.size_mix[0] += 0.5;
        assert!(a.validate().is_err());
        let mut b = stock_archetypes()[0].clone();
        b.flows_per_hour = 0.0;
        assert!(b.validate().is_err());
        assert!(matches!(generate_flows(&[], 10.0, 0, &AssemblyConfig::default()), Err(SynthError::NoArchetypes)));
    }

    #[test]
    fn deterministic_given_seed() {
        let a = stock_archetypes();
        let cfg = AssemblyConfig::default();
        let x = generate_flows(&a[..1], 3600.0, 5, &cfg).unwrap();
        let y = generate_flows(&a[..1], 3600.0, 5, &cfg).unwrap();
        assert_eq!(x, y);
        let z = generate_flows(&a[..1], 3600.0, 6, &cfg).unwrap();
        assert_ne!(x, z);
    }

    #[test]
    fn udp_only_archetype_gives_udp_ratio_one() {
        let sensor = stock_archetypes()[2].clone();
        let flows = generate_flows(&[sensor], 7200.0, 1, &AssemblyConfig::default()).unwrap();
        assert!(!flows.is_empty());
        assert!(flows.iter().all(|f| extract_flow(&f.flow).udp_ratio == 1.0));
    }

    #[test]
    fn active_from_delays_first_flow() {
        let mut a = tier_archetype(NoveltyTier::High);
        a.active_from = 1800.0;
        let flows = generate_flows(&[a], 3600.0, 2, &AssemblyConfig::default()).unwrap();
        let start = Timestamp::from_parts(EPOCH_SECS + 1800, 0);
        assert!(flows.iter().all(|f| f.flow.acc.first_ts >= start));
    }

    #[test]
    fn archetype_file_parses() {
        let text = r#"
            [[archetype]]
            mac = "02:00:00:00:00:09"
            name = "doorbell"
            iat_mu = -1.0
            iat_sigma = 0.5
            size_mix = [0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]
            protocol_mix = { tcp = 1.0, udp = 0.0, other = 0.0 }
            ports = [{ port = 443, weight = 0.75 }, { port = 80, weight = 0.25 }]
            ttl = 64
            flows_per_hour = 30.0
            packets_per_flow = [5, 9]
            drift = { iat_mu_per_day = 0.1, iat_sigma_per_day = 0.0 }
        "#;
        let f = ArchetypeFile::from_toml(text).unwrap();
        assert_eq!(f.archetypes.len(), 1);
        assert_eq!(f.archetypes[0].outbound_fraction, 0.5);
        assert!(ArchetypeFile::from_toml("[[archetype]]\nname = 1").is_err());
    }
}

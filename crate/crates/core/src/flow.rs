//! Per-device bidirectional flow assembly.
//!
//! Packets that touch a monitored device (by source or destination MAC) are
//! grouped under a direction-independent [`FlowKey`]. A flow closes when the
//! next packet on its key arrives more than `idle_timeout` after the flow's
//! last packet, when it reaches the per-flow packet cap, or at end of input.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pcap::{MacAddr, PacketRecord, Timestamp};

/// Lower edges of the eight packet-size bins, in bytes on the wire.
/// Bin `i` covers `[EDGES[i], EDGES[i + 1])`; the last bin is open-ended.
pub const SIZE_BIN_EDGES: [u32; 8] = [0, 64, 128, 256, 512, 1024, 1280, 1514];
pub const SIZE_BINS: usize = SIZE_BIN_EDGES.len();

pub fn size_bin(frame_len: u32) -> usize {
    SIZE_BIN_EDGES.iter().rposition(|&lo| frame_len >= lo).unwrap_or(0)
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("no monitored devices given")]
    NoDevices,
    #[error("label inventory: {0}")]
    Inventory(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: Option<IpAddr>,
    pub port: u16,
}

/// Canonical bidirectional flow identity, scoped to one monitored device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub device_mac: MacAddr,
    pub endpoint_a: Endpoint,
    pub endpoint_b: Endpoint,
    pub protocol: u8,
}

impl FlowKey {
    /// Non-TCP/UDP packets key with port 0; non-IP packets key with no address.
    pub fn new(device_mac: MacAddr, pkt: &PacketRecord) -> Self {
        let src = Endpoint { ip: pkt.src_ip, port: pkt.src_port.unwrap_or(0) };
        let dst = Endpoint { ip: pkt.dst_ip, port: pkt.dst_port.unwrap_or(0) };
        let (endpoint_a, endpoint_b) = if src <= dst { (src, dst) } else { (dst, src) };
        FlowKey { device_mac, endpoint_a, endpoint_b, protocol: pkt.protocol.unwrap_or(0) }
    }
}

/// Running per-flow state holding the inputs of every flow feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowAccumulator {
    pub first_ts: Timestamp,
    pub last_ts: Timestamp,
    /// Every packet time, kept sorted.
    pub packet_timestamps: Vec<Timestamp>,
    pub size_bins: [u64; SIZE_BINS],
    pub ttl_counts: BTreeMap<u8, u64>,
    pub tcp_count: u64,
    pub udp_count: u64,
    pub total_packets: u64,
    pub total_bytes: u64,
    /// Destination ports of device-to-remote packets that carry ports.
    pub dst_port_counts: BTreeMap<u16, u64>,
    /// All device-to-remote packets, with or without ports.
    pub outbound_packets: u64,
}

impl FlowAccumulator {
    pub fn new(pkt: &PacketRecord, outbound: bool) -> Self {
        let mut acc = FlowAccumulator {
            first_ts: pkt.timestamp,
            last_ts: pkt.timestamp,
            packet_timestamps: Vec::new(),
            size_bins: [0; SIZE_BINS],
            ttl_counts: BTreeMap::new(),
            tcp_count: 0,
            udp_count: 0,
            total_packets: 0,
            total_bytes: 0,
            dst_port_counts: BTreeMap::new(),
            outbound_packets: 0,
        };
        acc.push(pkt, outbound);
        acc
    }

    pub fn push(&mut self, pkt: &PacketRecord, outbound: bool) {
        let ts = pkt.timestamp;
        match self.packet_timestamps.last() {
            Some(&last) if ts < last => {
                let at = self.packet_timestamps.partition_point(|&t| t <= ts);
                self.packet_timestamps.insert(at, ts);
            }
            _ => self.packet_timestamps.push(ts),
        }
        self.first_ts = self.first_ts.min(ts);
        self.last_ts = self.last_ts.max(ts);
        self.size_bins[size_bin(pkt.frame_len)] += 1;
        if let Some(ttl) = pkt.ip_ttl {
            *self.ttl_counts.entry(ttl).or_insert(0) += 1;
        }
        if pkt.is_tcp() {
            self.tcp_count += 1;
        } else if pkt.is_udp() {
            self.udp_count += 1;
        }
        self.total_packets += 1;
        self.total_bytes += u64::from(pkt.frame_len);
        if outbound {
            self.outbound_packets += 1;
            if let Some(port) = pkt.dst_port {
                *self.dst_port_counts.entry(port).or_insert(0) += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub acc: FlowAccumulator,
}

impl FlowRecord {
    pub fn device_mac(&self) -> MacAddr {
        self.key.device_mac
    }

    pub fn first_ts(&self) -> Timestamp {
        self.acc.first_ts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblyConfig {
    /// Seconds of silence after which a flow is closed.
    pub idle_timeout: f64,
    /// A flow reaching this many packets is force-closed.
    pub max_packets_per_flow: u64,
    /// Packets older than the newest seen by more than this many seconds are dropped.
    pub reorder_tolerance: f64,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig { idle_timeout: 60.0, max_packets_per_flow: 100_000, reorder_tolerance: 1.0 }
    }
}

/// Counters over packet/device memberships: a packet between two monitored
/// devices counts once for each.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyStats {
    pub monitored_packets: u64,
    pub dropped_out_of_order: u64,
    pub flows_emitted: u64,
    pub force_closed: u64,
}

/// Incremental flow table. Feed packets in capture order with [`push`], then
/// call [`finish`].
///
/// [`push`]: FlowAssembler::push
/// [`finish`]: FlowAssembler::finish
pub struct FlowAssembler {
    devices: BTreeSet<MacAddr>,
    config: AssemblyConfig,
    timeout_ns: i64,
    tolerance_ns: i64,
    open: HashMap<FlowKey, FlowAccumulator>,
    latest: Option<Timestamp>,
    last_sweep: Option<Timestamp>,
    closed: Vec<FlowRecord>,
    stats: AssemblyStats,
}

impl FlowAssembler {
    pub fn new(devices: impl IntoIterator<Item = MacAddr>, config: AssemblyConfig) -> Result<Self, FlowError> {
        let devices: BTreeSet<MacAddr> = devices.into_iter().collect();
        if devices.is_empty() {
            return Err(FlowError::NoDevices);
        }
        Ok(FlowAssembler {
            devices,
            timeout_ns: (config.idle_timeout * 1e9).round() as i64,
            tolerance_ns: (config.reorder_tolerance * 1e9).round() as i64,
            config,
            open: HashMap::new(),
            latest: None,
            last_sweep: None,
            closed: Vec::new(),
            stats: AssemblyStats::default(),
        })
    }

    pub fn push(&mut self, pkt: &PacketRecord) {
        let mut members = [None, None];
        if self.devices.contains(&pkt.src_mac) {
            members[0] = Some(pkt.src_mac);
        }
        if pkt.dst_mac != pkt.src_mac && self.devices.contains(&pkt.dst_mac) {
            members[1] = Some(pkt.dst_mac);
        }
        let n_members = members.iter().flatten().count() as u64;
        if n_members == 0 {
            return;
        }
        self.stats.monitored_packets += n_members;

        let ts = pkt.timestamp;
        if let Some(latest) = self.latest {
            if ts.0 < latest.0 - self.tolerance_ns {
                self.stats.dropped_out_of_order += n_members;
                return;
            }
        }
        self.latest = Some(self.latest.map_or(ts, |l| l.max(ts)));

        for device in members.into_iter().flatten() {
            let outbound = pkt.src_mac == device;
            let key = FlowKey::new(device, pkt);
            let expired = self.open.get(&key).is_some_and(|acc| ts.0 - acc.last_ts.0 > self.timeout_ns);
            if expired {
                let acc = self.open.remove(&key).expect("present");
                self.emit(key, acc);
            }
            let acc = match self.open.get_mut(&key) {
                Some(acc) => {
                    acc.push(pkt, outbound);
                    acc
                }
                None => self.open.entry(key).or_insert_with(|| FlowAccumulator::new(pkt, outbound)),
            };
            if acc.total_packets >= self.config.max_packets_per_flow {
                let acc = self.open.remove(&key).expect("present");
                self.stats.force_closed += 1;
                self.emit(key, acc);
            }
        }
        self.maybe_sweep();
    }

    fn maybe_sweep(&mut self) {
        let Some(now) = self.latest else { return };
        let due = self.last_sweep.is_none_or(|s| now.0 - s.0 > self.timeout_ns);
        if !due {
            return;
        }
        self.last_sweep = Some(now);
        let mut stale: Vec<FlowKey> = self
            .open
            .iter()
            .filter(|(_, acc)| now.0 - acc.last_ts.0 > self.timeout_ns + self.tolerance_ns)
            .map(|(k, _)| *k)
            .collect();
        stale.sort();
        for key in stale {
            let acc = self.open.remove(&key).expect("present");
            self.emit(key, acc);
        }
    }

    fn emit(&mut self, key: FlowKey, acc: FlowAccumulator) {
        self.stats.flows_emitted += 1;
        self.closed.push(FlowRecord { key, acc });
    }

    /// Flows closed so far, in closing order.
    pub fn drain_closed(&mut self) -> Vec<FlowRecord> {
        std::mem::take(&mut self.closed)
    }

    pub fn stats(&self) -> AssemblyStats {
        self.stats
    }

    /// Closes every open flow and returns all not-yet-drained flows ordered
    /// by `(first_ts, key)`.
    pub fn finish(mut self) -> (Vec<FlowRecord>, AssemblyStats) {
        let mut rest: Vec<(FlowKey, FlowAccumulator)> = self.open.drain().collect();
        rest.sort_by_key(|r| r.0);
        for (key, acc) in rest {
            self.emit(key, acc);
        }
        let mut flows = self.closed;
        flows.sort_by_key(|f| (f.acc.first_ts, f.key));
        (flows, self.stats)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Assembly {
    pub flows: Vec<FlowRecord>,
    pub stats: AssemblyStats,
}

/// Assembles a whole packet stream; flows come back ordered by `(first_ts, key)`.
pub fn assemble<'a>(
    packets: impl IntoIterator<Item = &'a PacketRecord>,
    devices: impl IntoIterator<Item = MacAddr>,
    config: AssemblyConfig,
) -> Result<Assembly, FlowError> {
    let mut asm = FlowAssembler::new(devices, config)?;
    for pkt in packets {
        asm.push(pkt);
    }
    let (flows, stats) = asm.finish();
    Ok(Assembly { flows, stats })
}

/// Partitions flows by `first_ts < cutoff`, preserving order within each side.
pub fn split_train_stream(flows: Vec<FlowRecord>, cutoff: Timestamp) -> (Vec<FlowRecord>, Vec<FlowRecord>) {
    flows.into_iter().partition(|f| f.acc.first_ts < cutoff)
}

#[derive(Debug, Serialize, Deserialize)]
struct InventoryRow {
    mac: String,
    device_name: String,
}

/// MAC address to device name map, read from a `mac,device_name` CSV.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceInventory {
    pub devices: BTreeMap<MacAddr, String>,
}

impl DeviceInventory {
    pub fn from_reader(r: impl Read) -> Result<Self, FlowError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["mac", "device_name"] {
            return Err(FlowError::Inventory(format!("expected header `mac,device_name`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let mut devices = BTreeMap::new();
        for (line, row) in rdr.deserialize::<InventoryRow>().enumerate() {
            let row = row?;
            let mac: MacAddr = row.mac.parse().map_err(|e| FlowError::Inventory(format!("row {}: {e}", line + 2)))?;
            if devices.insert(mac, row.device_name).is_some() {
                return Err(FlowError::Inventory(format!("row {}: duplicate MAC {mac}", line + 2)));
            }
        }
        Ok(DeviceInventory { devices })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, FlowError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), FlowError> {
        let mut wtr = csv::Writer::from_writer(w);
        for (mac, name) in &self.devices {
            wtr.serialize(InventoryRow { mac: mac.to_string(), device_name: name.clone() })?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn macs(&self) -> impl Iterator<Item = MacAddr> + '_ {
        self.devices.keys().copied()
    }

    pub fn name(&self, mac: &MacAddr) -> Option<&str> {
        self.devices.get(mac).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcap::{ETHERTYPE_ARP, ETHERTYPE_IPV4, IPPROTO_TCP, IPPROTO_UDP};

    const DEV: MacAddr = MacAddr([2, 0, 0, 0, 0, 1]);
    const DEV2: MacAddr = MacAddr([2, 0, 0, 0, 0, 2]);
    const GW: MacAddr = MacAddr([2, 0, 0, 0, 0, 0xfe]);

    fn udp(src_mac: MacAddr, dst_mac: MacAddr, t: f64, sport: u16, dport: u16, src: &str, dst: &str) -> PacketRecord {
        PacketRecord {
            timestamp: Timestamp::from_secs_f64(t),
            src_mac,
            dst_mac,
            ethertype: ETHERTYPE_IPV4,
            src_ip: Some(src.parse().unwrap()),
            dst_ip: Some(dst.parse().unwrap()),
            ip_ttl: Some(64),
            protocol: Some(IPPROTO_UDP),
            src_port: Some(sport),
            dst_port: Some(dport),
            frame_len: 100,
            tcp_flags: None,
        }
    }

    fn out(t: f64) -> PacketRecord {
        udp(DEV, GW, t, 50000, 53, "10.0.0.2", "8.8.8.8")
    }

    #[test]
    fn size_bins_follow_edges() {
        assert_eq!(size_bin(0), 0);
        assert_eq!(size_bin(63), 0);
        assert_eq!(size_bin(64), 1);
        assert_eq!(size_bin(1279), 5);
        assert_eq!(size_bin(1513), 6);
        assert_eq!(size_bin(1514), 7);
        assert_eq!(size_bin(9000), 7);
    }

    #[test]
    fn singleton_udp_flow() {
        let asm = assemble(&[out(0.0)], [DEV], AssemblyConfig::default()).unwrap();
        assert_eq!(asm.flows.len(), 1);
        assert_eq!(asm.flows[0].acc.total_packets, 1);
        assert_eq!(asm.flows[0].acc.udp_count, 1);
    }

    #[test]
    fn idle_gap_splits_flow() {
        let pkts = [out(0.0), out(10.0), out(200.0)];
        let asm = assemble(&pkts, [DEV], AssemblyConfig::default()).unwrap();
        let counts: Vec<u64> = asm.flows.iter().map(|f| f.acc.total_packets).collect();
        assert_eq!(counts, vec![2, 1]);
        assert_eq!(asm.flows[1].acc.first_ts, Timestamp::from_secs_f64(200.0));
    }

    #[test]
    fn request_and_reply_share_a_flow() {
        let req = udp(DEV, GW, 0.0, 50000, 443, "10.0.0.2", "1.2.3.4");
        let rep = udp(GW, DEV, 0.05, 443, 50000, "1.2.3.4", "10.0.0.2");
        assert_eq!(FlowKey::new(DEV, &req), FlowKey::new(DEV, &rep));
        let asm = assemble(&[req, rep], [DEV], AssemblyConfig::default()).unwrap();
        assert_eq!(asm.flows.len(), 1);
        let acc = &asm.flows[0].acc;
        assert_eq!(acc.total_packets, 2);
        assert_eq!(acc.outbound_packets, 1);
        assert_eq!(acc.dst_port_counts.get(&443), Some(&1));
        assert_eq!(acc.dst_port_counts.len(), 1);
    }

    #[test]
    fn device_to_device_packet_forms_two_flows() {
        let p = udp(DEV, DEV2, 0.0, 5000, 6000, "10.0.0.2", "10.0.0.3");
        let asm = assemble(&[p], [DEV, DEV2], AssemblyConfig::default()).unwrap();
        assert_eq!(asm.flows.len(), 2);
        assert_eq!(asm.stats.monitored_packets, 2);
        let outbound: Vec<u64> = asm.flows.iter().map(|f| f.acc.outbound_packets).collect();
        assert_eq!(outbound.iter().sum::<u64>(), 1);
    }

    #[test]
    fn unmonitored_traffic_is_ignored() {
        let p = udp(GW, MacAddr([9; 6]), 0.0, 1, 2, "1.1.1.1", "2.2.2.2");
        let asm = assemble(&[p], [DEV], AssemblyConfig::default()).unwrap();
        assert!(asm.flows.is_empty());
        assert_eq!(asm.stats.monitored_packets, 0);
    }

    #[test]
    fn late_packets_within_tolerance_are_kept_sorted() {
        let pkts = [out(5.0), out(4.5), out(2.0)];
        let asm = assemble(&pkts, [DEV], AssemblyConfig::default()).unwrap();
        assert_eq!(asm.stats.dropped_out_of_order, 1);
        let acc = &asm.flows[0].acc;
        assert_eq!(acc.total_packets, 2);
        assert_eq!(acc.first_ts, Timestamp::from_secs_f64(4.5));
        assert!(acc.packet_timestamps.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn packet_cap_force_closes() {
        let cfg = AssemblyConfig { max_packets_per_flow: 2, ..Default::default() };
        let pkts: Vec<_> = (0..5).map(|i| out(f64::from(i))).collect();
        let asm = assemble(&pkts, [DEV], cfg).unwrap();
        let counts: Vec<u64> = asm.flows.iter().map(|f| f.acc.total_packets).collect();
        assert_eq!(counts, vec![2, 2, 1]);
        assert_eq!(asm.stats.force_closed, 2);
    }

    #[test]
    fn non_ip_traffic_keys_with_port_zero() {
        let arp = PacketRecord {
            timestamp: Timestamp(0),
            src_mac: DEV,
            dst_mac: MacAddr([0xff; 6]),
            ethertype: ETHERTYPE_ARP,
            src_ip: None,
            dst_ip: None,
            ip_ttl: None,
            protocol: None,
            src_port: None,
            dst_port: None,
            frame_len: 60,
            tcp_flags: None,
        };
        let key = FlowKey::new(DEV, &arp);
        assert_eq!(key.protocol, 0);
        assert_eq!(key.endpoint_a, Endpoint { ip: None, port: 0 });
        let asm = assemble(&[arp], [DEV], AssemblyConfig::default()).unwrap();
        assert_eq!(asm.flows[0].acc.tcp_count + asm.flows[0].acc.udp_count, 0);
        assert!(asm.flows[0].acc.ttl_counts.is_empty());
    }

    #[test]
    fn no_devices_is_an_error() {
        assert!(matches!(
            FlowAssembler::new(Vec::<MacAddr>::new(), AssemblyConfig::default()),
            Err(FlowError::NoDevices)
        ));
    }

    #[test]
    fn split_partitions_by_first_ts() {
        let pkts: Vec<_> = [0.0, 100.0, 300.0, 500.0].iter().map(|&t| out(t)).collect();
        let flows = assemble(&pkts, [DEV], AssemblyConfig::default()).unwrap().flows;
        let cutoff = Timestamp::from_secs_f64(250.0);
        let (base, stream) = split_train_stream(flows.clone(), cutoff);
        let expect_base: Vec<_> = flows.iter().filter(|f| f.acc.first_ts < cutoff).cloned().collect();
        let expect_stream: Vec<_> = flows.iter().filter(|f| f.acc.first_ts >= cutoff).cloned().collect();
        assert_eq!(base, expect_base);
        assert_eq!(stream, expect_stream);
        let (b, s) = split_train_stream(flows.clone(), Timestamp(-1));
        assert!(b.is_empty() && s.len() == flows.len());
        let (b, s) = split_train_stream(flows.clone(), Timestamp::from_secs_f64(1e6));
        assert!(s.is_empty() && b.len() == flows.len());
    }

    #[test]
    fn tcp_and_udp_counted_separately() {
        let mut p = out(0.0);
        p.protocol = Some(IPPROTO_TCP);
        let asm = assemble(&[p, out(1.0)], [DEV], AssemblyConfig::default()).unwrap();
        assert_eq!(asm.flows.len(), 2);
        assert!(asm.flows.iter().all(|f| f.acc.tcp_count + f.acc.udp_count <= f.acc.total_packets));
    }

    #[test]
    fn inventory_round_trip_and_validation() {
        let csv = "mac,device_name\n02:00:00:00:00:01,Camera\n02:00:00:00:00:02, Plug\n";
        let inv = DeviceInventory::from_reader(csv.as_bytes()).unwrap();
        assert_eq!(inv.name(&DEV), Some("Camera"));
        assert_eq!(inv.name(&DEV2), Some("Plug"));
        let mut buf = Vec::new();
        inv.write_csv(&mut buf).unwrap();
        assert_eq!(DeviceInventory::from_reader(&buf[..]).unwrap(), inv);

        assert!(DeviceInventory::from_reader("address,name\n".as_bytes()).is_err());
        assert!(DeviceInventory::from_reader("mac,device_name\nzz,Camera\n".as_bytes()).is_err());
        let dup = "mac,device_name\n02:00:00:00:00:01,A\n02:00:00:00:00:01,B\n";
        assert!(DeviceInventory::from_reader(dup.as_bytes()).is_err());
    }
}

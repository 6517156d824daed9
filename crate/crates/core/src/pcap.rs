//! Classic libpcap capture files: reading, writing and Ethernet/IP/TCP/UDP
//! header decoding into [`PacketRecord`]s.
//!
//! Only the 24-byte classic format is handled (both byte orders, microsecond
//! and nanosecond timestamp variants). Decoding is deliberately lenient: once
//! a frame holds an Ethernet header, anything deeper that does not parse is
//! left absent on the record instead of failing.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const MAGIC_MICROS: u32 = 0xA1B2_C3D4;
pub const MAGIC_NANOS: u32 = 0xA1B2_3C4D;
const MAGIC_PCAPNG: u32 = 0x0A0D_0D0A;
const LINKTYPE_ETHERNET: u32 = 1;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
/// Upper bound on a single captured frame; anything larger is a corrupt record.
const MAX_CAPTURED_LEN: u32 = 1 << 18;

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_ARP: u16 = 0x0806;
pub const ETHERTYPE_IPV6: u16 = 0x86DD;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88A8;

pub const IPPROTO_ICMP: u8 = 1;
pub const IPPROTO_TCP: u8 = 6;
pub const IPPROTO_UDP: u8 = 17;

pub const TCP_FIN: u8 = 0x01;
pub const TCP_SYN: u8 = 0x02;
pub const TCP_RST: u8 = 0x04;
pub const TCP_PSH: u8 = 0x08;
pub const TCP_ACK: u8 = 0x10;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("unsupported capture format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated {0}")]
    TruncatedHeader(&'static str),
    #[error("frame too short: {0} bytes, need at least 14")]
    FrameTooShort(usize),
    #[error("timestamp {0} does not fit a classic pcap record")]
    TimestampOutOfRange(Timestamp),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
}

/// Capture timestamp in integer nanoseconds since the Unix epoch.
///
/// Kept integral so that differences between packets are exact; use
/// [`Timestamp::as_secs_f64`] for the fractional-second view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const NANOS_PER_SEC: i64 = 1_000_000_000;

    pub fn from_parts(secs: i64, nanos: u32) -> Self {
        Timestamp(secs * Self::NANOS_PER_SEC + i64::from(nanos))
    }

    /// Rounds to the nearest nanosecond.
    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e9).round() as i64)
    }

    pub fn as_nanos(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        let secs = self.0.div_euclid(Self::NANOS_PER_SEC);
        let frac = self.0.rem_euclid(Self::NANOS_PER_SEC);
        secs as f64 + frac as f64 * 1e-9
    }

    /// `self - earlier` in seconds, computed from the exact nanosecond gap.
    pub fn seconds_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 * 1e-9
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let secs = self.0.div_euclid(Self::NANOS_PER_SEC);
        let frac = self.0.rem_euclid(Self::NANOS_PER_SEC);
        write!(f, "{secs}.{frac:09}")
    }
}

/// 48-bit link-layer address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid MAC address {0:?}")]
pub struct ParseMacError(pub String);

impl FromStr for MacAddr {
    type Err = ParseMacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split([':', '-']).collect();
        if parts.len() != 6 {
            return Err(ParseMacError(s.to_string()));
        }
        let mut out = [0u8; 6];
        for (slot, part) in out.iter_mut().zip(&parts) {
            if part.len() != 2 {
                return Err(ParseMacError(s.to_string()));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| ParseMacError(s.to_string()))?;
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One decoded frame: link, network and transport header fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub timestamp: Timestamp,
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    /// Innermost ethertype after any VLAN tags.
    pub ethertype: u16,
    pub src_ip: Option<IpAddr>,
    pub dst_ip: Option<IpAddr>,
    /// IPv4 TTL or IPv6 hop limit.
    pub ip_ttl: Option<u8>,
    pub protocol: Option<u8>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    /// Bytes on the wire (the record's original length, not the captured length).
    pub frame_len: u32,
    pub tcp_flags: Option<u8>,
}

impl PacketRecord {
    pub fn is_tcp(&self) -> bool {
        self.protocol == Some(IPPROTO_TCP)
    }

    pub fn is_udp(&self) -> bool {
        self.protocol == Some(IPPROTO_UDP)
    }
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

/// Decodes one Ethernet frame.
///
/// `frame_len` on the result is the length of `raw`; readers overwrite it with
/// the on-wire length when the capture was snaplen-truncated.
pub fn decode_frame(raw: &[u8], ts: Timestamp) -> Result<PacketRecord, PcapError> {
    if raw.len() < 14 {
        return Err(PcapError::FrameTooShort(raw.len()));
    }
    let mut dst = [0u8; 6];
    let mut src = [0u8; 6];
    dst.copy_from_slice(&raw[0..6]);
    src.copy_from_slice(&raw[6..12]);
    let mut ethertype = be16(raw, 12);
    let mut offset = 14;
    while (ethertype == ETHERTYPE_VLAN || ethertype == ETHERTYPE_QINQ) && raw.len() >= offset + 4 {
        ethertype = be16(raw, offset + 2);
        offset += 4;
    }

    let mut rec = PacketRecord {
        timestamp: ts,
        src_mac: MacAddr(src),
        dst_mac: MacAddr(dst),
        ethertype,
        src_ip: None,
        dst_ip: None,
        ip_ttl: None,
        protocol: None,
        src_port: None,
        dst_port: None,
        frame_len: raw.len() as u32,
        tcp_flags: None,
    };

    let payload = &raw[offset..];
    let transport = match ethertype {
        ETHERTYPE_IPV4 => decode_ipv4(payload, &mut rec),
        ETHERTYPE_IPV6 => decode_ipv6(payload, &mut rec),
        _ => None,
    };
    if let (Some(proto), Some(seg)) = (rec.protocol, transport) {
        decode_transport(proto, seg, &mut rec);
    }
    Ok(rec)
}

/// Fills the network fields and returns the transport segment when ports may
/// follow (i.e. not a non-initial fragment).
fn decode_ipv4<'a>(b: &'a [u8], rec: &mut PacketRecord) -> Option<&'a [u8]> {
    if b.len() < 20 || b[0] >> 4 != 4 {
        return None;
    }
    let ihl = usize::from(b[0] & 0x0f) * 4;
    if ihl < 20 || b.len() < ihl {
        return None;
    }
    rec.ip_ttl = Some(b[8]);
    rec.protocol = Some(b[9]);
    rec.src_ip = Some(IpAddr::V4(Ipv4Addr::new(b[12], b[13], b[14], b[15])));
    rec.dst_ip = Some(IpAddr::V4(Ipv4Addr::new(b[16], b[17], b[18], b[19])));
    let frag_offset = be16(b, 6) & 0x1fff;
    if frag_offset != 0 {
        return None;
    }
    let total = usize::from(be16(b, 2));
    let end = if total >= ihl { total.min(b.len()) } else { b.len() };
    Some(&b[ihl..end])
}

fn decode_ipv6<'a>(b: &'a [u8], rec: &mut PacketRecord) -> Option<&'a [u8]> {
    if b.len() < 40 || b[0] >> 4 != 6 {
        return None;
    }
    let mut src = [0u8; 16];
    let mut dst = [0u8; 16];
    src.copy_from_slice(&b[8..24]);
    dst.copy_from_slice(&b[24..40]);
    rec.ip_ttl = Some(b[7]);
    rec.protocol = Some(b[6]);
    rec.src_ip = Some(IpAddr::V6(Ipv6Addr::from(src)));
    rec.dst_ip = Some(IpAddr::V6(Ipv6Addr::from(dst)));
    Some(&b[40..])
}

fn decode_transport(proto: u8, seg: &[u8], rec: &mut PacketRecord) {
    match proto {
        IPPROTO_TCP => {
            if seg.len() < 20 {
                return;
            }
            let data_offset = usize::from(seg[12] >> 4) * 4;
            if data_offset < 20 {
                return;
            }
            rec.src_port = Some(be16(seg, 0));
            rec.dst_port = Some(be16(seg, 2));
            rec.tcp_flags = Some(seg[13]);
        }
        IPPROTO_UDP => {
            if seg.len() < 8 {
                return;
            }
            rec.src_port = Some(be16(seg, 0));
            rec.dst_port = Some(be16(seg, 2));
        }
        _ => {}
    }
}

/// Builds header-only frame bytes that [`decode_frame`] maps back to `rec`.
///
/// The result carries Ethernet, IP and transport headers (ICMP gets its 8-byte
/// header, ARP a 28-byte body) and no payload; writers store it as a
/// snaplen-truncated capture whose on-wire length is `rec.frame_len`.
/// Records with an IP address family mismatch between source and destination
/// are encoded as non-IP frames.
pub fn encode_frame(rec: &PacketRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(&rec.dst_mac.0);
    out.extend_from_slice(&rec.src_mac.0);
    out.extend_from_slice(&rec.ethertype.to_be_bytes());

    let transport = transport_header(rec);
    let ttl = rec.ip_ttl.unwrap_or(64);
    let proto = rec.protocol.unwrap_or(0);
    match (rec.ethertype, rec.src_ip, rec.dst_ip) {
        (ETHERTYPE_IPV4, Some(IpAddr::V4(s)), Some(IpAddr::V4(d))) => {
            let wire_payload = (rec.frame_len as usize).saturating_sub(14);
            let total = wire_payload.clamp(20 + transport.len(), u16::MAX as usize) as u16;
            out.extend_from_slice(&[0x45, 0]);
            out.extend_from_slice(&total.to_be_bytes());
            out.extend_from_slice(&[0, 0, 0x40, 0, ttl, proto, 0, 0]);
            out.extend_from_slice(&s.octets());
            out.extend_from_slice(&d.octets());
            out.extend_from_slice(&transport);
        }
        (ETHERTYPE_IPV6, Some(IpAddr::V6(s)), Some(IpAddr::V6(d))) => {
            let wire_payload = (rec.frame_len as usize).saturating_sub(54);
            let plen = wire_payload.clamp(transport.len(), u16::MAX as usize) as u16;
            out.extend_from_slice(&[0x60, 0, 0, 0]);
            out.extend_from_slice(&plen.to_be_bytes());
            out.extend_from_slice(&[proto, ttl]);
            out.extend_from_slice(&s.octets());
            out.extend_from_slice(&d.octets());
            out.extend_from_slice(&transport);
        }
        (ETHERTYPE_ARP, _, _) => out.extend_from_slice(&[0u8; 28]),
        _ => {}
    }
    out
}

fn transport_header(rec: &PacketRecord) -> Vec<u8> {
    let (sp, dp) = match (rec.src_port, rec.dst_port) {
        (Some(s), Some(d)) => (s, d),
        _ => {
            return if rec.protocol == Some(IPPROTO_ICMP) { vec![8, 0, 0, 0, 0, 0, 0, 0] } else { Vec::new() };
        }
    };
    let mut h = Vec::with_capacity(20);
    h.extend_from_slice(&sp.to_be_bytes());
    h.extend_from_slice(&dp.to_be_bytes());
    match rec.protocol {
        Some(IPPROTO_TCP) => {
            h.extend_from_slice(&[0u8; 8]);
            h.push(0x50);
            h.push(rec.tcp_flags.unwrap_or(0));
            h.extend_from_slice(&[0xff, 0xff, 0, 0, 0, 0]);
        }
        Some(IPPROTO_UDP) => {
            let len = (rec.frame_len as usize).saturating_sub(34).clamp(8, u16::MAX as usize) as u16;
            h.extend_from_slice(&len.to_be_bytes());
            h.extend_from_slice(&[0, 0]);
        }
        _ => h.clear(),
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ByteOrder {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalHeader {
    pub nanosecond: bool,
    pub version: (u16, u16),
    pub snaplen: u32,
    pub linktype: u32,
    order: ByteOrder,
}

impl GlobalHeader {
    pub fn is_big_endian(&self) -> bool {
        self.order == ByteOrder::Big
    }

    fn u32_at(&self, b: &[u8], at: usize) -> u32 {
        let raw = [b[at], b[at + 1], b[at + 2], b[at + 3]];
        match self.order {
            ByteOrder::Little => u32::from_le_bytes(raw),
            ByteOrder::Big => u32::from_be_bytes(raw),
        }
    }
}

/// Reads until `buf` is full or EOF; returns the number of bytes read.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Streaming iterator over the packets of a classic pcap file.
///
/// Yields `Err(FrameTooShort)` for captured frames under 14 bytes and keeps
/// going; a truncated record header or body ends iteration after yielding
/// `Err(TruncatedHeader)`.
pub struct Capture<R> {
    reader: R,
    header: GlobalHeader,
    done: bool,
    buf: Vec<u8>,
}

impl<R: Read> Capture<R> {
    pub fn new(mut reader: R) -> Result<Self, PcapError> {
        let mut gh = [0u8; GLOBAL_HEADER_LEN];
        let n = read_full(&mut reader, &mut gh)?;
        if n >= 4 && u32::from_le_bytes([gh[0], gh[1], gh[2], gh[3]]) == MAGIC_PCAPNG {
            return Err(PcapError::UnsupportedFormat("pcapng".into()));
        }
        if n < GLOBAL_HEADER_LEN {
            return Err(PcapError::TruncatedHeader("global header"));
        }
        let magic = u32::from_le_bytes([gh[0], gh[1], gh[2], gh[3]]);
        let (order, nanosecond) = match magic {
            MAGIC_MICROS => (ByteOrder::Little, false),
            MAGIC_NANOS => (ByteOrder::Little, true),
            m if m.swap_bytes() == MAGIC_MICROS => (ByteOrder::Big, false),
            m if m.swap_bytes() == MAGIC_NANOS => (ByteOrder::Big, true),
            m => return Err(PcapError::UnsupportedFormat(format!("unknown magic {m:#010x}"))),
        };
        let mut header = GlobalHeader { nanosecond, version: (0, 0), snaplen: 0, linktype: 0, order };
        let v16 = |at: usize| match order {
            ByteOrder::Little => u16::from_le_bytes([gh[at], gh[at + 1]]),
            ByteOrder::Big => u16::from_be_bytes([gh[at], gh[at + 1]]),
        };
        header.version = (v16(4), v16(6));
        header.snaplen = header.u32_at(&gh, 16);
        header.linktype = header.u32_at(&gh, 20);
        if header.linktype != LINKTYPE_ETHERNET {
            return Err(PcapError::UnsupportedFormat(format!("link type {}", header.linktype)));
        }
        Ok(Capture { reader, header, done: false, buf: Vec::new() })
    }

    pub fn header(&self) -> &GlobalHeader {
        &self.header
    }

    fn next_record(&mut self) -> Result<Option<PacketRecord>, PcapError> {
        let mut rh = [0u8; RECORD_HEADER_LEN];
        let n = read_full(&mut self.reader, &mut rh)?;
        if n == 0 {
            return Ok(None);
        }
        if n < RECORD_HEADER_LEN {
            return Err(PcapError::TruncatedHeader("packet record header"));
        }
        let h = self.header;
        let secs = i64::from(h.u32_at(&rh, 0));
        let frac = h.u32_at(&rh, 4);
        let incl = h.u32_at(&rh, 8);
        let orig = h.u32_at(&rh, 12);
        if incl > MAX_CAPTURED_LEN {
            return Err(PcapError::TruncatedHeader("packet record (captured length out of range)"));
        }
        let nanos = if h.nanosecond { frac } else { frac.saturating_mul(1000) };
        let ts = Timestamp(secs * Timestamp::NANOS_PER_SEC + i64::from(nanos));

        self.buf.resize(incl as usize, 0);
        let got = read_full(&mut self.reader, &mut self.buf)?;
        if got < incl as usize {
            return Err(PcapError::TruncatedHeader("packet data"));
        }
        let mut rec = decode_frame(&self.buf, ts)?;
        rec.frame_len = orig.max(incl);
        Ok(Some(rec))
    }
}

impl<R: Read> Iterator for Capture<R> {
    type Item = Result<PacketRecord, PcapError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(rec)) => Some(Ok(rec)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e @ PcapError::FrameTooShort(_)) => Some(Err(e)),
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn open_capture(path: impl AsRef<Path>) -> Result<Capture<BufReader<File>>, PcapError> {
    let file = File::open(path)?;
    Capture::new(BufReader::with_capacity(1 << 16, file))
}

/// Writes classic pcap, little-endian, with either timestamp resolution.
pub struct PcapWriter<W: Write> {
    out: W,
    nanosecond: bool,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut out: W, nanosecond: bool, snaplen: u32) -> Result<Self, PcapError> {
        let magic = if nanosecond { MAGIC_NANOS } else { MAGIC_MICROS };
        out.write_all(&magic.to_le_bytes())?;
        out.write_all(&2u16.to_le_bytes())?;
        out.write_all(&4u16.to_le_bytes())?;
        out.write_all(&0i32.to_le_bytes())?;
        out.write_all(&0u32.to_le_bytes())?;
        out.write_all(&snaplen.to_le_bytes())?;
        out.write_all(&LINKTYPE_ETHERNET.to_le_bytes())?;
        Ok(PcapWriter { out, nanosecond })
    }

    pub fn write_packet(&mut self, ts: Timestamp, data: &[u8], orig_len: u32) -> Result<(), PcapError> {
        let secs = ts.0.div_euclid(Timestamp::NANOS_PER_SEC);
        let nanos = ts.0.rem_euclid(Timestamp::NANOS_PER_SEC) as u32;
        let secs = u32::try_from(secs).map_err(|_| PcapError::TimestampOutOfRange(ts))?;
        let frac = if self.nanosecond {
            nanos
        } else {
            if !nanos.is_multiple_of(1000) {
                return Err(PcapError::TimestampOutOfRange(ts));
            }
            nanos / 1000
        };
        self.out.write_all(&secs.to_le_bytes())?;
        self.out.write_all(&frac.to_le_bytes())?;
        self.out.write_all(&(data.len() as u32).to_le_bytes())?;
        self.out.write_all(&orig_len.max(data.len() as u32).to_le_bytes())?;
        self.out.write_all(data)?;
        Ok(())
    }

    /// Encodes and writes a record; see [`encode_frame`].
    pub fn write_record(&mut self, rec: &PacketRecord) -> Result<(), PcapError> {
        let frame = encode_frame(rec);
        self.write_packet(rec.timestamp, &frame, rec.frame_len)
    }

    pub fn into_inner(mut self) -> Result<W, PcapError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Creates `path` and writes every record to it with nanosecond timestamps.
pub fn write_records<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a PacketRecord>,
) -> Result<(), PcapError> {
    let file = File::create(path)?;
    let mut w = PcapWriter::new(BufWriter::new(file), true, 65535)?;
    for rec in records {
        w.write_record(rec)?;
    }
    w.into_inner()?;
    Ok(())
}

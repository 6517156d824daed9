#!/usr/bin/env python3
"""Builds golden.pcap, labels.csv and expected_features.csv.

The expected feature table is computed here from the raw packet list, without
reading the capture back, so it serves as an independent reference for the
Rust extractor. Run from this directory: `python3 make_golden.py`.
"""
import struct

CAM = "02:00:00:00:00:01"
PLUG = "02:00:00:00:00:02"
ROUTER = "02:00:00:00:00:fe"
OTHER = "02:00:00:00:00:99"
DEVICES = {CAM: "camera", PLUG: "plug"}

BASE = 1_700_000_000
TCP, UDP, ICMP = 6, 17, 1
BIN_EDGES = [0, 64, 128, 256, 512, 1024, 1280, 1514]
IDLE_NS = 60 * 10**9


def mac_bytes(m):
    return bytes(int(x, 16) for x in m.split(":"))


def ip_bytes(a):
    return bytes(int(x) for x in a.split("."))


# (secs offset, usec, src_mac, dst_mac, kind, fields, wire_len)
# kind: "ip" with (proto, src_ip, dst_ip, ttl, sport, dport) or "arp".
PACKETS = [
    # camera <-> cloud over TCP 443; TTL 64 out / 52 in, tied 3:3
    (0, 0, CAM, ROUTER, "ip", (TCP, "192.168.1.10", "93.184.216.34", 64, 50000, 443), 74),
    (0, 100000, ROUTER, CAM, "ip", (TCP, "93.184.216.34", "192.168.1.10", 52, 443, 50000), 74),
    (0, 350000, CAM, ROUTER, "ip", (TCP, "192.168.1.10", "93.184.216.34", 64, 50000, 443), 1514),
    (0, 400000, ROUTER, CAM, "ip", (TCP, "93.184.216.34", "192.168.1.10", 52, 443, 50000), 66),
    (1, 200000, CAM, ROUTER, "ip", (TCP, "192.168.1.10", "93.184.216.34", 64, 50000, 443), 590),
    (1, 250000, ROUTER, CAM, "ip", (TCP, "93.184.216.34", "192.168.1.10", 52, 443, 50000), 1200),
    # plug DNS query and answer
    (2, 0, PLUG, ROUTER, "ip", (UDP, "192.168.1.11", "8.8.8.8", 255, 40000, 53), 80),
    (2, 30000, ROUTER, PLUG, "ip", (UDP, "8.8.8.8", "192.168.1.11", 117, 53, 40000), 140),
    # camera ARP (no IP layer)
    (3, 0, CAM, "ff:ff:ff:ff:ff:ff", "arp", None, 60),
    # camera -> plug local UDP: one packet in each device's table
    (4, 500000, CAM, PLUG, "ip", (UDP, "192.168.1.10", "192.168.1.11", 64, 5000, 6000), 300),
    # traffic between unmonitored hosts is ignored
    (5, 0, OTHER, ROUTER, "ip", (TCP, "192.168.1.50", "1.1.1.1", 64, 1234, 80), 60),
    # plug ICMP echo pair
    (6, 0, PLUG, ROUTER, "ip", (ICMP, "192.168.1.11", "192.168.1.1", 255, None, None), 98),
    (6, 1500, ROUTER, PLUG, "ip", (ICMP, "192.168.1.1", "192.168.1.11", 64, None, None), 98),
    # same DNS 5-tuple after a long silence: a new flow
    (80, 0, PLUG, ROUTER, "ip", (UDP, "192.168.1.11", "8.8.8.8", 255, 40000, 53), 80),
    (80, 20000, ROUTER, PLUG, "ip", (UDP, "8.8.8.8", "192.168.1.11", 117, 53, 40000), 1024),
    (80, 20001, ROUTER, PLUG, "ip", (UDP, "8.8.8.8", "192.168.1.11", 117, 53, 40000), 1280),
    # camera NTP burst with repeating gaps
    (90, 0, CAM, ROUTER, "ip", (UDP, "192.168.1.10", "162.159.200.1", 64, 123, 123), 90),
    (90, 10, CAM, ROUTER, "ip", (UDP, "192.168.1.10", "162.159.200.1", 64, 123, 123), 90),
    (92, 10, CAM, ROUTER, "ip", (UDP, "192.168.1.10", "162.159.200.1", 64, 123, 123), 90),
    (92, 20, ROUTER, CAM, "ip", (UDP, "162.159.200.1", "192.168.1.10", 57, 123, 123), 90),
]


def frame(src, dst, kind, f):
    eth = mac_bytes(dst) + mac_bytes(src)
    if kind == "arp":
        return eth + struct.pack(">H", 0x0806) + bytes(28)
    proto, sip, dip, ttl, sport, dport = f
    if proto == TCP:
        l4 = struct.pack(">HHIIBBHHH", sport, dport, 0, 0, 5 << 4, 0x18, 1024, 0, 0)
    elif proto == UDP:
        l4 = struct.pack(">HHHH", sport, dport, 8, 0)
    else:
        l4 = struct.pack(">BBHI", 8, 0, 0, 0)
    ip = struct.pack(">BBHHHBBH4s4s", 0x45, 0, 20 + len(l4), 0, 0, ttl, proto, 0, ip_bytes(sip), ip_bytes(dip))
    return eth + struct.pack(">H", 0x0800) + ip + l4


def write_pcap(path):
    with open(path, "wb") as out:
        out.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1))
        for secs, usec, src, dst, kind, f, wire in PACKETS:
            data = frame(src, dst, kind, f)
            out.write(struct.pack("<IIII", BASE + secs, usec, len(data), wire))
            out.write(data)


def key_of(device, kind, f):
    if kind == "arp":
        return (device, None, None, 0)
    proto, sip, dip, _, sport, dport = f
    a = (ip_bytes(sip), sport or 0)
    b = (ip_bytes(dip), dport or 0)
    return (device, min(a, b), max(a, b), proto)


def flows():
    """Groups packets into (device, packets) flows, closing a flow after a
    silence longer than the idle timeout, ordered by (first time, device)."""
    open_flows, done = {}, []
    for secs, usec, src, dst, kind, f, wire in PACKETS:
        ts = (BASE + secs) * 10**9 + usec * 1000
        for device in (src, dst):
            if device not in DEVICES:
                continue
            k = key_of(device, kind, f)
            if k in open_flows and ts - open_flows[k][-1][0] > IDLE_NS:
                done.append((device, open_flows.pop(k)))
            open_flows.setdefault(k, []).append((ts, src == device, kind, f, wire))
    done.extend((k[0], pkts) for k, pkts in open_flows.items())
    done.sort(key=lambda dp: (dp[1][0][0], dp[0]))
    return done


def fsum(xs):
    total = 0.0
    for x in xs:
        total += x
    return total


def features(pkts):
    n = len(pkts)
    times = sorted(p[0] for p in pkts)
    gaps = [(b - a) * 1e-9 for a, b in zip(times, times[1:])]
    if gaps:
        mean = fsum(gaps) / len(gaps)
        std = (fsum((g - mean) ** 2 for g in gaps) / len(gaps)) ** 0.5
        s = sorted(gaps)
        m = len(s)
        median = s[m // 2] if m % 2 else (s[m // 2 - 1] + s[m // 2]) / 2
        iat = [mean, std, median, s[-1]]
    else:
        iat = [0.0] * 4

    ttls = {}
    for _, _, kind, f, _ in pkts:
        if kind == "ip":
            ttls[f[3]] = ttls.get(f[3], 0) + 1
    ttl_mode = min(ttls, key=lambda t: (-ttls[t], t)) if ttls else 0

    total_bytes = sum(p[4] for p in pkts)
    duration = (times[-1] - times[0]) * 1e-9
    rates = [n / duration, total_bytes / duration] if duration > 0 else [0.0, 0.0]
    proto = [p[3][0] if p[2] == "ip" else None for p in pkts]
    bins = [0] * 8
    for p in pkts:
        bins[max(i for i, lo in enumerate(BIN_EDGES) if p[4] >= lo)] += 1

    outbound = [p for p in pkts if p[1]]
    ports = {}
    for _, _, kind, f, _ in outbound:
        if kind == "ip" and f[0] in (TCP, UDP):
            ports[f[5]] = ports.get(f[5], 0) + 1
    top = sorted(ports.items(), key=lambda pc: (-pc[1], pc[0]))[:3]
    top += [(0, 0)] * (3 - len(top))
    denom = max(len(outbound), 1)

    return (
        [ttl_mode] + iat + [n, total_bytes, duration] + rates
        + [proto.count(TCP) / n, proto.count(UDP) / n]
        + [c / n for c in bins]
        + [p for p, _ in top]
        + [c / denom for _, c in top]
    )


COLUMNS = (
    "initial_ttl_mode,iat_mean,iat_std,iat_median,iat_max,total_packets,total_bytes,"
    "flow_duration,packet_rate,byte_rate,tcp_ratio,udp_ratio,"
    + ",".join(f"pkt_size_bin_{i}" for i in range(8)) + ","
    + ",".join(f"top_dst_port_{i}_val" for i in range(3)) + ","
    + ",".join(f"top_dst_port_{i}_ratio" for i in range(3))
    + ",device_mac,flow_start"
)


def write_expected(path):
    with open(path, "w") as out:
        out.write(COLUMNS + "\n")
        for device, pkts in flows():
            cells = ["%.9g" % v for v in features(pkts)]
            cells += [device, "%d.%09d" % divmod(pkts[0][0], 10**9)]
            out.write(",".join(cells) + "\n")


if __name__ == "__main__":
    write_pcap("golden.pcap")
    with open("labels.csv", "w") as out:
        out.write("mac,device_name\n")
        for mac, name in sorted(DEVICES.items()):
            out.write(f"{mac},{name}\n")
    write_expected("expected_features.csv")

"""Domain extraction from classic pcap captures.

Three extractors run over every packet:

* DNS over UDP/53: question names of queries, owner names of answer
  records in responses.  The client (query sender / response receiver) is
  the event source.
* TLS: the SNI host_name of a ClientHello found in the first payload
  segment of a TCP flow.  No reassembly.
* HTTP: the ``Host`` header of any TCP payload that starts with an
  HTTP/1.x request line, on any port.

For TCP the source is the SYN initiator when the handshake was captured,
otherwise the payload sender.
"""

from __future__ import annotations

import ipaddress
import logging
import os
import re
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator

from ..errors import BadPcapMagic, FileUnreadable, UnsupportedLinktype
from .events import DomainEvent, Protocol

log = logging.getLogger(__name__)

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_LINUX_SLL = 113
LINKTYPE_LINUX_SLL2 = 276

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_VLAN = (0x8100, 0x88A8, 0x9100)

IPPROTO_TCP = 6
IPPROTO_UDP = 17
_IPV6_EXT = {0, 43, 60}
_IPV6_FRAG = 44
_IPV6_AH = 51

_MAGIC = {
    b"\xd4\xc3\xb2\xa1": ("<", 1e-6),
    b"\xa1\xb2\xc3\xd4": (">", 1e-6),
    b"\x4d\x3c\xb2\xa1": ("<", 1e-9),
    b"\xa1\xb2\x3c\x4d": (">", 1e-9),
}

_HTTP_REQUEST = re.compile(rb"^(?:GET|POST|PUT|HEAD|DELETE|OPTIONS|PATCH|CONNECT) \S+ HTTP/1\.[0-9]\r?\n")
_MAX_DNS_JUMPS = 64


class Truncated(Exception):
    """Packet bytes ran out before a complete header or field."""


class CompressionLoop(Exception):
    pass


@dataclass
class CaptureStats:
    packets_seen: int = 0
    packets_matched: int = 0
    packets_ignored: int = 0
    events_emitted: int = 0
    parse_failures: dict[str, int] = field(
        default_factory=lambda: {"link": 0, "dns": 0, "tls": 0, "http": 0}
    )

    @property
    def failures(self) -> int:
        return sum(self.parse_failures.values())

    def accounted(self) -> bool:
        return self.packets_matched + self.failures + self.packets_ignored == self.packets_seen


# ---------------------------------------------------------------------------
# protocol parsers (pure functions over bytes)


def read_dns_name(buf: bytes, offset: int) -> tuple[str, int]:
    """Decode a possibly-compressed name; returns (name, offset after it)."""
    labels: list[str] = []
    jumps = 0
    end = None
    pos = offset
    n = len(buf)
    while True:
        if pos >= n:
            raise Truncated("name runs past packet end")
        length = buf[pos]
        if length == 0:
            pos += 1
            break
        kind = length & 0xC0
        if kind == 0xC0:
            if pos + 1 >= n:
                raise Truncated("truncated compression pointer")
            target = ((length & 0x3F) << 8) | buf[pos + 1]
            if end is None:
                end = pos + 2
            jumps += 1
            if jumps > _MAX_DNS_JUMPS or target >= n:
                raise CompressionLoop(f"bad compression pointer at {pos}")
            pos = target
            continue
        if kind:
            raise ValueError(f"unsupported label type 0x{kind:02x}")
        pos += 1
        if pos + length > n:
            raise Truncated("label runs past packet end")
        labels.append(buf[pos:pos + length].decode("latin-1"))
        pos += length
    return ".".join(labels), (end if end is not None else pos)


def parse_dns(payload: bytes) -> tuple[bool, list[str]]:
    """Return ``(is_response, names)`` for a DNS message.

    Queries yield question names; responses yield answer owner names.
    """
    if len(payload) < 12:
        raise Truncated("short DNS header")
    _id, flags, qdcount, ancount = struct.unpack_from("!HHHH", payload, 0)
    is_response = bool(flags & 0x8000)
    pos = 12
    questions = []
    for _ in range(qdcount):
        name, pos = read_dns_name(payload, pos)
        if pos + 4 > len(payload):
            raise Truncated("short question")
        pos += 4
        questions.append(name)
    if not is_response:
        return False, [q for q in questions if q]
    answers = []
    for _ in range(ancount):
        name, pos = read_dns_name(payload, pos)
        if pos + 10 > len(payload):
            raise Truncated("short resource record")
        rdlength = struct.unpack_from("!H", payload, pos + 8)[0]
        pos += 10 + rdlength
        if pos > len(payload):
            raise Truncated("rdata runs past packet end")
        answers.append(name)
    return True, [a for a in answers if a]


def is_client_hello(payload: bytes) -> bool:
    return len(payload) >= 6 and payload[0] == 0x16 and payload[1] == 0x03 and payload[5] == 0x01


def parse_client_hello_sni(payload: bytes) -> str | None:
    """SNI host_name from a ClientHello record, or None if it has no SNI.

    Only the bytes present are parsed; a ClientHello split across segments
    raises Truncated if the SNI lies beyond this segment.
    """
    n = len(payload)
    if n < 9 or payload[0] != 0x16 or payload[5] != 0x01:
        raise ValueError("not a TLS ClientHello record")
    pos = 5 + 4 + 2 + 32  # record hdr, handshake hdr, client_version, random
    if pos + 1 > n:
        raise Truncated("ClientHello ends before session id")
    pos += 1 + payload[pos]
    if pos + 2 > n:
        raise Truncated("ClientHello ends before cipher suites")
    pos += 2 + struct.unpack_from("!H", payload, pos)[0]
    if pos + 1 > n:
        raise Truncated("ClientHello ends before compression methods")
    pos += 1 + payload[pos]
    if pos == n:
        return None  # no extensions block at all
    if pos + 2 > n:
        raise Truncated("ClientHello ends before extensions")
    declared_end = pos + 2 + struct.unpack_from("!H", payload, pos)[0]
    ext_end = min(n, declared_end)
    pos += 2
    while pos + 4 <= ext_end:
        ext_type, ext_len = struct.unpack_from("!HH", payload, pos)
        pos += 4
        if ext_type == 0x0000:
            if pos + ext_len > n or ext_len < 2:
                raise Truncated("server_name extension truncated")
            list_end = pos + 2 + struct.unpack_from("!H", payload, pos)[0]
            p = pos + 2
            while p + 3 <= min(list_end, pos + ext_len):
                name_type, name_len = payload[p], struct.unpack_from("!H", payload, p + 1)[0]
                p += 3
                if p + name_len > n:
                    raise Truncated("host_name truncated")
                if name_type == 0:
                    return payload[p:p + name_len].decode("latin-1")
                p += name_len
            return None
        pos += ext_len
    if declared_end > n:
        raise Truncated("extensions continue past this segment")
    return None


def parse_http_host(payload: bytes) -> str | None:
    """Host header of an HTTP/1.x request with any ``:port`` removed."""
    head = payload.split(b"\r\n\r\n", 1)[0]
    lines = head.split(b"\n")
    for line in lines[1:]:
        line = line.rstrip(b"\r")
        if not line:
            break
        key, sep, value = line.partition(b":")
        if sep and key.strip().lower() == b"host":
            host = value.strip().decode("latin-1")
            return _strip_port(host) or None
    return None


def _strip_port(host: str) -> str:
    if host.startswith("["):
        end = host.find("]")
        return host[1:end] if end > 0 else host
    if host.count(":") == 1:
        return host.split(":", 1)[0]
    return host


# ---------------------------------------------------------------------------
# link / network / transport decoding


@dataclass(slots=True)
class _Segment:
    proto: int
    src: str
    dst: str
    sport: int
    dport: int
    flags: int
    payload: bytes


def _link_to_ip(frame: bytes, linktype: int) -> tuple[int, bytes] | None:
    if linktype == LINKTYPE_ETHERNET:
        if len(frame) < 14:
            raise Truncated("short ethernet header")
        ethertype = struct.unpack_from("!H", frame, 12)[0]
        pos = 14
        while ethertype in ETH_VLAN:
            if len(frame) < pos + 4:
                raise Truncated("short VLAN tag")
            ethertype = struct.unpack_from("!H", frame, pos + 2)[0]
            pos += 4
        return ethertype, frame[pos:]
    if linktype == LINKTYPE_LINUX_SLL:
        if len(frame) < 16:
            raise Truncated("short SLL header")
        return struct.unpack_from("!H", frame, 14)[0], frame[16:]
    if linktype == LINKTYPE_LINUX_SLL2:
        if len(frame) < 20:
            raise Truncated("short SLL2 header")
        return struct.unpack_from("!H", frame, 0)[0], frame[20:]
    if linktype == LINKTYPE_RAW:
        if not frame:
            raise Truncated("empty raw frame")
        version = frame[0] >> 4
        return (ETH_IPV4 if version == 4 else ETH_IPV6 if version == 6 else 0), frame
    raise UnsupportedLinktype(linktype)


def _decode(frame: bytes, linktype: int) -> _Segment | None:
    ethertype, data = _link_to_ip(frame, linktype)
    if ethertype == ETH_IPV4:
        if len(data) < 20:
            raise Truncated("short IPv4 header")
        ihl = (data[0] & 0x0F) * 4
        if (data[0] >> 4) != 4 or ihl < 20:
            return None
        total_len = struct.unpack_from("!H", data, 2)[0]
        if struct.unpack_from("!H", data, 6)[0] & 0x1FFF:
            return None  # non-first fragment
        if len(data) < ihl:
            raise Truncated("IPv4 options truncated")
        proto = data[9]
        src = str(ipaddress.IPv4Address(data[12:16]))
        dst = str(ipaddress.IPv4Address(data[16:20]))
        end = min(len(data), total_len) if total_len >= ihl else len(data)
        body = data[ihl:end]
    elif ethertype == ETH_IPV6:
        if len(data) < 40:
            raise Truncated("short IPv6 header")
        payload_len = struct.unpack_from("!H", data, 4)[0]
        proto = data[6]
        src = str(ipaddress.IPv6Address(data[8:24]))
        dst = str(ipaddress.IPv6Address(data[24:40]))
        body = data[40:40 + payload_len] if payload_len else data[40:]
        while proto in _IPV6_EXT or proto in (_IPV6_FRAG, _IPV6_AH):
            if len(body) < 8:
                raise Truncated("IPv6 extension header truncated")
            nxt = body[0]
            if proto == _IPV6_FRAG:
                if struct.unpack_from("!H", body, 2)[0] & 0xFFF8:
                    return None
                hlen = 8
            elif proto == _IPV6_AH:
                hlen = (body[1] + 2) * 4
            else:
                hlen = (body[1] + 1) * 8
            proto, body = nxt, body[hlen:]
    else:
        return None

    if proto == IPPROTO_UDP:
        if len(body) < 8:
            raise Truncated("short UDP header")
        sport, dport, ulen = struct.unpack_from("!HHH", body, 0)
        payload = body[8:ulen] if ulen >= 8 else body[8:]
        return _Segment(proto, src, dst, sport, dport, 0, payload)
    if proto == IPPROTO_TCP:
        if len(body) < 20:
            raise Truncated("short TCP header")
        sport, dport = struct.unpack_from("!HH", body, 0)
        offset = (body[12] >> 4) * 4
        if offset < 20 or len(body) < offset:
            raise Truncated("TCP options truncated")
        return _Segment(proto, src, dst, sport, dport, body[13], body[offset:])
    return None


# ---------------------------------------------------------------------------
# file reader


def _open_pcap(path) -> tuple[BinaryIO, str, float, int]:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FileUnreadable(f"cannot open capture {path}: {exc}") from exc
    header = fh.read(24)
    if len(header) < 24 or header[:4] not in _MAGIC:
        fh.close()
        raise BadPcapMagic(f"{path}: not a classic pcap file (magic {header[:4].hex() or 'missing'})")
    endian, unit = _MAGIC[header[:4]]
    linktype = struct.unpack(endian + "I", header[20:24])[0] & 0x0FFFFFFF
    if linktype not in (LINKTYPE_ETHERNET, LINKTYPE_LINUX_SLL, LINKTYPE_LINUX_SLL2, LINKTYPE_RAW):
        fh.close()
        raise UnsupportedLinktype(f"{path}: unsupported linktype {linktype}")
    return fh, endian, unit, linktype


def looks_like_pcap(path: str | os.PathLike) -> bool:
    """True if the file starts with a classic pcap magic number."""
    try:
        with open(path, "rb") as fh:
            return fh.read(4) in _MAGIC
    except OSError:
        return False


def extract_from_pcap(path: str | os.PathLike) -> tuple[Iterator[DomainEvent], CaptureStats]:
    """Open ``path`` and return a lazy event iterator plus its stats.

    The header is validated immediately.  ``stats`` is filled in as the
    iterator is consumed and is final once it is exhausted.
    """
    fh, endian, unit, linktype = _open_pcap(path)
    stats = CaptureStats()
    return _extract(fh, endian, unit, linktype, stats, str(path)), stats


def _extract(fh, endian, unit, linktype, stats: CaptureStats, name: str) -> Iterator[DomainEvent]:
    rec_hdr = struct.Struct(endian + "IIII")
    syn_initiator: dict[tuple, str] = {}
    flows_with_payload: set[tuple] = set()
    failures = stats.parse_failures
    with fh:
        while True:
            hdr = fh.read(16)
            if not hdr:
                break
            stats.packets_seen += 1
            if len(hdr) < 16:
                failures["link"] += 1
                log.warning("%s: truncated record header at packet %d", name, stats.packets_seen)
                break
            ts_sec, ts_frac, incl_len, _orig_len = rec_hdr.unpack(hdr)
            frame = fh.read(incl_len)
            if len(frame) < incl_len:
                failures["link"] += 1
                log.warning("%s: truncated packet data at packet %d", name, stats.packets_seen)
                break
            ts = ts_sec + ts_frac * unit
            try:
                seg = _decode(frame, linktype)
            except (Truncated, ValueError, struct.error):
                failures["link"] += 1
                continue
            if seg is None:
                stats.packets_ignored += 1
                continue
            events, layer = _segment_events(seg, ts, syn_initiator, flows_with_payload)
            if layer is not None:
                failures[layer] += 1
                continue
            if not events:
                stats.packets_ignored += 1
                continue
            stats.packets_matched += 1
            stats.events_emitted += len(events)
            yield from events


def _segment_events(seg: _Segment, ts: float, syn_initiator: dict, flows: set) -> tuple[list[DomainEvent], str | None]:
    """Events for one decoded segment, or the failing protocol name."""
    if seg.proto == IPPROTO_UDP:
        if seg.sport != 53 and seg.dport != 53:
            return [], None
        try:
            is_response, names = parse_dns(seg.payload)
        except (Truncated, CompressionLoop, ValueError, struct.error) as exc:
            log.debug("DNS parse failure %s -> %s: %s", seg.src, seg.dst, exc)
            return [], "dns"
        client = seg.dst if is_response else seg.src
        return [DomainEvent(ts, client, Protocol.DNS, n) for n in names], None

    # TCP
    conn = (seg.src, seg.sport, seg.dst, seg.dport)
    key = min(conn, (seg.dst, seg.dport, seg.src, seg.sport))
    if seg.flags & 0x02 and not seg.flags & 0x10:
        syn_initiator[key] = seg.src
    payload = seg.payload
    if not payload:
        return [], None
    first = conn not in flows
    if first:
        flows.add(conn)
    source = syn_initiator.get(key, seg.src)
    if first and is_client_hello(payload):
        try:
            sni = parse_client_hello_sni(payload)
        except (Truncated, ValueError, struct.error) as exc:
            log.debug("TLS parse failure %s -> %s: %s", seg.src, seg.dst, exc)
            return [], "tls"
        if sni is None:
            return [], None
        return [DomainEvent(ts, source, Protocol.TLS, sni)], None
    if _HTTP_REQUEST.match(payload):
        host = parse_http_host(payload)
        if host is None:
            return [], None
        return [DomainEvent(ts, source, Protocol.HTTP, host)], None
    return [], None

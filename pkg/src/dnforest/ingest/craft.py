"""Build DNS / TLS / HTTP packets and write classic pcap files.

Used for golden tests and for rendering synthetic corpora as captures.
"""

from __future__ import annotations

import ipaddress
import os
import struct
from typing import Iterable

from .events import DomainEvent, Protocol

IPPROTO_TCP = 6
IPPROTO_UDP = 17


def encode_dns_name(name: str) -> bytes:
    out = bytearray()
    for label in name.strip(".").split("."):
        if label:
            raw = label.encode("ascii")
            out.append(len(raw))
            out += raw
    out.append(0)
    return bytes(out)


def dns_query(name: str, txid: int = 0x1234, qtype: int = 1) -> bytes:
    header = struct.pack("!HHHHHH", txid, 0x0100, 1, 0, 0, 0)
    return header + encode_dns_name(name) + struct.pack("!HH", qtype, 1)


def dns_response(qname: str, answers: Iterable[tuple[str, str]], txid: int = 0x1234) -> bytes:
    """Response to an A query; ``answers`` are ``(owner, ipv4)`` or ``(owner, "cname:<target>")``.

    The first answer owner equal to ``qname`` is written as a compression
    pointer to the question name.
    """
    answers = list(answers)
    header = struct.pack("!HHHHHH", txid, 0x8180, 1, len(answers), 0, 0)
    body = bytearray(encode_dns_name(qname) + struct.pack("!HH", 1, 1))
    for owner, value in answers:
        if owner.strip(".").lower() == qname.strip(".").lower():
            body += b"\xc0\x0c"
        else:
            body += encode_dns_name(owner)
        if value.startswith("cname:"):
            rdata = encode_dns_name(value[6:])
            body += struct.pack("!HHIH", 5, 1, 60, len(rdata)) + rdata
        else:
            rdata = ipaddress.IPv4Address(value).packed
            body += struct.pack("!HHIH", 1, 1, 60, 4) + rdata
    return header + bytes(body)


def client_hello(sni: str | None, session_id: bytes = b"", extra_extensions: bytes = b"") -> bytes:
    """A TLS 1.2-framed ClientHello record, optionally carrying SNI."""
    exts = bytearray()
    # supported_groups before SNI so the parser must walk past a foreign extension
    groups = struct.pack("!HHH", 4, 0x001D, 0x0017)
    exts += struct.pack("!HH", 0x000A, len(groups)) + groups
    if sni is not None:
        host = sni.encode("ascii")
        entry = struct.pack("!BH", 0, len(host)) + host
        sni_body = struct.pack("!H", len(entry)) + entry
        exts += struct.pack("!HH", 0x0000, len(sni_body)) + sni_body
    exts += extra_extensions
    ciphers = struct.pack("!HHH", 0x1301, 0x1302, 0xC02F)
    body = (
        b"\x03\x03"
        + bytes(range(32))
        + bytes([len(session_id)]) + session_id
        + struct.pack("!H", len(ciphers)) + ciphers
        + b"\x01\x00"
        + struct.pack("!H", len(exts)) + bytes(exts)
    )
    handshake = b"\x01" + len(body).to_bytes(3, "big") + body
    return b"\x16\x03\x01" + struct.pack("!H", len(handshake)) + handshake


def http_request(host: str, path: str = "/", method: str = "GET") -> bytes:
    return (
        f"{method} {path} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: synth\r\nAccept: */*\r\n\r\n"
    ).encode("ascii")


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\0"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def ip_packet(src: str, dst: str, proto: int, payload: bytes) -> bytes:
    s, d = ipaddress.ip_address(src), ipaddress.ip_address(dst)
    if s.version == 4:
        hdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(payload), 0, 0x4000, 64, proto, 0, s.packed, d.packed)
        hdr = hdr[:10] + struct.pack("!H", _checksum(hdr)) + hdr[12:]
        return hdr + payload
    hdr = struct.pack("!IHBB16s16s", 6 << 28, len(payload), proto, 64, s.packed, d.packed)
    return hdr + payload


def udp_segment(sport: int, dport: int, payload: bytes) -> bytes:
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload


def tcp_segment(sport: int, dport: int, payload: bytes = b"", flags: int = 0x18, seq: int = 1, ack: int = 1) -> bytes:
    return struct.pack("!HHIIBBHHH", sport, dport, seq, ack, 5 << 4, flags, 65535, 0, 0) + payload


def ethernet(ip: bytes, vlan: int | None = None) -> bytes:
    version = ip[0] >> 4
    ethertype = 0x0800 if version == 4 else 0x86DD
    dst, src = b"\x02\x00\x00\x00\x00\x01", b"\x02\x00\x00\x00\x00\x02"
    if vlan is not None:
        return dst + src + struct.pack("!HHH", 0x8100, vlan & 0x0FFF, ethertype) + ip
    return dst + src + struct.pack("!H", ethertype) + ip


def linux_sll(ip: bytes) -> bytes:
    ethertype = 0x0800 if ip[0] >> 4 == 4 else 0x86DD
    return struct.pack("!HHH8sH", 0, 1, 6, b"\x02\x00\x00\x00\x00\x02\x00\x00", ethertype) + ip


class PcapWriter:
    """Minimal classic-pcap writer."""

    def __init__(self, path: str | os.PathLike, linktype: int = 1, nanosecond: bool = False, big_endian: bool = False):
        self._endian = ">" if big_endian else "<"
        self._ns = nanosecond
        self._fh = open(path, "wb")
        magic = 0xA1B23C4D if nanosecond else 0xA1B2C3D4
        self._fh.write(struct.pack(self._endian + "IHHiIII", magic, 2, 4, 0, 0, 65535, linktype))

    def write(self, ts: float, frame: bytes, orig_len: int | None = None) -> None:
        sec = int(ts)
        frac = round((ts - sec) * (1e9 if self._ns else 1e6))
        self._fh.write(struct.pack(self._endian + "IIII", sec, frac, len(frame), orig_len or len(frame)))
        self._fh.write(frame)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def event_frame(ev: DomainEvent, server: str = "192.0.2.53", sport: int = 40000) -> bytes:
    """Render one event as the Ethernet frame that would carry it."""
    if ev.protocol is Protocol.DNS:
        seg = udp_segment(sport, 53, dns_query(ev.domain))
        return ethernet(ip_packet(ev.source, server, IPPROTO_UDP, seg))
    if ev.protocol is Protocol.TLS:
        seg = tcp_segment(sport, 443, client_hello(ev.domain))
    else:
        seg = tcp_segment(sport, 80, http_request(ev.domain))
    return ethernet(ip_packet(ev.source, server, IPPROTO_TCP, seg))


def write_events_pcap(events: Iterable[DomainEvent], path: str | os.PathLike) -> int:
    """Write events as a capture; each TCP event gets a fresh client port."""
    n = 0
    with PcapWriter(path) as w:
        for i, ev in enumerate(events):
            w.write(ev.timestamp, event_frame(ev, sport=10000 + i % 50000))
            n += 1
    return n

"""Minimal DNS wire-format codec.

Covers exactly what the crawler and the fixture responder need: building
queries, parsing responses, and building responses (A, AAAA, NS, CNAME,
MX, TXT, DNSKEY, CAA, TLSA). Record data is carried as presentation-style
strings on both sides.
"""

from __future__ import annotations

import base64
import ipaddress
import struct
from dataclasses import dataclass, field

TYPE_A = 1
TYPE_NS = 2
TYPE_CNAME = 5
TYPE_SOA = 6
TYPE_MX = 15
TYPE_TXT = 16
TYPE_AAAA = 28
TYPE_DNSKEY = 48
TYPE_TLSA = 52
TYPE_CAA = 257

CLASS_IN = 1

TYPE_BY_NAME = {
    "A": TYPE_A,
    "NS": TYPE_NS,
    "CNAME": TYPE_CNAME,
    "MX": TYPE_MX,
    "TXT": TYPE_TXT,
    "AAAA": TYPE_AAAA,
    "DNSKEY": TYPE_DNSKEY,
    "TLSA": TYPE_TLSA,
    "CAA": TYPE_CAA,
}
NAME_BY_TYPE = {v: k for k, v in TYPE_BY_NAME.items()}

RCODE_NOERROR = 0
RCODE_SERVFAIL = 2
RCODE_NXDOMAIN = 3

_FLAG_QR = 0x8000
_FLAG_RD = 0x0100
_FLAG_RA = 0x0080
_FLAG_AD = 0x0020


class WireError(ValueError):
    """Malformed DNS message."""


@dataclass
class ResourceRecord:
    name: str
    rtype: int
    ttl: int
    value: str


@dataclass
class Message:
    qid: int
    flags: int
    qname: str
    qtype: int
    answers: list[ResourceRecord] = field(default_factory=list)

    @property
    def rcode(self) -> int:
        return self.flags & 0x000F

    @property
    def ad(self) -> bool:
        return bool(self.flags & _FLAG_AD)

    @property
    def is_response(self) -> bool:
        return bool(self.flags & _FLAG_QR)


def _encode_name(name: str) -> bytes:
    out = bytearray()
    name = name.rstrip(".")
    if name:
        for label in name.split("."):
            raw = label.encode("ascii")
            if not 0 < len(raw) < 64:
                raise WireError(f"bad label {label!r}")
            out.append(len(raw))
            out += raw
    out.append(0)
    return bytes(out)


def _decode_name(data: bytes, offset: int) -> tuple[str, int]:
    """Decode a possibly compressed name; returns (name, next offset)."""
    labels: list[str] = []
    jumps = 0
    pos = offset
    end = -1  # offset after the name in the original stream
    while True:
        if pos >= len(data):
            raise WireError("truncated name")
        length = data[pos]
        if length & 0xC0 == 0xC0:  # compression pointer
            if pos + 1 >= len(data):
                raise WireError("truncated pointer")
            if end < 0:
                end = pos + 2
            pos = ((length & 0x3F) << 8) | data[pos + 1]
            jumps += 1
            if jumps > 64:
                raise WireError("compression loop")
            continue
        if length == 0:
            if end < 0:
                end = pos + 1
            return ".".join(labels), end
        pos += 1
        if pos + length > len(data):
            raise WireError("truncated label")
        labels.append(data[pos:pos + length].decode("ascii", "replace").lower())
        pos += length


def _encode_rdata(rtype: int, value: str) -> bytes:
    if rtype == TYPE_A:
        return ipaddress.IPv4Address(value).packed
    if rtype == TYPE_AAAA:
        return ipaddress.IPv6Address(value).packed
    if rtype in (TYPE_NS, TYPE_CNAME):
        return _encode_name(value)
    if rtype == TYPE_MX:
        pref, host = value.split(None, 1)
        return struct.pack("!H", int(pref)) + _encode_name(host)
    if rtype == TYPE_TXT:
        raw = value.encode("utf-8")
        out = bytearray()
        for i in range(0, max(len(raw), 1), 255):
            chunk = raw[i:i + 255]
            out.append(len(chunk))
            out += chunk
        return bytes(out)
    if rtype == TYPE_DNSKEY:
        flags, proto, alg, key = value.split(None, 3)
        return struct.pack("!HBB", int(flags), int(proto), int(alg)) + base64.b64decode(key)
    if rtype == TYPE_CAA:
        caa_flags, tag, quoted = value.split(None, 2)
        tag_raw = tag.encode("ascii")
        payload = quoted.strip('"').encode("utf-8")
        return struct.pack("!BB", int(caa_flags), len(tag_raw)) + tag_raw + payload
    if rtype == TYPE_TLSA:
        usage, selector, matching, assoc = value.split(None, 3)
        return struct.pack("!BBB", int(usage), int(selector), int(matching)) + bytes.fromhex(assoc)
    raise WireError(f"cannot encode rdata for type {rtype}")


def _decode_rdata(rtype: int, data: bytes, offset: int, rdlen: int) -> str:
    raw = data[offset:offset + rdlen]
    if rtype == TYPE_A and rdlen == 4:
        return str(ipaddress.IPv4Address(raw))
    if rtype == TYPE_AAAA and rdlen == 16:
        return str(ipaddress.IPv6Address(raw))
    if rtype in (TYPE_NS, TYPE_CNAME):
        name, _ = _decode_name(data, offset)
        return name
    if rtype == TYPE_MX:
        pref = struct.unpack("!H", raw[:2])[0]
        host, _ = _decode_name(data, offset + 2)
        return f"{pref} {host}"
    if rtype == TYPE_TXT:
        parts = []
        pos = 0
        while pos < len(raw):
            n = raw[pos]
            parts.append(raw[pos + 1:pos + 1 + n].decode("utf-8", "replace"))
            pos += 1 + n
        return "".join(parts)
    if rtype == TYPE_DNSKEY and rdlen >= 4:
        flags, proto, alg = struct.unpack("!HBB", raw[:4])
        return f"{flags} {proto} {alg} {base64.b64encode(raw[4:]).decode('ascii')}"
    if rtype == TYPE_CAA and rdlen >= 2:
        caa_flags, tag_len = raw[0], raw[1]
        tag = raw[2:2 + tag_len].decode("ascii", "replace")
        payload = raw[2 + tag_len:].decode("utf-8", "replace")
        return f'{caa_flags} {tag} "{payload}"'
    if rtype == TYPE_TLSA and rdlen >= 3:
        return f"{raw[0]} {raw[1]} {raw[2]} {raw[3:].hex()}"
    return raw.hex()


def build_query(qid: int, name: str, rtype: int, recursion_desired: bool = True) -> bytes:
    flags = _FLAG_AD | (_FLAG_RD if recursion_desired else 0)
    header = struct.pack("!HHHHHH", qid & 0xFFFF, flags, 1, 0, 0, 0)
    return header + _encode_name(name) + struct.pack("!HH", rtype, CLASS_IN)


def build_response(
    query: Message,
    rcode: int,
    answers: list[ResourceRecord],
    authenticated: bool = False,
) -> bytes:
    flags = _FLAG_QR | _FLAG_RA | (query.flags & _FLAG_RD) | (rcode & 0x0F)
    if authenticated:
        flags |= _FLAG_AD
    header = struct.pack("!HHHHHH", query.qid, flags, 1, len(answers), 0, 0)
    out = bytearray(header)
    out += _encode_name(query.qname)
    out += struct.pack("!HH", query.qtype, CLASS_IN)
    for rr in answers:
        rdata = _encode_rdata(rr.rtype, rr.value)
        out += _encode_name(rr.name)
        out += struct.pack("!HHIH", rr.rtype, CLASS_IN, rr.ttl, len(rdata))
        out += rdata
    return bytes(out)


def parse_message(data: bytes) -> Message:
    if len(data) < 12:
        raise WireError("short message")
    qid, flags, qdcount, ancount, nscount, arcount = struct.unpack("!HHHHHH", data[:12])
    offset = 12
    qname, qtype = "", 0
    for i in range(qdcount):
        name, offset = _decode_name(data, offset)
        if offset + 4 > len(data):
            raise WireError("truncated question")
        rtype, _rclass = struct.unpack("!HH", data[offset:offset + 4])
        offset += 4
        if i == 0:
            qname, qtype = name, rtype
    msg = Message(qid=qid, flags=flags, qname=qname, qtype=qtype)
    for _ in range(ancount):
        name, offset = _decode_name(data, offset)
        if offset + 10 > len(data):
            raise WireError("truncated record header")
        rtype, _rclass, ttl, rdlen = struct.unpack("!HHIH", data[offset:offset + 10])
        offset += 10
        if offset + rdlen > len(data):
            raise WireError("truncated rdata")
        msg.answers.append(
            ResourceRecord(name=name, rtype=rtype, ttl=ttl,
                           value=_decode_rdata(rtype, data, offset, rdlen))
        )
        offset += rdlen
    return msg

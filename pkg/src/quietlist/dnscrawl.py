"""DNS crawl: NS/A/AAAA/MX/TXT collection, GeoIP enrichment, and presence
probes for seven DNS security mechanisms.

All queries go through a configured recursive resolver; this module never
resolves iteratively. The geo provider is an interface with a file-backed
implementation so tests stay hermetic.
"""

from __future__ import annotations

import ipaddress
import logging
import random
import socket
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Protocol

from . import dnswire
from .clock import Clock, SystemClock

logger = logging.getLogger(__name__)

RECORD_TYPES = ("NS", "A", "AAAA", "MX", "TXT")
SECURITY_FLAG_ORDER = ("DNSSEC", "CAA", "SPF", "DKIM", "DMARC", "MTA-STS", "DANE")
DEFAULT_DKIM_SELECTORS = ("default", "selector1", "selector2", "google", "k1")

RCODE_NOERROR = "NoError"
RCODE_NXDOMAIN = "NXDomain"
RCODE_SERVFAIL = "ServFail"
RCODE_TIMEOUT = "Timeout"


class ResolverUnavailableError(RuntimeError):
    """Every query in the crawl failed; the iteration cannot proceed."""


@dataclass(frozen=True)
class GeoEntry:
    country: str
    organization: str


UNKNOWN_GEO = GeoEntry(country="unknown", organization="unknown")


class GeoProvider(Protocol):
    def lookup(self, ip: str) -> GeoEntry | None: ...


class FileGeoProvider:
    """CIDR table loaded from ``cidr,country,organization`` lines.

    Longest-prefix match; deterministic for a fixed snapshot file.
    """

    def __init__(self, networks: list[tuple[ipaddress._BaseNetwork, GeoEntry]]) -> None:
        self._networks = sorted(networks, key=lambda item: -item[0].prefixlen)

    @classmethod
    def from_file(cls, path: str | Path) -> "FileGeoProvider":
        networks = []
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            cidr, country, org = (part.strip() for part in line.split(",", 2))
            networks.append((ipaddress.ip_network(cidr), GeoEntry(country, org)))
        return cls(networks)

    def lookup(self, ip: str) -> GeoEntry | None:
        addr = ipaddress.ip_address(ip)
        for network, entry in self._networks:
            if addr.version == network.version and addr in network:
                return entry
        return None


@dataclass
class SecurityMechanisms:
    dnssec: bool = False
    caa: bool = False
    spf: bool = False
    dkim: bool = False
    dmarc: bool = False
    mta_sts: bool = False
    dane: bool = False

    def as_vector(self) -> list[int]:
        """Fixed flag order: DNSSEC, CAA, SPF, DKIM, DMARC, MTA-STS, DANE."""
        return [int(self.dnssec), int(self.caa), int(self.spf), int(self.dkim),
                int(self.dmarc), int(self.mta_sts), int(self.dane)]

    def to_dict(self) -> dict:
        return {
            "dnssec": self.dnssec, "caa": self.caa, "spf": self.spf,
            "dkim": self.dkim, "dmarc": self.dmarc, "mta_sts": self.mta_sts,
            "dane": self.dane,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SecurityMechanisms":
        return cls(**d)


@dataclass
class DnsReply:
    rcode: str
    values: list[str] = field(default_factory=list)
    authenticated: bool = False


class DnsClient:
    """Stub resolver client speaking UDP to one recursive resolver endpoint."""

    def __init__(
        self,
        server: str,
        port: int = 53,
        timeout: float = 2.0,
        retries: int = 2,
        transport: Callable[[bytes], bytes] | None = None,
    ) -> None:
        self.server = server
        self.port = port
        self.timeout = timeout
        self.retries = retries
        self._transport = transport
        self._rng = random.Random(0x514C)

    def _exchange(self, wire: bytes) -> bytes:
        if self._transport is not None:
            return self._transport(wire)
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
            sock.settimeout(self.timeout)
            sock.sendto(wire, (self.server, self.port))
            data, _ = sock.recvfrom(65535)
            return data

    def query(self, name: str, rtype_name: str) -> DnsReply:
        """One lookup with bounded retries on Timeout/ServFail."""
        rtype = dnswire.TYPE_BY_NAME[rtype_name]
        last = DnsReply(rcode=RCODE_TIMEOUT)
        for _attempt in range(self.retries + 1):
            qid = self._rng.randrange(0x10000)
            try:
                data = self._exchange(dnswire.build_query(qid, name, rtype))
                msg = dnswire.parse_message(data)
            except (socket.timeout, TimeoutError):
                last = DnsReply(rcode=RCODE_TIMEOUT)
                continue
            except (OSError, dnswire.WireError) as exc:
                logger.warning("query %s/%s failed: %s", name, rtype_name, exc)
                last = DnsReply(rcode=RCODE_SERVFAIL)
                continue
            if msg.rcode == dnswire.RCODE_NXDOMAIN:
                return DnsReply(rcode=RCODE_NXDOMAIN, authenticated=msg.ad)
            if msg.rcode == dnswire.RCODE_SERVFAIL:
                last = DnsReply(rcode=RCODE_SERVFAIL)
                continue
            if msg.rcode != dnswire.RCODE_NOERROR:
                last = DnsReply(rcode=RCODE_SERVFAIL)
                continue
            values = sorted({rr.value for rr in msg.answers if rr.rtype == rtype})
            return DnsReply(rcode=RCODE_NOERROR, values=values, authenticated=msg.ad)
        return last


@dataclass
class DnsSnapshotEntry:
    pld: str
    records: dict[str, list[str]] = field(default_factory=dict)
    rcodes: dict[str, str] = field(default_factory=dict)
    a_geo: list[GeoEntry] = field(default_factory=list)
    aaaa_geo: list[GeoEntry] = field(default_factory=list)
    security: SecurityMechanisms = field(default_factory=SecurityMechanisms)
    queried_at: datetime | None = None

    @property
    def nxdomain(self) -> bool:
        return any(rcode == RCODE_NXDOMAIN for rcode in self.rcodes.values())

    def record_counts(self) -> list[int]:
        """Counts in the fixed order NS, A, AAAA, MX, TXT."""
        return [len(self.records.get(rtype, [])) for rtype in RECORD_TYPES]

    def to_dict(self) -> dict:
        return {
            "pld": self.pld,
            "records": {k: list(v) for k, v in sorted(self.records.items())},
            "rcodes": dict(sorted(self.rcodes.items())),
            "a_geo": [[g.country, g.organization] for g in self.a_geo],
            "aaaa_geo": [[g.country, g.organization] for g in self.aaaa_geo],
            "security": self.security.to_dict(),
            "queried_at": self.queried_at.isoformat() if self.queried_at else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DnsSnapshotEntry":
        return cls(
            pld=d["pld"],
            records={k: list(v) for k, v in d["records"].items()},
            rcodes=dict(d["rcodes"]),
            a_geo=[GeoEntry(c, o) for c, o in d["a_geo"]],
            aaaa_geo=[GeoEntry(c, o) for c, o in d["aaaa_geo"]],
            security=SecurityMechanisms.from_dict(d["security"]),
            queried_at=datetime.fromisoformat(d["queried_at"]) if d["queried_at"] else None,
        )


def probe_security(
    pld: str,
    client: DnsClient,
    dkim_selectors: tuple[str, ...] = DEFAULT_DKIM_SELECTORS,
) -> SecurityMechanisms:
    """Presence probes for the seven mechanisms; timeouts read as absent."""
    dnskey = client.query(pld, "DNSKEY")
    caa = client.query(pld, "CAA")
    txt = client.query(pld, "TXT")
    dmarc = client.query(f"_dmarc.{pld}", "TXT")
    mta_sts = client.query(f"_mta-sts.{pld}", "TXT")
    tlsa = client.query(f"_443._tcp.{pld}", "TLSA")
    dkim = False
    for selector in dkim_selectors:
        reply = client.query(f"{selector}._domainkey.{pld}", "TXT")
        if reply.rcode == RCODE_NOERROR and reply.values:
            dkim = True
            break
    for name, reply in (("DNSKEY", dnskey), ("CAA", caa), ("TXT", txt),
                        ("_dmarc", dmarc), ("_mta-sts", mta_sts), ("TLSA", tlsa)):
        if reply.rcode == RCODE_TIMEOUT:
            logger.warning("security probe %s for %s timed out; treating as absent",
                           name, pld)
    return SecurityMechanisms(
        dnssec=bool(dnskey.values) and dnskey.authenticated,
        caa=bool(caa.values),
        spf=any(v.startswith("v=spf1") for v in txt.values),
        dkim=dkim,
        dmarc=any(v.startswith("v=DMARC1") for v in dmarc.values),
        mta_sts=any(v.startswith("v=STSv1") for v in mta_sts.values),
        dane=bool(tlsa.values),
    )


def crawl_dns(
    plds: set[str] | list[str],
    client: DnsClient,
    geo: GeoProvider,
    *,
    clock: Clock | None = None,
    dkim_selectors: tuple[str, ...] = DEFAULT_DKIM_SELECTORS,
) -> dict[str, DnsSnapshotEntry]:
    """One DnsSnapshotEntry per input PLD; NXDOMAIN and timeouts are recorded.

    Raises ResolverUnavailableError when not a single query of the whole
    crawl got an answer.
    """
    if not plds:
        raise ValueError("crawl_dns needs a non-empty PLD set")
    clock = clock if clock is not None else SystemClock()
    out: dict[str, DnsSnapshotEntry] = {}
    any_answer = False
    failed_queries = 0
    for pld in sorted(str(p) for p in plds):
        entry = DnsSnapshotEntry(pld=pld, queried_at=clock.utcnow())
        for rtype in RECORD_TYPES:
            reply = client.query(pld, rtype)
            entry.rcodes[rtype] = reply.rcode
            if reply.rcode in (RCODE_NOERROR, RCODE_NXDOMAIN):
                any_answer = True
                if reply.values:
                    entry.records[rtype] = reply.values
            else:
                failed_queries += 1
            # a resolver that never answers aborts the iteration early
            if not any_answer and failed_queries >= 10:
                raise ResolverUnavailableError(
                    f"first {failed_queries} DNS queries all failed; "
                    "resolver unreachable?")
        entry.a_geo = [geo.lookup(ip) or UNKNOWN_GEO for ip in entry.records.get("A", [])]
        entry.aaaa_geo = [geo.lookup(ip) or UNKNOWN_GEO
                          for ip in entry.records.get("AAAA", [])]
        # probes run even for unresolvable names; they simply come back all-false
        entry.security = probe_security(pld, client, dkim_selectors)
        out[pld] = entry
    if not any_answer:
        raise ResolverUnavailableError("every DNS query in the crawl failed")
    return out

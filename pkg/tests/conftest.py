from __future__ import annotations

import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import pytest

from quietlist import dnswire
from quietlist.clock import SimulatedClock
from quietlist.dnscrawl import DnsClient, DnsSnapshotEntry, GeoEntry, SecurityMechanisms
from quietlist.httpfetch import CertificateInfo, RawResponse, TransportError
from quietlist.pld import SuffixRuleSet
from quietlist.store import IterationSnapshot
from quietlist.webcrawl import DomainWebRecord, ParkingSignals, WebCrawlResult

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def rules() -> SuffixRuleSet:
    return SuffixRuleSet.bundled()


# -- fake HTTP transport ---------------------------------------------------------


@dataclass
class FakeTransport:
    """In-memory site map: url -> (status, html) or an error kind string."""

    site: dict[str, tuple[int, str] | str]
    requests: list[str] = field(default_factory=list)

    def get(self, url: str, headers: dict[str, str]) -> RawResponse:
        self.requests.append(url)
        entry = self.site.get(url)
        if entry is None:
            return RawResponse(status=404, headers={}, body=b"not found")
        if isinstance(entry, str):
            raise TransportError(entry)
        status, html = entry
        headers_out = {"content-type": "text/html; charset=utf-8"}
        if 300 <= status < 400:
            headers_out["location"] = html
            return RawResponse(status=status, headers=headers_out, body=b"")
        return RawResponse(status=status, headers=headers_out, body=html.encode("utf-8"))


def page(title: str, links: list[tuple[str, str]] | None = None, body: str = "") -> str:
    anchors = "".join(f'<a href="{href}">{text}</a>' for href, text in (links or []))
    return f"<html><head><title>{title}</title></head><body><p>{body}</p>{anchors}</body></html>"


# -- fake DNS transport ----------------------------------------------------------


def make_dns_transport(zones: dict[str, dict]):
    """Wire-level responder over a zone dict.

    Zone shape: {name: {"NS": [...], ..., "dnssec": bool,
                        "subrecords": {label: {"TXT": [...]}}}}.
    """

    def find(qname: str) -> tuple[dict | None, str]:
        if qname in zones:
            return zones[qname], ""
        for name in zones:
            if qname.endswith("." + name):
                return zones[name], qname[: -(len(name) + 1)]
        return None, ""

    def transport(wire: bytes) -> bytes:
        query = dnswire.parse_message(wire)
        zone, sub = find(query.qname)
        if zone is None:
            return dnswire.build_response(query, dnswire.RCODE_NXDOMAIN, [])
        qtype_name = dnswire.NAME_BY_TYPE.get(query.qtype, "")
        if sub == "":
            values = list(zone.get(qtype_name, []))
            if qtype_name == "DNSKEY" and zone.get("dnssec"):
                values = ["257 3 13 dGVzdC1rZXk="]
        else:
            subrecords = (zone.get("subrecords") or {}).get(sub)
            if subrecords is None:
                return dnswire.build_response(
                    query, dnswire.RCODE_NXDOMAIN, [],
                    authenticated=bool(zone.get("dnssec")))
            values = list(subrecords.get(qtype_name, []))
        answers = [
            dnswire.ResourceRecord(name=query.qname, rtype=query.qtype, ttl=60, value=v)
            for v in values
        ]
        return dnswire.build_response(query, dnswire.RCODE_NOERROR, answers,
                                      authenticated=bool(zone.get("dnssec")))

    return transport


def make_dns_client(zones: dict[str, dict]) -> DnsClient:
    return DnsClient("fake", transport=make_dns_transport(zones))


# -- snapshot builders -----------------------------------------------------------


def make_cert(not_before: datetime, not_after: datetime, valid: bool = True,
              issuer_org: str = "ExampleCert", issuer_country: str = "US",
              subject_org: str = "ExampleCorp", subject_country: str = "JP") -> CertificateInfo:
    return CertificateInfo(
        issuer_organization=issuer_org,
        issuer_country=issuer_country,
        subject_organization=subject_org,
        subject_country=subject_country,
        not_before=not_before,
        not_after=not_after,
        chain_valid_at_fetch=valid,
    )


def utc(*args) -> datetime:
    return datetime(*args, tzinfo=timezone.utc)


def make_record(pld: str, *, titles=None, link_texts=None, backlinks=None,
                status=200, error=None, https=False, cert=None, cert_at=None,
                parking=None, fetched=True) -> DomainWebRecord:
    record = DomainWebRecord(pld=pld)
    record.titles = titles or []
    record.link_texts = link_texts or []
    record.backlink_sources = dict(backlinks or {})
    record.fetched = fetched
    record.status_code = status
    record.error = error
    record.access_failed = bool(error) or (status is not None and status >= 400)
    record.failure_detail = error or (f"http_status_{status}"
                                      if status and status >= 400 else None)
    record.https_used = https or cert is not None
    record.certificate = cert
    record.cert_fetched_at = cert_at
    if parking is not None:
        record.parking = ParkingSignals(**parking)
    return record


def make_dns_entry(pld: str, *, ns=None, a=None, aaaa=None, mx=None, txt=None,
                   nxdomain=False, a_geo=None, aaaa_geo=None,
                   security=None) -> DnsSnapshotEntry:
    entry = DnsSnapshotEntry(pld=pld, queried_at=utc(2026, 8, 7, 12))
    if nxdomain:
        entry.rcodes = {rt: "NXDomain" for rt in ("NS", "A", "AAAA", "MX", "TXT")}
        return entry
    entry.rcodes = {rt: "NoError" for rt in ("NS", "A", "AAAA", "MX", "TXT")}
    for key, values in (("NS", ns), ("A", a), ("AAAA", aaaa), ("MX", mx), ("TXT", txt)):
        if values:
            entry.records[key] = sorted(values)
    entry.a_geo = [GeoEntry(*g) for g in (a_geo or [])]
    entry.aaaa_geo = [GeoEntry(*g) for g in (aaaa_geo or [])]
    if security is not None:
        entry.security = SecurityMechanisms(**security)
    return entry


def make_snapshot(iteration_id: int, records: dict[str, DomainWebRecord],
                  dns: dict[str, DnsSnapshotEntry], seed_list: str = "seeds",
                  date: str = "2026-08-07") -> IterationSnapshot:
    web = WebCrawlResult(seed_list=seed_list, discovered=records)
    return IterationSnapshot(
        iteration_id=iteration_id,
        date=date,
        seed_list=seed_list,
        web=web,
        dns=dns,
        config_fingerprint="fixture",
    )


# -- the end-to-end fixture world run (shared by acceptance and CLI tests) -------


@dataclass
class WorldRun:
    store: object
    reports: dict[int, dict]
    allowlists: dict[int, object]
    elapsed_seconds: float
    seed_list: str


@pytest.fixture(scope="session")
def world_run(tmp_path_factory) -> WorldRun:
    from quietlist.fixtureworld import WorldScript, serve_world
    from quietlist.labeling import LabelReport
    from quietlist.listgen import AllowList
    from quietlist.pipeline import run_iteration
    from quietlist.store import SnapshotStore

    base = tmp_path_factory.mktemp("world")
    script = WorldScript.from_yaml(FIXTURES / "world.yaml")
    store = SnapshotStore(base / "store")
    clock = SimulatedClock()
    started = time.monotonic()
    world = serve_world(script, 1, base / "world")
    try:
        for iteration in (1, 2, 3):
            world.set_iteration(iteration)
            config = world.make_config(base / "store")
            run_iteration(config, store, clock)
    finally:
        world.stop()
    elapsed = time.monotonic() - started

    reports: dict[int, dict] = {}
    allowlists: dict[int, AllowList] = {}
    for iteration in (2, 3):
        reports[iteration] = LabelReport.from_dict(
            store.load_artifact(script.name, iteration, "labels")).to_dict()
        allowlists[iteration] = AllowList.from_dict(
            store.load_artifact(script.name, iteration, "allowlist"))
    return WorldRun(store=store, reports=reports, allowlists=allowlists,
                    elapsed_seconds=elapsed, seed_list=script.name)

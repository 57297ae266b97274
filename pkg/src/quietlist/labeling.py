"""Week-over-week trust labeling.

Five rule categories are checked sequentially for every domain; the first
match assigns the category and ends labeling for that domain, so the
categories never overlap. Domains with no two observations to diff stay
Unknown.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .dnscrawl import DnsSnapshotEntry
from .store import IterationSnapshot
from .webcrawl import DomainWebRecord, record_backlinks

CATEGORY_DNS = "DnsChange"
CATEGORY_CERT = "CertChange"
CATEGORY_ACCESS = "AccessChange"
CATEGORY_BACKLINK = "BacklinkDrop"
CATEGORY_PARKING = "Parking"
CATEGORY_ORDER = (
    CATEGORY_DNS,
    CATEGORY_CERT,
    CATEGORY_ACCESS,
    CATEGORY_BACKLINK,
    CATEGORY_PARKING,
)

DEFAULT_DROP_RATIO = 0.5
DEFAULT_SALE_PHRASES = (
    "domain is for sale",
    "domain for sale",
    "buy this domain",
    "this domain may be for sale",
    "purchase this domain",
)


class SnapshotMismatchError(ValueError):
    """The two snapshots do not belong to the same seed list."""


@dataclass
class ParkingConfig:
    """Parking detection: NS-suffix provider patterns plus content heuristics."""

    providers: set[str]
    min_ad_markers: int = 3
    max_words: int = 50
    sale_phrases: tuple[str, ...] = DEFAULT_SALE_PHRASES

    def __post_init__(self) -> None:
        if not self.providers:
            raise ValueError("parking provider list must be non-empty")
        self.providers = {p.strip().strip(".").lower() for p in self.providers if p.strip()}

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "ParkingConfig":
        providers = set()
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if line and not line.startswith("#"):
                providers.add(line)
        return cls(providers=providers, **kwargs)

    @classmethod
    def bundled(cls, **kwargs) -> "ParkingConfig":
        text = (resources.files("quietlist.data")
                .joinpath("parking_providers.txt").read_text(encoding="utf-8"))
        providers = {line.strip() for line in text.splitlines()
                     if line.strip() and not line.startswith("#")}
        return cls(providers=providers, **kwargs)


@dataclass
class TrustLabel:
    pld: str
    category: str | None  # None means Unknown
    evidence: str = ""

    @property
    def untrustworthy(self) -> bool:
        return self.category is not None


@dataclass
class LabelReport:
    iteration_id: int
    counts: dict[str, int] = field(default_factory=dict)
    labeled: dict[str, TrustLabel] = field(default_factory=dict)
    unknown: set[str] = field(default_factory=set)

    @property
    def subtotal(self) -> int:
        """Total labeled domains: the sum of the five category counts."""
        return sum(self.counts.get(cat, 0) for cat in CATEGORY_ORDER)

    @classmethod
    def from_counts(cls, iteration_id: int, counts: dict[str, int]) -> "LabelReport":
        unknown_cats = set(counts) - set(CATEGORY_ORDER)
        if unknown_cats:
            raise ValueError(f"unknown categories: {sorted(unknown_cats)}")
        return cls(iteration_id=iteration_id, counts=dict(counts))

    def to_dict(self) -> dict:
        return {
            "iteration_id": self.iteration_id,
            "counts": {cat: self.counts.get(cat, 0) for cat in CATEGORY_ORDER},
            "subtotal": self.subtotal,
            "labeled": {
                pld: {"category": lab.category, "evidence": lab.evidence}
                for pld, lab in sorted(self.labeled.items())
            },
            "unknown": sorted(self.unknown),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelReport":
        report = cls(iteration_id=d["iteration_id"], counts=dict(d["counts"]))
        report.labeled = {
            pld: TrustLabel(pld=pld, category=item["category"], evidence=item["evidence"])
            for pld, item in d["labeled"].items()
        }
        report.unknown = set(d["unknown"])
        return report


def _ns_set(entry: DnsSnapshotEntry | None) -> set[str]:
    if entry is None:
        return set()
    return {ns.lower().rstrip(".") for ns in entry.records.get("NS", [])}


def rule_dns_change(prev_entry: DnsSnapshotEntry | None,
                    curr_entry: DnsSnapshotEntry | None) -> bool:
    """NS record sets differ (order-insensitive) or either lookup was NXDOMAIN."""
    if prev_entry is None or curr_entry is None:
        return False
    if prev_entry.nxdomain or curr_entry.nxdomain:
        return True
    return _ns_set(prev_entry) != _ns_set(curr_entry)


def _cert_expired_in(record: DomainWebRecord | None) -> bool:
    if record is None or record.certificate is None or record.cert_fetched_at is None:
        return False
    return not record.certificate.valid_at(record.cert_fetched_at)


def rule_cert_expired(prev_web: DomainWebRecord | None,
                      curr_web: DomainWebRecord | None) -> bool:
    """Reached over HTTPS and the leaf's validity window excluded the fetch
    time in either snapshot (a later renewal does not clear the flag)."""
    reached_https = any(r is not None and r.https_used for r in (prev_web, curr_web))
    if not reached_https:
        return False
    return _cert_expired_in(prev_web) or _cert_expired_in(curr_web)


def rule_access_failure(prev_web: DomainWebRecord | None,
                        curr_web: DomainWebRecord | None) -> bool:
    """Connection/TLS error, timeout, or HTTP status >= 400 in either snapshot."""
    return any(r is not None and r.fetched and r.access_failed
               for r in (prev_web, curr_web))


def rule_backlink_drop(prev_count: int, curr_count: int,
                       drop_ratio: float = DEFAULT_DROP_RATIO) -> bool:
    """Strictly more than ``drop_ratio`` of the backlinks disappeared."""
    if prev_count <= 0:
        return False
    return (prev_count - curr_count) / prev_count > drop_ratio


def _parked(entry: DnsSnapshotEntry | None, record: DomainWebRecord | None,
            cfg: ParkingConfig) -> str | None:
    """Why this snapshot looks parked, or None."""
    if entry is not None:
        for ns in _ns_set(entry):
            for provider in cfg.providers:
                if ns == provider or ns.endswith("." + provider):
                    return f"NS {ns} matches parking provider {provider}"
    if record is not None and record.parking is not None:
        signals = record.parking
        if signals.ad_markers >= cfg.min_ad_markers and signals.word_count < cfg.max_words:
            return (f"ad-heavy thin page ({signals.ad_markers} ad markers, "
                    f"{signals.word_count} words)")
        excerpt = signals.excerpt.lower()
        for phrase in cfg.sale_phrases:
            if phrase in excerpt:
                return f"sale phrase {phrase!r} on page"
    return None


def rule_parking(prev: tuple[DnsSnapshotEntry | None, DomainWebRecord | None],
                 curr: tuple[DnsSnapshotEntry | None, DomainWebRecord | None],
                 cfg: ParkingConfig) -> bool:
    """Parked in either week: covers ceased, started, and continuing parking."""
    return _parked(*prev, cfg) is not None or _parked(*curr, cfg) is not None


def label_iteration(
    prev: IterationSnapshot,
    curr: IterationSnapshot,
    cfg: ParkingConfig | None = None,
    drop_ratio: float = DEFAULT_DROP_RATIO,
) -> LabelReport:
    """Diff the latest two snapshots and label untrustworthy domains.

    Domains first seen this iteration have nothing to diff and stay
    Unknown. Domains that vanished from the current crawl are treated as a
    100% backlink drop unless an earlier rule already fired on them.
    """
    if prev.seed_list != curr.seed_list:
        raise SnapshotMismatchError(
            f"seed lists differ: {prev.seed_list!r} vs {curr.seed_list!r}")
    if prev.iteration_id >= curr.iteration_id:
        raise SnapshotMismatchError("prev snapshot must be older than curr")
    cfg = cfg if cfg is not None else ParkingConfig.bundled()

    prev_backlinks = {pld: len(srcs) for pld, srcs in record_backlinks(prev.web).items()}
    curr_backlinks = {pld: len(srcs) for pld, srcs in record_backlinks(curr.web).items()}

    report = LabelReport(iteration_id=curr.iteration_id,
                         counts={cat: 0 for cat in CATEGORY_ORDER})
    population = sorted(set(prev.web.discovered) | set(curr.web.discovered))
    for pld in population:
        prev_web = prev.web.discovered.get(pld)
        curr_web = curr.web.discovered.get(pld)
        prev_dns = prev.dns.get(pld)
        curr_dns = curr.dns.get(pld)
        if prev_web is None:
            report.unknown.add(pld)  # first sighting: no diff possible yet
            continue

        prev_count = prev_backlinks.get(pld, 0)
        curr_count = curr_backlinks.get(pld, 0)
        category: str | None = None
        evidence = ""
        if curr_web is not None and rule_dns_change(prev_dns, curr_dns):
            category = CATEGORY_DNS
            if (curr_dns is not None and curr_dns.nxdomain) or (
                    prev_dns is not None and prev_dns.nxdomain):
                evidence = "name no longer resolves (NXDOMAIN)"
            else:
                evidence = (f"NS set changed {sorted(_ns_set(prev_dns))} -> "
                            f"{sorted(_ns_set(curr_dns))}")
        elif rule_cert_expired(prev_web, curr_web):
            category = CATEGORY_CERT
            when = "previous" if _cert_expired_in(prev_web) else "current"
            evidence = f"expired certificate presented in {when} crawl"
        elif rule_access_failure(prev_web, curr_web):
            category = CATEGORY_ACCESS
            failing = curr_web if (curr_web is not None and curr_web.access_failed) else prev_web
            evidence = f"fetch failed: {failing.failure_detail or failing.status_code}"
        elif rule_backlink_drop(prev_count, curr_count, drop_ratio):
            category = CATEGORY_BACKLINK
            evidence = f"backlinks dropped {prev_count} -> {curr_count}"
        elif rule_parking((prev_dns, prev_web), (curr_dns, curr_web), cfg):
            category = CATEGORY_PARKING
            evidence = (_parked(curr_dns, curr_web, cfg)
                        or _parked(prev_dns, prev_web, cfg) or "parked")

        if category is not None:
            report.counts[category] += 1
            report.labeled[pld] = TrustLabel(pld=pld, category=category, evidence=evidence)
        elif curr_web is not None:
            report.unknown.add(pld)
        # an unlabeled domain absent from the current crawl simply drops out
    return report

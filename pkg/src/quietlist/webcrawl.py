"""Seed-scoped web crawl: follow internal links to a bounded depth, fetch
external pay-level domains exactly once, and record titles, link texts,
backlink sources, certificates, and access outcomes.
"""

from __future__ import annotations

import enum
import logging
import urllib.robotparser
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from urllib.parse import urlsplit

from . import htmlparse
from .httpfetch import CertificateInfo, FetchResult, PoliteFetcher
from .pld import PayLevelDomain, SuffixRuleSet, extract_pld

logger = logging.getLogger(__name__)

DEFAULT_MAX_DEPTH = 3
DEFAULT_MIN_HOST_INTERVAL = 3.0
DEFAULT_PAGE_BUDGET = 500


class SeedListError(ValueError):
    """Seed list failed validation at load time."""


@dataclass
class SeedList:
    """Named, ordered seed URLs; one distinct PLD per seed."""

    name: str
    seeds: list[str]

    @classmethod
    def load(cls, path: str | Path, rules: SuffixRuleSet, name: str | None = None) -> "SeedList":
        path = Path(path)
        seeds = []
        for raw in path.read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if line and not line.startswith("#"):
                seeds.append(line)
        return cls.validated(name or path.stem, seeds, rules)

    @classmethod
    def validated(cls, name: str, seeds: list[str], rules: SuffixRuleSet) -> "SeedList":
        seen: set[str] = set()
        for url in seeds:
            parts = urlsplit(url)
            if parts.scheme not in ("http", "https") or not parts.hostname:
                raise SeedListError(f"seed is not an absolute http(s) URL: {url!r}")
            try:
                pld = extract_pld(parts.hostname, rules).name
            except ValueError as exc:
                raise SeedListError(f"seed {url!r}: {exc}") from exc
            if pld in seen:
                raise SeedListError(f"duplicate seed PLD {pld!r}")
            seen.add(pld)
        return cls(name=name, seeds=list(seeds))


@dataclass
class CrawlPolicy:
    max_depth: int = DEFAULT_MAX_DEPTH
    min_host_interval: float = DEFAULT_MIN_HOST_INTERVAL
    respect_robots: bool = True
    politeness_enabled: bool = True
    per_seed_page_budget: int = DEFAULT_PAGE_BUDGET
    fetch_timeout: float = 10.0
    max_redirects: int = 5
    user_agent: str = ""

    def __post_init__(self) -> None:
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.per_seed_page_budget < 1:
            raise ValueError("per_seed_page_budget must be positive")
        if self.politeness_enabled and self.min_host_interval < DEFAULT_MIN_HOST_INTERVAL:
            raise ValueError(
                f"min_host_interval must be >= {DEFAULT_MIN_HOST_INTERVAL}s "
                "while politeness is enabled")

    @property
    def effective_interval(self) -> float:
        return self.min_host_interval if self.politeness_enabled else 0.0

    def to_dict(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "min_host_interval": self.min_host_interval,
            "respect_robots": self.respect_robots,
            "politeness_enabled": self.politeness_enabled,
            "per_seed_page_budget": self.per_seed_page_budget,
            "fetch_timeout": self.fetch_timeout,
            "max_redirects": self.max_redirects,
            "user_agent": self.user_agent,
        }


class LinkAction(enum.Enum):
    FOLLOW_AND_EXTRACT = "follow_and_extract"
    FETCH_ONCE = "fetch_once"
    SKIP = "skip"


def classify_link(
    seed_pld: PayLevelDomain | str,
    link_pld: PayLevelDomain | str,
    current_depth: int,
    policy: CrawlPolicy,
) -> LinkAction:
    """Decide how a link found at ``current_depth`` is handled.

    Links to the seed's own PLD are followed while the child page stays
    within the depth budget; links to any other PLD are fetched exactly
    once with no further extraction.
    """
    if str(link_pld) != str(seed_pld):
        return LinkAction.FETCH_ONCE
    if current_depth + 1 <= policy.max_depth:
        return LinkAction.FOLLOW_AND_EXTRACT
    return LinkAction.SKIP


@dataclass
class PageObservation:
    url: str
    final_url: str
    depth: int
    status_code: int | None
    error: str | None
    title: str
    outlinks: list[tuple[str, str]]
    certificate: CertificateInfo | None
    fetched_at: datetime | None

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "final_url": self.final_url,
            "depth": self.depth,
            "status_code": self.status_code,
            "error": self.error,
            "title": self.title,
            "outlinks": [list(pair) for pair in self.outlinks],
            "certificate": self.certificate.to_dict() if self.certificate else None,
            "fetched_at": self.fetched_at.isoformat() if self.fetched_at else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PageObservation":
        return cls(
            url=d["url"],
            final_url=d["final_url"],
            depth=d["depth"],
            status_code=d["status_code"],
            error=d["error"],
            title=d["title"],
            outlinks=[tuple(pair) for pair in d["outlinks"]],
            certificate=CertificateInfo.from_dict(d["certificate"]) if d["certificate"] else None,
            fetched_at=datetime.fromisoformat(d["fetched_at"]) if d["fetched_at"] else None,
        )


@dataclass
class ParkingSignals:
    ad_markers: int = 0
    word_count: int = 0
    excerpt: str = ""

    def to_dict(self) -> dict:
        return {"ad_markers": self.ad_markers, "word_count": self.word_count,
                "excerpt": self.excerpt}

    @classmethod
    def from_dict(cls, d: dict) -> "ParkingSignals":
        return cls(ad_markers=d["ad_markers"], word_count=d["word_count"],
                   excerpt=d["excerpt"])


@dataclass
class DomainWebRecord:
    """Everything the crawl learned about one discovered PLD this iteration."""

    pld: str
    titles: list[tuple[str, str]] = field(default_factory=list)  # (page url, title)
    link_texts: list[tuple[str, str]] = field(default_factory=list)  # (source page url, text)
    backlink_sources: dict[str, int] = field(default_factory=dict)  # source PLD -> link count
    fetched: bool = False
    robots_blocked: bool = False
    status_code: int | None = None
    error: str | None = None
    access_failed: bool = False
    failure_detail: str | None = None
    https_used: bool = False
    certificate: CertificateInfo | None = None
    cert_fetched_at: datetime | None = None
    parking: ParkingSignals | None = None
    aliases: list[str] = field(default_factory=list)

    def backlink_count(self) -> int:
        """Distinct source PLDs linking here, the unit the drop rule uses."""
        return len([src for src in self.backlink_sources if src != self.pld])

    def to_dict(self) -> dict:
        return {
            "pld": self.pld,
            "titles": [list(pair) for pair in self.titles],
            "link_texts": [list(pair) for pair in self.link_texts],
            "backlink_sources": dict(sorted(self.backlink_sources.items())),
            "fetched": self.fetched,
            "robots_blocked": self.robots_blocked,
            "status_code": self.status_code,
            "error": self.error,
            "access_failed": self.access_failed,
            "failure_detail": self.failure_detail,
            "https_used": self.https_used,
            "certificate": self.certificate.to_dict() if self.certificate else None,
            "cert_fetched_at": self.cert_fetched_at.isoformat() if self.cert_fetched_at else None,
            "parking": self.parking.to_dict() if self.parking else None,
            "aliases": sorted(self.aliases),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainWebRecord":
        return cls(
            pld=d["pld"],
            titles=[tuple(pair) for pair in d["titles"]],
            link_texts=[tuple(pair) for pair in d["link_texts"]],
            backlink_sources=dict(d["backlink_sources"]),
            fetched=d["fetched"],
            robots_blocked=d["robots_blocked"],
            status_code=d["status_code"],
            error=d["error"],
            access_failed=d["access_failed"],
            failure_detail=d["failure_detail"],
            https_used=d["https_used"],
            certificate=CertificateInfo.from_dict(d["certificate"]) if d["certificate"] else None,
            cert_fetched_at=(datetime.fromisoformat(d["cert_fetched_at"])
                             if d["cert_fetched_at"] else None),
            parking=ParkingSignals.from_dict(d["parking"]) if d["parking"] else None,
            aliases=list(d["aliases"]),
        )


@dataclass
class WebCrawlResult:
    seed_list: str
    per_seed: dict[str, list[PageObservation]] = field(default_factory=dict)
    discovered: dict[str, DomainWebRecord] = field(default_factory=dict)
    seed_status: dict[str, str] = field(default_factory=dict)  # seed PLD -> ok|unreachable:<why>
    skipped_links: int = 0

    def to_dict(self) -> dict:
        return {
            "seed_list": self.seed_list,
            "per_seed": {
                pld: [obs.to_dict() for obs in pages]
                for pld, pages in sorted(self.per_seed.items())
            },
            "discovered": {
                pld: rec.to_dict() for pld, rec in sorted(self.discovered.items())
            },
            "seed_status": dict(sorted(self.seed_status.items())),
            "skipped_links": self.skipped_links,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WebCrawlResult":
        return cls(
            seed_list=d["seed_list"],
            per_seed={
                pld: [PageObservation.from_dict(o) for o in pages]
                for pld, pages in d["per_seed"].items()
            },
            discovered={
                pld: DomainWebRecord.from_dict(r) for pld, r in d["discovered"].items()
            },
            seed_status=dict(d["seed_status"]),
            skipped_links=d["skipped_links"],
        )


class _RobotsCache:
    """Per-host robots.txt verdicts, fetched politely through the crawler's fetcher."""

    def __init__(self, fetcher: PoliteFetcher, enabled: bool, user_agent: str) -> None:
        self._fetcher = fetcher
        self._enabled = enabled
        self._user_agent = user_agent
        self._parsers: dict[str, urllib.robotparser.RobotFileParser | None] = {}

    def allowed(self, url: str) -> bool:
        if not self._enabled:
            return True
        parts = urlsplit(url)
        key = f"{parts.scheme}://{parts.netloc}"
        if key not in self._parsers:
            probe = self._fetcher.fetch(f"{key}/robots.txt")
            if probe.error is None and probe.status_code == 200:
                parser = urllib.robotparser.RobotFileParser()
                parser.parse(htmlparse.decode_body(probe.body, None).splitlines())
                self._parsers[key] = parser
            else:
                # unreachable or 4xx robots.txt: standard crawler convention is allow
                self._parsers[key] = None
        parser = self._parsers[key]
        return True if parser is None else parser.can_fetch(self._user_agent, url)


def _record_for(result: WebCrawlResult, pld: str) -> DomainWebRecord:
    if pld not in result.discovered:
        result.discovered[pld] = DomainWebRecord(pld=pld)
    return result.discovered[pld]


def _apply_fetch(record: DomainWebRecord, fetch: FetchResult,
                 content: htmlparse.PageContent | None) -> None:
    if not record.fetched:  # representative outcome is the first fetch (the seed page)
        record.status_code = fetch.status_code
        record.error = fetch.error
    record.fetched = True
    if fetch.failed:
        record.access_failed = True
        detail = fetch.error or f"http_status_{fetch.status_code}"
        if record.failure_detail is None:
            record.failure_detail = detail
    if fetch.final_url.startswith("https://") or fetch.certificate is not None:
        record.https_used = True
    if fetch.certificate is not None and record.certificate is None:
        record.certificate = fetch.certificate
        record.cert_fetched_at = fetch.fetched_at
    if content is not None:
        record.titles.append((fetch.final_url, content.title))
        signals = ParkingSignals(ad_markers=content.ad_markers,
                                 word_count=content.word_count,
                                 excerpt=content.excerpt)
        if record.parking is None or signals.ad_markers > record.parking.ad_markers:
            record.parking = signals


def crawl_seed_list(
    seeds: SeedList,
    policy: CrawlPolicy,
    rules: SuffixRuleSet,
    fetcher: PoliteFetcher,
) -> WebCrawlResult:
    """Breadth-first crawl of every seed, recording one observation per page.

    Per-page failures become recorded outcomes, never exceptions; pages are
    not retried within an iteration. External PLDs are fetched at most once
    across the whole seed-list crawl.
    """
    result = WebCrawlResult(seed_list=seeds.name)
    robots = _RobotsCache(fetcher, policy.respect_robots, fetcher.user_agent)
    seed_plds = {extract_pld(urlsplit(u).hostname, rules).name for u in seeds.seeds}
    fetched_externals: set[str] = set()
    alias_of: dict[str, str] = {}  # link PLD -> final identity after redirects

    def fetch_external(link_pld: str, url: str) -> None:
        """Fetch an external PLD once; redirects may move its identity."""
        target = alias_of.get(link_pld, link_pld)
        if target in fetched_externals or target in seed_plds:
            return
        fetched_externals.add(target)
        record = _record_for(result, target)
        if not robots.allowed(url):
            record.robots_blocked = True
            return
        fetch = fetcher.fetch(url)
        content = None
        if fetch.ok:
            content = htmlparse.parse_page(
                htmlparse.decode_body(fetch.body, fetch.headers.get("content-type")),
                fetch.final_url,
            )
        final_host = urlsplit(fetch.final_url).hostname or ""
        try:
            final_pld = extract_pld(final_host, rules).name
        except ValueError:
            final_pld = target
        if final_pld != target:
            # discovered identity is the final URL's PLD; keep the original as alias
            moved = _record_for(result, final_pld)
            moved.titles.extend(record.titles)
            moved.link_texts.extend(record.link_texts)
            for src, n in record.backlink_sources.items():
                moved.backlink_sources[src] = moved.backlink_sources.get(src, 0) + n
            if target not in moved.aliases:
                moved.aliases.append(target)
            del result.discovered[target]
            alias_of[target] = final_pld
            fetched_externals.add(final_pld)
            record = moved
        _apply_fetch(record, fetch, content)

    for seed_url in seeds.seeds:
        seed_pld = extract_pld(urlsplit(seed_url).hostname, rules).name
        pages: list[PageObservation] = []
        result.per_seed[seed_pld] = pages
        seed_record = _record_for(result, seed_pld)
        if not robots.allowed(seed_url):
            seed_record.robots_blocked = True
            result.seed_status[seed_pld] = "unreachable:robots_disallowed"
            continue

        queue: list[tuple[str, int]] = [(seed_url, 0)]
        enqueued: set[str] = {seed_url}
        budget = policy.per_seed_page_budget
        seed_ok = False

        while queue and budget > 0:
            url, depth = queue.pop(0)
            if depth > 0 and not robots.allowed(url):
                continue
            budget -= 1
            fetch = fetcher.fetch(url)
            content = None
            if fetch.ok:
                content = htmlparse.parse_page(
                    htmlparse.decode_body(fetch.body, fetch.headers.get("content-type")),
                    fetch.final_url,
                )
            final_host = urlsplit(fetch.final_url).hostname or ""
            try:
                final_pld = extract_pld(final_host, rules).name
            except ValueError:
                final_pld = seed_pld
            if final_pld != seed_pld:
                # the page redirected off the seed PLD: treat as an external once-fetch
                target = _record_for(result, final_pld)
                if url == seed_url and seed_pld not in target.aliases:
                    target.aliases.append(seed_pld)
                if final_pld not in fetched_externals:
                    fetched_externals.add(final_pld)
                    _apply_fetch(target, fetch, content)
                target.backlink_sources[seed_pld] = target.backlink_sources.get(seed_pld, 0) + 1
                if depth == 0:
                    result.seed_status[seed_pld] = f"redirected:{final_pld}"
                continue

            obs = PageObservation(
                url=url,
                final_url=fetch.final_url,
                depth=depth,
                status_code=fetch.status_code,
                error=fetch.error,
                title=content.title if content else "",
                outlinks=content.links if content else [],
                certificate=fetch.certificate,
                fetched_at=fetch.fetched_at,
            )
            pages.append(obs)
            _apply_fetch(seed_record, fetch, content)
            if depth == 0:
                seed_ok = fetch.ok
            if content is None:
                continue

            for link_url, link_text in content.links:
                link_host = urlsplit(link_url).hostname or ""
                try:
                    link_pld = extract_pld(link_host, rules).name
                except ValueError:
                    result.skipped_links += 1
                    continue
                action = classify_link(seed_pld, link_pld, depth, policy)
                if action is LinkAction.FOLLOW_AND_EXTRACT:
                    if link_url not in enqueued:
                        enqueued.add(link_url)
                        queue.append((link_url, depth + 1))
                elif action is LinkAction.FETCH_ONCE:
                    target_pld = alias_of.get(link_pld, link_pld)
                    target = _record_for(result, target_pld)
                    target.link_texts.append((fetch.final_url, link_text))
                    target.backlink_sources[seed_pld] = (
                        target.backlink_sources.get(seed_pld, 0) + 1
                    )
                    fetch_external(link_pld, link_url)

        if seed_pld not in result.seed_status:
            result.seed_status[seed_pld] = "ok" if seed_ok else "unreachable:fetch_failed"

    return result


def record_backlinks(result: WebCrawlResult) -> dict[str, set[str]]:
    """Distinct seed-scope source PLDs per discovered PLD (self-links excluded)."""
    return {
        pld: {src for src in record.backlink_sources if src != pld}
        for pld, record in result.discovered.items()
    }

"""End-to-end weekly iteration and per-stage entry points.

Every stage persists its output before the next one starts, so a failed
run leaves committed snapshots untouched and the pipeline resumes from
whatever already exists.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import pulearn
from .clock import Clock, SystemClock
from .config import PipelineConfig
from .dnscrawl import DnsClient, FileGeoProvider, GeoEntry, GeoProvider, crawl_dns
from .features import (
    FeatureMatrix,
    HashingEmbedder,
    RemoteEmbedder,
    build_vocabs,
    extract_features,
)
from .httpfetch import DEFAULT_USER_AGENT, PoliteFetcher, SocketTransport
from .labeling import CATEGORY_ORDER, LabelReport, ParkingConfig, label_iteration
from .listgen import AllowList, generate_allowlist
from .pld import SuffixRuleSet
from .store import (
    InsufficientHistoryError,
    IterationSnapshot,
    SnapshotStore,
    config_fingerprint,
)
from .webcrawl import SeedList, WebCrawlResult, crawl_seed_list, record_backlinks

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class IterationRow:
    """One line of the weekly accounting table."""

    iteration_id: int
    date: str
    seed_urls: int
    discovered: int
    category_counts: dict[str, int] = field(default_factory=dict)
    subtotal: int | None = None
    sampled: int | None = None
    training: int | None = None
    input: int | None = None
    detected: int | None = None
    emitted: int | None = None
    added: int | None = None
    removed: int | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "iteration_id": self.iteration_id,
            "date": self.date,
            "seed_urls": self.seed_urls,
            "discovered": self.discovered,
            "category_counts": dict(self.category_counts),
            "subtotal": self.subtotal,
            "sampled": self.sampled,
            "training": self.training,
            "input": self.input,
            "detected": self.detected,
            "emitted": self.emitted,
            "added": self.added,
            "removed": self.removed,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRow":
        return cls(**d)


# -- component construction ----------------------------------------------------


def load_rules(config: PipelineConfig) -> SuffixRuleSet:
    if config.suffix_path:
        return SuffixRuleSet.from_file(config.suffix_path)
    return SuffixRuleSet.bundled()


def load_seeds(config: PipelineConfig, rules: SuffixRuleSet) -> SeedList:
    return SeedList.load(config.seed_list_path, rules, name=config.seed_list_name)


def build_fetcher(config: PipelineConfig, clock: Clock) -> PoliteFetcher:
    overrides = {
        key: (addr, int(port))
        for key, (addr, port) in config.connect_overrides.items()
    }
    transport = SocketTransport(
        timeout=config.crawl.fetch_timeout,
        ca_file=config.ca_file or None,
        connect_overrides=overrides,
    )
    return PoliteFetcher(
        transport,
        user_agent=config.crawl.user_agent or DEFAULT_USER_AGENT,
        min_host_interval=config.crawl.effective_interval,
        max_redirects=config.crawl.max_redirects,
        clock=clock,
    )


def build_geo(config: PipelineConfig) -> GeoProvider:
    if config.geo_path:
        return FileGeoProvider.from_file(config.geo_path)

    class _NullGeo:
        def lookup(self, ip: str) -> GeoEntry | None:
            return None

    return _NullGeo()


def build_embedder(config: PipelineConfig):
    if config.embedder_kind == "remote":
        if not config.embed_url:
            raise StageError("features", ValueError("remote embedder needs embed_url"))
        return RemoteEmbedder(config.embed_url)
    return HashingEmbedder()


def build_parking_config(config: PipelineConfig) -> ParkingConfig:
    kwargs = {
        "min_ad_markers": config.parking_min_ad_markers,
        "max_words": config.parking_max_words,
    }
    if config.parking_providers_path:
        return ParkingConfig.from_file(config.parking_providers_path, **kwargs)
    return ParkingConfig.bundled(**kwargs)


# -- stages -------------------------------------------------------------------


def stage_crawl_web(config: PipelineConfig, store: SnapshotStore,
                    clock: Clock) -> tuple[int, WebCrawlResult]:
    rules = load_rules(config)
    seeds = load_seeds(config, rules)
    iteration_id = store.next_iteration_id(seeds.name)
    fetcher = build_fetcher(config, clock)
    web = crawl_seed_list(seeds, config.crawl, rules, fetcher)
    store.save_artifact(seeds.name, iteration_id, "web", web.to_dict())
    return iteration_id, web


def stage_crawl_dns(config: PipelineConfig, store: SnapshotStore,
                    clock: Clock) -> IterationSnapshot:
    rules = load_rules(config)
    seeds = load_seeds(config, rules)
    iteration_id = store.next_iteration_id(seeds.name)
    web = WebCrawlResult.from_dict(store.load_artifact(seeds.name, iteration_id, "web"))
    client = DnsClient(config.resolver_host, config.resolver_port,
                       timeout=config.dns_timeout, retries=config.dns_retries)
    dns = crawl_dns(set(web.discovered), client, build_geo(config), clock=clock)
    snapshot = IterationSnapshot(
        iteration_id=iteration_id,
        date=clock.utcnow().date().isoformat(),
        seed_list=seeds.name,
        web=web,
        dns=dns,
        config_fingerprint=config_fingerprint(config.crawl.to_dict(), seeds.seeds),
    )
    store.put_snapshot(snapshot)
    return snapshot


def stage_features(config: PipelineConfig, store: SnapshotStore,
                   seed_list: str) -> FeatureMatrix:
    snapshot = store.get_snapshot(seed_list, store.latest_id(seed_list))
    vocabs = build_vocabs(snapshot)
    matrix = extract_features(snapshot, vocabs, build_embedder(config))
    store.save_artifact(seed_list, snapshot.iteration_id, "features", matrix.to_dict())
    return matrix


def stage_label(config: PipelineConfig, store: SnapshotStore,
                seed_list: str) -> LabelReport:
    prev, curr = store.latest_pair(seed_list)
    report = label_iteration(prev, curr, build_parking_config(config),
                             drop_ratio=config.drop_ratio)
    store.save_artifact(seed_list, curr.iteration_id, "labels", report.to_dict())
    return report


def stage_train(config: PipelineConfig, store: SnapshotStore,
                seed_list: str) -> pulearn.PuModel | None:
    iteration_id = store.latest_id(seed_list)
    matrix = FeatureMatrix.from_dict(store.load_artifact(seed_list, iteration_id, "features"))
    report = LabelReport.from_dict(store.load_artifact(seed_list, iteration_id, "labels"))
    ts = pulearn.build_training_set(report, matrix, seed=config.tuning_seed,
                                    sample_ratio=config.sample_ratio)
    if not ts.positives:
        logger.warning("no positives at iteration %d; training skipped", iteration_id)
        return None
    budget = pulearn.TuningBudget(trials=config.tuning_trials, seed=config.tuning_seed)
    model = pulearn.train_pu(ts, config.base_kind, budget,
                             min_rows=config.min_training_rows)
    store.save_artifact(seed_list, iteration_id, "model", model.to_dict())
    return model


def _load_previous_allowlist(store: SnapshotStore, seed_list: str,
                             before_iteration: int) -> AllowList | None:
    for iteration_id in range(before_iteration - 1, 0, -1):
        if store.has_artifact(seed_list, iteration_id, "allowlist"):
            return AllowList.from_dict(
                store.load_artifact(seed_list, iteration_id, "allowlist"))
    return None


def stage_generate(config: PipelineConfig, store: SnapshotStore,
                   seed_list: str) -> AllowList:
    iteration_id = store.latest_id(seed_list)
    snapshot = store.get_snapshot(seed_list, iteration_id)
    matrix = FeatureMatrix.from_dict(store.load_artifact(seed_list, iteration_id, "features"))
    report = LabelReport.from_dict(store.load_artifact(seed_list, iteration_id, "labels"))
    model = pulearn.PuModel.from_dict(store.load_artifact(seed_list, iteration_id, "model"))
    ts = pulearn.build_training_set(report, matrix, seed=config.tuning_seed,
                                    sample_ratio=config.sample_ratio)
    post_filter: set[str] | None = None
    if config.post_filter_path:
        from pathlib import Path

        post_filter = {
            line.strip() for line in
            Path(config.post_filter_path).read_text(encoding="utf-8").splitlines()
            if line.strip() and not line.startswith("#")
        }
    backlinks = {pld: len(srcs) for pld, srcs in record_backlinks(snapshot.web).items()}
    allow = generate_allowlist(
        model, matrix, report, ts,
        threshold=config.threshold,
        prev=_load_previous_allowlist(store, seed_list, iteration_id),
        backlink_counts=backlinks,
        date=snapshot.date,
        seed_list=seed_list,
        post_filter=post_filter,
    )
    store.save_artifact(seed_list, iteration_id, "allowlist", allow.to_dict())
    list_path = store.root / seed_list / f"allowlist_{iteration_id:06d}.list"
    allow.write_files(list_path)
    return allow


# -- the full weekly iteration ---------------------------------------------------


def run_iteration(config: PipelineConfig, store: SnapshotStore,
                  clock: Clock | None = None) -> IterationRow:
    """Crawl, featurize, and (from the second iteration on) label, train,
    and emit the allow list. Returns the accounting row for this run."""
    clock = clock if clock is not None else SystemClock()

    def run(stage_name: str, fn, *args):
        try:
            return fn(*args)
        except Exception as exc:
            raise StageError(stage_name, exc) from exc

    run("crawl-web", stage_crawl_web, config, store, clock)
    snapshot = run("crawl-dns", stage_crawl_dns, config, store, clock)
    seed_list = snapshot.seed_list
    run("features", stage_features, config, store, seed_list)

    row = IterationRow(
        iteration_id=snapshot.iteration_id,
        date=snapshot.date,
        seed_urls=len(load_seeds(config, load_rules(config)).seeds),
        discovered=len(snapshot.web.discovered),
    )
    try:
        store.latest_pair(seed_list)
    except InsufficientHistoryError:
        row.note = "allow list deferred: insufficient history"
        store.save_artifact(seed_list, snapshot.iteration_id, "summary", row.to_dict())
        return row

    report = run("label", stage_label, config, store, seed_list)
    row.category_counts = {cat: report.counts.get(cat, 0) for cat in CATEGORY_ORDER}
    row.subtotal = report.subtotal
    model = run("train", stage_train, config, store, seed_list)
    if model is None:
        row.note = "training skipped: no labeled domains"
        store.save_artifact(seed_list, snapshot.iteration_id, "summary", row.to_dict())
        return row
    allow = run("generate", stage_generate, config, store, seed_list)
    acc = allow.accounting
    row.sampled = acc.sampled
    row.training = acc.training
    row.input = acc.input
    row.detected = acc.detected
    row.emitted = acc.emitted
    row.added = len(allow.added)
    row.removed = len(allow.removed)
    store.save_artifact(seed_list, snapshot.iteration_id, "summary", row.to_dict())
    return row


# -- report rendering ------------------------------------------------------------


_TABLE_COLUMNS = (
    "Week", "Date", "Seed URLs", "Discovered (A)",
    "DNS", "Cert", "Access", "Backlink", "Parking",
    "Subtotal (B)", "Unknown (C)", "Training (D)",
    "Input (E)", "Detected (F)", "Allowed (G)", "(+)", "(-)",
)


def _cell(value) -> str:
    return "-" if value is None else f"{value:,}" if isinstance(value, int) else str(value)


def render_weekly_table(rows: list[IterationRow]) -> str:
    table: list[list[str]] = [list(_TABLE_COLUMNS)]
    for week, row in enumerate(sorted(rows, key=lambda r: r.iteration_id), start=1):
        cats = row.category_counts or {}
        table.append([
            str(week),
            row.date,
            _cell(row.seed_urls),
            _cell(row.discovered),
            *[_cell(cats.get(cat) if cats else None) for cat in CATEGORY_ORDER],
            _cell(row.subtotal),
            _cell(row.sampled),
            _cell(row.training),
            _cell(row.input),
            _cell(row.detected),
            _cell(row.emitted),
            _cell(row.added),
            _cell(row.removed),
        ])
    widths = [max(len(line[i]) for line in table) for i in range(len(_TABLE_COLUMNS))]
    lines = []
    for n, line in enumerate(table):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(line, widths)))
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_overlap_table(reports: list, precision: int = 2) -> str:
    if not reports:
        return "(no overlap reports)"
    name_w = max(len(r.toplist_name) for r in reports)
    lines = [f"{'Top list'.ljust(name_w)}  Overlap"]
    lines.append(f"{'-' * name_w}  -------")
    for r in reports:
        lines.append(f"{r.toplist_name.ljust(name_w)}  {r.format(precision)}")
    return "\n".join(lines)

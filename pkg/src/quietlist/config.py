"""Pipeline configuration: one YAML document plus flag/env overrides.

Only two environment variables are honored, both for endpoints that vary
between deployments: QUIETLIST_RESOLVER (host:port) and QUIETLIST_EMBED_URL.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .webcrawl import CrawlPolicy

ENV_RESOLVER = "QUIETLIST_RESOLVER"
ENV_EMBED_URL = "QUIETLIST_EMBED_URL"


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    seed_list_path: str
    store_root: str
    seed_list_name: str = ""
    suffix_path: str = ""                      # empty -> bundled snapshot
    crawl: CrawlPolicy = field(default_factory=CrawlPolicy)
    resolver_host: str = "127.0.0.1"
    resolver_port: int = 53
    dns_timeout: float = 2.0
    dns_retries: int = 2
    geo_path: str = ""                         # empty -> every lookup is unknown
    embedder_kind: str = "builtin"             # builtin | remote
    embed_url: str = ""
    drop_ratio: float = 0.5
    parking_providers_path: str = ""           # empty -> bundled list
    parking_min_ad_markers: int = 3
    parking_max_words: int = 50
    base_kind: str = "boosted"
    tuning_trials: int = 25
    tuning_seed: int = 7
    threshold: float = 0.1
    sample_ratio: float = 1.0
    min_training_rows: int = 20
    report_precision: int = 2
    post_filter_path: str = ""                 # optional external verdict file
    ca_file: str = ""                          # extra trust anchor (fixture worlds)
    connect_overrides: dict[str, list] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.embedder_kind not in ("builtin", "remote"):
            raise ConfigError(f"unknown embedder kind {self.embedder_kind!r}")
        if not self.seed_list_name:
            self.seed_list_name = Path(self.seed_list_path).stem

    def validate_paths(self) -> None:
        for label, path in (
            ("seed list", self.seed_list_path),
            ("suffix snapshot", self.suffix_path),
            ("geo table", self.geo_path),
            ("parking providers", self.parking_providers_path),
            ("post filter", self.post_filter_path),
            ("ca file", self.ca_file),
        ):
            if path and not Path(path).exists():
                raise ConfigError(f"{label} file not found: {path}")

    @classmethod
    def from_yaml(cls, path: str | Path, overrides: dict | None = None) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path} must hold a mapping")
        doc.update(overrides or {})

        crawl_doc = doc.pop("crawl", {}) or {}
        try:
            crawl = CrawlPolicy(**crawl_doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad crawl policy: {exc}") from exc
        resolver = doc.pop("resolver", None)
        if resolver:
            host, _, port = str(resolver).partition(":")
            doc["resolver_host"] = host
            doc["resolver_port"] = int(port) if port else 53
        if os.environ.get(ENV_RESOLVER):
            host, _, port = os.environ[ENV_RESOLVER].partition(":")
            doc["resolver_host"] = host
            doc["resolver_port"] = int(port) if port else 53
        if os.environ.get(ENV_EMBED_URL):
            doc["embed_url"] = os.environ[ENV_EMBED_URL]
            doc["embedder_kind"] = "remote"
        try:
            config = cls(crawl=crawl, **doc)
        except TypeError as exc:
            raise ConfigError(f"bad config key: {exc}") from exc
        config.validate_paths()
        return config

    def to_yaml(self, path: str | Path) -> None:
        doc = {
            "seed_list_path": self.seed_list_path,
            "store_root": self.store_root,
            "seed_list_name": self.seed_list_name,
            "suffix_path": self.suffix_path,
            "crawl": self.crawl.to_dict(),
            "resolver": f"{self.resolver_host}:{self.resolver_port}",
            "dns_timeout": self.dns_timeout,
            "dns_retries": self.dns_retries,
            "geo_path": self.geo_path,
            "embedder_kind": self.embedder_kind,
            "embed_url": self.embed_url,
            "drop_ratio": self.drop_ratio,
            "parking_providers_path": self.parking_providers_path,
            "parking_min_ad_markers": self.parking_min_ad_markers,
            "parking_max_words": self.parking_max_words,
            "base_kind": self.base_kind,
            "tuning_trials": self.tuning_trials,
            "tuning_seed": self.tuning_seed,
            "threshold": self.threshold,
            "sample_ratio": self.sample_ratio,
            "min_training_rows": self.min_training_rows,
            "report_precision": self.report_precision,
            "post_filter_path": self.post_filter_path,
            "ca_file": self.ca_file,
            "connect_overrides": {k: list(v) for k, v in self.connect_overrides.items()},
        }
        Path(path).write_text(yaml.safe_dump(doc, sort_keys=True), encoding="utf-8")

"""Append-only on-disk store for per-iteration observations.

Layout: one directory per seed list holding gzip-compressed JSON documents
(``iteration_000001.json.gz``) plus a plain ``index.json``. Snapshots are
immutable once written; derived artifacts (features, labels, models,
lists) live next to them and may be regenerated.
"""

from __future__ import annotations

import gzip
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dnscrawl import DnsSnapshotEntry
from .webcrawl import WebCrawlResult


class StoreError(RuntimeError):
    pass


class DuplicateIterationError(StoreError):
    pass


class CoverageMismatchError(StoreError):
    """The dns map does not cover exactly the discovered PLD set."""


class InsufficientHistoryError(StoreError):
    """Fewer than two snapshots exist; diff-based labeling needs a pair."""


class MissingArtifactError(StoreError):
    pass


@dataclass
class IterationSnapshot:
    iteration_id: int
    date: str  # ISO calendar date
    seed_list: str
    web: WebCrawlResult
    dns: dict[str, DnsSnapshotEntry]
    config_fingerprint: str = ""

    def validate(self) -> None:
        discovered = set(self.web.discovered)
        covered = set(self.dns)
        if discovered != covered:
            missing = sorted(discovered - covered)[:5]
            extra = sorted(covered - discovered)[:5]
            raise CoverageMismatchError(
                f"dns coverage mismatch (missing={missing}, extra={extra})")

    def to_dict(self) -> dict:
        return {
            "iteration_id": self.iteration_id,
            "date": self.date,
            "seed_list": self.seed_list,
            "web": self.web.to_dict(),
            "dns": {pld: entry.to_dict() for pld, entry in sorted(self.dns.items())},
            "config_fingerprint": self.config_fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationSnapshot":
        return cls(
            iteration_id=d["iteration_id"],
            date=d["date"],
            seed_list=d["seed_list"],
            web=WebCrawlResult.from_dict(d["web"]),
            dns={pld: DnsSnapshotEntry.from_dict(e) for pld, e in d["dns"].items()},
            config_fingerprint=d["config_fingerprint"],
        )


def config_fingerprint(policy_dict: dict, seeds: list[str]) -> str:
    canon = json.dumps({"policy": policy_dict, "seeds": seeds},
                       sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def dump_document(payload: dict, path: Path) -> None:
    """Write one gzip JSON document atomically with reproducible bytes."""
    raw = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as handle:
        with gzip.GzipFile(fileobj=handle, mode="wb", mtime=0) as gz:
            gz.write(raw)
    tmp.replace(path)


def load_document(path: Path) -> dict:
    with gzip.open(path, "rb") as gz:
        return json.loads(gz.read().decode("utf-8"))


@dataclass
class StoreIndex:
    iterations: list[dict] = field(default_factory=list)  # {"id": int, "date": str}

    @property
    def ids(self) -> list[int]:
        return [item["id"] for item in self.iterations]


class SnapshotStore:
    """Single-writer, many-reader store rooted at one directory."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    # -- paths ------------------------------------------------------------

    def _seed_dir(self, seed_list: str) -> Path:
        return self.root / seed_list

    def _index_path(self, seed_list: str) -> Path:
        return self._seed_dir(seed_list) / "index.json"

    def _snapshot_path(self, seed_list: str, iteration_id: int) -> Path:
        return self._seed_dir(seed_list) / f"iteration_{iteration_id:06d}.json.gz"

    def _artifact_path(self, seed_list: str, iteration_id: int, kind: str) -> Path:
        return (self._seed_dir(seed_list) / "artifacts"
                / f"iteration_{iteration_id:06d}.{kind}.json.gz")

    # -- index ------------------------------------------------------------

    def read_index(self, seed_list: str) -> StoreIndex:
        path = self._index_path(seed_list)
        if not path.exists():
            return StoreIndex()
        return StoreIndex(iterations=json.loads(path.read_text(encoding="utf-8")))

    def _write_index(self, seed_list: str, index: StoreIndex) -> None:
        path = self._index_path(seed_list)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(index.iterations, indent=2, sort_keys=True),
                       encoding="utf-8")
        tmp.replace(path)

    # -- snapshots ----------------------------------------------------------

    def put_snapshot(self, snapshot: IterationSnapshot) -> int:
        snapshot.validate()
        index = self.read_index(snapshot.seed_list)
        if snapshot.iteration_id in index.ids:
            raise DuplicateIterationError(
                f"iteration {snapshot.iteration_id} already stored")
        if index.ids and snapshot.iteration_id < index.ids[-1]:
            raise DuplicateIterationError(
                f"iteration ids must increase (last={index.ids[-1]})")
        if index.iterations and snapshot.date < index.iterations[-1]["date"]:
            raise StoreError(
                f"snapshot date {snapshot.date} precedes stored "
                f"{index.iterations[-1]['date']}")
        self._seed_dir(snapshot.seed_list).mkdir(parents=True, exist_ok=True)
        path = self._snapshot_path(snapshot.seed_list, snapshot.iteration_id)
        if path.exists():
            raise DuplicateIterationError(f"{path} exists; snapshots are immutable")
        dump_document(snapshot.to_dict(), path)
        index.iterations.append({"id": snapshot.iteration_id, "date": snapshot.date})
        self._write_index(snapshot.seed_list, index)
        return snapshot.iteration_id

    def get_snapshot(self, seed_list: str, iteration_id: int) -> IterationSnapshot:
        path = self._snapshot_path(seed_list, iteration_id)
        if not path.exists():
            raise MissingArtifactError(f"no snapshot {iteration_id} for {seed_list!r}")
        return IterationSnapshot.from_dict(load_document(path))

    def latest_pair(self, seed_list: str) -> tuple[IterationSnapshot, IterationSnapshot]:
        """The two highest-id snapshots, oldest first."""
        ids = self.read_index(seed_list).ids
        if len(ids) < 2:
            raise InsufficientHistoryError(
                f"{len(ids)} snapshot(s) for {seed_list!r}; labeling needs two")
        prev_id, curr_id = sorted(ids)[-2:]
        return self.get_snapshot(seed_list, prev_id), self.get_snapshot(seed_list, curr_id)

    def latest_id(self, seed_list: str) -> int:
        ids = self.read_index(seed_list).ids
        if not ids:
            raise InsufficientHistoryError(f"no snapshots for {seed_list!r}")
        return max(ids)

    def next_iteration_id(self, seed_list: str) -> int:
        ids = self.read_index(seed_list).ids
        return (max(ids) + 1) if ids else 1

    def prune(self, seed_list: str, keep_last: int) -> list[int]:
        """Drop all but the newest ``keep_last`` snapshots; returns dropped ids."""
        index = self.read_index(seed_list)
        if keep_last < 1 or len(index.iterations) <= keep_last:
            return []
        dropped = index.iterations[:-keep_last]
        index.iterations = index.iterations[-keep_last:]
        for item in dropped:
            self._snapshot_path(seed_list, item["id"]).unlink(missing_ok=True)
        self._write_index(seed_list, index)
        return [item["id"] for item in dropped]

    # -- derived artifacts --------------------------------------------------

    def save_artifact(self, seed_list: str, iteration_id: int, kind: str,
                      payload: dict) -> Path:
        path = self._artifact_path(seed_list, iteration_id, kind)
        path.parent.mkdir(parents=True, exist_ok=True)
        dump_document(payload, path)
        return path

    def load_artifact(self, seed_list: str, iteration_id: int, kind: str) -> dict:
        path = self._artifact_path(seed_list, iteration_id, kind)
        if not path.exists():
            raise MissingArtifactError(
                f"missing {kind} artifact for {seed_list!r} iteration {iteration_id}")
        return load_document(path)

    def has_artifact(self, seed_list: str, iteration_id: int, kind: str) -> bool:
        return self._artifact_path(seed_list, iteration_id, kind).exists()

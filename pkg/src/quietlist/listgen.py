"""Allow-list emission with strict accounting, plus top-list comparison.

Accounting identities hold on every run:
    D = B + C      training = labeled + sampled unknowns
    E = A - D      scoring input = discovered minus training
    G = E - F      emitted = input minus detected
    G_t = G_{t-1} + added - removed
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .features import FeatureMatrix
from .labeling import LabelReport
from .pld import (
    InvalidHostnameError,
    IpAddressEntryError,
    NoRegistrableDomainError,
    SuffixRuleSet,
    normalize_entry,
)
from .pulearn import PuModel, TrainingSet, score

DEFAULT_THRESHOLD = 0.1


class AccountingError(RuntimeError):
    """An accounting identity failed to hold."""


class UnparseableFileError(ValueError):
    pass


@dataclass
class Accounting:
    discovered: int   # A
    labeled: int      # B
    sampled: int      # C
    training: int     # D = B + C
    input: int        # E = A - D
    detected: int     # F
    emitted: int      # G = E - F

    def validate(self) -> None:
        if self.training != self.labeled + self.sampled:
            raise AccountingError(
                f"D != B + C ({self.training} != {self.labeled} + {self.sampled})")
        if self.input != self.discovered - self.training:
            raise AccountingError(
                f"E != A - D ({self.input} != {self.discovered} - {self.training})")
        if self.emitted != self.input - self.detected:
            raise AccountingError(
                f"G != E - F ({self.emitted} != {self.input} - {self.detected})")

    @classmethod
    def replay(cls, discovered: int, labeled: int, sampled: int,
               detected: int) -> "Accounting":
        """Derive D, E, G from published (A, B, C, F) and check the identities."""
        acc = cls(
            discovered=discovered,
            labeled=labeled,
            sampled=sampled,
            training=labeled + sampled,
            input=discovered - (labeled + sampled),
            detected=detected,
            emitted=discovered - (labeled + sampled) - detected,
        )
        acc.validate()
        return acc

    def to_dict(self) -> dict:
        return {
            "discovered": self.discovered, "labeled": self.labeled,
            "sampled": self.sampled, "training": self.training,
            "input": self.input, "detected": self.detected, "emitted": self.emitted,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Accounting":
        return cls(**d)


def check_diff_identity(prev_emitted: int, added: int, removed: int,
                        emitted: int) -> None:
    if prev_emitted + added - removed != emitted:
        raise AccountingError(
            f"G_t != G_t-1 + added - removed "
            f"({emitted} != {prev_emitted} + {added} - {removed})")


@dataclass
class AllowListEntry:
    score: float
    first_seen: int
    backlinks: int

    def to_dict(self) -> dict:
        return {"score": self.score, "first_seen": self.first_seen,
                "backlinks": self.backlinks}


@dataclass
class AllowList:
    """The emitted list: trusted, infrequently visited PLDs with provenance."""

    iteration_id: int
    date: str
    seed_list: str
    threshold: float
    entries: dict[str, AllowListEntry]
    accounting: Accounting
    added: set[str] = field(default_factory=set)
    removed: set[str] = field(default_factory=set)

    @property
    def plds(self) -> list[str]:
        return sorted(self.entries)

    def to_dict(self) -> dict:
        return {
            "iteration_id": self.iteration_id,
            "date": self.date,
            "seed_list": self.seed_list,
            "threshold": self.threshold,
            "entries": {pld: e.to_dict() for pld, e in sorted(self.entries.items())},
            "accounting": self.accounting.to_dict(),
            "added": sorted(self.added),
            "removed": sorted(self.removed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AllowList":
        return cls(
            iteration_id=d["iteration_id"],
            date=d["date"],
            seed_list=d["seed_list"],
            threshold=d["threshold"],
            entries={
                pld: AllowListEntry(score=e["score"], first_seen=e["first_seen"],
                                    backlinks=e["backlinks"])
                for pld, e in d["entries"].items()
            },
            accounting=Accounting.from_dict(d["accounting"]),
            added=set(d["added"]),
            removed=set(d["removed"]),
        )

    def write_files(self, list_path: str | Path) -> None:
        """One PLD per line, sorted; callers persist the sidecar separately."""
        Path(list_path).write_text(
            "".join(f"{pld}\n" for pld in self.plds), encoding="utf-8")


def generate_allowlist(
    model: PuModel,
    matrix: FeatureMatrix,
    report: LabelReport,
    ts: TrainingSet,
    *,
    threshold: float = DEFAULT_THRESHOLD,
    prev: AllowList | None = None,
    backlink_counts: dict[str, int] | None = None,
    date: str = "",
    seed_list: str = "",
    post_filter: set[str] | None = None,
) -> AllowList:
    """Score the non-training remainder and keep domains below the threshold.

    A score at or above the threshold excludes the domain. Training and
    labeled domains never appear in the output, keeping train and test
    populations separate. ``post_filter`` optionally drops externally
    flagged PLDs after scoring (disabled unless provided).
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    excluded = ts.all_plds | set(report.labeled)
    input_plds = [pld for pld in matrix.plds if pld not in excluded]
    scores = score(model, matrix)
    backlink_counts = backlink_counts or {}

    entries: dict[str, AllowListEntry] = {}
    for pld in input_plds:
        if scores[pld] < threshold:
            first_seen = matrix.iteration_id
            if prev is not None and pld in prev.entries:
                first_seen = prev.entries[pld].first_seen
            entries[pld] = AllowListEntry(
                score=scores[pld],
                first_seen=first_seen,
                backlinks=backlink_counts.get(pld, 0),
            )
    if post_filter:
        # externally flagged domains count toward the detected total
        entries = {pld: e for pld, e in entries.items() if pld not in post_filter}

    prev_plds = set(prev.entries) if prev is not None else set()
    added = set(entries) - prev_plds
    removed = prev_plds - set(entries)
    accounting = Accounting(
        discovered=len(matrix.plds),
        labeled=len(ts.positives),
        sampled=len(ts.unlabeled),
        training=ts.size,
        input=len(input_plds),
        detected=len(input_plds) - len(entries),
        emitted=len(entries),
    )
    accounting.validate()
    allow = AllowList(
        iteration_id=matrix.iteration_id,
        date=date,
        seed_list=seed_list,
        threshold=threshold,
        entries=entries,
        accounting=accounting,
        added=added,
        removed=removed,
    )
    check_diff_identity(
        prev.accounting.emitted if prev is not None else 0,
        len(added), len(removed), accounting.emitted,
    )
    return allow


# -- top-list comparison ------------------------------------------------------


@dataclass
class TopList:
    name: str
    plds: list[str]                       # normalized, first occurrence keeps best rank
    skipped: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.plds)


def _normalize_ranked(name: str, raw_entries: list[str],
                      rules: SuffixRuleSet) -> TopList:
    seen: set[str] = set()
    plds: list[str] = []
    skipped: dict[str, int] = {}
    for raw in raw_entries:
        try:
            pld = normalize_entry(raw, rules).name
        except IpAddressEntryError:
            skipped["ip_literal"] = skipped.get("ip_literal", 0) + 1
            continue
        except (InvalidHostnameError, NoRegistrableDomainError):
            skipped["unparseable"] = skipped.get("unparseable", 0) + 1
            continue
        if pld not in seen:
            seen.add(pld)
            plds.append(pld)
    return TopList(name=name, plds=plds, skipped=skipped)


def load_toplist(path: str | Path, fmt: str, rules: SuffixRuleSet,
                 name: str | None = None) -> TopList:
    """Read a popularity list and normalize every entry to a PLD.

    ``fmt`` is ``plain`` (one entry per line) or ``rank-csv``
    (``rank,domain`` rows, sorted by rank).
    """
    path = Path(path)
    list_name = name or path.stem
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UnparseableFileError(f"cannot read {path}: {exc}") from exc
    raw_entries: list[str] = []
    if fmt == "plain":
        raw_entries = [line.strip() for line in text.splitlines()
                       if line.strip() and not line.startswith("#")]
    elif fmt == "rank-csv":
        ranked: list[tuple[int, str]] = []
        for row in csv.reader(text.splitlines()):
            if not row or len(row) < 2:
                continue
            try:
                rank = int(row[0])
            except ValueError:
                continue  # header row
            ranked.append((rank, row[1].strip()))
        if not ranked:
            raise UnparseableFileError(f"no rank,domain rows in {path}")
        raw_entries = [entry for _rank, entry in sorted(ranked, key=lambda r: r[0])]
    else:
        raise UnparseableFileError(f"unknown top-list format {fmt!r}")
    if not raw_entries:
        raise UnparseableFileError(f"{path} has no entries")
    return _normalize_ranked(list_name, raw_entries, rules)


def top_k(toplist: TopList, k: int) -> TopList:
    """First k normalized PLDs (all of them when the list is shorter)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return TopList(name=f"{toplist.name}-top{k}", plds=toplist.plds[:k],
                   skipped=dict(toplist.skipped))


@dataclass
class OverlapReport:
    allowlist_name: str
    toplist_name: str
    intersection: int
    denominator: int
    percentage: float  # rounded to 2 decimals

    def format(self, precision: int = 2) -> str:
        pct = round(100.0 * self.intersection / self.denominator, precision)
        return f"{self.intersection} ({pct:.{precision}f}%)"


def overlap(allow_plds: list[str] | set[str], toplist: TopList,
            allowlist_name: str = "allowlist") -> OverlapReport:
    """Share of the allow list also present in the (normalized) top list."""
    allow_set = set(allow_plds)
    if not allow_set or not toplist.plds:
        raise ValueError("overlap needs two non-empty lists")
    count = len(allow_set & set(toplist.plds))
    return OverlapReport(
        allowlist_name=allowlist_name,
        toplist_name=toplist.name,
        intersection=count,
        denominator=len(allow_set),
        percentage=round(100.0 * count / len(allow_set), 2),
    )

"""Command-line entry points for the weekly pipeline.

Exit codes: 0 success, 2 configuration error, 3 stage failure, 4 missing
upstream artifact. Scheduling is external; there is no daemon mode.
"""

from __future__ import annotations

import fcntl
import json
import sys
from contextlib import contextmanager
from pathlib import Path

import click

from . import pipeline, pulearn
from .clock import SystemClock
from .config import ConfigError, PipelineConfig
from .features import FeatureMatrix
from .labeling import LabelReport
from .listgen import AllowList, load_toplist, overlap, top_k
from .pld import SuffixRuleSet
from .store import InsufficientHistoryError, MissingArtifactError, SnapshotStore

EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_MISSING = 4


@contextmanager
def _store_lock(store: SnapshotStore, seed_list: str):
    """One pipeline instance per seed list per store."""
    lock_path = store.root / f"{seed_list}.lock"
    with open(lock_path, "w") as handle:
        try:
            fcntl.flock(handle, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise ConfigError(f"store is locked by another run: {lock_path}")
        try:
            yield
        finally:
            fcntl.flock(handle, fcntl.LOCK_UN)


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path: str) -> PipelineConfig:
    try:
        return PipelineConfig.from_yaml(path)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))


def _run_stage(fn, *args):
    try:
        return fn(*args)
    except (MissingArtifactError, InsufficientHistoryError) as exc:
        _fail(EXIT_MISSING, str(exc))
    except pipeline.StageError as exc:
        _fail(EXIT_STAGE, str(exc))
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except Exception as exc:
        _fail(EXIT_STAGE, f"{type(exc).__name__}: {exc}")


@click.group()
def main() -> None:
    """Generate allow lists of infrequently visited yet trustworthy domains."""


_config_option = click.option("--config", "config_path", required=True,
                              type=click.Path(), help="Pipeline config YAML.")


@main.command("run")
@_config_option
def cmd_run(config_path: str) -> None:
    """Run one full iteration: crawl, featurize, label, train, generate."""
    config = _load_config(config_path)
    store = SnapshotStore(config.store_root)
    with _store_lock(store, config.seed_list_name):
        row = _run_stage(pipeline.run_iteration, config, store, SystemClock())
    click.echo(pipeline.render_weekly_table([row]))
    if row.note:
        click.echo(row.note)


def _single_stage(config_path: str, stage: str):
    config = _load_config(config_path)
    store = SnapshotStore(config.store_root)
    clock = SystemClock()
    seed_list = config.seed_list_name
    with _store_lock(store, seed_list):
        if stage == "crawl-web":
            iteration_id, web = _run_stage(pipeline.stage_crawl_web, config, store, clock)
            click.echo(f"iteration {iteration_id}: crawled "
                       f"{sum(len(p) for p in web.per_seed.values())} pages, "
                       f"{len(web.discovered)} domains discovered")
        elif stage == "crawl-dns":
            snapshot = _run_stage(pipeline.stage_crawl_dns, config, store, clock)
            click.echo(f"iteration {snapshot.iteration_id}: stored snapshot with "
                       f"{len(snapshot.dns)} DNS entries")
        elif stage == "features":
            matrix = _run_stage(pipeline.stage_features, config, store, seed_list)
            click.echo(f"iteration {matrix.iteration_id}: {len(matrix.plds)} rows x "
                       f"{matrix.X.shape[1]} columns")
        elif stage == "label":
            report = _run_stage(pipeline.stage_label, config, store, seed_list)
            counts = ", ".join(f"{c}={n}" for c, n in report.counts.items())
            click.echo(f"iteration {report.iteration_id}: {counts} "
                       f"(subtotal {report.subtotal})")
        elif stage == "generate":
            allow = _run_stage(pipeline.stage_generate, config, store, seed_list)
            acc = allow.accounting
            click.echo(f"iteration {allow.iteration_id}: emitted {acc.emitted} domains "
                       f"(+{len(allow.added)}/-{len(allow.removed)})")


for _stage in ("crawl-web", "crawl-dns", "features", "label", "generate"):
    def _make(stage_name: str):
        @_config_option
        def _cmd(config_path: str) -> None:
            _single_stage(config_path, stage_name)
        _cmd.__doc__ = f"Run only the {stage_name} stage against the store."
        return _cmd
    main.command(_stage)(_make(_stage))


@main.command("train")
@_config_option
@click.option("--evaluate-bases", is_flag=True,
              help="Also cross-validate all three base learners and print the table.")
def cmd_train(config_path: str, evaluate_bases: bool) -> None:
    """Train the calibrated scorer on the latest labeled iteration."""
    config = _load_config(config_path)
    store = SnapshotStore(config.store_root)
    seed_list = config.seed_list_name

    def work():
        with _store_lock(store, seed_list):
            model = pipeline.stage_train(config, store, seed_list)
            rows = None
            if evaluate_bases and model is not None:
                iteration_id = store.latest_id(seed_list)
                matrix = FeatureMatrix.from_dict(
                    store.load_artifact(seed_list, iteration_id, "features"))
                report = LabelReport.from_dict(
                    store.load_artifact(seed_list, iteration_id, "labels"))
                ts = pulearn.build_training_set(report, matrix, seed=config.tuning_seed,
                                                sample_ratio=config.sample_ratio)
                folds = max(2, min(5, len(ts.positives)))
                rows = pulearn.evaluate_cv(ts, folds=folds, seed=config.tuning_seed)
            return model, rows

    model, rows = _run_stage(work)
    if model is None:
        click.echo("training skipped: no labeled domains")
        return
    click.echo(f"trained {model.base_kind} model, c_hat={model.c_hat:.4f}, "
               f"search AUC={model.search_auc:.4f}")
    if rows is not None:
        click.echo(pulearn.render_cv_table(rows))


@main.command("compare")
@_config_option
@click.option("--iteration", type=int, default=0,
              help="Allow-list iteration to compare (default: latest).")
@click.option("--toplist", "toplists", multiple=True, required=True,
              type=click.Path(exists=True), help="Top-list file (repeatable).")
@click.option("--format", "fmt", type=click.Choice(["plain", "rank-csv"]),
              default="rank-csv", show_default=True)
@click.option("--k", type=int, default=10000, show_default=True,
              help="Compare against the top k entries.")
def cmd_compare(config_path: str, iteration: int, toplists: tuple[str, ...],
                fmt: str, k: int) -> None:
    """Overlap between a stored allow list and popularity top lists."""
    config = _load_config(config_path)
    store = SnapshotStore(config.store_root)
    seed_list = config.seed_list_name
    rules = pipeline.load_rules(config)

    def work():
        it = iteration or store.latest_id(seed_list)
        allow = AllowList.from_dict(store.load_artifact(seed_list, it, "allowlist"))
        reports = []
        for path in toplists:
            ranked = top_k(load_toplist(path, fmt, rules), k)
            report = overlap(allow.plds, ranked, allowlist_name=seed_list)
            reports.append(report)
            store.save_artifact(seed_list, it, f"overlap-{ranked.name}", {
                "toplist": ranked.name,
                "intersection": report.intersection,
                "denominator": report.denominator,
                "percentage": report.percentage,
            })
        return reports

    reports = _run_stage(work)
    click.echo(pipeline.render_overlap_table(reports, config.report_precision))


@main.command("report")
@_config_option
@click.option("--json", "as_json", is_flag=True, help="Emit machine-readable JSON.")
def cmd_report(config_path: str, as_json: bool) -> None:
    """Render the stored accounting history as the weekly table."""
    config = _load_config(config_path)
    store = SnapshotStore(config.store_root)
    seed_list = config.seed_list_name

    def work():
        index = store.read_index(seed_list)
        if not index.iterations:
            raise MissingArtifactError(f"no iterations stored for {seed_list!r}")
        rows = []
        for item in index.iterations:
            if store.has_artifact(seed_list, item["id"], "summary"):
                rows.append(pipeline.IterationRow.from_dict(
                    store.load_artifact(seed_list, item["id"], "summary")))
        return rows

    rows = _run_stage(work)
    if as_json:
        click.echo(json.dumps([row.to_dict() for row in rows], indent=2, sort_keys=True))
    else:
        click.echo(pipeline.render_weekly_table(rows))


@main.command("prune")
@_config_option
@click.option("--keep", type=int, required=True, help="Keep only the last K snapshots.")
def cmd_prune(config_path: str, keep: int) -> None:
    """Drop old snapshots, keeping the newest K."""
    config = _load_config(config_path)
    store = SnapshotStore(config.store_root)
    with _store_lock(store, config.seed_list_name):
        dropped = _run_stage(store.prune, config.seed_list_name, keep)
    click.echo(f"pruned {len(dropped)} snapshot(s)")


@main.command("pld")
@click.argument("entries", nargs=-1, required=True)
@click.option("--suffix-file", type=click.Path(exists=True), default=None,
              help="Suffix snapshot (default: bundled).")
def cmd_pld(entries: tuple[str, ...], suffix_file: str | None) -> None:
    """Normalize URLs/FQDNs to pay-level domains (debugging helper)."""
    from .pld import normalize_entry

    rules = (SuffixRuleSet.from_file(suffix_file) if suffix_file
             else SuffixRuleSet.bundled())
    for entry in entries:
        try:
            click.echo(f"{entry} -> {normalize_entry(entry, rules)}")
        except ValueError as exc:
            click.echo(f"{entry} -> error: {type(exc).__name__}: {exc}")


if __name__ == "__main__":
    main()

from __future__ import annotations

import pytest
from click.testing import CliRunner

from quietlist.cli import main
from quietlist.fixtureworld import WorldScript, serve_world
from quietlist.store import SnapshotStore
from quietlist.webcrawl import CrawlPolicy

from conftest import FIXTURES


@pytest.fixture(scope="module")
def cli_world(tmp_path_factory):
    """A live fixture world plus a config YAML, reused across CLI tests."""
    base = tmp_path_factory.mktemp("cli")
    script = WorldScript.from_yaml(FIXTURES / "world.yaml")
    world = serve_world(script, 1, base / "world")
    yield world, base, script
    world.stop()


def write_config(world, base, iteration=1, **overrides) -> str:
    world.set_iteration(iteration)
    config = world.make_config(
        base / "store",
        crawl=CrawlPolicy(politeness_enabled=False, min_host_interval=0.0,
                          fetch_timeout=5.0),
        **overrides,
    )
    path = base / f"config_it{iteration}.yaml"
    config.to_yaml(path)
    return str(path)


def invoke(*args) -> tuple[int, str]:
    runner = CliRunner()
    result = runner.invoke(main, list(args))
    return result.exit_code, result.output


def test_run_first_iteration_defers_list(cli_world):
    world, base, script = cli_world
    code, output = invoke("run", "--config", write_config(world, base, 1))
    assert code == 0, output
    assert "deferred" in output
    store = SnapshotStore(base / "store")
    assert store.read_index(script.name).ids == [1]


def test_run_second_iteration_full_row(cli_world):
    world, base, script = cli_world
    code, output = invoke("run", "--config", write_config(world, base, 2))
    assert code == 0, output
    store = SnapshotStore(base / "store")
    assert store.read_index(script.name).ids == [1, 2]
    assert store.has_artifact(script.name, 2, "labels")
    assert store.has_artifact(script.name, 2, "model")
    assert store.has_artifact(script.name, 2, "allowlist")


def test_single_stages_rerun_reproducibly(cli_world):
    world, base, script = cli_world
    config = write_config(world, base, 2)
    store = SnapshotStore(base / "store")
    before = store._artifact_path(script.name, 2, "features").read_bytes()
    code, output = invoke("features", "--config", config)
    assert code == 0, output
    after = store._artifact_path(script.name, 2, "features").read_bytes()
    assert after == before  # byte-identical rerun of a non-crawl stage


def test_report_renders_history(cli_world):
    world, base, script = cli_world
    code, output = invoke("report", "--config", write_config(world, base, 2))
    assert code == 0, output
    lines = [line for line in output.splitlines() if line.strip()]
    assert len(lines) >= 4  # header + separator + two weekly rows
    assert "Discovered (A)" in output


def test_report_json(cli_world):
    import json

    world, base, script = cli_world
    code, output = invoke("report", "--config", write_config(world, base, 2), "--json")
    assert code == 0, output
    rows = json.loads(output)
    assert [row["iteration_id"] for row in rows] == [1, 2]


def test_compare_prints_overlap_table(cli_world, tmp_path):
    world, base, script = cli_world
    store = SnapshotStore(base / "store")
    # plant a non-empty allow list artifact; at 12-domain scale the real model
    # proactively excludes everything
    doc = store.load_artifact(script.name, 2, "allowlist")
    doc["entries"] = {
        "quiet-shop.test": {"score": 0.01, "first_seen": 2, "backlinks": 2},
        "village-news.test": {"score": 0.02, "first_seen": 2, "backlinks": 2},
        "nightly-build.test": {"score": 0.03, "first_seen": 2, "backlinks": 1},
    }
    acc = doc["accounting"]
    acc["emitted"] = 3
    acc["detected"] = acc["input"] - 3
    store.save_artifact(script.name, 2, "allowlist", doc)

    toplist = tmp_path / "top.csv"
    toplist.write_text(
        "1,www.quiet-shop.test\n2,popular.example\n3,village-news.test\n",
        encoding="utf-8")
    code, output = invoke(
        "compare", "--config", write_config(world, base, 2),
        "--toplist", str(toplist), "--k", "10000")
    assert code == 0, output
    assert "2 (66.67%)" in output


def test_label_without_history_exits_4(cli_world, tmp_path_factory):
    world, base, script = cli_world
    fresh = tmp_path_factory.mktemp("empty-store")
    config = world.make_config(
        fresh / "store",
        crawl=CrawlPolicy(politeness_enabled=False, min_host_interval=0.0))
    path = fresh / "config.yaml"
    config.to_yaml(path)
    code, output = invoke("label", "--config", str(path))
    assert code == 4, output


def test_missing_seed_file_exits_2(cli_world, tmp_path):
    world, base, script = cli_world
    config = world.make_config(tmp_path / "store")
    config.seed_list_path = str(tmp_path / "does-not-exist.txt")
    path = tmp_path / "bad.yaml"
    config.to_yaml(path)
    code, output = invoke("run", "--config", str(path))
    assert code == 2, output


def test_bad_threshold_exits_2(cli_world, tmp_path):
    world, base, script = cli_world
    config = world.make_config(tmp_path / "store")
    path = tmp_path / "bad.yaml"
    config.to_yaml(path)
    text = path.read_text().replace("threshold: 0.1", "threshold: 1.7")
    path.write_text(text)
    code, output = invoke("run", "--config", str(path))
    assert code == 2, output


def test_crawl_dns_without_web_artifact_exits_4(cli_world, tmp_path_factory):
    world, base, script = cli_world
    fresh = tmp_path_factory.mktemp("dns-first")
    config = world.make_config(
        fresh / "store",
        crawl=CrawlPolicy(politeness_enabled=False, min_host_interval=0.0))
    path = fresh / "config.yaml"
    config.to_yaml(path)
    code, output = invoke("crawl-dns", "--config", str(path))
    assert code == 4, output


def test_dead_resolver_is_a_stage_failure(cli_world, tmp_path_factory):
    world, base, script = cli_world
    fresh = tmp_path_factory.mktemp("dead-resolver")
    config = world.make_config(
        fresh / "store",
        crawl=CrawlPolicy(politeness_enabled=False, min_host_interval=0.0,
                          fetch_timeout=5.0),
        resolver_port=world.dead_port, dns_timeout=0.05, dns_retries=0)
    path = fresh / "config.yaml"
    config.to_yaml(path)
    code, output = invoke("crawl-web", "--config", str(path))
    assert code == 0, output
    code, output = invoke("crawl-dns", "--config", str(path))
    assert code == 3, output
    # the failed stage never corrupted the store: no snapshot was committed
    store = SnapshotStore(fresh / "store")
    assert store.read_index(script.name).ids == []


def test_train_evaluate_bases_prints_table(cli_world):
    world, base, script = cli_world
    config = write_config(world, base, 2)
    code, output = invoke("train", "--config", config, "--evaluate-bases")
    assert code == 0, output
    assert "c_hat=" in output
    assert "Algorithm" in output and "boosted" in output


def test_pld_helper_command():
    code, output = invoke("pld", "https://www.example.co.uk/x", "192.0.2.1")
    assert code == 0
    assert "example.co.uk" in output
    assert "IpAddressEntryError" in output


def test_prune_command(cli_world):
    world, base, script = cli_world
    code, output = invoke("prune", "--config", write_config(world, base, 2), "--keep", "5")
    assert code == 0, output
    assert "pruned 0 snapshot(s)" in output

"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v`` to see one line per
criterion; the assertions pin the exact tolerances.
"""

from __future__ import annotations

import numpy as np

from quietlist.clock import SimulatedClock
from quietlist.features import EMBED_DIM, HashingEmbedder
from quietlist.httpfetch import PoliteFetcher
from quietlist.labeling import CATEGORY_ORDER, LabelReport, rule_backlink_drop
from quietlist.listgen import Accounting, TopList, check_diff_identity, overlap
from quietlist.models import make_base_classifier
from quietlist.pld import SuffixRuleSet, extract_pld
from quietlist.pulearn import PositiveUnlabeledScorer, evaluate_cv

from conftest import FakeTransport, page
from test_listgen import GLOBAL_ROWS, LOCAL_ROWS, make_world
from test_pld import ORACLE


def _report(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


# -- criterion: end-to-end fixture run ------------------------------------------


def test_criterion_end_to_end_fixture_run(world_run):
    """12-domain world, 3 iterations, 5 scripted label categories."""
    from quietlist.fixtureworld import WorldScript
    from conftest import FIXTURES

    script = WorldScript.from_yaml(FIXTURES / "world.yaml")
    for iteration in (2, 3):
        report = LabelReport.from_dict(world_run.reports[iteration])
        got = {}
        for pld, label in report.labeled.items():
            got.setdefault(label.category, set()).add(pld)
        expected = {cat: set(plds)
                    for cat, plds in script.expectations[iteration].items()}
        assert got == expected, (
            f"iteration {iteration}: labels {got} != manifest {expected}")
    all_cats = [cat for it in (2, 3) for cat in script.expectations[it]]
    assert sorted(all_cats) == sorted(CATEGORY_ORDER)  # each category exactly once
    assert world_run.elapsed_seconds < 60.0
    _report(f"end-to-end fixture run (precision=recall=1.0, "
            f"{world_run.elapsed_seconds:.1f}s < 60s)")


# -- criterion: accounting replay ------------------------------------------------


def test_criterion_accounting_replay():
    for a, b, c, f, g, added, removed, prev_g in GLOBAL_ROWS + LOCAL_ROWS:
        acc = Accounting.replay(a, b, c, f)
        assert acc.training == b + c
        assert acc.input == a - (b + c)
        assert acc.emitted == g
        check_diff_identity(prev_g, added, removed, g)
    assert 4_217 + 10_992 - 1_569 == 13_640
    _report("accounting replay: all 10 published rows reproduce D, E, G exactly")


# -- criterion: labeling subtotal -------------------------------------------------


def test_criterion_labeling_subtotal():
    global_counts = dict(zip(CATEGORY_ORDER, (659, 685, 137, 27, 128)))
    assert LabelReport.from_counts(2, global_counts).subtotal == 1_636
    local_counts = dict(zip(CATEGORY_ORDER, (295, 1491, 144, 37, 191)))
    assert LabelReport.from_counts(2, local_counts).subtotal == 2_158
    _report("labeling subtotals: 1,636 and 2,158 exact")


# -- criterion: PLD suite ----------------------------------------------------------


def test_criterion_pld_suite(rules):
    assert len(ORACLE) == 50
    failures = []
    for host, expected in ORACLE:
        try:
            got = extract_pld(host, rules).name
        except ValueError as exc:
            got = "!" if "public suffix" in str(exc) else "?"
        if got != expected:
            failures.append((host, expected, got))
    assert not failures, failures
    assert extract_pld("www.example.co.uk", rules).name == "example.co.uk"
    _report("PLD suite: 50/50 oracle cases exact, wildcard and exception rules included")


# -- criterion: politeness ----------------------------------------------------------


def test_criterion_politeness():
    hosts = [f"host{i}.test" for i in range(10)]
    site = {f"http://{h}/page{n}": (200, page("x")) for h in hosts for n in range(100)}
    clock = SimulatedClock(start=0.0)
    fetcher = PoliteFetcher(FakeTransport(site), min_host_interval=3.0, clock=clock)
    for n in range(100):
        for host in hosts:
            fetcher.fetch(f"http://{host}/page{n}")
    by_host: dict[str, list[float]] = {}
    for host, stamp in fetcher.request_log:
        by_host.setdefault(host, []).append(stamp)
    assert sum(len(v) for v in by_host.values()) == 1_000
    violations = [
        (host, round(b - a, 3))
        for host, stamps in by_host.items()
        for a, b in zip(stamps, stamps[1:]) if b - a < 3.0
    ]
    assert violations == []

    # robots-disallowed paths are never fetched
    from quietlist.webcrawl import CrawlPolicy, SeedList, crawl_seed_list

    rules = SuffixRuleSet.bundled()
    guarded = {
        "https://seed.test/robots.txt": (200, "User-agent: *\nDisallow: /private"),
        "https://seed.test/": (200, page("home", [
            ("https://seed.test/private/a", "hidden"),
            ("https://seed.test/open", "open"),
        ])),
        "https://seed.test/open": (200, page("open")),
        "https://seed.test/private/a": (200, page("secret")),
    }
    transport = FakeTransport(guarded)
    crawl_seed_list(SeedList.validated("s", ["https://seed.test/"], rules),
                    CrawlPolicy(), rules,
                    PoliteFetcher(transport, min_host_interval=3.0,
                                  clock=SimulatedClock(start=0.0)))
    assert "https://seed.test/private/a" not in transport.requests
    assert "https://seed.test/open" in transport.requests
    _report("politeness: 1,000 fetches over 10 hosts with zero same-host gaps "
            "< 3s; robots-disallowed paths never fetched")


# -- criterion: backlink boundary ---------------------------------------------------


def test_criterion_backlink_boundary():
    assert rule_backlink_drop(10, 5) is False  # exactly 50%: never labels
    assert rule_backlink_drop(10, 4) is True   # strictly more than 50%
    for curr in range(5, 11):
        assert rule_backlink_drop(10, curr) is False
    for curr in range(0, 5):
        assert rule_backlink_drop(10, curr) is True
    _report("backlink boundary: 10->5 never labels, 10->4 always labels")


# -- criterion: PU learning -----------------------------------------------------------


def test_criterion_pu_learning():
    # calibration on a synthetic task with true labeling frequency 0.5
    rng = np.random.default_rng(0)
    n = 2_000
    y = rng.integers(0, 2, size=n).astype(float)
    X = rng.normal(0.0, 1.0, size=(n, 10)) + y[:, None] * 2.2
    s = np.where((y == 1) & (rng.random(n) < 0.5), 1.0, 0.0)
    pu = PositiveUnlabeledScorer(
        base=make_base_classifier("boosted", {"random_state": 0, "n_estimators": 60,
                                              "num_leaves": 15}),
        random_state=0)
    pu.fit(X, s)
    assert abs(pu.c_hat_ - 0.5) <= 0.1

    # boosted-ensemble CV AUC on the separable fixture
    from test_pulearn import synthetic_ts

    ts = synthetic_ts(n=600, informative=2.5)
    rows = {r.kind: r for r in evaluate_cv(ts, folds=3, seed=0)}
    assert rows["boosted"].auc >= 0.90

    # one contract suite across all three base implementations
    from test_models import SMALL_PARAMS, separable

    Xc, yc = separable()
    reruns_identical = {}
    for kind in ("tree", "forest", "boosted"):
        model = make_base_classifier(kind, SMALL_PARAMS[kind]).fit(Xc, yc)
        proba = model.predict_proba(Xc)
        assert np.all((proba >= 0) & (proba <= 1))
        assert model.feature_split_counts_.sum() > 0
        again = make_base_classifier(kind, SMALL_PARAMS[kind]).fit(Xc, yc)
        reruns_identical[kind] = (proba.tobytes()
                                  == again.predict_proba(Xc).tobytes())
    assert reruns_identical["tree"] and reruns_identical["forest"]
    _report(f"PU learning: |c_hat - 0.5| = {abs(pu.c_hat_ - 0.5):.3f} <= 0.1, "
            f"boosted CV AUC = {rows['boosted'].auc:.3f} >= 0.90, "
            "3 bases pass the contract, seeded reruns bit-identical")


# -- criterion: threshold semantics ----------------------------------------------------


def test_criterion_threshold_semantics():
    from quietlist.listgen import generate_allowlist

    scores = {"at.test": 0.1, "under.test": 0.0999, "pos.test": 0.9, "u.test": 0.5}
    model, matrix, report, ts = make_world(scores, ["pos.test"], ["u.test"])
    allow = generate_allowlist(model, matrix, report, ts, threshold=0.1)
    assert "at.test" not in allow.entries
    assert "under.test" in allow.entries

    rng = np.random.default_rng(13)
    for trial in range(100):
        n = int(rng.integers(3, 30))
        score_map = {f"d{i:02d}.test": float(rng.random()) for i in range(n)}
        plds = sorted(score_map)
        lo, hi = sorted(rng.random(2).tolist())
        lo, hi = max(lo, 0.01), max(hi, 0.02)
        m, mx, rep, t = make_world(score_map, [plds[0]], [plds[1]])
        small = generate_allowlist(m, mx, rep, t, threshold=lo)
        large = generate_allowlist(m, mx, rep, t, threshold=hi)
        assert set(small.entries) <= set(large.entries)
    _report("threshold semantics: 0.1 excluded, 0.0999 included; monotone over "
            "100 random score maps")


# -- criterion: overlap tool --------------------------------------------------------------


def test_criterion_overlap_tool(rules, tmp_path):
    allow = [f"d{i}.test" for i in range(13_640)]
    toplist = TopList(name="majestic", plds=allow[:572] + ["other.test"])
    report = overlap(allow, toplist)
    assert (report.intersection, report.denominator) == (572, 13_640)
    assert report.format() == "572 (4.19%)"

    known = overlap(["a.test", "b.test", "c.test", "d.test"],
                    TopList(name="k", plds=["b.test", "d.test", "x.test"]))
    assert known.intersection == 2

    from quietlist.listgen import load_toplist, top_k

    path = tmp_path / "mixed.csv"
    path.write_text("1,https://www.a.example.com/page\n"
                    "2,b.example.org\n"
                    "3,a.example.com\n", encoding="utf-8")
    ranked = top_k(load_toplist(path, "rank-csv", rules), 10_000)
    assert ranked.plds == ["example.com", "example.org"]  # normalized, deduplicated
    hit = overlap(["example.com", "quiet.test"], ranked)
    assert hit.intersection == 1
    _report("overlap tool: 572/13,640 formats as 4.19%; FQDN/URL inputs "
            "normalize to PLDs before intersection")


# -- criterion: feature invariants -----------------------------------------------------


def test_criterion_feature_invariants():
    from quietlist.features import FeatureMatrix, build_vocabs, extract_features
    from test_features import snapshot_with_certs

    snapshot = snapshot_with_certs()
    matrix = extract_features(snapshot, build_vocabs(snapshot), HashingEmbedder())
    assert matrix.X.shape == (len(matrix.plds), len(matrix.columns))
    assert matrix.row("alpha.test")["dns_counts"].tolist() == [4, 2, 2, 6, 7]
    reloaded = FeatureMatrix.from_dict(matrix.to_dict())
    assert reloaded.row("alpha.test")["dns_counts"].tolist() == [4, 2, 2, 6, 7]

    embedder = HashingEmbedder()
    vec_a = embedder.embed("Example Corp quarterly report")
    vec_b = HashingEmbedder().embed("Example Corp quarterly report")
    assert vec_a.shape == (EMBED_DIM,)
    assert abs(np.linalg.norm(vec_a) - 1.0) < 1e-12
    assert vec_a.tobytes() == vec_b.tobytes()
    _report("feature invariants: equal-width rows, dns_counts (4,2,2,6,7) "
            "round-trips, embedder 768-dim unit-norm bitwise-deterministic")

from __future__ import annotations

from quietlist.clock import SimulatedClock
from quietlist.httpfetch import PoliteFetcher

from conftest import FakeTransport, page


def make_fetcher(site, interval=3.0):
    clock = SimulatedClock(start=1_000_000.0)
    fetcher = PoliteFetcher(FakeTransport(site), min_host_interval=interval, clock=clock)
    return fetcher, clock


def test_same_host_requests_are_spaced():
    site = {f"http://a.test/{i}": (200, page(f"p{i}")) for i in range(5)}
    fetcher, _ = make_fetcher(site)
    for i in range(5):
        fetcher.fetch(f"http://a.test/{i}")
    stamps = [t for host, t in fetcher.request_log if host == "a.test"]
    gaps = [b - a for a, b in zip(stamps, stamps[1:])]
    assert all(gap >= 3.0 for gap in gaps)


def test_distinct_hosts_are_not_delayed():
    site = {"http://a.test/": (200, page("a")), "http://b.test/": (200, page("b"))}
    fetcher, clock = make_fetcher(site)
    start = clock.now()
    fetcher.fetch("http://a.test/")
    fetcher.fetch("http://b.test/")
    assert clock.now() == start  # no sleeps across different hosts


def test_scheduler_thousand_fetches_ten_hosts():
    hosts = [f"h{i}.test" for i in range(10)]
    site = {f"http://{h}/p{n}": (200, page("x")) for h in hosts for n in range(100)}
    fetcher, _ = make_fetcher(site)
    for n in range(100):
        for h in hosts:
            fetcher.fetch(f"http://{h}/p{n}")
    by_host: dict[str, list[float]] = {}
    for host, stamp in fetcher.request_log:
        by_host.setdefault(host, []).append(stamp)
    assert sum(len(v) for v in by_host.values()) == 1000
    for stamps in by_host.values():
        assert all(b - a >= 3.0 for a, b in zip(stamps, stamps[1:]))


def test_redirects_followed_and_final_url_reported():
    site = {
        "http://a.test/start": (301, "http://a.test/mid"),
        "http://a.test/mid": (302, "http://b.test/end"),
        "http://b.test/end": (200, page("end")),
    }
    fetcher, _ = make_fetcher(site)
    result = fetcher.fetch("http://a.test/start")
    assert result.ok
    assert result.final_url == "http://b.test/end"
    assert result.url == "http://a.test/start"


def test_redirect_loop_is_bounded():
    site = {
        "http://a.test/x": (301, "http://a.test/y"),
        "http://a.test/y": (301, "http://a.test/x"),
    }
    fetcher, _ = make_fetcher(site)
    result = fetcher.fetch("http://a.test/x")
    assert result.error == "too_many_redirects"
    assert result.failed


def test_connection_errors_become_outcomes():
    site = {"http://down.test/": "connection_error", "http://slow.test/": "timeout"}
    fetcher, _ = make_fetcher(site)
    down = fetcher.fetch("http://down.test/")
    assert down.error == "connection_error" and down.failed
    slow = fetcher.fetch("http://slow.test/")
    assert slow.error == "timeout" and slow.failed


def test_self_identifying_user_agent_on_every_request():
    seen: list[dict] = []

    class SpyTransport:
        def get(self, url, headers):
            seen.append(dict(headers))
            from quietlist.httpfetch import RawResponse

            return RawResponse(status=200, headers={}, body=b"ok")

    fetcher = PoliteFetcher(SpyTransport(), user_agent="research-crawler/1.0 (+contact)",
                            min_host_interval=3.0, clock=SimulatedClock(start=0.0))
    fetcher.fetch("http://a.test/")
    fetcher.fetch("http://b.test/x")
    assert all(h["User-Agent"] == "research-crawler/1.0 (+contact)" for h in seen)


def test_http_4xx_5xx_are_failed_but_not_errors():
    site = {"http://a.test/missing": (404, page("gone")),
            "http://a.test/broken": (503, page("oops"))}
    fetcher, _ = make_fetcher(site)
    for path in ("missing", "broken"):
        result = fetcher.fetch(f"http://a.test/{path}")
        assert result.error is None
        assert result.failed

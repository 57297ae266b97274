from __future__ import annotations

import urllib.request

import pytest

from quietlist import dnswire
from quietlist.dnscrawl import DnsClient, probe_security
from quietlist.fixtureworld import (
    WorldScript,
    WorldScriptError,
    build_world_state,
    serve_world,
)

from conftest import FIXTURES


@pytest.fixture(scope="module")
def script() -> WorldScript:
    return WorldScript.from_yaml(FIXTURES / "world.yaml")


def test_script_has_twelve_domains_and_five_expected_labels(script):
    assert len(script.domains) == 12
    labels = [pld for exp in script.expectations.values()
              for plds in exp.values() for pld in plds]
    assert len(labels) == 5
    categories = [cat for exp in script.expectations.values() for cat in exp]
    assert sorted(categories) == sorted(
        ["DnsChange", "CertChange", "AccessChange", "BacklinkDrop", "Parking"])


def test_mutations_apply_cumulatively(script):
    base = build_world_state(script, 1)
    assert base["metrics-hub.test"].zone.records["NS"] == [
        "ns1.original-dns.test", "ns2.original-dns.test"]
    it2 = build_world_state(script, 2)
    assert it2["metrics-hub.test"].zone.records["NS"] == [
        "ns1.moved-dns.test", "ns2.moved-dns.test"]
    assert not it2["harbor-docs.test"].cert_expired
    it3 = build_world_state(script, 3)
    assert it3["metrics-hub.test"].zone.records["NS"] == [
        "ns1.moved-dns.test", "ns2.moved-dns.test"]  # held from iteration 2
    assert it3["harbor-docs.test"].cert_expired
    assert it3["print-service.test"].access_mode == "refuse"
    assert it3["garden-blog.test"].pages["/"].ad_iframes >= 3


def test_remove_links_edits_linking_pages(script):
    base = build_world_state(script, 1)
    links_before = [href for page in base["seed-two.test"].pages.values()
                    for href, _ in page.links]
    assert any("old-archive.test" in href for href in links_before)
    it2 = build_world_state(script, 2)
    links_after = [href for page in it2["seed-two.test"].pages.values()
                   for href, _ in page.links]
    assert not any("old-archive.test" in href for href in links_after)
    # seed-one keeps its link, so the domain stays discovered
    seed_one = [href for page in it2["seed-one.test"].pages.values()
                for href, _ in page.links]
    assert any("old-archive.test" in href for href in seed_one)


def test_unknown_mutation_domain_rejected(script):
    bad = WorldScript(name="x", seeds=list(script.seeds), domains=dict(script.domains),
                      mutations={2: [{"action": "park", "domain": "nope.test"}]},
                      expectations={})
    with pytest.raises(WorldScriptError):
        bad.validate()


def test_served_world_http_and_dns(script, tmp_path):
    world = serve_world(script, 1, tmp_path)
    try:
        # HTTP dispatches on the Host header
        req = urllib.request.Request(
            f"http://127.0.0.1:{world.http_port}/",
            headers={"Host": "quiet-shop.test"})
        body = urllib.request.urlopen(req, timeout=5).read().decode()
        assert "Quiet Shop" in body

        client = DnsClient("127.0.0.1", port=world.dns_port, timeout=2.0)
        reply = client.query("seed-one.test", "NS")
        assert reply.values == ["ns1.steady-dns.test", "ns2.steady-dns.test"]
        assert client.query("missing.test", "A").rcode == "NXDomain"

        sec = probe_security("seed-one.test", client)
        assert sec.as_vector() == [1, 1, 1, 1, 1, 1, 1]
        sec_plain = probe_security("old-archive.test", client)
        assert sec_plain.as_vector() == [0, 0, 0, 0, 0, 0, 0]
    finally:
        world.stop()


def test_served_world_tls_certificates(script, tmp_path):
    import ssl

    world = serve_world(script, 3, tmp_path)
    try:
        ctx = ssl.create_default_context(cafile=str(world.ca_file))
        import socket

        with socket.create_connection(("127.0.0.1", world.https_port), timeout=5) as sock:
            with ctx.wrap_socket(sock, server_hostname="quiet-shop.test") as tls:
                cert = tls.getpeercert()
                assert ("commonName", "quiet-shop.test") in cert["subject"][0]

        # the expired certificate fails verification but a loose context sees it
        with pytest.raises(ssl.SSLCertVerificationError):
            with socket.create_connection(("127.0.0.1", world.https_port), timeout=5) as sock:
                with ctx.wrap_socket(sock, server_hostname="harbor-docs.test"):
                    pass
    finally:
        world.stop()


def test_refused_domain_has_dead_override(script, tmp_path):
    world = serve_world(script, 3, tmp_path)
    try:
        overrides = world.connect_overrides
        assert overrides["https://print-service.test"] == ("127.0.0.1", world.dead_port)
        assert overrides["https://quiet-shop.test"] == ("127.0.0.1", world.https_port)
    finally:
        world.stop()


def test_real_crawl_of_unchanged_world_is_deterministic(script, tmp_path, rules):
    from quietlist.clock import SimulatedClock
    from quietlist.httpfetch import PoliteFetcher, SocketTransport
    from quietlist.webcrawl import CrawlPolicy, SeedList, crawl_seed_list, record_backlinks

    world = serve_world(script, 1, tmp_path)
    try:
        def crawl_once():
            transport = SocketTransport(timeout=5.0, ca_file=str(world.ca_file),
                                        connect_overrides=world.connect_overrides)
            fetcher = PoliteFetcher(transport, min_host_interval=3.0,
                                    clock=SimulatedClock(start=1_000.0))
            seeds = SeedList.validated(script.name, script.seeds, rules)
            return crawl_seed_list(seeds, CrawlPolicy(fetch_timeout=5.0), rules, fetcher)

        first = crawl_once()
        second = crawl_once()
        assert set(first.discovered) == set(second.discovered)
        assert len(first.discovered) == 12
        assert record_backlinks(first) == record_backlinks(second)
        titles_first = {pld: sorted(rec.titles) for pld, rec in first.discovered.items()}
        titles_second = {pld: sorted(rec.titles) for pld, rec in second.discovered.items()}
        assert titles_first == titles_second
    finally:
        world.stop()


def test_dns_wire_round_trip():
    query_wire = dnswire.build_query(1234, "example.test", dnswire.TYPE_MX)
    query = dnswire.parse_message(query_wire)
    assert (query.qname, query.qtype) == ("example.test", dnswire.TYPE_MX)
    response = dnswire.build_response(
        query, dnswire.RCODE_NOERROR,
        [dnswire.ResourceRecord("example.test", dnswire.TYPE_MX, 60, "10 mx.example.test")],
        authenticated=True)
    parsed = dnswire.parse_message(response)
    assert parsed.qid == 1234
    assert parsed.ad is True
    assert parsed.answers[0].value == "10 mx.example.test"

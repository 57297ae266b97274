"""Scripted multi-domain fixture world served on loopback.

One HTTP server, one HTTPS server (SNI-dispatched per-domain certificates
from a locally generated authority), and one UDP DNS responder host a
scripted set of domains. Week-over-week mutations are applied per
iteration, so end-to-end runs observe exactly the scripted state and the
label oracle is the script's own expectation table.
"""

from __future__ import annotations

import copy
import http.server
import socket
import socketserver
import ssl
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from urllib.parse import urlsplit

import yaml
from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import NameOID

from . import dnswire
from .config import PipelineConfig
from .webcrawl import CrawlPolicy


class PortUnavailableError(OSError):
    pass


class WorldScriptError(ValueError):
    pass


@dataclass
class PageSpec:
    title: str = ""
    body: str = ""
    links: list[tuple[str, str]] = field(default_factory=list)
    ad_iframes: int = 0


@dataclass
class ZoneSpec:
    records: dict[str, list[str]] = field(default_factory=dict)
    subrecords: dict[str, dict[str, list[str]]] = field(default_factory=dict)
    dnssec: bool = False


@dataclass
class DomainState:
    name: str
    https: bool = True
    cert_org: str = ""
    cert_country: str = "ZZ"
    cert_expired: bool = False
    access_mode: str | int = "ok"  # ok | refuse | HTTP status int
    robots: str = ""
    pages: dict[str, PageSpec] = field(default_factory=dict)
    zone: ZoneSpec = field(default_factory=ZoneSpec)


@dataclass
class WorldScript:
    name: str
    seeds: list[str]
    domains: dict[str, DomainState]
    mutations: dict[int, list[dict]]
    expectations: dict[int, dict[str, list[str]]]

    @classmethod
    def from_yaml(cls, path: str | Path) -> "WorldScript":
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        domains: dict[str, DomainState] = {}
        for name, spec in doc["domains"].items():
            pages = {}
            for page_path, page in (spec.get("pages") or {}).items():
                pages[page_path] = PageSpec(
                    title=page.get("title", ""),
                    body=page.get("body", ""),
                    links=[(link["href"], link.get("text", "")) for link in
                           (page.get("links") or [])],
                    ad_iframes=page.get("ad_iframes", 0),
                )
            zone_doc = spec.get("zone") or {}
            zone = ZoneSpec(
                records={k: list(v) for k, v in zone_doc.items()
                         if k in dnswire.TYPE_BY_NAME},
                subrecords={
                    sub: {k: list(v) for k, v in recs.items()}
                    for sub, recs in (zone_doc.get("subrecords") or {}).items()
                },
                dnssec=bool(zone_doc.get("dnssec", False)),
            )
            domains[name] = DomainState(
                name=name,
                https=spec.get("https", True),
                cert_org=spec.get("cert_org", f"{name} operations"),
                cert_country=spec.get("cert_country", "ZZ"),
                robots=spec.get("robots", ""),
                pages=pages,
                zone=zone,
            )
        mutations = {int(k): list(v) for k, v in (doc.get("mutations") or {}).items()}
        expectations = {
            int(k): {cat: list(plds) for cat, plds in v.items()}
            for k, v in (doc.get("expectations") or {}).items()
        }
        script = cls(
            name=doc.get("name", Path(path).stem),
            seeds=list(doc["seeds"]),
            domains=domains,
            mutations=mutations,
            expectations=expectations,
        )
        script.validate()
        return script

    def validate(self) -> None:
        iterations = sorted(self.mutations)
        if iterations and iterations != list(range(iterations[0], iterations[-1] + 1)):
            raise WorldScriptError(f"mutation iterations not contiguous: {iterations}")
        for iteration, edits in self.mutations.items():
            for edit in edits:
                domain = edit.get("domain")
                if domain not in self.domains:
                    raise WorldScriptError(
                        f"mutation at iteration {iteration} references "
                        f"unknown domain {domain!r}")


_PARKED_PAGE = PageSpec(
    title="Domain parking placeholder",
    body="This domain is for sale. Contact the broker.",
    links=[],
    ad_iframes=4,
)


def build_world_state(script: WorldScript, iteration: int) -> dict[str, DomainState]:
    """Domain states after applying mutations 2..iteration to the base world."""
    state = copy.deepcopy(script.domains)
    for step in range(2, iteration + 1):
        for edit in script.mutations.get(step, []):
            domain = state[edit["domain"]]
            action = edit["action"]
            if action == "change_ns":
                domain.zone.records["NS"] = list(edit["ns"])
            elif action == "expire_cert":
                domain.cert_expired = True
            elif action == "break_access":
                mode = edit.get("mode", "refuse")
                domain.access_mode = mode if mode == "refuse" else int(mode)
            elif action == "remove_links":
                target = edit["target"]
                for page in domain.pages.values():
                    page.links = [
                        (href, text) for href, text in page.links
                        if (urlsplit(href).hostname or "") != target
                    ]
            elif action == "park":
                domain.pages = {"/": copy.deepcopy(_PARKED_PAGE)}
            else:
                raise WorldScriptError(f"unknown mutation action {action!r}")
    return state


# -- certificates ---------------------------------------------------------------


def _make_ca() -> tuple[ec.EllipticCurvePrivateKey, x509.Certificate]:
    key = ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([
        x509.NameAttribute(NameOID.COMMON_NAME, "fixture world root"),
        x509.NameAttribute(NameOID.ORGANIZATION_NAME, "FixtureWorld Authority"),
        x509.NameAttribute(NameOID.COUNTRY_NAME, "ZZ"),
    ])
    now = datetime.now(timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - timedelta(days=2))
        .not_valid_after(now + timedelta(days=365))
        .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
        .sign(key, hashes.SHA256())
    )
    return key, cert


def _make_leaf(domain: DomainState, ca_key, ca_cert) -> tuple[bytes, bytes]:
    key = ec.generate_private_key(ec.SECP256R1())
    now = datetime.now(timezone.utc)
    if domain.cert_expired:
        not_before, not_after = now - timedelta(days=30), now - timedelta(days=1)
    else:
        not_before, not_after = now - timedelta(days=1), now + timedelta(days=90)
    subject = x509.Name([
        x509.NameAttribute(NameOID.COMMON_NAME, domain.name),
        x509.NameAttribute(NameOID.ORGANIZATION_NAME, domain.cert_org),
        x509.NameAttribute(NameOID.COUNTRY_NAME, domain.cert_country),
    ])
    cert = (
        x509.CertificateBuilder()
        .subject_name(subject)
        .issuer_name(ca_cert.subject)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(not_before)
        .not_valid_after(not_after)
        .add_extension(
            x509.SubjectAlternativeName([x509.DNSName(domain.name)]), critical=False)
        .sign(ca_key, hashes.SHA256())
    )
    key_pem = key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )
    return cert.public_bytes(serialization.Encoding.PEM), key_pem


# -- servers ---------------------------------------------------------------------


def _render_page(page: PageSpec) -> bytes:
    anchors = "\n".join(
        f'<li><a href="{href}">{text}</a></li>' for href, text in page.links)
    iframes = "\n".join(
        f'<iframe src="/ad-frame/{i}" class="banner-ad"></iframe>'
        for i in range(page.ad_iframes))
    html = (
        "<!doctype html><html><head>"
        f"<title>{page.title}</title></head><body>"
        f"<h1>{page.title}</h1><p>{page.body}</p>"
        f"<ul>{anchors}</ul>{iframes}</body></html>"
    )
    return html.encode("utf-8")


class _WorldHTTPHandler(http.server.BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # fixture servers stay quiet
        pass

    def _state(self) -> dict[str, DomainState]:
        return self.server.world.state  # type: ignore[attr-defined]

    def do_GET(self):  # noqa: N802  (http.server API)
        host = (self.headers.get("Host") or "").split(":")[0].lower()
        domain = self._state().get(host)
        if domain is None:
            self._respond(421, b"unknown fixture domain")
            return
        if isinstance(domain.access_mode, int):
            self._respond(domain.access_mode, b"scripted failure")
            return
        if self.path == "/robots.txt":
            if domain.robots:
                self._respond(200, domain.robots.encode("utf-8"), "text/plain")
            else:
                self._respond(404, b"no robots policy")
            return
        page = domain.pages.get(self.path.split("?")[0])
        if page is None:
            self._respond(404, b"no such page")
            return
        self._respond(200, _render_page(page), "text/html; charset=utf-8")

    def _respond(self, status: int, body: bytes, ctype: str = "text/plain") -> None:
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class _WorldHTTPServer(http.server.ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, handler, world: "FixtureWorld") -> None:
        super().__init__(addr, handler)
        self.world = world


class _DnsHandler(socketserver.BaseRequestHandler):
    def handle(self):
        data, sock = self.request
        world: FixtureWorld = self.server.world  # type: ignore[attr-defined]
        try:
            query = dnswire.parse_message(data)
        except dnswire.WireError:
            return
        sock.sendto(world.answer(query), self.client_address)


class _WorldDNSServer(socketserver.ThreadingUDPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, handler, world: "FixtureWorld") -> None:
        super().__init__(addr, handler)
        self.world = world


class FixtureWorld:
    """Running fixture endpoints for one scripted world.

    The served iteration can be switched in place with set_iteration(), so
    a multi-week run keeps stable ports and one configuration.
    """

    def __init__(self, script: WorldScript, iteration: int, work_dir: str | Path) -> None:
        self.script = script
        self.work_dir = Path(work_dir)
        self.work_dir.mkdir(parents=True, exist_ok=True)
        self.state = build_world_state(script, iteration)
        self.iteration = iteration
        self._servers: list = []
        self._threads: list[threading.Thread] = []
        self._contexts: dict[str, ssl.SSLContext] = {}
        self.http_port = 0
        self.https_port = 0
        self.dns_port = 0
        self.dead_port = 0
        self.ca_file = self.work_dir / "fixture_ca.pem"

    # -- lifecycle --------------------------------------------------------

    def start(self) -> "FixtureWorld":
        self._write_certificates()
        try:
            http_server = _WorldHTTPServer(("127.0.0.1", 0), _WorldHTTPHandler, self)
            https_server = _WorldHTTPServer(("127.0.0.1", 0), _WorldHTTPHandler, self)
            dns_server = _WorldDNSServer(("127.0.0.1", 0), _DnsHandler, self)
        except OSError as exc:
            raise PortUnavailableError(str(exc)) from exc
        https_server.socket = self._ssl_context().wrap_socket(
            https_server.socket, server_side=True)
        self.http_port = http_server.server_address[1]
        self.https_port = https_server.server_address[1]
        self.dns_port = dns_server.server_address[1]
        # a bound-then-closed port: connections to it are refused
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        self.dead_port = probe.getsockname()[1]
        probe.close()
        self._servers = [http_server, https_server, dns_server]
        for server in self._servers:
            thread = threading.Thread(target=server.serve_forever, daemon=True)
            thread.start()
            self._threads.append(thread)
        return self

    def stop(self) -> None:
        for server in self._servers:
            server.shutdown()
            server.server_close()
        self._servers = []

    def __enter__(self) -> "FixtureWorld":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def set_iteration(self, iteration: int) -> None:
        self.state = build_world_state(self.script, iteration)
        self.iteration = iteration

    # -- TLS ---------------------------------------------------------------

    def _write_certificates(self) -> None:
        ca_key, ca_cert = _make_ca()
        self.ca_file.write_bytes(ca_cert.public_bytes(serialization.Encoding.PEM))
        cert_dir = self.work_dir / "certs"
        cert_dir.mkdir(exist_ok=True)
        # expiry is the only scripted certificate change, so certificates for
        # every domain state can be minted up front
        final_state = build_world_state(self.script, max([1, *self.script.mutations]))
        for name in self.script.domains:
            for suffix, state in (("", self.script.domains[name]),
                                  ("-mutated", final_state[name])):
                cert_pem, key_pem = _make_leaf(state, ca_key, ca_cert)
                (cert_dir / f"{name}{suffix}.crt").write_bytes(cert_pem)
                (cert_dir / f"{name}{suffix}.key").write_bytes(key_pem)
        self._cert_dir = cert_dir

    def _context_for(self, name: str) -> ssl.SSLContext:
        mutated = self.state[name].cert_expired != self.script.domains[name].cert_expired
        key = f"{name}-mutated" if mutated else name
        if key not in self._contexts:
            ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
            ctx.load_cert_chain(self._cert_dir / f"{key}.crt", self._cert_dir / f"{key}.key")
            self._contexts[key] = ctx
        return self._contexts[key]

    def _ssl_context(self) -> ssl.SSLContext:
        base = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        default = sorted(self.script.domains)[0]
        base.load_cert_chain(self._cert_dir / f"{default}.crt",
                             self._cert_dir / f"{default}.key")

        def pick(sock, server_name, _ctx):
            if server_name and server_name.lower() in self.state:
                sock.context = self._context_for(server_name.lower())

        base.sni_callback = pick
        return base

    # -- DNS ----------------------------------------------------------------

    def answer(self, query: dnswire.Message) -> bytes:
        qname = query.qname.lower()
        qtype_name = dnswire.NAME_BY_TYPE.get(query.qtype, "")
        zone_name, sub = self._find_zone(qname)
        if zone_name is None:
            return dnswire.build_response(query, dnswire.RCODE_NXDOMAIN, [])
        zone = self.state[zone_name].zone
        if sub == "":
            values = list(zone.records.get(qtype_name, []))
            if qtype_name == "DNSKEY" and zone.dnssec:
                values = ["257 3 13 Zml4dHVyZS1rZXk="]
        else:
            subrecords = zone.subrecords.get(sub)
            if subrecords is None:
                return dnswire.build_response(
                    query, dnswire.RCODE_NXDOMAIN, [], authenticated=zone.dnssec)
            values = list(subrecords.get(qtype_name, []))
        answers = [
            dnswire.ResourceRecord(name=qname, rtype=query.qtype, ttl=300, value=v)
            for v in values
        ]
        return dnswire.build_response(query, dnswire.RCODE_NOERROR, answers,
                                      authenticated=zone.dnssec)

    def _find_zone(self, qname: str) -> tuple[str | None, str]:
        if qname in self.state:
            return qname, ""
        for name in self.state:
            if qname.endswith("." + name):
                return name, qname[: -(len(name) + 1)]
        return None, ""

    # -- wiring ----------------------------------------------------------------

    @property
    def connect_overrides(self) -> dict[str, tuple[str, int]]:
        overrides: dict[str, tuple[str, int]] = {}
        for name, domain in self.state.items():
            if domain.access_mode == "refuse":
                target_http = target_https = ("127.0.0.1", self.dead_port)
            else:
                target_http = ("127.0.0.1", self.http_port)
                target_https = ("127.0.0.1", self.https_port)
            overrides[f"http://{name}"] = target_http
            overrides[f"https://{name}"] = target_https
        return overrides

    def write_support_files(self) -> tuple[Path, Path]:
        seeds_path = self.work_dir / "seeds.txt"
        seeds_path.write_text(
            "# fixture world seeds\n" + "".join(f"{u}\n" for u in self.script.seeds),
            encoding="utf-8")
        geo_path = self.work_dir / "geo.csv"
        geo_path.write_text(
            "# cidr,country,organization\n"
            "192.0.2.0/24,AA,FixtureNet Alpha\n"
            "198.51.100.0/24,BB,FixtureNet Beta\n"
            "203.0.113.0/24,CC,FixtureNet Gamma\n"
            "2001:db8::/32,DD,FixtureNet V6\n"
            "127.0.0.0/8,ZZ,Loopback\n",
            encoding="utf-8")
        return seeds_path, geo_path

    def make_config(self, store_root: str | Path, **overrides) -> PipelineConfig:
        seeds_path, geo_path = self.write_support_files()
        settings = dict(
            seed_list_path=str(seeds_path),
            store_root=str(store_root),
            seed_list_name=self.script.name,
            crawl=CrawlPolicy(fetch_timeout=5.0),
            resolver_host="127.0.0.1",
            resolver_port=self.dns_port,
            geo_path=str(geo_path),
            drop_ratio=0.5,
            tuning_trials=3,
            tuning_seed=11,
            min_training_rows=4,
            ca_file=str(self.ca_file),
            connect_overrides={k: list(v) for k, v in self.connect_overrides.items()},
        )
        settings.update(overrides)
        return PipelineConfig(**settings)


def serve_world(script: WorldScript, iteration: int,
                work_dir: str | Path) -> FixtureWorld:
    """Start HTTP(S) + DNS endpoints serving the scripted state for ``iteration``."""
    return FixtureWorld(script, iteration, work_dir).start()

"""Polite HTTP/HTTPS fetching with leaf-certificate capture.

The fetcher enforces a minimum per-host spacing through an injectable
clock, follows redirects up to a bounded hop count, and records the TLS
leaf certificate (valid or not) for every HTTPS exchange. A Transport
implementation performs exactly one GET; tests swap in fake transports.
"""

from __future__ import annotations

import http.client
import logging
import socket
import ssl
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Protocol
from urllib.parse import urljoin, urlsplit

from cryptography import x509
from cryptography.x509.oid import NameOID

from .clock import Clock, SystemClock

logger = logging.getLogger(__name__)

DEFAULT_USER_AGENT = "quietlist-crawler/0.1 (+allow-list research crawler)"
MAX_BODY_BYTES = 2 * 1024 * 1024
_REDIRECT_CODES = (301, 302, 303, 307, 308)


@dataclass(frozen=True)
class CertificateInfo:
    """Leaf certificate facts captured at fetch time."""

    issuer_organization: str
    issuer_country: str
    subject_organization: str
    subject_country: str
    not_before: datetime
    not_after: datetime
    chain_valid_at_fetch: bool

    def valid_at(self, when: datetime) -> bool:
        return self.not_before <= when <= self.not_after

    def to_dict(self) -> dict:
        return {
            "issuer_organization": self.issuer_organization,
            "issuer_country": self.issuer_country,
            "subject_organization": self.subject_organization,
            "subject_country": self.subject_country,
            "not_before": self.not_before.isoformat(),
            "not_after": self.not_after.isoformat(),
            "chain_valid_at_fetch": self.chain_valid_at_fetch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CertificateInfo":
        return cls(
            issuer_organization=d["issuer_organization"],
            issuer_country=d["issuer_country"],
            subject_organization=d["subject_organization"],
            subject_country=d["subject_country"],
            not_before=datetime.fromisoformat(d["not_before"]),
            not_after=datetime.fromisoformat(d["not_after"]),
            chain_valid_at_fetch=d["chain_valid_at_fetch"],
        )


@dataclass
class RawResponse:
    status: int
    headers: dict[str, str]
    body: bytes
    certificate: CertificateInfo | None = None


class TransportError(Exception):
    """One failed HTTP exchange; ``kind`` is a stable machine-readable code."""

    def __init__(self, kind: str, detail: str = "") -> None:
        super().__init__(f"{kind}: {detail}" if detail else kind)
        self.kind = kind
        self.detail = detail


class Transport(Protocol):
    def get(self, url: str, headers: dict[str, str]) -> RawResponse: ...


def _name_attr(name: x509.Name, oid) -> str:
    attrs = name.get_attributes_for_oid(oid)
    return attrs[0].value if attrs else ""


def _parse_der_certificate(der: bytes, chain_valid: bool) -> CertificateInfo:
    cert = x509.load_der_x509_certificate(der)
    not_before = getattr(cert, "not_valid_before_utc", None)
    not_after = getattr(cert, "not_valid_after_utc", None)
    if not_before is None:  # cryptography < 42
        not_before = cert.not_valid_before.replace(tzinfo=timezone.utc)
        not_after = cert.not_valid_after.replace(tzinfo=timezone.utc)
    return CertificateInfo(
        issuer_organization=_name_attr(cert.issuer, NameOID.ORGANIZATION_NAME),
        issuer_country=_name_attr(cert.issuer, NameOID.COUNTRY_NAME),
        subject_organization=_name_attr(cert.subject, NameOID.ORGANIZATION_NAME),
        subject_country=_name_attr(cert.subject, NameOID.COUNTRY_NAME),
        not_before=not_before,
        not_after=not_after,
        chain_valid_at_fetch=chain_valid,
    )


class SocketTransport:
    """Real-socket transport built on http.client.

    ``connect_overrides`` maps ``"scheme://host"`` to ``(address, port)``
    so fixture servers on loopback can impersonate arbitrary domains; SNI
    and the Host header always carry the original hostname.
    """

    def __init__(
        self,
        timeout: float = 10.0,
        ca_file: str | None = None,
        connect_overrides: dict[str, tuple[str, int]] | None = None,
        max_body: int = MAX_BODY_BYTES,
    ) -> None:
        self.timeout = timeout
        self.ca_file = ca_file
        self.connect_overrides = dict(connect_overrides or {})
        self.max_body = max_body

    def _endpoint(self, scheme: str, host: str, port: int) -> tuple[str, int]:
        return self.connect_overrides.get(f"{scheme}://{host}", (host, port))

    def _tls_socket(self, host: str, addr: str, port: int) -> tuple[ssl.SSLSocket, bool]:
        ctx = ssl.create_default_context(cafile=self.ca_file)
        sock = socket.create_connection((addr, port), timeout=self.timeout)
        try:
            return ctx.wrap_socket(sock, server_hostname=host), True
        except ssl.SSLCertVerificationError:
            sock.close()
        # handshake again without verification so the offending leaf is captured
        loose = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
        loose.check_hostname = False
        loose.verify_mode = ssl.CERT_NONE
        sock = socket.create_connection((addr, port), timeout=self.timeout)
        return loose.wrap_socket(sock, server_hostname=host), False

    def get(self, url: str, headers: dict[str, str]) -> RawResponse:
        parts = urlsplit(url)
        host = parts.hostname or ""
        scheme = parts.scheme
        port = parts.port or (443 if scheme == "https" else 80)
        addr, aport = self._endpoint(scheme, host, port)
        path = parts.path or "/"
        if parts.query:
            path += "?" + parts.query
        send_headers = dict(headers)
        send_headers.setdefault("Host", parts.netloc)
        send_headers.setdefault("Connection", "close")

        certificate: CertificateInfo | None = None
        conn: http.client.HTTPConnection | None = None
        try:
            if scheme == "https":
                ssock, chain_valid = self._tls_socket(host, addr, aport)
                der = ssock.getpeercert(binary_form=True)
                if der:
                    certificate = _parse_der_certificate(der, chain_valid)
                conn = http.client.HTTPConnection(addr, aport, timeout=self.timeout)
                conn.sock = ssock
            else:
                conn = http.client.HTTPConnection(addr, aport, timeout=self.timeout)
            conn.request("GET", path, headers=send_headers)
            resp = conn.getresponse()
            body = resp.read(self.max_body)
            return RawResponse(
                status=resp.status,
                headers={k.lower(): v for k, v in resp.getheaders()},
                body=body,
                certificate=certificate,
            )
        except socket.timeout as exc:
            raise TransportError("timeout", str(exc)) from exc
        except ssl.SSLError as exc:
            raise TransportError("tls_error", str(exc)) from exc
        except (ConnectionError, OSError, http.client.HTTPException) as exc:
            raise TransportError("connection_error", str(exc)) from exc
        finally:
            if conn is not None:
                conn.close()


@dataclass
class FetchResult:
    url: str
    final_url: str
    status_code: int | None
    error: str | None
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""
    certificate: CertificateInfo | None = None
    fetched_at: datetime | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.status_code is not None and self.status_code < 400

    @property
    def failed(self) -> bool:
        """Connection/TLS/timeout failure or HTTP status >= 400."""
        return not self.ok


class PoliteFetcher:
    """GET with per-host request spacing and bounded redirect following."""

    def __init__(
        self,
        transport: Transport | None = None,
        *,
        user_agent: str = DEFAULT_USER_AGENT,
        min_host_interval: float = 3.0,
        max_redirects: int = 5,
        clock: Clock | None = None,
    ) -> None:
        self.transport = transport if transport is not None else SocketTransport()
        self.user_agent = user_agent
        self.min_host_interval = min_host_interval
        self.max_redirects = max_redirects
        self.clock = clock if clock is not None else SystemClock()
        self._last_start: dict[str, float] = {}
        self.request_log: list[tuple[str, float]] = []  # (host, start timestamp)

    def _acquire_slot(self, host: str) -> float:
        last = self._last_start.get(host)
        if last is not None:
            wait = self.min_host_interval - (self.clock.now() - last)
            if wait > 0:
                self.clock.sleep(wait)
        stamp = self.clock.now()
        self._last_start[host] = stamp
        self.request_log.append((host, stamp))
        return stamp

    def fetch(self, url: str) -> FetchResult:
        headers = {"User-Agent": self.user_agent, "Accept": "text/html,*/*"}
        current = url
        stamp = self.clock.now()
        for _hop in range(self.max_redirects + 1):
            host = urlsplit(current).hostname or ""
            stamp = self._acquire_slot(host)
            try:
                raw = self.transport.get(current, headers)
            except TransportError as exc:
                return FetchResult(
                    url=url, final_url=current, status_code=None, error=exc.kind,
                    fetched_at=_ts(self.clock, stamp),
                )
            if raw.status in _REDIRECT_CODES and raw.headers.get("location"):
                current = urljoin(current, raw.headers["location"])
                continue
            return FetchResult(
                url=url, final_url=current, status_code=raw.status, error=None,
                headers=raw.headers, body=raw.body, certificate=raw.certificate,
                fetched_at=_ts(self.clock, stamp),
            )
        return FetchResult(
            url=url, final_url=current, status_code=None, error="too_many_redirects",
            fetched_at=_ts(self.clock, stamp),
        )


def _ts(clock: Clock, stamp: float) -> datetime:
    return datetime.fromtimestamp(stamp, tz=timezone.utc)

"""Pay-level domain extraction against a pinned public-suffix rule set.

A pay-level domain (PLD) is the smallest unit of a domain a user can
directly register: the matched public suffix plus exactly one more label.
All aggregation in the pipeline keys on PLDs.
"""

from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from urllib.parse import urlsplit

__all__ = [
    "InvalidHostnameError",
    "IpAddressEntryError",
    "NoRegistrableDomainError",
    "PayLevelDomain",
    "SuffixRuleSet",
    "extract_pld",
    "normalize_entry",
]

_LABEL_RE = re.compile(r"^[a-z0-9_-]{1,63}$")
_MAX_HOST_LEN = 253


class InvalidHostnameError(ValueError):
    """Input is not a syntactically valid hostname."""


class NoRegistrableDomainError(ValueError):
    """Hostname equals (or is shorter than) its matched public suffix."""


class IpAddressEntryError(ValueError):
    """Entry is a literal IP address; IPs have no registrable domain."""


@dataclass(frozen=True)
class PayLevelDomain:
    """A registrable domain: lowercase punycode name plus its matched suffix."""

    name: str
    suffix: str

    def __post_init__(self) -> None:
        if not self.name.endswith("." + self.suffix):
            raise ValueError(f"{self.name!r} does not end with suffix {self.suffix!r}")
        extra = self.name[: -(len(self.suffix) + 1)]
        if "." in extra or not extra:
            raise ValueError(f"{self.name!r} must have exactly one label above {self.suffix!r}")

    def __str__(self) -> str:
        return self.name


@dataclass
class SuffixRuleSet:
    """Parsed public-suffix rules: plain labels, `*.` wildcards, `!` exceptions."""

    rules: set[str]
    wildcards: set[str]
    exceptions: set[str]
    source_version: str = "unversioned"
    _default: "SuffixRuleSet | None" = field(default=None, repr=False, compare=False)

    @classmethod
    def parse(cls, text: str, source_version: str = "unversioned") -> "SuffixRuleSet":
        rules: set[str] = set()
        wildcards: set[str] = set()
        exceptions: set[str] = set()
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("//"):
                continue
            line = line.split()[0].lower()
            if line.startswith("!"):
                exceptions.add(line[1:])
            elif line.startswith("*."):
                wildcards.add(line[2:])
            else:
                rules.add(line)
        if not rules and not wildcards:
            raise ValueError("suffix rule set is empty")
        return cls(rules=rules, wildcards=wildcards, exceptions=exceptions,
                   source_version=source_version)

    @classmethod
    def from_file(cls, path: str | Path) -> "SuffixRuleSet":
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), source_version=path.name)

    @classmethod
    def bundled(cls) -> "SuffixRuleSet":
        """Rule set from the snapshot file pinned in the package."""
        text = (
            resources.files("quietlist.data")
            .joinpath("public_suffix_snapshot.dat")
            .read_text(encoding="utf-8")
        )
        return cls.parse(text, source_version="bundled-snapshot")

    def public_suffix(self, labels: list[str]) -> str:
        """Longest matching public suffix for ``labels`` (lowercase, ASCII).

        Follows the standard resolution order: a matching exception rule
        wins (its suffix is the rule minus its leftmost label); otherwise
        the matching rule with the most labels; otherwise the bare TLD.
        """
        n = len(labels)
        for take in range(n, 0, -1):
            candidate = ".".join(labels[n - take:])
            if candidate in self.exceptions:
                return ".".join(labels[n - take + 1:])
        best = labels[-1]
        best_len = 1
        for take in range(1, n + 1):
            candidate = ".".join(labels[n - take:])
            if candidate in self.rules and take > best_len:
                best, best_len = candidate, take
            # *.base means any single label directly under base is a suffix
            if take >= 2:
                base = ".".join(labels[n - take + 1:])
                if base in self.wildcards and take > best_len:
                    best, best_len = candidate, take
        return best


def _ascii_hostname(host: str) -> str:
    """Lowercase, strip the trailing dot, and punycode non-ASCII labels."""
    host = host.strip().rstrip(".").lower()
    if not host:
        raise InvalidHostnameError("empty hostname")
    if host.isascii():
        return host
    try:
        labels = [
            label if label.isascii() else label.encode("idna").decode("ascii")
            for label in host.split(".")
        ]
    except UnicodeError as exc:
        raise InvalidHostnameError(f"cannot punycode {host!r}: {exc}") from None
    return ".".join(labels)


def _validate_hostname(host: str) -> list[str]:
    if len(host) > _MAX_HOST_LEN:
        raise InvalidHostnameError(f"hostname too long: {len(host)} chars")
    labels = host.split(".")
    for label in labels:
        if not _LABEL_RE.match(label):
            raise InvalidHostnameError(f"bad label {label!r} in {host!r}")
    return labels


def extract_pld(host: str, rules: SuffixRuleSet) -> PayLevelDomain:
    """Registrable domain of ``host`` per the rule set.

    Idempotent: feeding the result back in returns the same PLD.
    Raises NoRegistrableDomainError when the host is a public suffix itself.
    """
    host = _ascii_hostname(host)
    labels = _validate_hostname(host)
    suffix = rules.public_suffix(labels)
    suffix_len = suffix.count(".") + 1
    if len(labels) <= suffix_len:
        raise NoRegistrableDomainError(f"{host!r} is a public suffix")
    name = ".".join(labels[len(labels) - suffix_len - 1:])
    return PayLevelDomain(name=name, suffix=suffix)


def _is_ip_literal(text: str) -> bool:
    try:
        ipaddress.ip_address(text)
    except ValueError:
        return False
    return True


def normalize_entry(entry: str, rules: SuffixRuleSet) -> PayLevelDomain:
    """Normalize a raw list entry (URL, FQDN, or domain) to its PLD.

    Strips scheme/port/path/userinfo, lowercases, punycodes, then runs
    extract_pld. Literal IPs raise IpAddressEntryError so callers can skip
    and count them.
    """
    entry = entry.strip()
    if not entry:
        raise InvalidHostnameError("empty entry")
    if "://" in entry or entry.startswith("//"):
        parts = urlsplit(entry if "://" in entry else "http:" + entry)
        host = parts.hostname or ""
    else:
        host = entry.split("/", 1)[0]
        if "@" in host:
            host = host.rsplit("@", 1)[1]
        if host.startswith("[") and "]" in host:
            host = host[1:host.index("]")]
        elif host.count(":") == 1:
            maybe_host, maybe_port = host.rsplit(":", 1)
            if maybe_port.isdigit():
                host = maybe_host
    host = host.strip().rstrip(".")
    if not host:
        raise InvalidHostnameError(f"no hostname in entry {entry!r}")
    if _is_ip_literal(host):
        raise IpAddressEntryError(f"IP literal entry {entry!r}")
    return extract_pld(host, rules)

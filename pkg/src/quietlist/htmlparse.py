"""Static HTML extraction: title, anchor links with visible text, parking signals.

Only explicit markup is read; scripts are never executed, so dynamically
injected links (ads, trackers) are invisible by construction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from html.parser import HTMLParser
from urllib.parse import urljoin, urlsplit

TITLE_MAX_CHARS = 512
EXCERPT_MAX_CHARS = 2000

_AD_MARKER_TOKENS = (
    "adsbygoogle",
    "doubleclick",
    "adservice",
    "ad-frame",
    "adframe",
    "sponsored",
    "banner-ad",
    "pop-under",
)

_SKIP_SCHEMES = ("javascript:", "mailto:", "tel:", "data:", "ftp:")

_WS_RE = re.compile(r"\s+")


def collapse_ws(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


@dataclass
class PageContent:
    title: str = ""
    links: list[tuple[str, str]] = field(default_factory=list)  # (absolute url, text)
    word_count: int = 0
    ad_markers: int = 0
    excerpt: str = ""


class _Extractor(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.title_parts: list[str] = []
        self.links: list[tuple[str, list[str]]] = []
        self.text_parts: list[str] = []
        self.ad_markers = 0
        self._in_title = False
        self._title_done = False
        self._anchor_depth = 0
        self._suppress = 0  # inside script/style

    def handle_starttag(self, tag, attrs):
        attr_map = {k: (v or "") for k, v in attrs}
        if tag in ("script", "style"):
            self._suppress += 1
        elif tag == "title" and not self._title_done:
            self._in_title = True
        elif tag == "a":
            self._anchor_depth += 1
            if self._anchor_depth == 1:
                self.links.append((attr_map.get("href", ""), []))
        if tag == "iframe":
            self.ad_markers += 1
        blob = " ".join(
            attr_map.get(k, "") for k in ("src", "class", "id", "data-ad-client")
        ).lower()
        self.ad_markers += sum(1 for token in _AD_MARKER_TOKENS if token in blob)

    def handle_endtag(self, tag):
        if tag in ("script", "style"):
            self._suppress = max(0, self._suppress - 1)
        elif tag == "title":
            self._in_title = False
            self._title_done = True
        elif tag == "a" and self._anchor_depth:
            self._anchor_depth -= 1

    def handle_data(self, data):
        if self._suppress:
            return
        if self._in_title:
            self.title_parts.append(data)
        if self._anchor_depth and self.links:
            self.links[-1][1].append(data)
        self.text_parts.append(data)


def parse_page(html: str, base_url: str) -> PageContent:
    """Extract title, anchors, and parking signals from one HTML document."""
    parser = _Extractor()
    try:
        parser.feed(html)
        parser.close()
    except Exception:
        pass  # keep whatever was extracted before the malformed region

    title = collapse_ws("".join(parser.title_parts))[:TITLE_MAX_CHARS]
    text = collapse_ws(" ".join(parser.text_parts))

    links: list[tuple[str, str]] = []
    for href, text_parts in parser.links:
        href = href.strip()
        if not href or href.startswith("#"):
            continue
        if any(href.lower().startswith(scheme) for scheme in _SKIP_SCHEMES):
            continue
        absolute = urljoin(base_url, href)
        scheme = urlsplit(absolute).scheme
        if scheme not in ("http", "https"):
            continue
        links.append((absolute, collapse_ws("".join(text_parts))))

    return PageContent(
        title=title,
        links=links,
        word_count=len(text.split()),
        ad_markers=parser.ad_markers,
        excerpt=text[:EXCERPT_MAX_CHARS],
    )


def decode_body(body: bytes, content_type: str | None) -> str:
    charset = "utf-8"
    if content_type and "charset=" in content_type:
        charset = content_type.split("charset=", 1)[1].split(";")[0].strip() or "utf-8"
    try:
        return body.decode(charset, errors="replace")
    except LookupError:
        return body.decode("utf-8", errors="replace")

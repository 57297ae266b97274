"""Per-domain feature extraction: 13 fixed-order groups per iteration.

Group widths are per-iteration constants derived from observed vocabularies,
so matrices from different iterations generally have different shapes. Text
groups go through an Embedder; the built-in hashing embedder is fully
deterministic and dependency-free, while RemoteEmbedder speaks the embed
service protocol (POST /embed with {"texts": [...]}).
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import requests
from sklearn.base import BaseEstimator, TransformerMixin

from .dnscrawl import RECORD_TYPES, SECURITY_FLAG_ORDER
from .store import IterationSnapshot

EMBED_DIM = 768
EMBED_INPUT_MAX_CHARS = 8192
BACKLINK_COUNT_CAP = 255

EMBEDDING_GROUPS = ("title_emb", "linktext_emb")
CATEGORICAL_GROUPS = (
    "backlinks",
    "cert_issuer_org",
    "cert_issuer_country",
    "cert_subject_org",
    "cert_subject_country",
    "a_country",
    "a_org",
    "aaaa_country",
    "aaaa_org",
)
GROUP_ORDER = (
    "title_emb",
    "linktext_emb",
    "backlinks",
    "cert_issuer_org",
    "cert_issuer_country",
    "cert_subject_org",
    "cert_subject_country",
    "dns_counts",
    "a_country",
    "a_org",
    "aaaa_country",
    "aaaa_org",
    "sec_mechanisms",
)

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


class EmbedderFailureError(RuntimeError):
    """Embeddings are mandatory feature groups; a failed embedder aborts."""


class Embedder(Protocol):
    model_id: str

    def embed(self, text: str) -> np.ndarray: ...

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]: ...


class HashingEmbedder:
    """Deterministic fallback embedder: signed n-gram feature hashing.

    Token unigrams and bigrams are hashed into ``dim`` buckets with a
    keyed sign bit, then L2-normalized. Identical text always produces a
    bitwise-identical vector.
    """

    def __init__(self, dim: int = EMBED_DIM) -> None:
        self.dim = dim
        self.model_id = f"hashing-ngrams-{dim}/1"

    def embed(self, text: str) -> np.ndarray:
        tokens = _TOKEN_RE.findall(text[:EMBED_INPUT_MAX_CHARS].lower())
        grams = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
        vec = np.zeros(self.dim, dtype=np.float64)
        for gram in grams:
            digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
            h = int.from_bytes(digest, "big")
            vec[(h >> 1) % self.dim] += 1.0 if h & 1 else -1.0
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        return [self.embed(text) for text in texts]


class RemoteEmbedder:
    """Client for the embed service; chunks requests to the service batch cap."""

    def __init__(self, base_url: str, timeout: float = 60.0,
                 batch_size: int = 64, session=None) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.batch_size = batch_size
        self._session = session if session is not None else requests.Session()
        self.model_id = "remote-unknown"

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        vectors: list[np.ndarray] = []
        for start in range(0, len(texts), self.batch_size):
            chunk = [t[:EMBED_INPUT_MAX_CHARS] for t in texts[start:start + self.batch_size]]
            try:
                resp = self._session.post(f"{self.base_url}/embed",
                                          json={"texts": chunk}, timeout=self.timeout)
            except requests.RequestException as exc:
                raise EmbedderFailureError(f"embed service unreachable: {exc}") from exc
            if resp.status_code != 200:
                raise EmbedderFailureError(
                    f"embed service returned {resp.status_code}: {resp.text[:200]}")
            payload = resp.json()
            got = payload.get("vectors", [])
            if len(got) != len(chunk):
                raise EmbedderFailureError(
                    f"misaligned response: {len(got)} vectors for {len(chunk)} texts")
            for vec in got:
                if len(vec) != EMBED_DIM:
                    raise EmbedderFailureError(f"vector length {len(vec)} != {EMBED_DIM}")
                vectors.append(np.asarray(vec, dtype=np.float64))
            self.model_id = payload.get("model_id", self.model_id)
        return vectors


@dataclass
class CategoricalVocab:
    group: str
    values: list[str]
    built_from: int

    def __post_init__(self) -> None:
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"vocab {self.group} has duplicate values")

    def to_dict(self) -> dict:
        return {"group": self.group, "values": list(self.values),
                "built_from": self.built_from}

    @classmethod
    def from_dict(cls, d: dict) -> "CategoricalVocab":
        return cls(group=d["group"], values=list(d["values"]), built_from=d["built_from"])


@dataclass
class FeatureMatrix:
    iteration_id: int
    plds: list[str]
    X: np.ndarray
    columns: list[tuple[str, str]]  # (group, label)
    vocabs: list[CategoricalVocab]
    embedder_id: str

    @property
    def column_names(self) -> list[str]:
        return [f"{group}:{label}" for group, label in self.columns]

    def schema_fingerprint(self) -> str:
        canon = json.dumps(self.column_names, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    def group_slices(self) -> dict[str, slice]:
        """Column span per group; zero-width groups map to empty slices."""
        spans: dict[str, slice] = {}
        start = 0
        current: str | None = None
        for i, (group, _label) in enumerate(self.columns):
            if group != current:
                if current is not None:
                    spans[current] = slice(start, i)
                current, start = group, i
        if current is not None:
            spans[current] = slice(start, len(self.columns))
        out: dict[str, slice] = {}
        position = 0
        for group in GROUP_ORDER:
            if group in spans:
                out[group] = spans[group]
                position = spans[group].stop
            else:
                out[group] = slice(position, position)
        return out

    def row(self, pld: str) -> dict[str, np.ndarray]:
        """Per-group views of one domain's feature vector."""
        idx = self.plds.index(pld)
        return {group: self.X[idx, sl] for group, sl in self.group_slices().items()}

    def to_dict(self) -> dict:
        return {
            "iteration_id": self.iteration_id,
            "plds": list(self.plds),
            "rows": [[float(v) for v in row] for row in self.X],
            "columns": [list(col) for col in self.columns],
            "vocabs": [v.to_dict() for v in self.vocabs],
            "embedder_id": self.embedder_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMatrix":
        n_cols = len(d["columns"])
        return cls(
            iteration_id=d["iteration_id"],
            plds=list(d["plds"]),
            X=np.asarray(d["rows"], dtype=np.float64).reshape(len(d["plds"]), n_cols),
            columns=[tuple(col) for col in d["columns"]],
            vocabs=[CategoricalVocab.from_dict(v) for v in d["vocabs"]],
            embedder_id=d["embedder_id"],
        )


def _observed_values(snapshot: IterationSnapshot) -> dict[str, set[str]]:
    observed: dict[str, set[str]] = {group: set() for group in CATEGORICAL_GROUPS}
    for pld, record in snapshot.web.discovered.items():
        observed["backlinks"].update(src for src in record.backlink_sources if src != pld)
        cert = record.certificate
        if cert is not None:
            for group, value in (
                ("cert_issuer_org", cert.issuer_organization),
                ("cert_issuer_country", cert.issuer_country),
                ("cert_subject_org", cert.subject_organization),
                ("cert_subject_country", cert.subject_country),
            ):
                if value:
                    observed[group].add(value)
    for entry in snapshot.dns.values():
        for geo in entry.a_geo:
            observed["a_country"].add(geo.country)
            observed["a_org"].add(geo.organization)
        for geo in entry.aaaa_geo:
            observed["aaaa_country"].add(geo.country)
            observed["aaaa_org"].add(geo.organization)
    return observed


def build_vocabs(snapshot: IterationSnapshot) -> list[CategoricalVocab]:
    """One vocabulary per categorical group, sorted lexicographically.

    A group nothing was observed for gets an empty vocabulary and thus a
    zero-width feature block this iteration.
    """
    observed = _observed_values(snapshot)
    return [
        CategoricalVocab(group=group, values=sorted(observed[group]),
                         built_from=snapshot.iteration_id)
        for group in CATEGORICAL_GROUPS
    ]


def _concat_texts(pairs: list[tuple[str, str]]) -> str:
    """Join texts ordered lexicographically by their source URL."""
    ordered = sorted(pairs, key=lambda pair: pair[0])
    return " ".join(text for _, text in ordered if text)[:EMBED_INPUT_MAX_CHARS]


def extract_features(
    snapshot: IterationSnapshot,
    vocabs: list[CategoricalVocab],
    embedder: Embedder,
    *,
    binary_backlinks: bool = False,
) -> FeatureMatrix:
    """Build the full feature matrix for every discovered PLD.

    IP addresses themselves are never featurized; only their geo lookups
    enter the categorical groups.
    """
    vocab_by_group = {v.group: v for v in vocabs}
    missing = [g for g in CATEGORICAL_GROUPS if g not in vocab_by_group]
    if missing:
        raise ValueError(f"vocabularies missing for groups: {missing}")

    columns: list[tuple[str, str]] = []
    for group in GROUP_ORDER:
        if group in EMBEDDING_GROUPS:
            columns.extend((group, str(i)) for i in range(EMBED_DIM))
        elif group == "dns_counts":
            columns.extend((group, rtype) for rtype in RECORD_TYPES)
        elif group == "sec_mechanisms":
            columns.extend((group, flag) for flag in SECURITY_FLAG_ORDER)
        else:
            columns.extend((group, value) for value in vocab_by_group[group].values)

    plds = sorted(snapshot.web.discovered)
    title_texts = []
    link_texts = []
    for pld in plds:
        record = snapshot.web.discovered[pld]
        title_texts.append(_concat_texts(record.titles))
        link_texts.append(_concat_texts(record.link_texts))
    try:
        title_vecs = embedder.embed_batch(title_texts)
        link_vecs = embedder.embed_batch(link_texts)
    except EmbedderFailureError:
        raise
    except Exception as exc:
        raise EmbedderFailureError(f"embedder failed: {exc}") from exc
    for vec in (*title_vecs, *link_vecs):
        if vec.shape != (EMBED_DIM,) or not np.all(np.isfinite(vec)):
            raise EmbedderFailureError("embedder produced a bad vector")

    index_of = {
        group: {value: i for i, value in enumerate(vocab_by_group[group].values)}
        for group in CATEGORICAL_GROUPS
    }
    X = np.zeros((len(plds), len(columns)), dtype=np.float64)
    for r, pld in enumerate(plds):
        record = snapshot.web.discovered[pld]
        entry = snapshot.dns[pld]
        parts: list[np.ndarray] = [title_vecs[r], link_vecs[r]]

        backlinks = np.zeros(len(index_of["backlinks"]))
        for src, count in record.backlink_sources.items():
            if src == pld:
                continue
            col = index_of["backlinks"].get(src)
            if col is not None:
                backlinks[col] = 1.0 if binary_backlinks else min(count, BACKLINK_COUNT_CAP)
        parts.append(backlinks)

        cert = record.certificate
        cert_values = (
            cert.issuer_organization if cert else "",
            cert.issuer_country if cert else "",
            cert.subject_organization if cert else "",
            cert.subject_country if cert else "",
        )
        for group, value in zip(
            ("cert_issuer_org", "cert_issuer_country",
             "cert_subject_org", "cert_subject_country"),
            cert_values,
        ):
            onehot = np.zeros(len(index_of[group]))
            col = index_of[group].get(value) if value else None
            if col is not None:
                onehot[col] = 1.0
            parts.append(onehot)

        parts.append(np.asarray(entry.record_counts(), dtype=np.float64))

        for group, geos, attr in (
            ("a_country", entry.a_geo, "country"),
            ("a_org", entry.a_geo, "organization"),
            ("aaaa_country", entry.aaaa_geo, "country"),
            ("aaaa_org", entry.aaaa_geo, "organization"),
        ):
            multihot = np.zeros(len(index_of[group]))
            for geo in geos:
                col = index_of[group].get(getattr(geo, attr))
                if col is not None:
                    multihot[col] = 1.0
            parts.append(multihot)

        parts.append(np.asarray(entry.security.as_vector(), dtype=np.float64))
        X[r, :] = np.concatenate(parts)

    return FeatureMatrix(
        iteration_id=snapshot.iteration_id,
        plds=plds,
        X=X,
        columns=columns,
        vocabs=list(vocabs),
        embedder_id=embedder.model_id,
    )


def select_features(
    matrix: FeatureMatrix,
    prior_importance: dict[str, float] | None,
    top_k: int = 2000,
) -> FeatureMatrix:
    """Keep all embedding columns plus the top_k most important scalar columns.

    Importance is keyed by column name (``group:label``) from the previous
    iteration's trained model; columns unseen by that model rank as zero.
    Without prior importance this is the identity.
    """
    if prior_importance is None:
        return matrix
    scalar = [
        (i, name)
        for i, (name, (group, _)) in enumerate(zip(matrix.column_names, matrix.columns))
        if group not in EMBEDDING_GROUPS
    ]
    if top_k >= len(scalar):
        return matrix
    ranked = sorted(scalar, key=lambda item: (-prior_importance.get(item[1], 0.0), item[1]))
    keep = {i for i, _ in ranked[:top_k]}
    keep.update(i for i, (group, _) in enumerate(matrix.columns)
                if group in EMBEDDING_GROUPS)
    kept = sorted(keep)
    return FeatureMatrix(
        iteration_id=matrix.iteration_id,
        plds=list(matrix.plds),
        X=matrix.X[:, kept],
        columns=[matrix.columns[i] for i in kept],
        vocabs=list(matrix.vocabs),
        embedder_id=matrix.embedder_id,
    )


class DomainFeaturizer(BaseEstimator, TransformerMixin):
    """Estimator-style wrapper: fit() learns vocabularies, transform() builds
    the matrix, so the extraction step drops into sklearn-style pipelines."""

    def __init__(self, embedder: Embedder | None = None,
                 binary_backlinks: bool = False) -> None:
        self.embedder = embedder
        self.binary_backlinks = binary_backlinks

    def fit(self, X: IterationSnapshot, y=None) -> "DomainFeaturizer":
        self.vocabs_ = build_vocabs(X)
        return self

    def transform(self, X: IterationSnapshot) -> FeatureMatrix:
        if not hasattr(self, "vocabs_"):
            raise RuntimeError("DomainFeaturizer.transform called before fit")
        embedder = self.embedder if self.embedder is not None else HashingEmbedder()
        return extract_features(X, self.vocabs_, embedder,
                                binary_backlinks=self.binary_backlinks)

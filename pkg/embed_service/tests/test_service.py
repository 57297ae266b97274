from __future__ import annotations

import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from embed_service.app import create_app
from embed_service.encoders import EMBED_DIM, HashedNgramEncoder, create_encoder

# Frozen 3-sentence fixture: the first two are paraphrases, the third is
# unrelated. The cosine ordering below was computed with the hashed n-gram
# backend before freezing.
PARAPHRASE_A = "The quick brown fox jumps over the lazy dog"
PARAPHRASE_B = "A quick brown fox leaps over a lazy dog"
UNRELATED = "Quarterly revenue grew by twelve percent"


@pytest.fixture(scope="module")
def client() -> TestClient:
    return TestClient(create_app(encoder=HashedNgramEncoder()))


def embed(client, texts):
    response = client.post("/embed", json={"texts": texts})
    assert response.status_code == 200, response.text
    return response.json()


def cosine(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_single_text_returns_one_768_vector(client):
    payload = embed(client, ["Example Corp"])
    assert len(payload["vectors"]) == 1
    assert len(payload["vectors"][0]) == EMBED_DIM
    assert all(math.isfinite(v) for v in payload["vectors"][0])


def test_vectors_align_with_inputs(client):
    texts = [f"sentence number {i}" for i in range(10)]
    payload = embed(client, texts)
    assert len(payload["vectors"]) == len(texts)
    # alignment: each vector matches a direct single-text call
    for text, vector in zip(texts, payload["vectors"]):
        assert embed(client, [text])["vectors"][0] == vector


def test_identical_requests_are_deterministic(client):
    first = embed(client, [PARAPHRASE_A, UNRELATED])
    second = embed(client, [PARAPHRASE_A, UNRELATED])
    assert first == second


def test_paraphrase_pair_is_closer_than_unrelated(client):
    payload = embed(client, [PARAPHRASE_A, PARAPHRASE_B, UNRELATED])
    va, vb, vu = payload["vectors"]
    assert cosine(va, vb) > cosine(va, vu)


def test_model_id_echoed(client):
    payload = embed(client, ["x"])
    assert payload["model_id"] == f"hashed-ngram-{EMBED_DIM}/1"
    assert client.get("/health").json()["model_id"] == payload["model_id"]


def test_batch_cap_enforced(client):
    response = client.post("/embed", json={"texts": ["x"] * 65})
    assert response.status_code == 400


def test_oversized_text_rejected(client):
    response = client.post("/embed", json={"texts": ["y" * 8193]})
    assert response.status_code == 400


def test_malformed_body_is_400(client):
    assert client.post("/embed", json={"texts": "not a list"}).status_code == 400
    assert client.post("/embed", json={"wrong": []}).status_code == 400


def test_health_ready(client):
    payload = client.get("/health").json()
    assert payload["ready"] is True


def test_unknown_route_is_404(client):
    assert client.get("/not-a-route").status_code == 404


def test_503_while_model_loads():
    class LoadingEncoder:
        model_id = "slow-model/1"
        ready = False

        def encode(self, texts):  # pragma: no cover - never reached
            raise AssertionError("must not encode while loading")

    client = TestClient(create_app(encoder=LoadingEncoder()))
    assert client.get("/health").json() == {"model_id": "slow-model/1", "ready": False}
    assert client.post("/embed", json={"texts": ["x"]}).status_code == 503


def test_empty_batch_is_fine(client):
    payload = embed(client, [])
    assert payload["vectors"] == []


def test_create_encoder_specs():
    assert create_encoder("hashing").model_id.startswith("hashed-ngram-")
    with pytest.raises(ValueError):
        create_encoder("magic")


def test_matches_primary_client_wire_format(client):
    """The request/response shapes the pipeline's remote embedder sends."""
    response = client.post("/embed", json={"texts": ["title text", "link text"]})
    payload = response.json()
    assert set(payload) == {"model_id", "vectors"}
    assert isinstance(payload["vectors"], list)
    assert all(isinstance(vec, list) and len(vec) == EMBED_DIM
               for vec in payload["vectors"])

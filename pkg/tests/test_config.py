from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from quietlist.config import ConfigError, PipelineConfig
from quietlist.features import EMBED_DIM, EmbedderFailureError, RemoteEmbedder


def write_minimal(tmp_path, **extra):
    seeds = tmp_path / "seeds.txt"
    seeds.write_text("https://example.test/\n", encoding="utf-8")
    doc = {
        "seed_list_path": str(seeds),
        "store_root": str(tmp_path / "store"),
        "resolver": "127.0.0.1:5353",
    }
    doc.update(extra)
    import yaml

    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path


def test_minimal_config_loads(tmp_path):
    config = PipelineConfig.from_yaml(write_minimal(tmp_path))
    assert config.resolver_host == "127.0.0.1"
    assert config.resolver_port == 5353
    assert config.seed_list_name == "seeds"
    assert config.threshold == 0.1


def test_env_overrides_resolver_and_embed_url(tmp_path, monkeypatch):
    monkeypatch.setenv("QUIETLIST_RESOLVER", "10.9.8.7:99")
    monkeypatch.setenv("QUIETLIST_EMBED_URL", "http://embed.internal:8900")
    config = PipelineConfig.from_yaml(write_minimal(tmp_path))
    assert (config.resolver_host, config.resolver_port) == ("10.9.8.7", 99)
    assert config.embedder_kind == "remote"
    assert config.embed_url == "http://embed.internal:8900"


def test_missing_paths_rejected(tmp_path):
    path = write_minimal(tmp_path, geo_path=str(tmp_path / "nope.csv"))
    with pytest.raises(ConfigError):
        PipelineConfig.from_yaml(path)


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.from_yaml(write_minimal(tmp_path, not_a_key=1))


def test_bad_crawl_policy_rejected(tmp_path):
    path = write_minimal(tmp_path, crawl={"min_host_interval": 0.5})
    with pytest.raises(ConfigError):
        PipelineConfig.from_yaml(path)


def test_round_trip_through_yaml(tmp_path):
    config = PipelineConfig.from_yaml(write_minimal(tmp_path))
    out = tmp_path / "copy.yaml"
    config.to_yaml(out)
    again = PipelineConfig.from_yaml(out)
    assert again.crawl.to_dict() == config.crawl.to_dict()
    assert again.threshold == config.threshold


# -- the remote embedder client speaks the embed service protocol ---------------


class _StubEmbedHandler(BaseHTTPRequestHandler):
    behavior = "ok"
    calls: list[int] = []

    def log_message(self, *args):
        pass

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        texts = body["texts"]
        type(self).calls.append(len(texts))
        if type(self).behavior == "error":
            self.send_response(500)
            self.end_headers()
            return
        if type(self).behavior == "short":
            vectors = [[0.0] * EMBED_DIM for _ in texts[:-1]]
        elif type(self).behavior == "narrow":
            vectors = [[0.0] * 10 for _ in texts]
        else:
            vectors = [[float(len(t))] * EMBED_DIM for t in texts]
        payload = json.dumps({"model_id": "stub-768/1", "vectors": vectors})
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload.encode())


@pytest.fixture()
def stub_service():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubEmbedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubEmbedHandler.behavior = "ok"
    _StubEmbedHandler.calls = []
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


def test_remote_embedder_happy_path(stub_service):
    embedder = RemoteEmbedder(stub_service)
    vec = embedder.embed("hello")
    assert vec.shape == (EMBED_DIM,)
    assert vec[0] == 5.0
    assert embedder.model_id == "stub-768/1"


def test_remote_embedder_chunks_to_batch_cap(stub_service):
    embedder = RemoteEmbedder(stub_service, batch_size=64)
    vectors = embedder.embed_batch([f"text {i}" for i in range(150)])
    assert len(vectors) == 150
    assert _StubEmbedHandler.calls == [64, 64, 22]


def test_remote_embedder_rejects_misaligned_response(stub_service):
    _StubEmbedHandler.behavior = "short"
    with pytest.raises(EmbedderFailureError, match="misaligned"):
        RemoteEmbedder(stub_service).embed_batch(["a", "b", "c"])


def test_remote_embedder_rejects_wrong_dimension(stub_service):
    _StubEmbedHandler.behavior = "narrow"
    with pytest.raises(EmbedderFailureError, match="length"):
        RemoteEmbedder(stub_service).embed("a")


def test_remote_embedder_surfaces_http_errors(stub_service):
    _StubEmbedHandler.behavior = "error"
    with pytest.raises(EmbedderFailureError, match="500"):
        RemoteEmbedder(stub_service).embed("a")


def test_remote_embedder_unreachable_service():
    with pytest.raises(EmbedderFailureError, match="unreachable"):
        RemoteEmbedder("http://127.0.0.1:1", timeout=0.5).embed("a")


def test_remote_embedder_truncates_oversized_text(stub_service):
    embedder = RemoteEmbedder(stub_service)
    vec = embedder.embed("x" * 20_000)
    assert vec[0] == 8192.0  # input capped before the wire

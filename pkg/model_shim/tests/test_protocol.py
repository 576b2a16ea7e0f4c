"""Wire-protocol conformance between the shim and the engine's clients.

The golden JSON files under goldens/ pin the request bodies both sides must
agree on.  Each golden is checked three ways: its fields match the engine's
request dataclasses, the engine's HTTP clients emit exactly those bytes on
the wire, and the live shim accepts them.  The round-trip tests then drive
a real uvicorn server with the engine's own backends.
"""
from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest
import requests
import uvicorn

from kgqa.backends import (
    ClassifyRequest,
    GenerateRequest,
    HttpBackend,
    HttpConfig,
    MockQA,
    MockRewriter,
    RemoteClassifier,
)
from kgqa.errors import BackendError
from kgqa.scorer import (
    LinearClassifier,
    NativeTextClassifier,
    TrainConfig,
    save_classifier,
    train,
)

from model_shim.finetune import build_prompt
from model_shim.lm import new_lm
from model_shim.scorer import load_scorer
from model_shim.server import ModelRegistry, ServerConfig, build_app

GOLDENS = Path(__file__).parent / "goldens"

HOP_LABELS = ("1", "2")
RELATION_LABELS = ("directed_by", "starred_actors")


def _golden(name: str) -> dict:
    return json.loads((GOLDENS / f"{name}.json").read_text())


# ---------------------------------------------------------------------------
# fixtures: trained scorer files and live shim servers


@pytest.fixture(scope="module")
def scorer_files(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("scorers")
    hop_examples = [
        ("who directed the movie", "1"),
        ("what films did he direct", "1"),
        ("who acted in films by the director", "2"),
        ("actors of movies sharing her director", "2"),
    ] * 8
    hops = train(
        hop_examples, HOP_LABELS, TrainConfig(feature_dim=1 << 10, epochs=30, seed=0),
        kind="hop",
    ).classifier
    save_classifier(hops, str(tmp / "hops.npz"))

    rel_examples = [
        ("who directed the film | directed_by", "directed_by"),
        ("films by the director | directed_by", "directed_by"),
        ("who starred in it | starred_actors", "starred_actors"),
        ("actors of the movie | starred_actors", "starred_actors"),
    ] * 8
    rels = train(
        rel_examples, RELATION_LABELS,
        TrainConfig(feature_dim=1 << 10, epochs=30, seed=1), kind="relation",
    ).classifier
    save_classifier(rels, str(tmp / "relations.npz"))

    # zero weights softmax to an exactly uniform distribution, giving a
    # byte-stable response golden independent of any training run
    uniform = LinearClassifier(
        weights=np.zeros((2, 1 << 10)), bias=np.zeros(2),
        labels=("1", "2"), kind="generic",
    )
    save_classifier(uniform, str(tmp / "uniform.npz"))
    return {"dir": tmp, "hops": hops, "relations": rels}


def _start_server(app) -> tuple[uvicorn.Server, threading.Thread, str]:
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("server failed to start")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    return server, thread, f"http://127.0.0.1:{port}"


@pytest.fixture(scope="module")
def shim(scorer_files):
    """Open server with a model and all three label spaces."""
    tmp = scorer_files["dir"]
    registry = ModelRegistry(
        lm=new_lm(0),
        classifiers={
            "hops": load_scorer(tmp / "hops.npz"),
            "relations": load_scorer(tmp / "relations.npz"),
            "uniform": load_scorer(tmp / "uniform.npz"),
        },
    )
    server, thread, base = _start_server(build_app(registry, ServerConfig()))
    yield base
    server.should_exit = True
    thread.join(timeout=10)


@pytest.fixture(scope="module")
def shim_auth():
    """Token-protected server with a tight generation cap."""
    registry = ModelRegistry(lm=new_lm(0))
    config = ServerConfig(max_new_tokens_cap=4, bearer_token="s3cret")
    server, thread, base = _start_server(build_app(registry, config))
    yield base
    server.should_exit = True
    thread.join(timeout=10)


# ---------------------------------------------------------------------------
# goldens vs the engine's request types and clients


def test_golden_fields_match_engine_request_dataclasses():
    generate_fields = {f.name for f in fields(GenerateRequest)}
    assert set(_golden("generate_basic_request")) == generate_fields
    assert set(_golden("generate_short_request")) == generate_fields
    classify_fields = {f.name for f in fields(ClassifyRequest)}
    assert set(_golden("classify_hops_request")) == classify_fields
    assert set(_golden("classify_relations_request")) == classify_fields
    assert set(_golden("classify_uniform_request")) == classify_fields


def test_goldens_construct_engine_requests_and_drive_mocks():
    basic = GenerateRequest(**_golden("generate_basic_request"))
    rewritten = MockRewriter().generate(basic)
    assert "Christopher Nolan" in rewritten.text
    short = GenerateRequest(**_golden("generate_short_request"))
    answered = MockQA().generate(short)
    assert isinstance(answered.text, str) and answered.text


def test_finetune_prompt_matches_generate_golden():
    golden = _golden("generate_basic_request")
    built = build_prompt("(Inception, directed_by, Christopher Nolan)")
    assert built == golden["prompt"]


class _RecordingHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
        self.server.recorded.append((self.path, json.loads(body)))
        if self.path == "/v1/generate":
            reply = {"text": "ok"}
        else:
            reply = {"probs": [0.6, 0.4]}
        data = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture()
def recorder():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _RecordingHandler)
    server.recorded = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server, f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    thread.join(timeout=10)


def test_engine_clients_emit_golden_request_bodies(recorder):
    server, base = recorder
    backend = HttpBackend(base)
    for name in ("generate_basic_request", "generate_short_request"):
        golden = _golden(name)
        backend.generate(GenerateRequest(**golden))
        path, body = server.recorded[-1]
        assert path == "/v1/generate"
        assert body == golden
    for name, space, labels in [
        ("classify_hops_request", "hops", HOP_LABELS),
        ("classify_relations_request", "relations", RELATION_LABELS),
    ]:
        golden = _golden(name)
        remote = RemoteClassifier(backend, labels, space)
        remote.classify(golden["input"])
        path, body = server.recorded[-1]
        assert path == "/v1/classify"
        assert body == golden


# ---------------------------------------------------------------------------
# goldens vs the live shim


def test_live_shim_accepts_golden_requests(shim):
    for name in ("generate_basic_request", "generate_short_request"):
        r = requests.post(f"{shim}/v1/generate", json=_golden(name))
        assert r.status_code == 200, r.text
        body = r.json()
        assert set(body) == {"text"} and isinstance(body["text"], str)
    for name, n_labels in [
        ("classify_hops_request", len(HOP_LABELS)),
        ("classify_relations_request", len(RELATION_LABELS)),
    ]:
        r = requests.post(f"{shim}/v1/classify", json=_golden(name))
        assert r.status_code == 200, r.text
        body = r.json()
        assert set(body) == {"probs"}
        assert len(body["probs"]) == n_labels
        assert all(isinstance(p, float) and 0.0 <= p <= 1.0 for p in body["probs"])
        assert abs(sum(body["probs"]) - 1.0) < 1e-9


def test_uniform_scorer_reproduces_golden_response_bytes(shim):
    r = requests.post(f"{shim}/v1/classify", json=_golden("classify_uniform_request"))
    assert r.status_code == 200
    assert r.json() == _golden("classify_uniform_response")


# ---------------------------------------------------------------------------
# round trips through the engine's clients


def test_generate_round_trip_is_deterministic(shim):
    backend = HttpBackend(shim)
    greedy = GenerateRequest("name a famous film director", max_new_tokens=12)
    first = backend.generate(greedy)
    second = backend.generate(greedy)
    assert first.text == second.text
    sampled = GenerateRequest(
        "name a famous film director", max_new_tokens=12, temperature=0.8, seed=7
    )
    assert backend.generate(sampled).text == backend.generate(sampled).text


def test_served_scorers_match_native_classifiers(shim, scorer_files):
    backend = HttpBackend(shim)
    cases = [
        ("hops", scorer_files["hops"], HOP_LABELS),
        ("relations", scorer_files["relations"], RELATION_LABELS),
    ]
    queries = [
        "who directed the movie",
        "actors of movies sharing her director",
        "films by the director | directed_by",
        "completely unrelated text",
        "",
    ]
    for space, clf, labels in cases:
        remote = RemoteClassifier(backend, labels, space)
        native = NativeTextClassifier(clf)
        for query in queries:
            dist = remote.classify(query)
            expected = native.classify(query)
            assert dist.labels == expected.labels
            np.testing.assert_allclose(dist.probs, expected.probs, atol=1e-9)
            assert abs(float(np.sum(dist.probs)) - 1.0) < 1e-9


def test_concurrent_generates_all_complete(shim):
    backend = HttpBackend(shim)
    request = GenerateRequest("tell me a story", max_new_tokens=8)
    with ThreadPoolExecutor(max_workers=8) as pool:
        texts = list(pool.map(lambda _: backend.generate(request).text, range(8)))
    assert len(texts) == 8
    assert len(set(texts)) == 1


def test_healthz_reports_served_surfaces(shim):
    r = requests.get(f"{shim}/healthz")
    assert r.status_code == 200
    assert r.json() == {"lm": True, "label_spaces": ["hops", "relations", "uniform"]}


# ---------------------------------------------------------------------------
# failure behavior: validation errors are final, auth gates everything


def test_unknown_label_space_is_400_and_not_retried(shim):
    backend = HttpBackend(shim)
    remote = RemoteClassifier(backend, HOP_LABELS, "no_such_space")
    with pytest.raises(BackendError) as err:
        remote.classify("anything")
    assert err.value.attempts == 1
    assert "400" in str(err.value)


@pytest.mark.parametrize(
    "path,body",
    [
        ("/v1/generate", None),  # sentinel: raw non-JSON bytes
        ("/v1/generate", [1, 2, 3]),
        ("/v1/generate", {}),
        ("/v1/generate", {"prompt": 5}),
        ("/v1/generate", {"prompt": "hi", "max_new_tokens": "many"}),
        ("/v1/generate", {"prompt": "hi", "max_new_tokens": 0}),
        ("/v1/generate", {"prompt": "hi", "temperature": -1.0}),
        ("/v1/generate", {"prompt": "   "}),
        ("/v1/classify", {"input": "x"}),
        ("/v1/classify", {"label_space_id": "hops"}),
        ("/v1/classify", {"input": "x", "label_space_id": 9}),
    ],
)
def test_malformed_requests_are_400_with_reason(shim, path, body):
    if body is None:
        r = requests.post(
            f"{shim}{path}", data=b"{not json",
            headers={"Content-Type": "application/json"},
        )
    else:
        r = requests.post(f"{shim}{path}", json=body)
    assert r.status_code == 400, r.text
    detail = r.json()["detail"]
    assert isinstance(detail, str) and detail


def test_bearer_token_required_when_configured(shim_auth):
    request = GenerateRequest("hello there", max_new_tokens=64)
    authed = HttpBackend(shim_auth, HttpConfig(bearer_token="s3cret"))
    text = authed.generate(request).text
    # the server caps generation below the requested budget
    assert len(text) <= 4

    bare = HttpBackend(shim_auth)
    with pytest.raises(BackendError) as err:
        bare.generate(request)
    assert err.value.attempts == 1
    assert "401" in str(err.value)

    r = requests.post(
        f"{shim_auth}/v1/generate",
        json={"prompt": "hello"},
        headers={"Authorization": "Bearer wrong"},
    )
    assert r.status_code == 401

"""Generation and classification backends.

Two duck-typed interfaces are used across the engine:

* generator: ``generate(GenerateRequest) -> GenerateResponse`` plus a
  ``backend_id`` string;
* classifier: ``classify(text) -> LabelDistribution`` plus ``labels``.

The mock backends below are deterministic stand-ins wired to the prompt
templates, so the whole pipeline can run (and be tested byte for byte)
without a model server.  ``HttpBackend`` speaks the wire protocol:
POST /v1/generate and POST /v1/classify against a remote host.
"""
from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import requests

from . import prompts
from .errors import BackendError, ConfigError, ProtocolError
from .scorer import LabelDistribution

# A remote probability vector may be unnormalized (e.g. truncated decimals
# summing to 0.98); anything further than this from 1 is a protocol error.
PROB_SUM_TOLERANCE = 0.1

_TRIPLE_GROUP_RE = re.compile(r"\(([^()]*)\)")


@dataclass(frozen=True)
class GenerateRequest:
    prompt: str
    max_new_tokens: int = 256
    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")


@dataclass(frozen=True)
class GenerateResponse:
    text: str
    backend_id: str
    latency_ms: float = 0.0


@dataclass(frozen=True)
class ClassifyRequest:
    input: str
    label_space_id: str


@dataclass(frozen=True)
class ClassifyResponse:
    probs: tuple[float, ...]


class MockRewriter:
    """Turns each linearized triple into one flat sentence.

    ``(s, r, o)`` becomes ``s r o.`` with underscores in the relation
    replaced by spaces; sentences are joined by single spaces in input
    order.  Malformed groups are dropped silently.
    """

    backend_id = "mock:rewriter"

    def generate(self, request: GenerateRequest) -> GenerateResponse:
        section = prompts.extract_graph_section(request.prompt)
        if section is None:
            section = request.prompt
        sentences = []
        for group in _TRIPLE_GROUP_RE.findall(section):
            parts = group.split(", ")
            if len(parts) != 3:
                continue
            s, r, o = parts
            sentences.append(f"{s} {r.replace('_', ' ')} {o}.")
        return GenerateResponse(" ".join(sentences), self.backend_id)


class MockQA:
    """Answers with the terminal object of the last stated fact.

    The facts block is scanned as whitespace tokens; the final token (with
    any trailing period stripped) is taken as the answer entity.  Without
    facts, or with an empty facts block, the reply is exactly "unknown".
    """

    backend_id = "mock:qa"

    def generate(self, request: GenerateRequest) -> GenerateResponse:
        facts = prompts.extract_facts_section(request.prompt)
        if facts is None or not facts.strip():
            return GenerateResponse("unknown", self.backend_id)
        tokens = facts.split()
        answer = tokens[-1].rstrip(".")
        if not answer:
            return GenerateResponse("unknown", self.backend_id)
        return GenerateResponse(f"The answer is {answer}.", self.backend_id)


class OracleClassifier:
    """Lookup-table classifier for tests and fixtures.

    Table values are either a label index (one-hot) or a full probability
    vector.  Unknown inputs get the uniform distribution.
    """

    def __init__(self, labels: Sequence[str], table: Mapping[str, int | Sequence[float]]):
        self.labels = tuple(labels)
        if not self.labels:
            raise ConfigError("oracle classifier needs a non-empty label space")
        self.backend_id = "mock:oracle"
        self._table: dict[str, np.ndarray] = {}
        n = len(self.labels)
        for key, value in table.items():
            if isinstance(value, (int, np.integer)):
                if not 0 <= value < n:
                    raise ConfigError(f"oracle entry {key!r}: label index {value} out of range")
                vec = np.zeros(n, dtype=np.float64)
                vec[value] = 1.0
            else:
                vec = np.asarray(value, dtype=np.float64)
                if vec.shape != (n,):
                    raise ConfigError(
                        f"oracle entry {key!r}: expected {n} probs, got {vec.shape}"
                    )
                total = vec.sum()
                if not np.isfinite(total) or total <= 0:
                    raise ConfigError(f"oracle entry {key!r}: probs must sum to > 0")
                vec = vec / total
            self._table[key] = vec
        self._uniform = np.full(n, 1.0 / n, dtype=np.float64)

    def classify(self, text: str) -> LabelDistribution:
        vec = self._table.get(text, self._uniform)
        return LabelDistribution(vec.copy(), self.labels)

    @classmethod
    def from_json(cls, path: str) -> "OracleClassifier":
        with open(path, "r", encoding="utf-8") as fh:
            blob = json.load(fh)
        if not isinstance(blob, dict) or "labels" not in blob or "table" not in blob:
            raise ConfigError(f"oracle file {path}: expected object with labels/table")
        return cls(blob["labels"], blob["table"])

    @staticmethod
    def to_json(labels: Sequence[str], table: Mapping[str, int | Sequence[float]], path: str) -> None:
        blob = {"labels": list(labels), "table": {k: v if isinstance(v, int) else list(v) for k, v in table.items()}}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(blob, fh, ensure_ascii=False, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class HttpConfig:
    timeout_ms: int = 30000
    max_retries: int = 3
    max_in_flight: int = 8
    backoff_base_s: float = 0.05
    bearer_token: str | None = None

    def __post_init__(self):
        if self.timeout_ms < 1:
            raise ConfigError(f"timeout_ms must be >= 1, got {self.timeout_ms}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.max_in_flight < 1:
            raise ConfigError(f"max_in_flight must be >= 1, got {self.max_in_flight}")


_RETRYABLE_STATUS = frozenset({408, 429}) | frozenset(range(500, 600))


class HttpBackend:
    """requests-based client for the /v1 wire protocol.

    Transport failures, timeouts, 408/429, and 5xx are retried with
    bounded exponential backoff; other 4xx fail immediately (the request
    will not become valid by retrying).  Malformed response payloads are
    protocol errors and are never retried.  ``max_in_flight`` bounds
    concurrent requests across threads sharing this client.
    """

    def __init__(self, base_url: str, config: HttpConfig | None = None):
        if not base_url.startswith(("http://", "https://")):
            raise ConfigError(f"backend url must be http(s), got {base_url!r}")
        self.base_url = base_url.rstrip("/")
        self.config = config or HttpConfig()
        self.backend_id = f"http:{self.base_url}"
        self._session = requests.Session()
        self._gate = threading.BoundedSemaphore(self.config.max_in_flight)
        self._headers = {"Content-Type": "application/json"}
        if self.config.bearer_token:
            self._headers["Authorization"] = f"Bearer {self.config.bearer_token}"

    def generate(self, request: GenerateRequest) -> GenerateResponse:
        t0 = time.monotonic()
        payload = {
            "prompt": request.prompt,
            "max_new_tokens": request.max_new_tokens,
            "temperature": request.temperature,
            "seed": request.seed,
        }
        data = self._post("/v1/generate", payload)
        text = data.get("text")
        if not isinstance(text, str):
            raise ProtocolError(
                f"{self.backend_id}: /v1/generate response missing string 'text'"
            )
        return GenerateResponse(text, self.backend_id, (time.monotonic() - t0) * 1000.0)

    def classify_raw(self, request: ClassifyRequest) -> ClassifyResponse:
        payload = {"input": request.input, "label_space_id": request.label_space_id}
        data = self._post("/v1/classify", payload)
        probs = data.get("probs")
        if not isinstance(probs, list) or not all(
            isinstance(p, (int, float)) and not isinstance(p, bool) for p in probs
        ):
            raise ProtocolError(
                f"{self.backend_id}: /v1/classify response missing numeric 'probs' list"
            )
        return ClassifyResponse(tuple(float(p) for p in probs))

    def _post(self, path: str, payload: dict) -> dict:
        url = self.base_url + path
        timeout_s = self.config.timeout_ms / 1000.0
        attempts = 0
        with self._gate:
            while True:
                attempts += 1
                try:
                    resp = self._session.post(
                        url, json=payload, timeout=timeout_s, headers=self._headers
                    )
                except (requests.ConnectionError, requests.Timeout) as exc:
                    failure = f"{type(exc).__name__}: {exc}"
                else:
                    if resp.status_code == 200:
                        try:
                            data = resp.json()
                        except ValueError as exc:
                            raise ProtocolError(
                                f"{self.backend_id}: non-JSON response from {path}",
                                attempts=attempts,
                            ) from exc
                        if not isinstance(data, dict):
                            raise ProtocolError(
                                f"{self.backend_id}: expected JSON object from {path}",
                                attempts=attempts,
                            )
                        return data
                    if resp.status_code not in _RETRYABLE_STATUS:
                        raise BackendError(
                            f"{self.backend_id}: {path} failed with status "
                            f"{resp.status_code} (not retryable)",
                            attempts=attempts,
                        )
                    failure = f"status {resp.status_code}"
                if attempts > self.config.max_retries:
                    raise BackendError(
                        f"{self.backend_id}: {path} failed after {attempts} attempts "
                        f"({failure})",
                        attempts=attempts,
                    )
                time.sleep(self.config.backoff_base_s * (2 ** (attempts - 1)))


class RemoteClassifier:
    """Classifier interface over a /v1/classify endpoint.

    Validates the returned vector against the local label space and
    renormalizes it (remote hosts may emit truncated decimals); a vector of
    the wrong length, with non-finite or negative entries, or with a sum
    outside PROB_SUM_TOLERANCE of 1 is a protocol error.
    """

    def __init__(self, backend: HttpBackend, labels: Sequence[str], label_space_id: str):
        self.labels = tuple(labels)
        if not self.labels:
            raise ConfigError("remote classifier needs a non-empty label space")
        self.label_space_id = label_space_id
        self._backend = backend
        self.backend_id = f"{backend.backend_id}#{label_space_id}"

    def classify(self, text: str) -> LabelDistribution:
        resp = self._backend.classify_raw(ClassifyRequest(text, self.label_space_id))
        if len(resp.probs) != len(self.labels):
            raise ProtocolError(
                f"{self.backend_id}: expected {len(self.labels)} probs, "
                f"got {len(resp.probs)}"
            )
        vec = np.asarray(resp.probs, dtype=np.float64)
        total = vec.sum()
        if not np.all(np.isfinite(vec)) or np.any(vec < 0) or abs(total - 1.0) > PROB_SUM_TOLERANCE:
            raise ProtocolError(
                f"{self.backend_id}: probability vector invalid (sum={total!r})"
            )
        return LabelDistribution(vec / total, self.labels)

"""HTTP service implementing the engine's generation/classification protocol.

POST /v1/generate  {"prompt", "max_new_tokens", "temperature", "seed"} -> {"text"}
POST /v1/classify  {"input", "label_space_id"}                         -> {"probs"}

Malformed bodies answer 400 with a reason; an unknown label_space_id is a
400; a configured bearer token turns mismatches into 401.  Clients retry
only transport errors, 408/429, and 5xx, so validation failures are final.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException, Request

from .lm import TinyCausalLM
from .scorer import NpzScorer


@dataclass
class ServerConfig:
    max_new_tokens_cap: int = 512
    bearer_token: str | None = None


@dataclass
class ModelRegistry:
    lm: TinyCausalLM | None = None
    classifiers: dict[str, NpzScorer] = field(default_factory=dict)


def _check_auth(request: Request, config: ServerConfig) -> None:
    if config.bearer_token is None:
        return
    if request.headers.get("Authorization") != f"Bearer {config.bearer_token}":
        raise HTTPException(status_code=401, detail="missing or invalid bearer token")


async def _json_body(request: Request) -> dict:
    try:
        payload = await request.json()
    except Exception:
        raise HTTPException(status_code=400, detail="request body is not valid JSON")
    if not isinstance(payload, dict):
        raise HTTPException(status_code=400, detail="request body must be a JSON object")
    return payload


def _str_field(payload: dict, name: str) -> str:
    value = payload.get(name)
    if not isinstance(value, str):
        raise HTTPException(status_code=400, detail=f"field {name!r} must be a string")
    return value


def _int_field(payload: dict, name: str, default: int, low: int) -> int:
    value = payload.get(name, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise HTTPException(status_code=400, detail=f"field {name!r} must be an integer")
    if value < low:
        raise HTTPException(status_code=400, detail=f"field {name!r} must be >= {low}")
    return value


def _float_field(payload: dict, name: str, default: float) -> float:
    value = payload.get(name, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise HTTPException(status_code=400, detail=f"field {name!r} must be a number")
    if value < 0:
        raise HTTPException(status_code=400, detail=f"field {name!r} must be >= 0")
    return float(value)


def build_app(registry: ModelRegistry, config: ServerConfig | None = None) -> FastAPI:
    config = config or ServerConfig()
    app = FastAPI(title="model-shim", docs_url=None, redoc_url=None)
    # generation mutates no state but serializing calls keeps latency
    # predictable on CPU; classification is pure numpy and runs unlocked
    generate_lock = threading.Lock()

    @app.post("/v1/generate")
    async def generate(request: Request) -> dict:
        _check_auth(request, config)
        payload = await _json_body(request)
        prompt = _str_field(payload, "prompt")
        if not prompt.strip():
            raise HTTPException(status_code=400, detail="field 'prompt' must be non-empty")
        max_new_tokens = _int_field(payload, "max_new_tokens", 256, 1)
        temperature = _float_field(payload, "temperature", 0.0)
        seed = _int_field(payload, "seed", 0, 0)
        if registry.lm is None:
            raise HTTPException(status_code=400, detail="no language model is being served")
        budget = min(max_new_tokens, config.max_new_tokens_cap)
        with generate_lock:
            text = registry.lm.generate_text(prompt, budget, temperature, seed)
        return {"text": text}

    @app.post("/v1/classify")
    async def classify(request: Request) -> dict:
        _check_auth(request, config)
        payload = await _json_body(request)
        text = _str_field(payload, "input")
        space = _str_field(payload, "label_space_id")
        clf = registry.classifiers.get(space)
        if clf is None:
            known = sorted(registry.classifiers)
            raise HTTPException(
                status_code=400,
                detail=f"unknown label_space_id {space!r} (serving {known})",
            )
        return {"probs": clf.classify(text)}

    @app.get("/healthz")
    async def healthz() -> dict:
        return {
            "lm": registry.lm is not None,
            "label_spaces": sorted(registry.classifiers),
        }

    return app

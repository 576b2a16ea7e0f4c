"""Reader for the engine's serialized text classifiers.

The engine ships classifiers as versioned .npz snapshots (format_version,
kind, labels, weights, bias) over a documented feature hash: lowercase
unicode-alphanumeric tokens (underscore separates), unigram and bigram
counts, FNV-1a 64-bit masked into the power-of-two weight width.  This
module reimplements exactly that contract so served classifiers answer
/v1/classify bit-compatibly without importing the engine.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

SCORER_FORMAT_VERSION = 1


def _fnv1a64(data: bytes) -> int:
    h = FNV64_OFFSET
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class NpzScorer:
    labels: tuple[str, ...]
    kind: str
    weights: np.ndarray  # (n_labels, feature_dim)
    bias: np.ndarray  # (n_labels,)

    def classify(self, text: str) -> list[float]:
        mask = self.weights.shape[1] - 1
        toks = _TOKEN_RE.findall(text.lower())
        counts: dict[int, float] = {}
        for tok in toks:
            idx = _fnv1a64(tok.encode("utf-8")) & mask
            counts[idx] = counts.get(idx, 0.0) + 1.0
        for a, b in zip(toks, toks[1:]):
            idx = _fnv1a64(f"{a} {b}".encode("utf-8")) & mask
            counts[idx] = counts.get(idx, 0.0) + 1.0
        logits = self.bias.astype(np.float64).copy()
        if counts:
            items = sorted(counts.items())
            idx = np.fromiter((i for i, _ in items), dtype=np.int64, count=len(items))
            vals = np.fromiter((v for _, v in items), dtype=np.float64, count=len(items))
            logits += self.weights[:, idx] @ vals
        z = logits - logits.max()
        e = np.exp(z)
        return (e / e.sum()).tolist()


def load_scorer(path: str) -> NpzScorer:
    with np.load(path, allow_pickle=False) as z:
        for field in ("format_version", "kind", "labels", "weights", "bias"):
            if field not in z:
                raise ValueError(f"scorer {path}: missing field {field!r}")
        version = int(z["format_version"])
        if version != SCORER_FORMAT_VERSION:
            raise ValueError(f"scorer {path}: unsupported format_version {version}")
        weights = np.asarray(z["weights"], dtype=np.float64)
        bias = np.asarray(z["bias"], dtype=np.float64)
        labels = tuple(str(s) for s in z["labels"])
        kind = str(z["kind"])
    if weights.ndim != 2 or bias.shape != (weights.shape[0],) or len(labels) != weights.shape[0]:
        raise ValueError(f"scorer {path}: inconsistent shapes")
    if weights.shape[1] & (weights.shape[1] - 1):
        raise ValueError(f"scorer {path}: feature_dim {weights.shape[1]} not a power of two")
    return NpzScorer(labels, kind, weights, bias)

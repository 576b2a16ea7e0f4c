"""Hashed-feature multinomial logistic regression over text.

Features are unigram and bigram term counts hashed with FNV-1a (64-bit)
into a power-of-two table.  Tokenization, hashing, and training are fully
deterministic: the same examples, config, and seed reproduce the same
weights bit for bit on a given platform.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from .errors import ConfigError, DataError

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

# Unicode alphanumeric runs; underscore is a separator so relation names
# like "directed_by" featurize the same as the words they contain.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

FORMAT_VERSION = 1


def fnv1a64(data: bytes) -> int:
    """FNV-1a, 64-bit: h = (h XOR byte) * prime, truncated to 64 bits."""
    h = FNV64_OFFSET
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class FeatureVector:
    """Sparse term counts; indices strictly increasing in [0, feature_dim)."""

    feature_dim: int
    indices: tuple[int, ...]
    values: tuple[float, ...]


def _check_feature_dim(feature_dim: int) -> None:
    if feature_dim < 2 or feature_dim & (feature_dim - 1):
        raise ConfigError(f"feature_dim must be a power of two >= 2, got {feature_dim}")


def featurize(text: str, feature_dim: int) -> FeatureVector:
    """Hash unigrams and bigrams of ``text`` into a count vector.

    Bigrams are adjacent token pairs joined by a single space, so the
    bigram of ("new", "york") hashes the string "new york".
    """
    _check_feature_dim(feature_dim)
    toks = tokenize(text)
    mask = feature_dim - 1
    counts: dict[int, float] = {}
    for tok in toks:
        idx = fnv1a64(tok.encode("utf-8")) & mask
        counts[idx] = counts.get(idx, 0.0) + 1.0
    for a, b in zip(toks, toks[1:]):
        idx = fnv1a64((a + " " + b).encode("utf-8")) & mask
        counts[idx] = counts.get(idx, 0.0) + 1.0
    items = sorted(counts.items())
    return FeatureVector(
        feature_dim,
        tuple(i for i, _ in items),
        tuple(v for _, v in items),
    )


@dataclass(frozen=True)
class LabelDistribution:
    """Probabilities over a fixed label space; sums to 1 within 1e-9."""

    probs: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.probs) != len(self.labels):
            raise ValueError(
                f"probs length {len(self.probs)} != label count {len(self.labels)}"
            )


@dataclass
class LinearClassifier:
    """Softmax regression: p = softmax(W x + b)."""

    weights: np.ndarray  # (n_labels, feature_dim) float64
    bias: np.ndarray  # (n_labels,) float64
    labels: tuple[str, ...]
    kind: str = "generic"

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ConfigError("weights must be 2-d and bias 1-d")
        if self.weights.shape[0] != len(self.labels) or len(self.bias) != len(self.labels):
            raise ConfigError("weights/bias rows must match label count")
        _check_feature_dim(self.weights.shape[1])


def predict(clf: LinearClassifier, x: FeatureVector) -> LabelDistribution:
    """Softmax with max subtraction; output sums to 1 within 1e-9."""
    if x.feature_dim != clf.feature_dim:
        raise ValueError(
            f"feature_dim mismatch: vector {x.feature_dim}, classifier {clf.feature_dim}"
        )
    logits = clf.bias.astype(np.float64).copy()
    if x.indices:
        idx = np.fromiter(x.indices, dtype=np.int64, count=len(x.indices))
        vals = np.fromiter(x.values, dtype=np.float64, count=len(x.values))
        logits += clf.weights[:, idx] @ vals
    z = logits - logits.max()
    e = np.exp(z)
    return LabelDistribution(e / e.sum(), clf.labels)


def top_k(dist: LabelDistribution, k: int) -> list[tuple[int, float]]:
    """Top-k (label index, probability), ties broken by ascending index."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    p = dist.probs
    order = sorted(range(len(p)), key=lambda i: (-p[i], i))
    return [(i, float(p[i])) for i in order[: min(k, len(p))]]


@dataclass(frozen=True)
class TrainConfig:
    feature_dim: int = 2**18
    learning_rate: float = 0.5
    epochs: int = 20
    batch_size: int = 32
    l2_penalty: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        _check_feature_dim(self.feature_dim)
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.l2_penalty < 0:
            raise ConfigError(f"l2_penalty must be >= 0, got {self.l2_penalty}")


@dataclass
class TrainResult:
    classifier: LinearClassifier
    epoch_losses: list[float] = field(default_factory=list)


def _feature_matrix(texts: Sequence[str], feature_dim: int) -> sparse.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for t in texts:
        fv = featurize(t, feature_dim)
        indices.extend(fv.indices)
        data.extend(fv.values)
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.array(data, dtype=np.float64),
         np.array(indices, dtype=np.int64),
         np.array(indptr, dtype=np.int64)),
        shape=(len(texts), feature_dim),
    )


def loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    x: sparse.csr_matrix,
    y: np.ndarray,
    l2_penalty: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy plus 0.5 * l2 * ||W||^2, with exact gradients.

    ``y`` holds gold label indices.  Biases are not penalized.  The same
    function drives both training and the finite-difference gradient check.
    """
    n = x.shape[0]
    logits = x @ weights.T + bias  # (n, L)
    zmax = logits.max(axis=1, keepdims=True)
    z = logits - zmax
    expz = np.exp(z)
    denom = expz.sum(axis=1)
    rows = np.arange(n)
    ce = float(np.mean(np.log(denom) - z[rows, y]))
    loss = ce + 0.5 * l2_penalty * float(np.sum(weights * weights))
    p = expz / denom[:, None]
    p[rows, y] -= 1.0
    grad_w = np.asarray((p.T @ x)) / n + l2_penalty * weights
    grad_b = p.sum(axis=0) / n
    return loss, grad_w, grad_b


def train(
    examples: Sequence[tuple[str, str]],
    labels: Sequence[str],
    config: TrainConfig,
    kind: str = "generic",
) -> TrainResult:
    """Mini-batch gradient descent with a seeded per-epoch shuffle.

    ``labels`` fixes the full output space (it may contain labels absent
    from ``examples``).  A gold label outside the space is a data error.
    Recorded epoch losses are full-dataset cross-entropy without the L2
    term, so they are comparable across penalty settings.
    """
    if not examples:
        raise DataError("no training examples")
    label_list = list(labels)
    if len(set(label_list)) != len(label_list):
        raise ConfigError("duplicate labels in label space")
    label_index = {name: i for i, name in enumerate(label_list)}
    texts = [t for t, _ in examples]
    y = np.empty(len(examples), dtype=np.int64)
    for i, (_, gold) in enumerate(examples):
        j = label_index.get(gold)
        if j is None:
            raise DataError(f"example {i}: gold label {gold!r} not in label space")
        y[i] = j

    x = _feature_matrix(texts, config.feature_dim)
    n_labels = len(label_list)
    weights = np.zeros((n_labels, config.feature_dim), dtype=np.float64)
    bias = np.zeros(n_labels, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    losses: list[float] = []
    n = len(examples)
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            take = perm[start:start + config.batch_size]
            _, gw, gb = loss_and_grad(weights, bias, x[take], y[take], config.l2_penalty)
            weights -= config.learning_rate * gw
            bias -= config.learning_rate * gb
        losses.append(dataset_cross_entropy(weights, bias, x, y))
    clf = LinearClassifier(weights, bias, tuple(label_list), kind=kind)
    return TrainResult(clf, losses)


def dataset_cross_entropy(
    weights: np.ndarray, bias: np.ndarray, x: sparse.csr_matrix, y: np.ndarray
) -> float:
    logits = x @ weights.T + bias
    zmax = logits.max(axis=1, keepdims=True)
    z = logits - zmax
    denom = np.exp(z).sum(axis=1)
    return float(np.mean(np.log(denom) - z[np.arange(x.shape[0]), y]))


def save_classifier(clf: LinearClassifier, path: str) -> None:
    """Versioned npz snapshot; round-trips weights exactly (no pickle)."""
    np.savez(
        path,
        format_version=np.int64(FORMAT_VERSION),
        kind=np.str_(clf.kind),
        labels=np.array(clf.labels, dtype=np.str_),
        weights=clf.weights,
        bias=clf.bias,
    )


def load_classifier(path: str) -> LinearClassifier:
    with np.load(path, allow_pickle=False) as z:
        missing = {"format_version", "kind", "labels", "weights", "bias"} - set(z.files)
        if missing:
            raise ConfigError(f"classifier file {path}: missing fields {sorted(missing)}")
        version = int(z["format_version"])
        if version != FORMAT_VERSION:
            raise ConfigError(
                f"classifier file {path}: unsupported format version {version}"
            )
        return LinearClassifier(
            weights=z["weights"].astype(np.float64),
            bias=z["bias"].astype(np.float64),
            labels=tuple(str(s) for s in z["labels"]),
            kind=str(z["kind"]),
        )


class NativeTextClassifier:
    """Adapts a LinearClassifier to the text-in, distribution-out interface
    the retriever consumes (``labels`` attribute plus ``classify(text)``)."""

    def __init__(self, clf: LinearClassifier):
        self._clf = clf
        self.labels = clf.labels
        self.backend_id = f"native:{clf.kind}"

    def classify(self, text: str) -> LabelDistribution:
        return predict(self._clf, featurize(text, self._clf.feature_dim))

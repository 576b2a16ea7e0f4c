"""Relation-path retrieval: hop prediction, stepwise path expansion,
and grounding against the knowledge graph.

Candidate paths are grown one relation at a time.  At step t the
classifier scores the step query "question | r_1 | ... | r_{t-1}" and the
top K relations extend each surviving prefix; a path's score is the sum of
its step log-probabilities (equivalently the product of the step
probabilities).  Grounding then walks the graph in score order until M
reasoning paths are collected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Protocol, Sequence

from .errors import ConfigError, DataError, KGQAError, RetrievalError
from .kg import KnowledgeGraph, ReasoningPath, RelationPath
from .scorer import LabelDistribution, top_k

if TYPE_CHECKING:
    from .datasets import Question

STEP_QUERY_SEPARATOR = " | "

# Relations at or below this step probability are treated as impossible
# and never extend a path.
MIN_STEP_PROB = 1e-12


class TextClassifier(Protocol):
    labels: tuple[str, ...]

    def classify(self, text: str) -> LabelDistribution: ...


@dataclass(frozen=True)
class RetrievalConfig:
    """Knobs for path retrieval.

    ``max_paths_cap`` bounds the candidate frontier; it is optional up to
    3 hops and required at 4 hops, where K-ary growth is otherwise
    unbounded in practice.
    """

    k: int = 5
    m: int = 5
    max_hops: int = 2
    use_gold_hops: bool = False
    max_paths_cap: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if not 1 <= self.max_hops <= 4:
            raise ConfigError(f"max_hops must be in [1, 4], got {self.max_hops}")
        if self.max_paths_cap is not None and self.max_paths_cap < self.k:
            raise ConfigError(
                f"max_paths_cap must be >= k, got {self.max_paths_cap} < {self.k}"
            )
        if self.max_hops == 4 and self.max_paths_cap is None:
            raise ConfigError("max_paths_cap is required when max_hops is 4")


@dataclass(frozen=True)
class ScoredRelationPath:
    relations: RelationPath
    step_probs: tuple[float, ...]
    log_score: float

    @classmethod
    def from_steps(cls, relations: RelationPath, step_probs: Sequence[float]) -> "ScoredRelationPath":
        return cls(tuple(relations), tuple(step_probs),
                   sum(math.log(p) for p in step_probs))


def build_step_query(question: str, relation_names: Sequence[str]) -> str:
    """Step query: the question and the partial path joined by " | "."""
    return STEP_QUERY_SEPARATOR.join([question, *relation_names])


def hop_label_space(max_hops: int) -> tuple[str, ...]:
    return tuple(str(h) for h in range(1, max_hops + 1))


def predict_hops(
    text: str,
    classifier: TextClassifier | None,
    config: RetrievalConfig,
    gold_hops: int | None = None,
) -> int:
    """Argmax hop count, or the dataset's gold hop count when configured.

    Datasets with reliable hop annotations skip the classifier entirely by
    setting ``use_gold_hops``; a missing annotation is then a data error.
    """
    if config.use_gold_hops:
        if gold_hops is None:
            raise DataError("gold hop count requested but missing from question")
        if not 1 <= gold_hops <= config.max_hops:
            raise DataError(
                f"gold hop count {gold_hops} outside [1, {config.max_hops}]"
            )
        return gold_hops
    if classifier is None:
        raise ConfigError("hop prediction needs a classifier unless use_gold_hops is set")
    expected = hop_label_space(config.max_hops)
    if tuple(classifier.labels) != expected:
        raise ConfigError(
            f"hop classifier label space {classifier.labels!r} != expected {expected!r}"
        )
    dist = classifier.classify(text)
    idx, _ = top_k(dist, 1)[0]
    return int(dist.labels[idx])


def _cap_frontier(
    frontier: list[tuple[tuple[int, ...], tuple[float, ...], float]],
    cap: int | None,
) -> list[tuple[tuple[int, ...], tuple[float, ...], float]]:
    if cap is None or len(frontier) <= cap:
        return frontier
    frontier.sort(key=lambda e: (-e[2], e[0]))
    return frontier[:cap]


def predict_relation_paths(
    question: str,
    hops: int,
    classifier: TextClassifier,
    config: RetrievalConfig,
) -> list[ScoredRelationPath]:
    """K-ary stepwise expansion of relation paths of length ``hops``.

    Returns min(K^hops, max_paths_cap) paths sorted by log score
    descending, ties by relation-id sequence ascending.  Relations with
    step probability below MIN_STEP_PROB never extend a path, so fewer
    paths may come back when the classifier is (near-)deterministic.
    """
    if not 1 <= hops <= config.max_hops:
        raise ValueError(f"hops must be in [1, {config.max_hops}], got {hops}")
    labels = classifier.labels
    # (relation ids, step probs, partial log score)
    frontier: list[tuple[tuple[int, ...], tuple[float, ...], float]] = [((), (), 0.0)]
    for step in range(1, hops + 1):
        grown: list[tuple[tuple[int, ...], tuple[float, ...], float]] = []
        for rel_ids, probs, logp in frontier:
            query = build_step_query(question, [labels[i] for i in rel_ids])
            try:
                dist = classifier.classify(query)
            except KGQAError as exc:
                raise RetrievalError(
                    f"classifier failed at step {step}: {exc}", step=step
                ) from exc
            for idx, p in top_k(dist, config.k):
                if p < MIN_STEP_PROB:
                    continue
                grown.append((rel_ids + (idx,), probs + (p,), logp + math.log(p)))
        frontier = _cap_frontier(grown, config.max_paths_cap)
        if not frontier:
            return []
    paths = [ScoredRelationPath(rel_ids, probs, logp) for rel_ids, probs, logp in frontier]
    paths.sort(key=lambda sp: (-sp.log_score, sp.relations))
    return paths


@dataclass
class SampleResult:
    reasoning_paths: list[ReasoningPath]
    paths_tried: int
    paths_empty: int


def sample_reasoning_paths(
    scored_paths: Sequence[ScoredRelationPath],
    g: KnowledgeGraph,
    topic: int,
    config: RetrievalConfig,
) -> SampleResult:
    """Ground candidate paths in rank order until M reasoning paths exist.

    Candidates that ground to nothing are skipped (and counted); a single
    candidate may contribute several groundings.
    """
    if not 0 <= topic < g.n_entities:
        raise RetrievalError(f"topic entity id {topic} not in graph")
    collected: list[ReasoningPath] = []
    tried = 0
    empty = 0
    for sp in scored_paths:
        if len(collected) >= config.m:
            break
        tried += 1
        found = g.ground_relation_path(topic, sp.relations, limit=config.m - len(collected))
        if not found:
            empty += 1
        collected.extend(found)
    return SampleResult(collected, tried, empty)


@dataclass
class RetrievalResult:
    question_id: str
    question: str
    topic: str
    hops: int
    scored_paths: list[ScoredRelationPath]
    reasoning_paths: list[ReasoningPath]
    paths_tried: int
    paths_empty: int


def retrieve_question(
    g: KnowledgeGraph,
    question: "Question",
    hop_classifier: TextClassifier | None,
    relation_classifier: TextClassifier,
    config: RetrievalConfig,
) -> RetrievalResult:
    """Full retrieval for one question: hops, candidate paths, groundings."""
    if tuple(relation_classifier.labels) != tuple(g.relations):
        raise ConfigError(
            "relation classifier label space does not match graph relations "
            f"({len(relation_classifier.labels)} vs {g.n_relations})"
        )
    topic_id = g.entity_id(question.topic)
    if topic_id is None:
        raise RetrievalError(f"topic entity not in graph: {question.topic!r}")
    hops = predict_hops(question.text, hop_classifier, config, gold_hops=question.gold_hops)
    scored = predict_relation_paths(question.text, hops, relation_classifier, config)
    sampled = sample_reasoning_paths(scored, g, topic_id, config)
    return RetrievalResult(
        question_id=question.id,
        question=question.text,
        topic=question.topic,
        hops=hops,
        scored_paths=scored,
        reasoning_paths=sampled.reasoning_paths,
        paths_tried=sampled.paths_tried,
        paths_empty=sampled.paths_empty,
    )

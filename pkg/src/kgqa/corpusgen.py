"""Quality-gated graph-to-text corpus generation.

For each question with a gold relation path, the gold subgraph (the union
of its groundings, in grounding order) is linearized and rewritten into
free-form text.  The pair is kept only if a QA backend, reading nothing
but that free-form text, still answers the question correctly.  The gate
ties corpus quality to downstream answerability instead of surface
fluency.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence, TextIO

from .answer import hit_at_1
from .backends import GenerateRequest
from .datasets import Question
from .errors import BackendError
from .kg import KnowledgeGraph, surface_triples
from .prompts import build_graph_to_text_prompt, build_qa_prompt
from .rewrite import SurfaceTriple, linearize_surface

logger = logging.getLogger(__name__)

DEFAULT_GROUNDING_LIMIT = 5


@dataclass(frozen=True)
class GoldSubgraph:
    question_id: str
    triples: tuple[SurfaceTriple, ...]
    chains: tuple[tuple[SurfaceTriple, ...], ...]


@dataclass(frozen=True)
class GraphTextPair:
    question_id: str
    triple_form: str
    free_form: str


@dataclass
class CorpusSummary:
    generated: int = 0
    gated_out: int = 0
    skipped: int = 0
    kept: int = 0

    def to_dict(self) -> dict:
        return {
            "generated": self.generated,
            "gated_out": self.gated_out,
            "skipped": self.skipped,
            "kept": self.kept,
        }


def extract_gold_subgraph(
    question: Question,
    g: KnowledgeGraph,
    grounding_limit: int = DEFAULT_GROUNDING_LIMIT,
) -> GoldSubgraph | None:
    """Union of the gold path's groundings, first-occurrence order.

    Returns None (the question is skipped upstream) when the topic or a
    gold relation is missing from the graph or the path grounds to
    nothing.
    """
    if question.gold_path is None:
        return None
    topic_id = g.entity_id(question.topic)
    if topic_id is None:
        return None
    path_ids = []
    for rel in question.gold_path:
        rid = g.relation_id(rel)
        if rid is None:
            return None
        path_ids.append(rid)
    chains = g.ground_relation_path(topic_id, path_ids, limit=grounding_limit)
    if not chains:
        return None
    surfaced = tuple(surface_triples(c, g) for c in chains)
    seen: dict[SurfaceTriple, None] = {}
    for chain in surfaced:
        for t in chain:
            if t not in seen:
                seen[t] = None
    return GoldSubgraph(question.id, tuple(seen), surfaced)


def generate_pair(
    subgraph: GoldSubgraph,
    backend,
    max_new_tokens: int = 256,
    seed: int = 0,
) -> GraphTextPair:
    """Candidate (triple form, free form) pair; backend errors propagate."""
    form = linearize_surface(subgraph.triples)
    prompt = build_graph_to_text_prompt(form.text)
    resp = backend.generate(GenerateRequest(prompt, max_new_tokens, 0.0, seed))
    free = resp.text.strip()
    return GraphTextPair(subgraph.question_id, form.text, free)


def quality_gate(
    question: Question,
    free_form: str,
    qa_backend,
    max_new_tokens: int = 64,
    seed: int = 0,
) -> bool:
    """True when QA over the free-form text alone still hits the answer.

    Empty text and backend failures gate the pair out (conservative): a
    pair we cannot verify is a pair we do not keep.
    """
    if not free_form.strip():
        return False
    prompt = build_qa_prompt(free_form, question.text)
    try:
        resp = qa_backend.generate(GenerateRequest(prompt, max_new_tokens, 0.0, seed))
    except BackendError as exc:
        logger.warning("quality gate backend failure for %s: %s", question.id, exc)
        return False
    return hit_at_1(resp.text, question.answers)


def generate_corpus(
    questions: Sequence[Question],
    g: KnowledgeGraph,
    rewriter,
    qa_backend,
    grounding_limit: int = DEFAULT_GROUNDING_LIMIT,
    max_new_tokens: int = 256,
    seed: int = 0,
) -> tuple[list[GraphTextPair], CorpusSummary]:
    """Run extract/generate/gate over a question set.

    Invariant: kept + gated_out + skipped == len(questions), and
    generated == kept + gated_out.
    """
    pairs: list[GraphTextPair] = []
    summary = CorpusSummary()
    for q in questions:
        sub = extract_gold_subgraph(q, g, grounding_limit)
        if sub is None:
            summary.skipped += 1
            logger.info("skipping %s: gold path ungroundable", q.id)
            continue
        try:
            pair = generate_pair(sub, rewriter, max_new_tokens, seed)
        except BackendError as exc:
            summary.skipped += 1
            logger.warning("skipping %s: rewriter failed (%s)", q.id, exc)
            continue
        summary.generated += 1
        if quality_gate(q, pair.free_form, qa_backend, seed=seed):
            summary.kept += 1
            pairs.append(pair)
        else:
            summary.gated_out += 1
    return pairs, summary


def emit_corpus(pairs: Sequence[GraphTextPair], fh: TextIO) -> int:
    """Write pairs as JSONL; returns the number of records written."""
    for p in pairs:
        fh.write(json.dumps(
            {
                "question_id": p.question_id,
                "triple_form": p.triple_form,
                "free_form": p.free_form,
            },
            ensure_ascii=False,
            sort_keys=True,
        ))
        fh.write("\n")
    return len(pairs)


def load_corpus(lines) -> list[GraphTextPair]:
    """Read pairs back from JSONL (the shim's fine-tuning input format)."""
    out = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        rec = json.loads(line)
        out.append(GraphTextPair(
            str(rec["question_id"]), str(rec["triple_form"]), str(rec["free_form"])
        ))
    return out

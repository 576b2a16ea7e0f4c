"""Knowledge-augmented answering and hit@1 evaluation.

An answer counts as a hit when any gold answer string appears, case
folded, inside the generated text.  This is deliberately forgiving about
phrasing ("The answer is X.") and deliberately strict about entity
surfaces; see the README for the known substring caveats.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .backends import GenerateRequest
from .errors import BackendError, DataError
from .prompts import build_qa_prompt
from .rewrite import KnowledgeParagraph

ANSWER_TEMPERATURE = 0.0


def hit_at_1(answer_text: str, gold_answers: Sequence[str]) -> bool:
    """True when any gold answer is a case-folded substring of the text."""
    if not gold_answers:
        raise ValueError("empty gold answer set")
    folded = answer_text.casefold()
    return any(g.casefold() in folded for g in gold_answers)


@dataclass
class QARecord:
    question_id: str
    question: str
    hops: int | None
    gold_answers: tuple[str, ...]
    knowledge: str | None
    prompt: str
    answer_text: str
    hit: bool
    no_knowledge: bool
    error: str | None = None


def answer_question(
    question_id: str,
    question: str,
    gold_answers: Sequence[str],
    knowledge: KnowledgeParagraph | None,
    backend,
    hops: int | None = None,
    max_new_tokens: int = 64,
    seed: int = 0,
) -> QARecord:
    """Build the answer prompt, call the backend, score the reply.

    A paragraph with no sentences falls back to the no-knowledge prompt
    form.  A backend failure is recorded as a miss with the error attached
    rather than aborting the evaluation run.
    """
    if not gold_answers:
        raise ValueError(f"question {question_id}: empty gold answer set")
    text = knowledge.consolidated if knowledge is not None else ""
    no_knowledge = not text
    prompt = build_qa_prompt(None if no_knowledge else text, question)
    try:
        resp = backend.generate(
            GenerateRequest(prompt, max_new_tokens, ANSWER_TEMPERATURE, seed)
        )
    except BackendError as exc:
        return QARecord(
            question_id, question, hops, tuple(gold_answers),
            None if no_knowledge else text, prompt,
            "", False, no_knowledge, error=str(exc),
        )
    return QARecord(
        question_id, question, hops, tuple(gold_answers),
        None if no_knowledge else text, prompt,
        resp.text, hit_at_1(resp.text, gold_answers), no_knowledge,
    )


@dataclass
class HopStats:
    total: int = 0
    hits: int = 0

    @property
    def rate(self) -> float:
        return self.hits / self.total if self.total else 0.0


@dataclass
class EvalSummary:
    total: int
    hits: int
    hit_at_1: float
    per_hop: dict[int, HopStats] = field(default_factory=dict)
    no_knowledge_fallbacks: int = 0
    backend_failures: int = 0
    excluded_failures: int = 0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "hits": self.hits,
            "hit_at_1": self.hit_at_1,
            "per_hop": {
                str(h): {"total": s.total, "hits": s.hits, "hit_at_1": s.rate}
                for h, s in sorted(self.per_hop.items())
            },
            "no_knowledge_fallbacks": self.no_knowledge_fallbacks,
            "backend_failures": self.backend_failures,
            "excluded_failures": self.excluded_failures,
        }


def evaluate_dataset(records: Sequence[QARecord], exclude_failures: bool = False) -> EvalSummary:
    """Aggregate hit@1 with a per-hop breakdown.

    Backend failures count as misses by default; ``exclude_failures``
    drops them from the denominator instead (they are still counted).
    """
    if not records:
        raise DataError("cannot evaluate an empty record set")
    failures = sum(1 for r in records if r.error is not None)
    scored = [r for r in records if r.error is None] if exclude_failures else list(records)
    excluded = len(records) - len(scored)
    per_hop: dict[int, HopStats] = {}
    hits = 0
    fallbacks = 0
    for r in scored:
        hits += r.hit
        fallbacks += r.no_knowledge
        if r.hops is not None:
            stats = per_hop.setdefault(r.hops, HopStats())
            stats.total += 1
            stats.hits += r.hit
    total = len(scored)
    return EvalSummary(
        total=total,
        hits=hits,
        hit_at_1=hits / total if total else 0.0,
        per_hop=per_hop,
        no_knowledge_fallbacks=fallbacks,
        backend_failures=failures,
        excluded_failures=excluded,
    )

"""Quality-gated corpus generation."""
import io

import pytest

from kgqa.backends import MockQA, MockRewriter
from kgqa.corpusgen import (
    emit_corpus,
    extract_gold_subgraph,
    generate_corpus,
    generate_pair,
    load_corpus,
    quality_gate,
)
from kgqa.datasets import Question
from kgqa.errors import BackendError
from kgqa.kg import load_kg

from synthdata import CorruptedRewriter, corpus_world


def _question(**kw):
    base = dict(id="0", text="what does t reach", topic="t",
                answers=("alpha",), gold_path=("r", "s"), gold_hops=2)
    base.update(kw)
    return Question(**base)


def test_extract_gold_subgraph_union_in_grounding_order():
    g = load_kg(["t|r|m1", "t|r|m2", "m1|s|alpha", "m2|s|alpha"])
    sub = extract_gold_subgraph(_question(), g)
    assert sub is not None
    assert sub.triples == (
        ("t", "r", "m1"), ("m1", "s", "alpha"), ("t", "r", "m2"), ("m2", "s", "alpha")
    )
    assert len(sub.chains) == 2


def test_extract_gold_subgraph_respects_grounding_limit():
    lines = [f"t|r|m{i}" for i in range(8)] + [f"m{i}|s|a{i}" for i in range(8)]
    g = load_kg(lines)
    sub = extract_gold_subgraph(_question(), g, grounding_limit=3)
    assert len(sub.chains) == 3
    assert len(sub.triples) == 6


def test_extract_gold_subgraph_skips_ungroundable():
    g = load_kg(["t|r|m"])  # no second hop
    assert extract_gold_subgraph(_question(), g) is None
    assert extract_gold_subgraph(_question(topic="ghost"), g) is None
    assert extract_gold_subgraph(_question(gold_path=("nope",), gold_hops=1), g) is None
    assert extract_gold_subgraph(_question(gold_path=None, gold_hops=None), g) is None


def test_generate_pair_uses_rewriter():
    g = load_kg(["t|r|m", "m|likes_tea|a"])
    sub = extract_gold_subgraph(_question(gold_path=("r", "likes_tea")), g)
    pair = generate_pair(sub, MockRewriter())
    assert pair.triple_form == "(t, r, m), (m, likes_tea, a)"
    assert pair.free_form == "t r m. m likes tea a."
    assert pair.question_id == "0"


def test_quality_gate_passes_when_qa_recovers_answer():
    q = _question()
    assert quality_gate(q, "t r m1. m1 s alpha.", MockQA())
    assert not quality_gate(q, "t r m1.", MockQA())  # answer entity absent
    assert not quality_gate(q, "", MockQA())


class _DownBackend:
    backend_id = "down"

    def generate(self, request):
        raise BackendError("no route", attempts=2)


def test_quality_gate_conservative_on_backend_error():
    assert not quality_gate(_question(), "t r m1. m1 s alpha.", _DownBackend())


def test_generate_corpus_partition_invariant():
    g, questions = corpus_world(n_questions=40)
    # poison a few questions so the skip path is exercised
    broken = questions[:3]
    questions = [
        q if q not in broken else Question(q.id, q.text, "missing topic",
                                           q.answers, q.gold_path, q.gold_hops)
        for q in questions
    ]
    pairs, summary = generate_corpus(questions, g, MockRewriter(), MockQA())
    assert summary.kept + summary.gated_out + summary.skipped == len(questions)
    assert summary.generated == summary.kept + summary.gated_out
    assert summary.skipped == 3
    assert summary.kept == len(pairs) == 37
    assert summary.gated_out == 0


def test_generate_corpus_gate_rejects_corrupted_rewriter():
    g, questions = corpus_world(n_questions=25)
    pairs, summary = generate_corpus(questions, g, CorruptedRewriter(), MockQA())
    assert pairs == []
    assert summary.kept == 0
    assert summary.gated_out == 25


def test_generate_corpus_skips_rewriter_failures():
    g, questions = corpus_world(n_questions=5)
    pairs, summary = generate_corpus(questions, g, _DownBackend(), MockQA())
    assert summary.skipped == 5
    assert summary.generated == 0


def test_emit_and_load_corpus_roundtrip():
    g, questions = corpus_world(n_questions=10)
    pairs, _ = generate_corpus(questions, g, MockRewriter(), MockQA())
    buf = io.StringIO()
    assert emit_corpus(pairs, buf) == len(pairs)
    reloaded = load_corpus(io.StringIO(buf.getvalue()))
    assert reloaded == pairs


def test_corpus_generation_is_deterministic():
    g, questions = corpus_world(n_questions=15)
    out1, out2 = io.StringIO(), io.StringIO()
    pairs1, _ = generate_corpus(questions, g, MockRewriter(), MockQA())
    pairs2, _ = generate_corpus(questions, g, MockRewriter(), MockQA())
    emit_corpus(pairs1, out1)
    emit_corpus(pairs2, out2)
    assert out1.getvalue() == out2.getvalue()

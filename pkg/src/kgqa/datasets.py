"""Question loading and classifier dataset construction.

Two input shapes are supported: the tab-separated movie-QA layout
(question text with the topic entity in square brackets, then a
pipe-separated answer list) and a generic JSONL layout carrying explicit
fields.  Loaders drop unusable records (no answers, topic missing from the
graph) and report the counts instead of failing the whole file.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

from .errors import DataError, ParseError
from .kg import KnowledgeGraph
from .retrieve import build_step_query

_TOPIC_RE = re.compile(r"\[([^\[\]]+)\]")


@dataclass(frozen=True)
class Question:
    """One QA example; gold_path holds relation surface forms."""

    id: str
    text: str
    topic: str
    answers: tuple[str, ...]
    gold_path: tuple[str, ...] | None = None
    gold_hops: int | None = None

    def __post_init__(self):
        if not self.answers:
            raise DataError(f"question {self.id}: no gold answers")
        if self.gold_path is not None and self.gold_hops is not None:
            if len(self.gold_path) != self.gold_hops:
                raise DataError(
                    f"question {self.id}: gold_path length {len(self.gold_path)} "
                    f"!= gold_hops {self.gold_hops}"
                )


@dataclass
class LoadReport:
    loaded: int = 0
    dropped_answerless: int = 0
    dropped_unresolved_topic: int = 0

    def to_dict(self) -> dict:
        return {
            "loaded": self.loaded,
            "dropped_answerless": self.dropped_answerless,
            "dropped_unresolved_topic": self.dropped_unresolved_topic,
        }


def load_metaqa(
    lines: Iterable[str],
    paths: Mapping[str, Sequence[str]] | None = None,
    g: KnowledgeGraph | None = None,
    default_gold_hops: int | None = None,
) -> tuple[list[Question], LoadReport]:
    """Parse ``question with [topic]<TAB>ans1|ans2`` lines.

    Question ids are the 0-based index over non-empty lines, assigned
    before any record is dropped, so they stay aligned with side files
    (e.g. gold relation paths) keyed the same way.  When a graph is given,
    questions whose topic does not resolve are dropped and counted.
    """
    questions: list[Question] = []
    report = LoadReport()
    index = -1
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        index += 1
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(
                f"line {lineno}: expected question<TAB>answers, got {len(fields)} fields"
            )
        text_raw, answer_blob = fields
        m = _TOPIC_RE.search(text_raw)
        if m is None:
            raise ParseError(f"line {lineno}: no [topic] span in question")
        topic = m.group(1)
        text = text_raw[: m.start()] + topic + text_raw[m.end():]
        answers = tuple(a.strip() for a in answer_blob.split("|") if a.strip())
        if not answers:
            report.dropped_answerless += 1
            continue
        if g is not None and g.entity_id(topic) is None:
            report.dropped_unresolved_topic += 1
            continue
        qid = str(index)
        gold_path = None
        gold_hops = default_gold_hops
        if paths is not None and qid in paths:
            gold_path = tuple(paths[qid])
            gold_hops = len(gold_path)
        questions.append(Question(qid, text, topic, answers, gold_path, gold_hops))
    report.loaded = len(questions)
    return questions, report


def load_metaqa_paths(lines: Iterable[str]) -> dict[str, tuple[str, ...]]:
    """Parse ``qid<TAB>rel1|rel2`` gold-path side files."""
    out: dict[str, tuple[str, ...]] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(f"line {lineno}: expected id<TAB>relations")
        qid, blob = fields
        path = tuple(r.strip() for r in blob.split("|") if r.strip())
        if not path:
            raise ParseError(f"line {lineno}: empty relation path")
        out[qid] = path
    return out


def load_generic(
    lines: Iterable[str], g: KnowledgeGraph | None = None
) -> tuple[list[Question], LoadReport]:
    """Parse JSONL records: id, question, topic, answers, and optionally
    gold_path / gold_hops (validated for consistency when both appear)."""
    questions: list[Question] = []
    report = LoadReport()
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict):
            raise ParseError(f"line {lineno}: expected a JSON object")
        missing = {"id", "question", "topic", "answers"} - set(rec)
        if missing:
            raise DataError(f"line {lineno}: missing fields {sorted(missing)}")
        if not isinstance(rec["answers"], list):
            raise DataError(f"line {lineno}: answers must be a list")
        answers = tuple(str(a).strip() for a in rec["answers"] if str(a).strip())
        if not answers:
            report.dropped_answerless += 1
            continue
        topic = str(rec["topic"])
        if g is not None and g.entity_id(topic) is None:
            report.dropped_unresolved_topic += 1
            continue
        gold_path = None
        if rec.get("gold_path") is not None:
            if not isinstance(rec["gold_path"], list) or not rec["gold_path"]:
                raise DataError(f"line {lineno}: gold_path must be a non-empty list")
            gold_path = tuple(str(r) for r in rec["gold_path"])
        gold_hops = rec.get("gold_hops")
        if gold_hops is not None:
            gold_hops = int(gold_hops)
            if gold_path is not None and len(gold_path) != gold_hops:
                raise DataError(
                    f"line {lineno}: gold_path length {len(gold_path)} != "
                    f"gold_hops {gold_hops}"
                )
        elif gold_path is not None:
            gold_hops = len(gold_path)
        questions.append(
            Question(str(rec["id"]), str(rec["question"]), topic, answers, gold_path, gold_hops)
        )
    report.loaded = len(questions)
    return questions, report


def save_generic(questions: Sequence[Question], fh: TextIO) -> None:
    """Write the generic JSONL form; load_generic(save_generic(qs)) == qs."""
    for q in questions:
        rec: dict = {
            "id": q.id,
            "question": q.text,
            "topic": q.topic,
            "answers": list(q.answers),
        }
        if q.gold_path is not None:
            rec["gold_path"] = list(q.gold_path)
        if q.gold_hops is not None:
            rec["gold_hops"] = q.gold_hops
        fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True))
        fh.write("\n")


def build_classifier_datasets(
    questions: Sequence[Question],
    relation_vocab: Sequence[str],
    require_gold: bool = True,
) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """Training examples for the hop and relation-step classifiers.

    Hop examples pair the question text with str(gold_hops).  Relation
    examples pair the step query built from the gold prefix with the gold
    relation at that step, one example per step.  Questions without gold
    annotations are skipped unless ``require_gold``, in which case they are
    data errors, as is a gold relation outside ``relation_vocab``.
    """
    vocab = set(relation_vocab)
    hop_examples: list[tuple[str, str]] = []
    relation_examples: list[tuple[str, str]] = []
    for q in questions:
        if q.gold_path is None:
            if require_gold:
                raise DataError(f"question {q.id}: missing gold relation path")
            continue
        for rel in q.gold_path:
            if rel not in vocab:
                raise DataError(
                    f"question {q.id}: gold relation {rel!r} not in relation vocabulary"
                )
        hops = q.gold_hops if q.gold_hops is not None else len(q.gold_path)
        hop_examples.append((q.text, str(hops)))
        for t in range(len(q.gold_path)):
            query = build_step_query(q.text, q.gold_path[:t])
            relation_examples.append((query, q.gold_path[t]))
    return hop_examples, relation_examples

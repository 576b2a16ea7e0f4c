"""Stage orchestration shared by the CLI's staged and fused commands.

Each stage consumes and produces plain dict records with a stable JSONL
encoding, and the fused pipeline is literally the staged functions
composed, so running the stages separately or fused yields byte-identical
outputs.  Nothing written here includes timestamps or host details;
reruns with the same inputs and seeds are byte-identical.

Error policy: retrieval-stage failures (bad config, classifier backend
down after retries) abort the run, while answer-stage backend failures
degrade to recorded misses, matching how evaluation treats them.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TextIO

from . import __version__
from .answer import EvalSummary, QARecord, answer_question, evaluate_dataset
from .datasets import Question
from .errors import DataError
from .kg import KnowledgeGraph, surface_triples
from .retrieve import RetrievalConfig, RetrievalResult, TextClassifier, retrieve_question
from .rewrite import KnowledgeParagraph, Sentence, rewrite_surface_paths


def _map_ordered(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def retrieval_to_record(result: RetrievalResult, g: KnowledgeGraph) -> dict:
    return {
        "id": result.question_id,
        "question": result.question,
        "topic": result.topic,
        "hops": result.hops,
        "paths": [
            {
                "relations": [g.relation(r) for r in sp.relations],
                "step_probs": list(sp.step_probs),
                "log_score": sp.log_score,
            }
            for sp in result.scored_paths
        ],
        "reasoning_paths": [
            [list(t) for t in surface_triples(p, g)] for p in result.reasoning_paths
        ],
        "paths_tried": result.paths_tried,
        "paths_empty": result.paths_empty,
    }


def run_retrieval_stage(
    g: KnowledgeGraph,
    questions: Sequence[Question],
    hop_classifier: TextClassifier | None,
    relation_classifier: TextClassifier,
    config: RetrievalConfig,
    workers: int = 1,
) -> list[dict]:
    def one(q: Question) -> dict:
        return retrieval_to_record(
            retrieve_question(g, q, hop_classifier, relation_classifier, config), g
        )

    return _map_ordered(one, list(questions), workers)


def run_rewrite_stage(
    retrieval_records: Sequence[dict],
    backend,
    workers: int = 1,
    seed: int = 0,
    max_new_tokens: int = 256,
) -> list[dict]:
    def one(rec: dict) -> dict:
        chains = [
            [tuple(t) for t in chain] for chain in rec.get("reasoning_paths", [])
        ]
        paragraph = rewrite_surface_paths(chains, backend, max_new_tokens, seed)
        return {
            "id": rec["id"],
            "question": rec["question"],
            "hops": rec.get("hops"),
            "sentences": [
                {"text": s.text, "triples": [list(t) for t in s.source]}
                for s in paragraph.sentences
            ],
            "consolidated": paragraph.consolidated,
        }

    return _map_ordered(one, list(retrieval_records), workers)


def paragraph_from_record(rec: dict) -> KnowledgeParagraph:
    return KnowledgeParagraph(tuple(
        Sentence(s["text"], tuple(tuple(t) for t in s.get("triples", [])))
        for s in rec.get("sentences", [])
    ))


def run_answer_stage(
    paragraph_records: Sequence[dict],
    questions: Sequence[Question],
    backend,
    workers: int = 1,
    seed: int = 0,
    max_new_tokens: int = 64,
    exclude_failures: bool = False,
) -> tuple[list[QARecord], EvalSummary]:
    by_id = {q.id: q for q in questions}

    def one(rec: dict) -> QARecord:
        q = by_id.get(rec["id"])
        if q is None:
            raise DataError(f"paragraph record {rec['id']!r} has no matching question")
        paragraph = paragraph_from_record(rec)
        return answer_question(
            q.id, q.text, q.answers, paragraph, backend,
            hops=rec.get("hops"), max_new_tokens=max_new_tokens, seed=seed,
        )

    records = _map_ordered(one, list(paragraph_records), workers)
    return records, evaluate_dataset(records, exclude_failures=exclude_failures)


def run_pipeline(
    g: KnowledgeGraph,
    questions: Sequence[Question],
    hop_classifier: TextClassifier | None,
    relation_classifier: TextClassifier,
    rewriter,
    qa_backend,
    config: RetrievalConfig,
    workers: int = 1,
    seed: int = 0,
) -> tuple[list[dict], list[dict], list[QARecord], EvalSummary]:
    """Fused retrieve -> rewrite -> answer, one stage at a time so the
    intermediate records are exactly what the staged commands would emit."""
    retrievals = run_retrieval_stage(
        g, questions, hop_classifier, relation_classifier, config, workers
    )
    paragraphs = run_rewrite_stage(retrievals, rewriter, workers, seed)
    qa_records, summary = run_answer_stage(paragraphs, questions, qa_backend, workers, seed)
    return retrievals, paragraphs, qa_records, summary


def qa_record_to_dict(r: QARecord) -> dict:
    return {
        "id": r.question_id,
        "question": r.question,
        "hops": r.hops,
        "gold_answers": list(r.gold_answers),
        "knowledge": r.knowledge,
        "prompt": r.prompt,
        "answer_text": r.answer_text,
        "hit": r.hit,
        "no_knowledge": r.no_knowledge,
        "error": r.error,
    }


def write_jsonl(records: Iterable[dict], fh: TextIO) -> int:
    n = 0
    for rec in records:
        fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True))
        fh.write("\n")
        n += 1
    return n


def read_jsonl(lines: Iterable[str]) -> list[dict]:
    out = []
    for line in lines:
        line = line.strip()
        if line:
            out.append(json.loads(line))
    return out


def config_hash(config: dict) -> str:
    blob = json.dumps(config, ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def build_manifest(command: str, config: dict, seed: int, backend_ids: dict) -> dict:
    """Run provenance written next to every output; no timestamps so that
    identical runs produce identical manifests."""
    return {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "backend_ids": backend_ids,
        "engine_version": __version__,
    }

"""Command-line interface.

Every subcommand validates its configuration before creating any output,
writes its delimited records plus a manifest under --out, and renders
diagnostic figures alongside unless --no-figures is given.  Configuration
failures exit with code 2 and a single "config-error: ..." line on
stderr.  Flags beat KGQA_* environment variables, which beat built-in
defaults.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .backends import HttpBackend, HttpConfig, MockQA, MockRewriter, OracleClassifier
from .corpusgen import emit_corpus, generate_corpus
from .datasets import (
    build_classifier_datasets,
    load_generic,
    load_metaqa,
    load_metaqa_paths,
)
from .errors import ConfigError, KGQAError
from .kg import KnowledgeGraph, load_kg_path
from .pipeline import (
    build_manifest,
    qa_record_to_dict,
    read_jsonl,
    run_answer_stage,
    run_pipeline,
    run_retrieval_stage,
    run_rewrite_stage,
    write_jsonl,
)
from .retrieve import RetrievalConfig, hop_label_space
from .scorer import NativeTextClassifier, TrainConfig, load_classifier, save_classifier, train


def _env(name: str, cast, fallback):
    raw = os.environ.get("KGQA_" + name)
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"environment variable KGQA_{name} has invalid value {raw!r}")


def _http_config_from_env() -> HttpConfig:
    return HttpConfig(
        timeout_ms=_env("HTTP_TIMEOUT_MS", int, 30000),
        max_retries=_env("HTTP_MAX_RETRIES", int, 3),
        max_in_flight=_env("HTTP_MAX_IN_FLIGHT", int, 8),
        backoff_base_s=_env("HTTP_BACKOFF_MS", int, 50) / 1000.0,
        bearer_token=os.environ.get("KGQA_HTTP_BEARER_TOKEN"),
    )


def _require_file(path: str, what: str) -> str:
    if not path:
        raise ConfigError(f"missing required {what}")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _make_generator(spec: str):
    if spec == "mock:rewriter":
        return MockRewriter()
    if spec == "mock:qa":
        return MockQA()
    if spec.startswith(("http://", "https://")):
        return HttpBackend(spec, _http_config_from_env())
    raise ConfigError(f"unknown generator backend spec: {spec!r}")


def _make_classifier(spec: str, labels: tuple[str, ...], label_space_id: str):
    if spec.startswith("mock:oracle:"):
        oracle = OracleClassifier.from_json(_require_file(spec[len("mock:oracle:"):], "oracle table"))
        if tuple(oracle.labels) != labels:
            raise ConfigError(
                f"oracle label space ({len(oracle.labels)} labels) does not match "
                f"expected space '{label_space_id}' ({len(labels)} labels)"
            )
        return oracle
    if spec.startswith(("http://", "https://")):
        from .backends import RemoteClassifier

        return RemoteClassifier(HttpBackend(spec, _http_config_from_env()), labels, label_space_id)
    clf = load_classifier(_require_file(spec, "classifier file"))
    if tuple(clf.labels) != labels:
        raise ConfigError(
            f"classifier {spec} label space ({len(clf.labels)} labels) does not "
            f"match expected space '{label_space_id}' ({len(labels)} labels)"
        )
    return NativeTextClassifier(clf)


def _load_graph(args) -> KnowledgeGraph:
    _require_file(args.kg, "knowledge graph file")
    return load_kg_path(args.kg, add_inverses=args.add_inverses)


def _load_questions(args, g: KnowledgeGraph | None):
    if bool(args.questions) == bool(args.metaqa):
        raise ConfigError("exactly one of --questions or --metaqa is required")
    if args.questions:
        with open(_require_file(args.questions, "questions file"), encoding="utf-8") as fh:
            return load_generic(fh, g)
    paths = None
    if args.metaqa_paths:
        with open(_require_file(args.metaqa_paths, "gold paths file"), encoding="utf-8") as fh:
            paths = load_metaqa_paths(fh)
    with open(_require_file(args.metaqa, "questions file"), encoding="utf-8") as fh:
        return load_metaqa(fh, paths, g, default_gold_hops=args.default_gold_hops)


def _retrieval_config(args) -> RetrievalConfig:
    return RetrievalConfig(
        k=args.k,
        m=args.m,
        max_hops=args.max_hops,
        use_gold_hops=args.gold_hops,
        max_paths_cap=args.max_paths_cap,
    )


def _prepare_out(args) -> str:
    out = args.out
    if not out:
        raise ConfigError("missing required --out directory")
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(payload: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def _write_records(records, path: str) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        return write_jsonl(records, fh)


def _add_question_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--questions", help="generic JSONL questions file")
    p.add_argument("--metaqa", help="tab-separated questions file with [topic] spans")
    p.add_argument("--metaqa-paths", help="optional id<TAB>rel1|rel2 gold path file")
    p.add_argument("--default-gold-hops", type=int, default=None,
                   help="gold hop count for --metaqa files without a paths file")


def _add_retrieval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=_env("K", int, 5),
                   help="relations expanded per step (default 5)")
    p.add_argument("--m", type=int, default=_env("M", int, 5),
                   help="reasoning paths sampled per question (default 5)")
    p.add_argument("--max-hops", type=int, default=_env("MAX_HOPS", int, 2))
    p.add_argument("--gold-hops", action="store_true",
                   help="use dataset gold hop counts instead of a hop classifier")
    p.add_argument("--max-paths-cap", type=int, default=None,
                   help="frontier cap during expansion (required at 4 hops)")
    p.add_argument("--hop-model", help="hop classifier: file.npz | mock:oracle:FILE | http(s)://URL")
    p.add_argument("--relation-model", required=True,
                   help="relation classifier: file.npz | mock:oracle:FILE | http(s)://URL")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int, default=_env("WORKERS", int, 1))
    p.add_argument("--seed", type=int, default=_env("SEED", int, 0))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def _classifiers(args, g: KnowledgeGraph):
    relation_clf = _make_classifier(args.relation_model, tuple(g.relations), "relations")
    hop_clf = None
    if not args.gold_hops:
        if not args.hop_model:
            raise ConfigError("--hop-model is required unless --gold-hops is set")
        hop_clf = _make_classifier(args.hop_model, hop_label_space(args.max_hops), "hops")
    return hop_clf, relation_clf


def _backend_ids(**named) -> dict:
    return {k: v.backend_id for k, v in named.items() if v is not None}


# -- subcommands ---------------------------------------------------------


def cmd_train_scorer(args) -> int:
    g = _load_graph(args)
    questions, report = _load_questions(args, g)
    hop_examples, relation_examples = build_classifier_datasets(questions, g.relations)
    if args.task == "hop":
        examples = hop_examples
        labels = hop_label_space(args.max_hops)
    else:
        examples = relation_examples
        labels = tuple(g.relations)
    config = TrainConfig(
        feature_dim=args.feature_dim,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        l2_penalty=args.l2,
        seed=args.seed,
    )
    out = _prepare_out(args)
    result = train(examples, labels, config, kind=args.task)
    model_path = os.path.join(out, "scorer.npz")
    save_classifier(result.classifier, model_path)
    summary = {
        "task": args.task,
        "examples": len(examples),
        "labels": len(labels),
        "epoch_losses": result.epoch_losses,
        "final_loss": result.epoch_losses[-1],
        "questions": report.to_dict(),
    }
    _write_json(summary, os.path.join(out, "train_summary.json"))
    manifest_config = {
        "task": args.task, "kg": args.kg, "add_inverses": args.add_inverses,
        "feature_dim": args.feature_dim, "lr": args.lr, "epochs": args.epochs,
        "batch_size": args.batch_size, "l2": args.l2, "max_hops": args.max_hops,
    }
    _write_json(build_manifest("train-scorer", manifest_config, args.seed, {}),
                os.path.join(out, "manifest.json"))
    if not args.no_figures:
        from .report import save_training_curve

        save_training_curve(result.epoch_losses, os.path.join(out, "training_curve.png"))
    print(f"trained {args.task} scorer on {len(examples)} examples, "
          f"final loss {result.epoch_losses[-1]:.6f} -> {model_path}")
    return 0


def cmd_retrieve(args) -> int:
    g = _load_graph(args)
    questions, report = _load_questions(args, g)
    config = _retrieval_config(args)
    hop_clf, relation_clf = _classifiers(args, g)
    out = _prepare_out(args)
    records = run_retrieval_stage(g, questions, hop_clf, relation_clf, config, args.workers)
    _write_records(records, os.path.join(out, "retrievals.jsonl"))
    grounded = sum(1 for r in records if r["reasoning_paths"])
    summary = {
        "questions": len(records),
        "grounded_questions": grounded,
        "kg": g.summary(),
        "load_report": report.to_dict(),
    }
    _write_json(summary, os.path.join(out, "retrieval_summary.json"))
    manifest_config = {
        "kg": args.kg, "add_inverses": args.add_inverses, "k": config.k, "m": config.m,
        "max_hops": config.max_hops, "gold_hops": config.use_gold_hops,
        "max_paths_cap": config.max_paths_cap, "workers": args.workers,
    }
    _write_json(
        build_manifest("retrieve", manifest_config, args.seed,
                       _backend_ids(hop_model=hop_clf, relation_model=relation_clf)),
        os.path.join(out, "manifest.json"),
    )
    if not args.no_figures:
        from .report import save_retrieval_diagnostics

        save_retrieval_diagnostics(records, os.path.join(out, "retrieval_diagnostics.png"))
    print(f"retrieved paths for {len(records)} questions "
          f"({grounded} grounded) -> {out}/retrievals.jsonl")
    return 0


def cmd_rewrite(args) -> int:
    _require_file(args.retrievals, "retrievals file")
    backend = _make_generator(args.backend)
    with open(args.retrievals, encoding="utf-8") as fh:
        retrievals = read_jsonl(fh)
    out = _prepare_out(args)
    records = run_rewrite_stage(retrievals, backend, args.workers, args.seed,
                                args.max_new_tokens)
    _write_records(records, os.path.join(out, "paragraphs.jsonl"))
    manifest_config = {
        "retrievals": args.retrievals, "max_new_tokens": args.max_new_tokens,
        "workers": args.workers,
    }
    _write_json(
        build_manifest("rewrite", manifest_config, args.seed, _backend_ids(rewriter=backend)),
        os.path.join(out, "manifest.json"),
    )
    print(f"rewrote {len(records)} questions -> {out}/paragraphs.jsonl")
    return 0


def cmd_answer(args) -> int:
    _require_file(args.paragraphs, "paragraphs file")
    questions, _ = _load_questions(args, None)
    backend = _make_generator(args.backend)
    with open(args.paragraphs, encoding="utf-8") as fh:
        paragraphs = read_jsonl(fh)
    out = _prepare_out(args)
    qa_records, summary = run_answer_stage(
        paragraphs, questions, backend, args.workers, args.seed,
        args.max_new_tokens, args.exclude_failures,
    )
    _write_records((qa_record_to_dict(r) for r in qa_records),
                   os.path.join(out, "qa_records.jsonl"))
    _write_json(summary.to_dict(), os.path.join(out, "eval_summary.json"))
    manifest_config = {
        "paragraphs": args.paragraphs, "max_new_tokens": args.max_new_tokens,
        "workers": args.workers, "exclude_failures": args.exclude_failures,
    }
    _write_json(
        build_manifest("answer", manifest_config, args.seed, _backend_ids(qa=backend)),
        os.path.join(out, "manifest.json"),
    )
    if not args.no_figures:
        from .report import save_hit_rate_by_hop

        save_hit_rate_by_hop(summary, os.path.join(out, "hit_at_1_by_hop.png"))
    print(f"hit@1 {summary.hit_at_1:.3f} over {summary.total} questions -> {out}")
    return 0


def cmd_pipeline(args) -> int:
    g = _load_graph(args)
    questions, report = _load_questions(args, g)
    config = _retrieval_config(args)
    hop_clf, relation_clf = _classifiers(args, g)
    rewriter = _make_generator(args.rewriter_backend)
    qa = _make_generator(args.qa_backend)
    out = _prepare_out(args)
    retrievals, paragraphs, qa_records, summary = run_pipeline(
        g, questions, hop_clf, relation_clf, rewriter, qa, config,
        args.workers, args.seed,
    )
    _write_records(retrievals, os.path.join(out, "retrievals.jsonl"))
    _write_records(paragraphs, os.path.join(out, "paragraphs.jsonl"))
    _write_records((qa_record_to_dict(r) for r in qa_records),
                   os.path.join(out, "qa_records.jsonl"))
    _write_json(summary.to_dict(), os.path.join(out, "eval_summary.json"))
    manifest_config = {
        "kg": args.kg, "add_inverses": args.add_inverses, "k": config.k, "m": config.m,
        "max_hops": config.max_hops, "gold_hops": config.use_gold_hops,
        "max_paths_cap": config.max_paths_cap, "workers": args.workers,
        "load_report": report.to_dict(),
    }
    _write_json(
        build_manifest("pipeline", manifest_config, args.seed,
                       _backend_ids(hop_model=hop_clf, relation_model=relation_clf,
                                    rewriter=rewriter, qa=qa)),
        os.path.join(out, "manifest.json"),
    )
    if not args.no_figures:
        from .report import save_hit_rate_by_hop, save_retrieval_diagnostics

        save_retrieval_diagnostics(retrievals, os.path.join(out, "retrieval_diagnostics.png"))
        save_hit_rate_by_hop(summary, os.path.join(out, "hit_at_1_by_hop.png"))
    print(f"hit@1 {summary.hit_at_1:.3f} over {summary.total} questions -> {out}")
    return 0


def cmd_corpusgen(args) -> int:
    g = _load_graph(args)
    questions, report = _load_questions(args, g)
    rewriter = _make_generator(args.rewriter_backend)
    qa = _make_generator(args.qa_backend)
    out = _prepare_out(args)
    pairs, summary = generate_corpus(
        questions, g, rewriter, qa,
        grounding_limit=args.grounding_limit,
        max_new_tokens=args.max_new_tokens,
        seed=args.seed,
    )
    with open(os.path.join(out, "corpus.jsonl"), "w", encoding="utf-8") as fh:
        emit_corpus(pairs, fh)
    payload = summary.to_dict()
    payload["load_report"] = report.to_dict()
    _write_json(payload, os.path.join(out, "corpus_summary.json"))
    manifest_config = {
        "kg": args.kg, "add_inverses": args.add_inverses,
        "grounding_limit": args.grounding_limit, "max_new_tokens": args.max_new_tokens,
    }
    _write_json(
        build_manifest("corpusgen", manifest_config, args.seed,
                       _backend_ids(rewriter=rewriter, qa=qa)),
        os.path.join(out, "manifest.json"),
    )
    if not args.no_figures:
        from .report import save_corpus_summary

        save_corpus_summary(summary, os.path.join(out, "corpus_summary.png"))
    print(f"kept {summary.kept}/{len(questions)} pairs "
          f"(gated out {summary.gated_out}, skipped {summary.skipped}) -> {out}")
    return 0


def cmd_eval(args) -> int:
    from .answer import QARecord, evaluate_dataset

    _require_file(args.qa_records, "qa records file")
    out = _prepare_out(args)
    with open(args.qa_records, encoding="utf-8") as fh:
        rows = read_jsonl(fh)
    records = [
        QARecord(
            question_id=r["id"], question=r["question"], hops=r.get("hops"),
            gold_answers=tuple(r["gold_answers"]), knowledge=r.get("knowledge"),
            prompt=r.get("prompt", ""), answer_text=r.get("answer_text", ""),
            hit=bool(r["hit"]), no_knowledge=bool(r.get("no_knowledge", False)),
            error=r.get("error"),
        )
        for r in rows
    ]
    summary = evaluate_dataset(records, exclude_failures=args.exclude_failures)
    _write_json(summary.to_dict(), os.path.join(out, "eval_summary.json"))
    if not args.no_figures:
        from .report import save_hit_rate_by_hop

        save_hit_rate_by_hop(summary, os.path.join(out, "hit_at_1_by_hop.png"))
    print(f"hit@1 {summary.hit_at_1:.3f} over {summary.total} records -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgqa",
        description="Knowledge-graph QA: retrieve relation paths, rewrite them "
                    "to text, answer with the rewritten knowledge.",
    )
    parser.add_argument("--version", action="version", version=f"kgqa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-scorer", help="train a hop or relation-step classifier")
    p.add_argument("--task", choices=("hop", "relation"), required=True)
    p.add_argument("--kg", required=True)
    p.add_argument("--add-inverses", action="store_true")
    _add_question_flags(p)
    p.add_argument("--max-hops", type=int, default=_env("MAX_HOPS", int, 2))
    p.add_argument("--feature-dim", type=int, default=_env("FEATURE_DIM", int, 2**18))
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--l2", type=float, default=1e-6)
    _add_common_flags(p)
    p.set_defaults(fn=cmd_train_scorer)

    p = sub.add_parser("retrieve", help="predict and ground relation paths")
    p.add_argument("--kg", required=True)
    p.add_argument("--add-inverses", action="store_true")
    _add_question_flags(p)
    _add_retrieval_flags(p)
    _add_common_flags(p)
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("rewrite", help="rewrite retrieved paths into text")
    p.add_argument("--retrievals", required=True, help="retrievals.jsonl from retrieve")
    p.add_argument("--backend", required=True,
                   help="mock:rewriter | mock:qa | http(s)://URL")
    p.add_argument("--max-new-tokens", type=int, default=256)
    _add_common_flags(p)
    p.set_defaults(fn=cmd_rewrite)

    p = sub.add_parser("answer", help="answer questions from knowledge paragraphs")
    p.add_argument("--paragraphs", required=True, help="paragraphs.jsonl from rewrite")
    _add_question_flags(p)
    p.add_argument("--backend", required=True)
    p.add_argument("--max-new-tokens", type=int, default=64)
    p.add_argument("--exclude-failures", action="store_true",
                   help="drop backend failures from the hit@1 denominator")
    _add_common_flags(p)
    p.set_defaults(fn=cmd_answer)

    p = sub.add_parser("pipeline", help="fused retrieve + rewrite + answer")
    p.add_argument("--kg", required=True)
    p.add_argument("--add-inverses", action="store_true")
    _add_question_flags(p)
    _add_retrieval_flags(p)
    p.add_argument("--rewriter-backend", required=True)
    p.add_argument("--qa-backend", required=True)
    _add_common_flags(p)
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("corpusgen", help="generate a quality-gated graph-to-text corpus")
    p.add_argument("--kg", required=True)
    p.add_argument("--add-inverses", action="store_true")
    _add_question_flags(p)
    p.add_argument("--rewriter-backend", required=True)
    p.add_argument("--qa-backend", required=True)
    p.add_argument("--grounding-limit", type=int, default=5)
    p.add_argument("--max-new-tokens", type=int, default=256)
    _add_common_flags(p)
    p.set_defaults(fn=cmd_corpusgen)

    p = sub.add_parser("eval", help="re-aggregate hit@1 from qa_records.jsonl")
    p.add_argument("--qa-records", required=True)
    p.add_argument("--exclude-failures", action="store_true")
    _add_common_flags(p)
    p.set_defaults(fn=cmd_eval)

    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config-error: {exc}", file=sys.stderr)
        return 2
    except KGQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

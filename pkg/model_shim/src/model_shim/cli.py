"""Command line entry points: serve the HTTP protocol, run a fine-tune job."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="model-shim")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="serve /v1/generate and /v1/classify over HTTP")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--lm", type=Path, default=None, help="language model checkpoint (.pt)")
    serve.add_argument("--adapter", type=Path, default=None, help="adapter checkpoint to apply on top of --lm")
    serve.add_argument(
        "--init-seed", type=int, default=None,
        help="serve a freshly initialized model with this seed instead of --lm",
    )
    serve.add_argument(
        "--classifier", action="append", default=[], metavar="NAME=PATH",
        help="serve scorer PATH (.npz) under label space NAME; repeatable",
    )
    serve.add_argument("--token", default=None, help="require this bearer token")
    serve.add_argument("--max-new-tokens-cap", type=int, default=512)

    tune = sub.add_parser("finetune", help="fine-tune the graph-to-text adapter on a corpus")
    tune.add_argument("--corpus", type=Path, required=True, help="corpus JSONL with triple_form/free_form")
    tune.add_argument("--out", type=Path, required=True, help="output directory")
    tune.add_argument("--base", type=Path, default=None, help="base model checkpoint; omit to train from a fresh init")
    tune.add_argument("--init-seed", type=int, default=0)
    tune.add_argument("--rank", type=int, default=64)
    tune.add_argument("--alpha", type=float, default=128.0)
    tune.add_argument("--dropout", type=float, default=0.05)
    tune.add_argument("--lr", type=float, default=1e-4)
    tune.add_argument("--epochs", type=int, default=10)
    tune.add_argument("--batch-size", type=int, default=128)
    tune.add_argument("--seed", type=int, default=0)
    tune.add_argument("--holdout", type=float, default=0.1)
    return parser


def _run_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .lm import load_lm, new_lm
    from .lora import load_adapter
    from .scorer import load_scorer
    from .server import ModelRegistry, ServerConfig, build_app

    registry = ModelRegistry()
    if args.lm is not None and args.init_seed is not None:
        print("error: --lm and --init-seed are mutually exclusive", file=sys.stderr)
        return 2
    try:
        if args.lm is not None:
            registry.lm = load_lm(args.lm)
            if args.adapter is not None:
                load_adapter(registry.lm, args.adapter)
        elif args.init_seed is not None:
            registry.lm = new_lm(args.init_seed)
        elif args.adapter is not None:
            print("error: --adapter requires --lm", file=sys.stderr)
            return 2
        for spec in args.classifier:
            name, sep, path = spec.partition("=")
            if not sep or not name or not path:
                print(f"error: --classifier expects NAME=PATH, got {spec!r}", file=sys.stderr)
                return 2
            registry.classifiers[name] = load_scorer(Path(path))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if registry.lm is None and not registry.classifiers:
        print("error: nothing to serve; pass --lm, --init-seed, or --classifier", file=sys.stderr)
        return 2

    config = ServerConfig(max_new_tokens_cap=args.max_new_tokens_cap, bearer_token=args.token)
    app = build_app(registry, config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _run_finetune(args: argparse.Namespace) -> int:
    from .finetune import FinetuneJob, finetune_kg2text
    from .lm import new_lm, save_lm
    from .lora import LoraConfig, save_adapter

    args.out.mkdir(parents=True, exist_ok=True)
    base_path = args.base
    if base_path is None:
        # persist the fresh init before wrapping it so the adapter can
        # be re-applied to a bare checkpoint later
        base_path = args.out / "base.pt"
        save_lm(new_lm(args.init_seed), base_path)
    try:
        job = FinetuneJob(
            corpus_path=args.corpus,
            base_model_path=base_path,
            init_seed=args.init_seed,
            rank=args.rank,
            alpha=args.alpha,
            dropout=args.dropout,
            learning_rate=args.lr,
            epochs=args.epochs,
            batch_size=args.batch_size,
            seed=args.seed,
            holdout_fraction=args.holdout,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        model, result = finetune_kg2text(job)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    adapter_config = LoraConfig(rank=job.rank, alpha=job.alpha, dropout=job.dropout)
    save_adapter(model, adapter_config, args.out / "adapter.pt")
    history = args.out / "history.json"
    history.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"final train loss {result.train_losses[-1]:.4f} over {result.n_train} pairs")
    if result.holdout_losses:
        print(f"final holdout loss {result.holdout_losses[-1]:.4f} over {result.n_holdout} pairs")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return _run_serve(args)
    return _run_finetune(args)


if __name__ == "__main__":
    sys.exit(main())

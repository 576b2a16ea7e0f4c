"""Teacher-forced graph-to-text fine-tuning over the corpus JSONL format.

Each corpus record carries a triple_form (structured facts) and a
free_form (fluent rendering).  Training pairs wrap the triple_form in the
same prompt the engine sends generation backends and use the free_form as
the decoding target.  The loss on one example is the mean token-level
cross-entropy over the target tokens (prompt and padding are masked);
a batch averages example losses.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import torch
from torch import nn

from .lm import BOS_ID, EOS_ID, PAD_ID, TinyCausalLM, encode_text, load_lm, new_lm
from .lora import LoraConfig, apply_lora

logger = logging.getLogger(__name__)

# Prompt wrapper the engine uses for graph-to-text generation requests;
# fine-tuning must see the same bytes the server will be prompted with.
GRAPH_TO_TEXT_PREFIX = (
    "Your task is to transform a knowledge graph to a sentence or multiple "
    "sentences. The knowledge graph is: "
)
GRAPH_TO_TEXT_SUFFIX = ". The sentence is:"


@dataclass(frozen=True)
class FinetuneJob:
    """Fine-tuning configuration; defaults follow the reference setup."""

    corpus_path: str
    base_model_path: str | None = None  # None: fresh init from init_seed
    init_seed: int = 0
    rank: int = 64
    alpha: float = 128.0
    dropout: float = 0.05
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError(
                f"holdout_fraction must be in [0, 1), got {self.holdout_fraction}"
            )
        LoraConfig(self.rank, self.alpha, self.dropout)  # validates adapter fields


@dataclass
class FinetuneResult:
    train_losses: list[float] = field(default_factory=list)
    holdout_losses: list[float] = field(default_factory=list)
    skipped: int = 0
    n_train: int = 0
    n_holdout: int = 0

    def to_dict(self) -> dict:
        return {
            "train_losses": self.train_losses,
            "holdout_losses": self.holdout_losses,
            "skipped": self.skipped,
            "n_train": self.n_train,
            "n_holdout": self.n_holdout,
        }


def build_prompt(triple_form: str) -> str:
    return f"{GRAPH_TO_TEXT_PREFIX}{triple_form}{GRAPH_TO_TEXT_SUFFIX}"


def load_corpus_pairs(path: str) -> tuple[list[tuple[str, str]], int]:
    """(prompt, target) pairs from corpus JSONL; empty targets are skipped."""
    pairs: list[tuple[str, str]] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path} line {lineno}: invalid JSON ({exc.msg})") from exc
            missing = {"triple_form", "free_form"} - set(rec)
            if missing:
                raise ValueError(f"{path} line {lineno}: missing fields {sorted(missing)}")
            free_form = str(rec["free_form"]).strip()
            if not free_form:
                logger.warning("%s line %d: empty free_form, record skipped", path, lineno)
                skipped += 1
                continue
            pairs.append((build_prompt(str(rec["triple_form"])), free_form))
    return pairs, skipped


def _encode_pair(prompt: str, target: str, max_seq: int) -> tuple[list[int], int]:
    """Token ids [BOS, prompt..., target..., EOS] and the prompt length.

    Long examples are truncated from the target end so the prompt stays
    intact; at least one target token always survives.
    """
    p = encode_text(prompt)
    t = encode_text(target)
    budget = max_seq - 2 - len(p)  # BOS and EOS
    if budget < 1:
        raise ValueError(
            f"prompt of {len(p)} bytes leaves no room for a target "
            f"(max_seq {max_seq})"
        )
    t = t[:budget]
    return [BOS_ID] + p + t + [EOS_ID], len(p)


def _batch_loss(
    model: TinyCausalLM, encoded: list[tuple[list[int], int]]
) -> torch.Tensor:
    width = max(len(ids) for ids, _ in encoded)
    ids = torch.full((len(encoded), width), PAD_ID, dtype=torch.long)
    # mask over shifted labels: True where the label is a target token
    mask = torch.zeros((len(encoded), width - 1), dtype=torch.bool)
    for row, (seq, n_prompt) in enumerate(encoded):
        ids[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        # label index j predicts ids[j+1]; targets span ids[n_prompt+1 .. len-1]
        mask[row, n_prompt : len(seq) - 1] = True  # target tokens + EOS
    logits = model(ids)[:, :-1, :]
    labels = ids[:, 1:]
    ce = nn.functional.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), reduction="none"
    ).view(labels.shape)
    per_example = (ce * mask).sum(dim=1) / mask.sum(dim=1)
    return per_example.mean()


def evaluate_loss(
    model: TinyCausalLM, pairs: list[tuple[str, str]], batch_size: int = 32
) -> float:
    """Mean per-example target cross-entropy over ``pairs`` (no grads)."""
    if not pairs:
        raise ValueError("no pairs to evaluate")
    encoded = [_encode_pair(p, t, model.config.max_seq) for p, t in pairs]
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(encoded), batch_size):
            chunk = encoded[start : start + batch_size]
            total += float(_batch_loss(model, chunk)) * len(chunk)
    return total / len(encoded)


def finetune_kg2text(job: FinetuneJob) -> tuple[TinyCausalLM, FinetuneResult]:
    """Train adapters on the corpus; returns the adapted model and history.

    Only adapter parameters receive gradients.  With a fixed seed the run
    is deterministic: same corpus + job gives the same losses.
    """
    pairs, skipped = load_corpus_pairs(job.corpus_path)
    if not pairs:
        raise ValueError(f"corpus {job.corpus_path} has no usable records")

    torch.manual_seed(job.seed)
    if job.base_model_path is not None:
        model = load_lm(job.base_model_path)
    else:
        model = new_lm(job.init_seed)
    adapter_params = apply_lora(model, LoraConfig(job.rank, job.alpha, job.dropout))

    order = torch.randperm(len(pairs), generator=torch.Generator().manual_seed(job.seed))
    pairs = [pairs[i] for i in order.tolist()]
    n_holdout = int(round(job.holdout_fraction * len(pairs)))
    if n_holdout >= len(pairs):
        n_holdout = len(pairs) - 1
    holdout, train_pairs = pairs[:n_holdout], pairs[n_holdout:]

    encoded = [_encode_pair(p, t, model.config.max_seq) for p, t in train_pairs]
    optimizer = torch.optim.AdamW(adapter_params, lr=job.learning_rate)
    result = FinetuneResult(
        skipped=skipped, n_train=len(train_pairs), n_holdout=len(holdout)
    )
    for epoch in range(job.epochs):
        gen = torch.Generator().manual_seed(job.seed * 100003 + epoch)
        order = torch.randperm(len(encoded), generator=gen).tolist()
        model.train()
        epoch_total = 0.0
        for start in range(0, len(order), job.batch_size):
            batch = [encoded[i] for i in order[start : start + job.batch_size]]
            optimizer.zero_grad()
            loss = _batch_loss(model, batch)
            loss.backward()
            optimizer.step()
            epoch_total += loss.detach().item() * len(batch)
        result.train_losses.append(epoch_total / len(encoded))
        if holdout:
            result.holdout_losses.append(evaluate_loss(model, holdout))
        logger.info(
            "epoch %d/%d: train %.4f%s", epoch + 1, job.epochs,
            result.train_losses[-1],
            f" holdout {result.holdout_losses[-1]:.4f}" if holdout else "",
        )
    return model, result

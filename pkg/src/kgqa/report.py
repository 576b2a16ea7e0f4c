"""Figure rendering for CLI reports.

Every figure-producing subcommand writes PNGs next to its delimited
output.  Rendering uses the Agg backend and strips the Software metadata
key so identical runs produce identical bytes.
"""
from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .answer import EvalSummary  # noqa: E402
from .corpusgen import CorpusSummary  # noqa: E402

_PNG_METADATA = {"Software": None}
_DPI = 120


def _save(fig, path: str) -> None:
    fig.savefig(path, dpi=_DPI, metadata=_PNG_METADATA)
    plt.close(fig)


def save_training_curve(epoch_losses: Sequence[float], path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(epoch_losses) + 1), epoch_losses, marker="o", lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training cross-entropy")
    ax.set_title("Classifier training curve")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def save_retrieval_diagnostics(records: Sequence[dict], path: str) -> None:
    """Two panels: top-path log-score distribution and grounding yield."""
    top_scores = [r["paths"][0]["log_score"] for r in records if r["paths"]]
    grounded = [len(r.get("reasoning_paths", [])) for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    if top_scores:
        ax1.hist(top_scores, bins=min(30, max(5, len(top_scores) // 3)), color="#4878a8")
    ax1.set_xlabel("top path log score")
    ax1.set_ylabel("questions")
    ax1.set_title("Top candidate score")
    if grounded:
        upper = max(grounded)
        counts = [grounded.count(v) for v in range(upper + 1)]
        ax2.bar(range(upper + 1), counts, color="#6aa66a")
    ax2.set_xlabel("reasoning paths grounded")
    ax2.set_ylabel("questions")
    ax2.set_title("Grounding yield")
    fig.tight_layout()
    _save(fig, path)


def save_hit_rate_by_hop(summary: EvalSummary, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    hops = sorted(summary.per_hop)
    rates = [summary.per_hop[h].rate for h in hops]
    labels = [f"{h}-hop" for h in hops]
    labels.append("overall")
    rates.append(summary.hit_at_1)
    ax.bar(range(len(rates)), rates, color=["#4878a8"] * (len(rates) - 1) + ["#b8860b"])
    ax.set_xticks(range(len(rates)))
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("hit@1")
    ax.set_title("Answer accuracy")
    for i, r in enumerate(rates):
        ax.text(i, r + 0.02, f"{r:.3f}", ha="center", fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def save_corpus_summary(summary: CorpusSummary, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    names = ["kept", "gated_out", "skipped"]
    values = [summary.kept, summary.gated_out, summary.skipped]
    ax.bar(names, values, color=["#6aa66a", "#c0504d", "#999999"])
    ax.set_ylabel("questions")
    ax.set_title("Corpus generation outcome")
    for i, v in enumerate(values):
        ax.text(i, v + 0.3, str(v), ha="center", fontsize=9)
    fig.tight_layout()
    _save(fig, path)

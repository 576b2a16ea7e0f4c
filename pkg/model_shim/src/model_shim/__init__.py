"""Small language-model service speaking the KGQA engine's HTTP protocol.

Serves text generation and text classification over the wire format the
engine's remote backends expect, and fine-tunes a byte-level causal
transformer on graph-to-text corpora with low-rank adapters.
"""
from .finetune import FinetuneJob, FinetuneResult, finetune_kg2text, load_corpus_pairs
from .lm import LMConfig, TinyCausalLM, load_lm, new_lm, save_lm
from .lora import LoraConfig, apply_lora, load_adapter, save_adapter
from .scorer import NpzScorer, load_scorer
from .server import ModelRegistry, ServerConfig, build_app

__version__ = "0.1.0"

__all__ = [
    "FinetuneJob",
    "FinetuneResult",
    "LMConfig",
    "LoraConfig",
    "ModelRegistry",
    "NpzScorer",
    "ServerConfig",
    "TinyCausalLM",
    "apply_lora",
    "build_app",
    "finetune_kg2text",
    "load_adapter",
    "load_corpus_pairs",
    "load_lm",
    "load_scorer",
    "new_lm",
    "save_adapter",
    "save_lm",
    "__version__",
]

"""Graph-to-text rewriting: linearize reasoning paths and have a
generator backend turn each one into free-form sentences.

Triples are linearized as "(s, r, o)" groups joined by ", "; one generate
call is made per reasoning path, in path order, and the trimmed outputs
are joined by single spaces into the knowledge paragraph.  An empty
generation falls back to the triple-form text so no path silently
vanishes from the paragraph.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .backends import GenerateRequest
from .errors import BackendError, RewriteError
from .kg import KnowledgeGraph, ReasoningPath, surface_triples
from .prompts import build_graph_to_text_prompt

SurfaceTriple = tuple[str, str, str]

REWRITE_TEMPERATURE = 0.0


@dataclass(frozen=True)
class TripleFormText:
    """Linearized triples plus their provenance."""

    text: str
    source: tuple[SurfaceTriple, ...]


@dataclass(frozen=True)
class Sentence:
    text: str
    source: tuple[SurfaceTriple, ...]


@dataclass(frozen=True)
class KnowledgeParagraph:
    """One sentence per reasoning path, in path order."""

    sentences: tuple[Sentence, ...]

    @property
    def consolidated(self) -> str:
        return " ".join(s.text for s in self.sentences).strip()


def linearize_surface(triples: Sequence[SurfaceTriple]) -> TripleFormText:
    """"(s, r, o)" groups joined by ", "; duplicates keep first position."""
    seen: dict[SurfaceTriple, None] = {}
    for t in triples:
        if t not in seen:
            seen[t] = None
    unique = tuple(seen)
    text = ", ".join(f"({s}, {r}, {o})" for s, r, o in unique)
    return TripleFormText(text, unique)


def linearize(triples, g: KnowledgeGraph) -> TripleFormText:
    """Id-level variant of linearize_surface."""
    return linearize_surface([g.surface_triple(t) for t in triples])


def rewrite_surface_paths(
    paths: Sequence[Sequence[SurfaceTriple]],
    backend,
    max_new_tokens: int = 256,
    seed: int = 0,
) -> KnowledgeParagraph:
    """Rewrite pre-surfaced triple chains; building block for rewrite_paths
    and for the staged CLI, which reads chains back from JSONL."""
    sentences: list[Sentence] = []
    for i, chain in enumerate(paths):
        form = linearize_surface(chain)
        prompt = build_graph_to_text_prompt(form.text)
        try:
            resp = backend.generate(
                GenerateRequest(prompt, max_new_tokens, REWRITE_TEMPERATURE, seed)
            )
        except BackendError as exc:
            raise RewriteError(f"path {i}: {exc}", path_index=i) from exc
        text = resp.text.strip()
        if not text:
            text = form.text
        sentences.append(Sentence(text, form.source))
    return KnowledgeParagraph(tuple(sentences))


def rewrite_paths(
    paths: Sequence[ReasoningPath],
    g: KnowledgeGraph,
    backend,
    max_new_tokens: int = 256,
    seed: int = 0,
) -> KnowledgeParagraph:
    """One generate call per reasoning path, consolidated in path order."""
    return rewrite_surface_paths(
        [surface_triples(p, g) for p in paths], backend, max_new_tokens, seed
    )

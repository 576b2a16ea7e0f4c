"""Prompt templates, byte-pinned.

Every producer and consumer of prompts goes through this module so the
byte layout is defined exactly once.  Do not edit the constants without
updating the golden files under tests/golden/.
"""
from __future__ import annotations

GRAPH_TO_TEXT_PREFIX = (
    "Your task is to transform a knowledge graph to a sentence or multiple "
    "sentences. The knowledge graph is: "
)
GRAPH_TO_TEXT_SUFFIX = ". The sentence is:"

QA_FACTS_PREFIX = "Below are the facts that might be relevant to answer the question: "
QA_QUESTION_MARKER = " Question: "
QA_ANSWER_SUFFIX = " Answer:"
QA_NO_KNOWLEDGE_PREFIX = "Question: "


def build_graph_to_text_prompt(triple_form: str) -> str:
    """Rewriting prompt around a linearized triple sequence."""
    return GRAPH_TO_TEXT_PREFIX + triple_form + GRAPH_TO_TEXT_SUFFIX


def build_qa_prompt(knowledge: str | None, question: str) -> str:
    """Answer prompt; ``knowledge=None`` selects the no-knowledge form."""
    if knowledge is None:
        return QA_NO_KNOWLEDGE_PREFIX + question + QA_ANSWER_SUFFIX
    return (
        QA_FACTS_PREFIX + knowledge + QA_QUESTION_MARKER + question + QA_ANSWER_SUFFIX
    )


def extract_graph_section(prompt: str) -> str | None:
    """Inverse of build_graph_to_text_prompt; None if markers are absent."""
    start = prompt.find(GRAPH_TO_TEXT_PREFIX)
    end = prompt.rfind(GRAPH_TO_TEXT_SUFFIX)
    if start < 0 or end < 0:
        return None
    start += len(GRAPH_TO_TEXT_PREFIX)
    if end < start:
        return None
    return prompt[start:end]


def extract_facts_section(prompt: str) -> str | None:
    """Facts block of a knowledge-augmented answer prompt, else None."""
    if not prompt.startswith(QA_FACTS_PREFIX):
        return None
    end = prompt.find(QA_QUESTION_MARKER, len(QA_FACTS_PREFIX))
    if end < 0:
        return None
    return prompt[len(QA_FACTS_PREFIX):end]

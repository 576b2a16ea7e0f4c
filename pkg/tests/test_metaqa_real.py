"""Optional checks against the real movie-KB release.

These only run when the data files are supplied via environment
variables; the rest of the suite is fully synthetic.

    KGQA_METAQA_KB         path to kb.txt (subject|relation|object lines)
    KGQA_METAQA_QUESTIONS  path to a qa_* split (question with [topic]<TAB>answers)
"""
import os

import pytest

from kgqa.datasets import load_metaqa
from kgqa.kg import load_kg_path

KB = os.environ.get("KGQA_METAQA_KB")
QUESTIONS = os.environ.get("KGQA_METAQA_QUESTIONS")


@pytest.mark.skipif(not KB, reason="KGQA_METAQA_KB not set")
def test_real_kb_counts():
    g = load_kg_path(KB)
    assert g.n_triples == 134_741
    assert g.n_relations == 9
    with_inverses = load_kg_path(KB, add_inverses=True)
    assert with_inverses.n_relations == 18
    assert with_inverses.n_entities == g.n_entities


@pytest.mark.skipif(not (KB and QUESTIONS), reason="KGQA_METAQA_* not set")
def test_real_questions_resolve_against_kb():
    g = load_kg_path(KB)
    with open(QUESTIONS, encoding="utf-8") as fh:
        questions, report = load_metaqa(fh, g=g)
    assert report.loaded > 0
    # topic spans in the release resolve against the KB almost everywhere
    resolved = report.loaded / (report.loaded + report.dropped_unresolved_topic)
    assert resolved > 0.95

"""Linearization and graph-to-text rewriting."""
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgqa.backends import GenerateResponse, MockRewriter
from kgqa.errors import BackendError, RewriteError
from kgqa.kg import load_kg
from kgqa.prompts import GRAPH_TO_TEXT_PREFIX, GRAPH_TO_TEXT_SUFFIX
from kgqa.rewrite import (
    KnowledgeParagraph,
    Sentence,
    linearize,
    linearize_surface,
    rewrite_paths,
    rewrite_surface_paths,
)

from synthdata import RecordingBackend


def test_linearize_surface_layout():
    form = linearize_surface([("s1", "r1", "o1"), ("s2", "r2", "o2")])
    assert form.text == "(s1, r1, o1), (s2, r2, o2)"
    assert form.source == (("s1", "r1", "o1"), ("s2", "r2", "o2"))


def test_linearize_dedupes_keeping_first_occurrence():
    triples = [("a", "r", "b"), ("c", "r", "d"), ("a", "r", "b"), ("e", "r", "f")]
    form = linearize_surface(triples)
    assert form.text == "(a, r, b), (c, r, d), (e, r, f)"


@given(st.lists(st.tuples(st.sampled_from("abcd"), st.sampled_from("rs"),
                          st.sampled_from("wxyz")), max_size=10))
def test_linearize_idempotent_on_dedup(triples):
    once = linearize_surface(triples)
    twice = linearize_surface(once.source)
    assert once == twice


def test_linearize_from_graph_ids():
    g = load_kg(["a|r|b", "b|s|c"])
    chain = g.ground_relation_path(0, [0, 1], limit=1)[0]
    form = linearize(chain.triples, g)
    assert form.text == "(a, r, b), (b, s, c)"


def test_rewrite_paths_one_call_per_path_in_order():
    g = load_kg(["t|r_one|m", "m|r_two|a", "t|r_one|n", "n|r_two|b"])
    chains = g.ground_relation_path(g.entity_id("t"), [0, 1], limit=5)
    backend = RecordingBackend(MockRewriter())
    paragraph = rewrite_paths(chains, g, backend)
    assert len(backend.prompts) == len(chains) == 2
    for prompt, chain in zip(backend.prompts, chains):
        assert prompt.startswith(GRAPH_TO_TEXT_PREFIX)
        assert prompt.endswith(GRAPH_TO_TEXT_SUFFIX)
        first_subject = g.entity(chain.triples[0].subject)
        assert f"({first_subject}, " in prompt
    assert paragraph.consolidated == (
        "t r one m. m r two a. t r one n. n r two b."
    )


def test_consolidation_joins_with_single_spaces():
    paragraph = KnowledgeParagraph((
        Sentence("First.", ()), Sentence("Second.", ()), Sentence("Third.", ()),
    ))
    assert paragraph.consolidated == "First. Second. Third."
    assert KnowledgeParagraph(()).consolidated == ""


class _PaddedBackend:
    backend_id = "test:padded"

    def generate(self, request):
        return GenerateResponse("  padded output  ", self.backend_id)


class _EmptyBackend:
    backend_id = "test:empty"

    def generate(self, request):
        return GenerateResponse("   ", self.backend_id)


class _FailsOnSecond:
    backend_id = "test:flaky"

    def __init__(self):
        self.calls = 0

    def generate(self, request):
        self.calls += 1
        if self.calls >= 2:
            raise BackendError("down", attempts=4)
        return GenerateResponse("fine.", self.backend_id)


def test_rewrite_trims_generator_output():
    paragraph = rewrite_surface_paths([[("a", "r", "b")]], _PaddedBackend())
    assert paragraph.sentences[0].text == "padded output"


def test_empty_generation_falls_back_to_triple_form():
    paragraph = rewrite_surface_paths(
        [[("a", "r", "b"), ("b", "s", "c")]], _EmptyBackend()
    )
    assert paragraph.sentences[0].text == "(a, r, b), (b, s, c)"
    assert paragraph.consolidated == "(a, r, b), (b, s, c)"


def test_backend_failure_carries_path_index():
    chains = [[("a", "r", "b")], [("c", "r", "d")]]
    with pytest.raises(RewriteError, match="path 1") as err:
        rewrite_surface_paths(chains, _FailsOnSecond())
    assert err.value.path_index == 1


def test_sentences_keep_source_triples():
    chains = [[("a", "r", "b")], [("c", "s", "d")]]
    paragraph = rewrite_surface_paths(chains, MockRewriter())
    assert paragraph.sentences[0].source == (("a", "r", "b"),)
    assert paragraph.sentences[1].source == (("c", "s", "d"),)

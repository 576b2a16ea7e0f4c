"""Path retrieval: step queries, hop prediction, K-ary expansion, grounding."""
import itertools
import math

import numpy as np
import pytest

from kgqa.backends import OracleClassifier
from kgqa.errors import BackendError, ConfigError, DataError, RetrievalError
from kgqa.kg import load_kg
from kgqa.retrieve import (
    MIN_STEP_PROB,
    RetrievalConfig,
    build_step_query,
    hop_label_space,
    predict_hops,
    predict_relation_paths,
    retrieve_question,
    sample_reasoning_paths,
)
from kgqa.scorer import LabelDistribution, fnv1a64

from synthdata import oracle_world, oracle_tables


class SeededRandomClassifier:
    """Deterministic function from text to a random-looking distribution."""

    def __init__(self, labels, seed=0):
        self.labels = tuple(labels)
        self._seed = seed

    def classify(self, text: str) -> LabelDistribution:
        digest = (fnv1a64(text.encode()) ^ self._seed) & 0xFFFFFFFF
        rng = np.random.default_rng(digest)
        probs = rng.dirichlet(np.ones(len(self.labels)))
        return LabelDistribution(probs, self.labels)


class FailingClassifier:
    def __init__(self, labels, fail_on_step_query=True):
        self.labels = tuple(labels)
        self._fail_on_step_query = fail_on_step_query

    def classify(self, text: str):
        if not self._fail_on_step_query or " | " in text:
            raise BackendError("boom", attempts=3)
        probs = np.zeros(len(self.labels))
        probs[0] = 1.0
        return LabelDistribution(probs, self.labels)


def test_build_step_query_layout():
    assert build_step_query("who drew X", []) == "who drew X"
    assert build_step_query("who drew X", ["r1"]) == "who drew X | r1"
    assert build_step_query("who drew X", ["r1", "r2"]) == "who drew X | r1 | r2"


def test_retrieval_config_validation():
    with pytest.raises(ConfigError):
        RetrievalConfig(k=0)
    with pytest.raises(ConfigError):
        RetrievalConfig(m=0)
    with pytest.raises(ConfigError):
        RetrievalConfig(max_hops=0)
    with pytest.raises(ConfigError):
        RetrievalConfig(max_hops=5)
    with pytest.raises(ConfigError):
        RetrievalConfig(max_hops=4)  # cap required at 4 hops
    RetrievalConfig(max_hops=4, max_paths_cap=50)
    with pytest.raises(ConfigError):
        RetrievalConfig(k=5, max_paths_cap=3)  # cap below k


def test_predict_hops_gold_shortcut_and_errors():
    cfg = RetrievalConfig(use_gold_hops=True)
    assert predict_hops("q", None, cfg, gold_hops=2) == 2
    with pytest.raises(DataError, match="missing"):
        predict_hops("q", None, cfg, gold_hops=None)
    with pytest.raises(DataError):
        predict_hops("q", None, cfg, gold_hops=3)  # beyond max_hops=2
    with pytest.raises(ConfigError):
        predict_hops("q", None, RetrievalConfig(), gold_hops=1)  # no classifier


def test_predict_hops_argmax_and_label_space_check():
    cfg = RetrievalConfig(max_hops=2)
    clf = OracleClassifier(hop_label_space(2), {"two hopper": 1})
    assert predict_hops("two hopper", clf, cfg) == 2
    assert predict_hops("unseen", clf, cfg) == 1  # uniform tie -> lowest id
    bad = OracleClassifier(("1", "2", "3"), {})
    with pytest.raises(ConfigError, match="label space"):
        predict_hops("q", bad, cfg)


def _enumerated_reference(question, hops, clf, k):
    """Exhaustive |R|^hops enumeration, then filtering: a sequence survives
    iff each step's relation sits in the top-k (ties by lower id) of the
    distribution at its prefix and has probability above the floor."""
    labels = clf.labels
    n = len(labels)
    results = []
    for combo in itertools.product(range(n), repeat=hops):
        product_score = 1.0
        ok = True
        for t in range(hops):
            prefix = [labels[r] for r in combo[:t]]
            dist = clf.classify(build_step_query(question, prefix))
            ranked = sorted(range(n), key=lambda i: (-dist.probs[i], i))[:k]
            p = float(dist.probs[combo[t]])
            if combo[t] not in ranked or p < MIN_STEP_PROB:
                ok = False
                break
            product_score *= p
        if ok:
            results.append((combo, product_score))
    results.sort(key=lambda rp: (-rp[1], rp[0]))
    return results


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("hops", [1, 2])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_expansion_matches_exhaustive_enumeration(k, hops, seed):
    labels = tuple(f"rel_{i}" for i in range(7))
    clf = SeededRandomClassifier(labels, seed=seed)
    cfg = RetrievalConfig(k=k, max_hops=2)
    question = f"question {seed} about something"
    got = predict_relation_paths(question, hops, clf, cfg)
    want = _enumerated_reference(question, hops, clf, k)
    assert [p.relations for p in got] == [combo for combo, _ in want]
    assert len(got) == min(k ** hops, len(labels) ** hops)
    for path, (_, product_score) in zip(got, want):
        assert math.isclose(path.log_score, math.log(product_score), rel_tol=1e-9)
        assert math.isclose(
            math.exp(path.log_score), product_score, rel_tol=1e-9
        )
        # per-step probs multiply back to the product
        acc = 1.0
        for p in path.step_probs:
            acc *= p
        assert math.isclose(acc, product_score, rel_tol=1e-9)


def test_expansion_excludes_zero_probability_relations():
    labels = ("a", "b", "c")
    clf = OracleClassifier(labels, {"q": 1, build_step_query("q", ["b"]): 0})
    cfg = RetrievalConfig(k=3, max_hops=2)
    paths = predict_relation_paths("q", 2, clf, cfg)
    # one-hot distributions leave exactly one viable relation per step
    assert [p.relations for p in paths] == [(1, 0)]
    assert paths[0].step_probs == (1.0, 1.0)
    assert paths[0].log_score == 0.0


def test_expansion_cap_bounds_frontier_by_partial_score():
    labels = ("a", "b", "c")
    # step 1: c > b > a; prefixes then get distinct step-2 winners
    table = {
        "q": [0.1, 0.3, 0.6],
        build_step_query("q", ["c"]): [0.7, 0.2, 0.1],
        build_step_query("q", ["b"]): [0.1, 0.1, 0.8],
    }
    clf = OracleClassifier(labels, table)
    cfg = RetrievalConfig(k=2, max_hops=2, max_paths_cap=2)
    paths = predict_relation_paths("q", 2, clf, cfg)
    assert len(paths) == 2  # min(k^h, cap) = min(4, 2)
    # frontier after step 1 keeps both (cap=2); final ranking by total score:
    # c->a = 0.42, b->c = 0.24
    assert [p.relations for p in paths] == [(2, 0), (1, 2)]


def test_expansion_hops_out_of_range():
    clf = OracleClassifier(("a",), {})
    cfg = RetrievalConfig(max_hops=2)
    with pytest.raises(ValueError):
        predict_relation_paths("q", 0, clf, cfg)
    with pytest.raises(ValueError):
        predict_relation_paths("q", 3, clf, cfg)


def test_classifier_failure_carries_step_index():
    clf = FailingClassifier(("a", "b"))
    cfg = RetrievalConfig(k=2, max_hops=2)
    with pytest.raises(RetrievalError, match="step 2") as err:
        predict_relation_paths("q", 2, clf, cfg)
    assert err.value.step == 2
    clf_now = FailingClassifier(("a", "b"), fail_on_step_query=False)
    with pytest.raises(RetrievalError, match="step 1") as err:
        predict_relation_paths("q", 1, clf_now, cfg)
    assert err.value.step == 1


def test_sampling_walks_rank_order_until_m():
    g = load_kg([
        "t|r0|a1", "t|r0|a2", "t|r0|a3",
        "t|r1|b1", "t|r1|b2",
    ])
    labels = tuple(g.relations)
    clf = OracleClassifier(labels, {"q": [0.7, 0.3]})
    cfg = RetrievalConfig(k=2, m=4, max_hops=1)
    scored = predict_relation_paths("q", 1, clf, cfg)
    result = sample_reasoning_paths(scored, g, g.entity_id("t"), cfg)
    assert len(result.reasoning_paths) == 4
    terminals = [g.entity(p.terminal_entity()) for p in result.reasoning_paths]
    # r0 groundings first (higher rank), then r1 fills up to m
    assert terminals == ["a1", "a2", "a3", "b1"]
    assert result.paths_tried == 2
    assert result.paths_empty == 0


def test_sampling_counts_empty_groundings():
    g = load_kg(["t|r0|a", "x|r1|y"])
    labels = tuple(g.relations)
    clf = OracleClassifier(labels, {"q": [0.3, 0.7]})  # r1 first, grounds empty
    cfg = RetrievalConfig(k=2, m=5, max_hops=1)
    scored = predict_relation_paths("q", 1, clf, cfg)
    result = sample_reasoning_paths(scored, g, g.entity_id("t"), cfg)
    assert [g.entity(p.terminal_entity()) for p in result.reasoning_paths] == ["a"]
    assert result.paths_tried == 2
    assert result.paths_empty == 1


def test_sampling_rejects_unknown_topic():
    g = load_kg(["a|r|b"])
    cfg = RetrievalConfig()
    with pytest.raises(RetrievalError):
        sample_reasoning_paths([], g, 99, cfg)


def test_retrieve_question_end_to_end_oracle():
    g, questions = oracle_world(n_questions=10)
    hop_clf, rel_clf = oracle_tables(questions, g, max_hops=2)
    cfg = RetrievalConfig(k=5, m=5, max_hops=2)
    for q in questions:
        result = retrieve_question(g, q, hop_clf, rel_clf, cfg)
        assert result.hops == q.gold_hops
        top1 = tuple(g.relation(r) for r in result.scored_paths[0].relations)
        assert top1 == q.gold_path
        assert result.reasoning_paths  # gold paths were sampled from real walks
        assert len(result.reasoning_paths) <= cfg.m


def test_retrieve_question_label_space_mismatch():
    g, questions = oracle_world(n_questions=2)
    bad_clf = OracleClassifier(("only", "two"), {})
    with pytest.raises(ConfigError, match="label space"):
        retrieve_question(g, questions[0], None, bad_clf,
                          RetrievalConfig(use_gold_hops=True))


def test_retrieve_question_missing_topic():
    g, questions = oracle_world(n_questions=2)
    _, rel_clf = oracle_tables(questions, g, max_hops=2)
    ghost = questions[0].__class__(
        "x", "text", "not an entity", ("a",), questions[0].gold_path, questions[0].gold_hops
    )
    with pytest.raises(RetrievalError, match="topic"):
        retrieve_question(g, ghost, None, rel_clf, RetrievalConfig(use_gold_hops=True))

"""Knowledge-graph question answering via retrieve, rewrite, answer.

The engine retrieves relation paths with text classifiers, grounds them
against an indexed triple store, rewrites the grounded paths into
free-form knowledge text with a generator backend, and scores answers by
hit@1.  Deterministic mock backends make the full pipeline runnable and
testable offline.
"""

__version__ = "0.1.0"

from .answer import EvalSummary, QARecord, answer_question, evaluate_dataset, hit_at_1
from .backends import (
    ClassifyRequest,
    ClassifyResponse,
    GenerateRequest,
    GenerateResponse,
    HttpBackend,
    HttpConfig,
    MockQA,
    MockRewriter,
    OracleClassifier,
    RemoteClassifier,
)
from .corpusgen import (
    CorpusSummary,
    GoldSubgraph,
    GraphTextPair,
    extract_gold_subgraph,
    generate_corpus,
    generate_pair,
    quality_gate,
)
from .datasets import Question, build_classifier_datasets, load_generic, load_metaqa
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    KGQAError,
    ParseError,
    ProtocolError,
    RetrievalError,
    RewriteError,
)
from .kg import KnowledgeGraph, ReasoningPath, Triple, load_kg, load_kg_path
from .retrieve import (
    RetrievalConfig,
    RetrievalResult,
    ScoredRelationPath,
    build_step_query,
    predict_hops,
    predict_relation_paths,
    retrieve_question,
    sample_reasoning_paths,
)
from .rewrite import KnowledgeParagraph, TripleFormText, linearize, rewrite_paths
from .scorer import (
    FeatureVector,
    LabelDistribution,
    LinearClassifier,
    NativeTextClassifier,
    TrainConfig,
    featurize,
    load_classifier,
    predict,
    save_classifier,
    top_k,
    train,
)

"""Knowledge graph embeddings with iterative guidance from soft Horn rules.

The pipeline: load triples into a :class:`~rulekge.kg.KnowledgeGraph`, parse
and propositionalize rules with :mod:`rulekge.rules`, then alternate between
closed-form soft-label prediction (:mod:`rulekge.softlabels`) and embedding
rectification (:mod:`rulekge.training`). :mod:`rulekge.evaluation` provides
the filtered link-prediction metrics.
"""

from .evaluation import EvalReport, evaluate, rank_entity
from .kg import KnowledgeGraph, Triple, Vocabulary, load_triples
from .model import ComplexEmbeddings
from .rules import Grounding, GroundingIndex, Rule, parse_rules, propositionalize
from .softlabels import oracle_solve, predict_soft_labels
from .training import TrainConfig, train, train_baseline

__all__ = [
    "ComplexEmbeddings",
    "EvalReport",
    "Grounding",
    "GroundingIndex",
    "KnowledgeGraph",
    "Rule",
    "TrainConfig",
    "Triple",
    "Vocabulary",
    "evaluate",
    "load_triples",
    "oracle_solve",
    "parse_rules",
    "predict_soft_labels",
    "propositionalize",
    "rank_entity",
    "train",
    "train_baseline",
]

__version__ = "0.1.0"

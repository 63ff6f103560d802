"""Deliberation-style spoken-language-understanding parser at desk scale."""

from .annotations import (
    ParseNode,
    em_score,
    exact_match,
    normalize,
    parse_annotation,
    serialize,
)
from .estimator import DeliberationParser
from .model import DeliberationModel, ModelConfig, paper_scale_config, toy_config
from .records import UtteranceRecord
from .vocab import Vocabulary, build_vocab

__version__ = "0.1.0"

__all__ = [
    "DeliberationModel",
    "DeliberationParser",
    "ModelConfig",
    "ParseNode",
    "UtteranceRecord",
    "Vocabulary",
    "build_vocab",
    "em_score",
    "exact_match",
    "normalize",
    "parse_annotation",
    "paper_scale_config",
    "serialize",
    "toy_config",
    "__version__",
]

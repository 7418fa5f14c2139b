"""Hierarchical relational knowledge distillation for multi-domain text classifiers.

A numpy reverse-mode autodiff engine, a small transformer encoder, the
distillation objectives and an sklearn-style training API.
"""

from .config import RunConfig
from .data import Corpus, Vocabulary, generate_synthetic_corpus, ingest_dir, ingest_tsv, subsample
from .encoder import EncoderConfig, layer_map
from .estimators import HRKDStudent, MultiDomainTeacher
from .exceptions import (
    ConfigurationError,
    ContractError,
    DimensionError,
    DomainError,
    FormatError,
    HRKDError,
)
from .tensor import Tensor, backward, grad_check, no_grad

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ContractError",
    "Corpus",
    "DimensionError",
    "DomainError",
    "EncoderConfig",
    "FormatError",
    "HRKDError",
    "HRKDStudent",
    "MultiDomainTeacher",
    "RunConfig",
    "Tensor",
    "Vocabulary",
    "backward",
    "generate_synthetic_corpus",
    "grad_check",
    "ingest_dir",
    "ingest_tsv",
    "layer_map",
    "no_grad",
    "subsample",
]

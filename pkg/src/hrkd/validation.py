"""Input checks shared by the estimators."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .exceptions import DomainError


def check_tokens(X, vocab_size: int | None = None, max_len: int | None = None) -> np.ndarray:
    """Token-id matrix as ``int64``; every row starts at position 0 with a real token."""
    X = check_array(X, dtype=np.int64, ensure_2d=True)
    if X.min() < 0:
        raise DomainError("token ids must be non-negative")
    if vocab_size is not None and X.max() >= vocab_size:
        raise DomainError(f"token id {int(X.max())} outside vocabulary of size {vocab_size}")
    if max_len is not None and X.shape[1] > max_len:
        raise DomainError(f"sequence length {X.shape[1]} exceeds max_len {max_len}")
    return X


def check_domains(domains, n_samples: int, num_domains: int | None = None) -> np.ndarray:
    if domains is None:
        domains = np.zeros(n_samples, dtype=np.int64)
    domains = np.asarray(domains)
    if domains.ndim != 1:
        raise DomainError("domains must be a 1-d array of domain indices")
    check_consistent_length(domains, np.empty(n_samples))
    if not np.issubdtype(domains.dtype, np.integer):
        raise DomainError("domain ids must be integers")
    domains = domains.astype(np.int64)
    if domains.size and domains.min() < 0:
        raise DomainError("domain ids must be non-negative")
    if num_domains is not None and domains.size and domains.max() >= num_domains:
        raise DomainError(f"domain id {int(domains.max())} outside [0, {num_domains})")
    return domains


def check_labels(y, domains: np.ndarray, classes_per_domain: Sequence[int] | None = None) -> np.ndarray:
    y = np.asarray(y)
    check_consistent_length(y, domains)
    if not np.issubdtype(y.dtype, np.integer):
        raise DomainError("labels must be integer class indices")
    y = y.astype(np.int64)
    if y.size and y.min() < 0:
        raise DomainError("labels must be non-negative")
    if classes_per_domain is not None:
        limits = np.asarray(classes_per_domain)[domains]
        bad = np.flatnonzero(y >= limits)
        if bad.size:
            i = int(bad[0])
            raise DomainError(f"label {int(y[i])} of sample {i} exceeds classes of domain {int(domains[i])}")
    return y


def infer_classes(y: np.ndarray, domains: np.ndarray, num_domains: int) -> list:
    out = []
    for d in range(num_domains):
        labels = y[domains == d]
        out.append(max(2, int(labels.max()) + 1) if labels.size else 2)
    return out

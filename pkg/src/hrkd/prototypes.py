"""Per-layer, per-domain prototypes: masked token means of student representations."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .exceptions import DomainError
from .tensor import Tensor


def masked_mean(states: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of ``states[b, l, :]`` over positions where ``mask[b, l]`` holds."""
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise DomainError("no unmasked tokens to average")
    weights = Tensor(mask.astype(T.DTYPE)[:, :, None])
    return T.tsum(states * weights, axis=(0, 1)) / float(count)


def compute_prototypes(outputs: Sequence, masks: Sequence[np.ndarray], detach: bool = False) -> Tensor:
    """Stack prototypes into a ``(M + 1, D, F)`` tensor.

    Row 0 averages the embeddings, row ``m`` the output of student layer
    ``m``; ``outputs[d]`` and ``masks[d]`` belong to domain ``d``.
    """
    layers = []
    for d, (out, mask) in enumerate(zip(outputs, masks)):
        mask = np.asarray(mask, dtype=bool)
        if mask.size == 0 or not mask.any():
            raise DomainError(f"domain {d} batch has no unmasked tokens")
        reps = [out.embeddings] + list(out.hidden_states)
        layers.append([masked_mean(rep.detach() if detach else rep, mask) for rep in reps])
    num_rows = len(layers[0])
    return T.stack([T.stack([layers[d][m] for d in range(len(layers))]) for m in range(num_rows)])

"""Reference prototypes and hierarchical compare-aggregate over layer prototypes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from . import tensor as T
from .exceptions import ContractError
from .tensor import Tensor


@dataclass
class CompareAggregateParams:
    """``ref[m]`` scores domain pairs at layer ``m``; ``agg[m][d]`` scores layers for domain ``d``."""

    ref: List[Tensor]
    agg: List[List[Tensor]]

    @classmethod
    def init(cls, num_rows: int, num_domains: int, features: int, seed: int) -> CompareAggregateParams:
        rng = np.random.default_rng(seed)
        std = 1.0 / features

        def draw():
            return Tensor(rng.normal(0.0, std, size=(features, features)), requires_grad=True)

        ref = [draw() for _ in range(num_rows)]
        agg = [[draw() for _ in range(num_domains)] for _ in range(num_rows)]
        return cls(ref, agg)

    def params(self) -> Dict[str, Tensor]:
        out = {f"cagg.ref.{m}": w for m, w in enumerate(self.ref)}
        for m, row in enumerate(self.agg):
            for d, w in enumerate(row):
                out[f"cagg.agg.{m}.{d}"] = w
        return out


def _check_finite(x: Tensor, what: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise ContractError(f"{what}: non-finite prototypes")


def reference_prototypes(h, weight) -> Tuple[Tensor, Tensor]:
    """Self-attention across the ``D`` domain prototypes of one layer.

    Returns ``(RP, alpha)`` where ``alpha = softmax_rows(h W h^T)`` and
    ``RP = alpha h``. No ``1/sqrt(F)`` scaling is applied.
    """
    h = T.as_tensor(h)
    _check_finite(h, "reference_prototypes")
    alpha = T.softmax(h @ weight @ T.transpose(h), axis=1)
    return alpha @ h, alpha


def aggregate(history, reference, weight) -> Tuple[Tensor, Tensor]:
    """Softmax-weighted combination of layer prototypes ``0..m`` of one domain.

    ``history`` is ``(m + 1) x F``; each row is scored against ``reference``
    through ``weight``.
    """
    history, reference = T.as_tensor(history), T.as_tensor(reference)
    if history.ndim != 2 or history.shape[1] != reference.shape[-1]:
        raise ContractError(f"aggregate: history {history.shape} incompatible with reference {reference.shape}")
    _check_finite(history, "aggregate")
    scores = (history @ weight @ reference.reshape(-1, 1)).reshape(-1)
    alpha = T.softmax(scores, axis=0)
    return (alpha.reshape(1, -1) @ history).reshape(-1), alpha


@dataclass
class AggregationTrace:
    """Attention weights produced while building the aggregated set (for logging)."""

    reference_prototypes: List[Tensor] = field(default_factory=list)
    reference: List[Tensor] = field(default_factory=list)
    similarity: List[List[Tensor]] = field(default_factory=list)


def build_aggregated_set(
    prototypes,
    params: CompareAggregateParams | None,
    self_attention: bool = True,
    compare_aggregate: bool = True,
    hierarchical: bool = True,
) -> Tuple[Tensor, AggregationTrace]:
    """Aggregated prototypes ``(M + 1) x D x F`` plus the attention trace.

    The switches reproduce the ablations: without self-attention the
    reference prototypes are the prototypes themselves; without
    compare-aggregate the layer history is plainly averaged; without the
    hierarchy each layer keeps only its own prototype.
    """
    protos = T.as_tensor(prototypes)
    num_rows, D, _ = protos.shape
    trace = AggregationTrace()
    if not hierarchical:
        return protos, trace

    rows = []
    for m in range(num_rows):
        layer = protos[m]
        if compare_aggregate:
            if self_attention:
                rp, alpha_ref = reference_prototypes(layer, params.ref[m])
                trace.reference.append(alpha_ref)
            else:
                rp = layer
            trace.reference_prototypes.append(rp)
        sims, cells = [], []
        for d in range(D):
            history = protos[: m + 1, d]
            if compare_aggregate:
                ap, alpha = aggregate(history, rp[d], params.agg[m][d])
                sims.append(alpha)
            else:
                ap = T.mean(history, axis=0)
            cells.append(ap)
        if sims:
            trace.similarity.append(sims)
        rows.append(T.stack(cells))
    return T.stack(rows), trace

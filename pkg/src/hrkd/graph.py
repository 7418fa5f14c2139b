"""Two-layer graph attention over domain nodes, producing domain-relational ratios.

The graph is complete with self-loops: every domain attends to every domain.
One independent graph exists per student layer (embedding layer included).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from . import tensor as T
from .exceptions import ConfigurationError, ContractError
from .tensor import Tensor


@dataclass
class LayerGraphParams:
    """Weights of the two GAT layers attached to one student layer.

    ``w[k]`` is ``F' x F`` and ``a[k]`` has length ``2F'`` for head ``k``;
    the second layer maps the ``K F'`` concatenation to one channel.
    """

    w: List[Tensor]
    a: List[Tensor]
    w_out: Tensor
    a_out: Tensor

    @property
    def heads(self) -> int:
        return len(self.w)

    @classmethod
    def init(cls, in_features: int, hidden_features: int, heads: int, rng: np.random.Generator) -> LayerGraphParams:
        if heads < 1 or hidden_features < 1:
            raise ConfigurationError("graph needs at least one head and one hidden channel")

        def glorot(fan_out, fan_in, flat=False):
            bound = np.sqrt(6.0 / (fan_out + fan_in))
            values = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            return Tensor(values.reshape(-1) if flat else values, requires_grad=True)

        w = [glorot(hidden_features, in_features) for _ in range(heads)]
        a = [glorot(2 * hidden_features, 1, flat=True) for _ in range(heads)]
        w_out = glorot(1, heads * hidden_features)
        return cls(w, a, w_out, glorot(2, 1, flat=True))

    def tensors(self) -> Dict[str, Tensor]:
        out = {}
        for k in range(self.heads):
            out[f"w.{k}"] = self.w[k]
            out[f"a.{k}"] = self.a[k]
        out["w_out"] = self.w_out
        out["a_out"] = self.a_out
        return out


def _check_finite(h: Tensor, what: str) -> None:
    if not np.all(np.isfinite(h.data)):
        raise ContractError(f"{what}: non-finite node features")


def _attend(z: Tensor, a: Tensor) -> Tuple[Tensor, Tensor]:
    """Attention coefficients for transformed node features ``z`` (``D x F'``).

    Score ``s[i, j] = a . [z_i ++ z_j]`` splits into a source part and a
    neighbour part; rows are normalised over all ``j``.
    """
    width = z.shape[1]
    a_src = a[:width].reshape(width, 1)
    a_dst = a[width:].reshape(width, 1)
    scores = (z @ a_src) + (z @ a_dst).reshape(1, -1)
    alpha = T.softmax(T.leaky_relu(scores), axis=1)
    return alpha, scores


def gat_first_layer(h, params: LayerGraphParams, return_attention: bool = False):
    """Multi-head GAT layer: ``D x F`` node features to ``D x (K F')``.

    Each head projects the nodes, attends over the complete graph, then
    applies ELU before the heads are concatenated.
    """
    h = T.as_tensor(h)
    _check_finite(h, "gat_first_layer")
    outputs, alphas = [], []
    for w, a in zip(params.w, params.a):
        z = h @ T.transpose(w)
        alpha, _ = _attend(z, a)
        outputs.append(T.elu(alpha @ z))
        alphas.append(alpha)
    out = T.concat(outputs, axis=1)
    return (out, alphas) if return_attention else out


def gat_second_layer(h_prime, params: LayerGraphParams, return_attention: bool = False):
    """Single-head GAT layer with one output channel, softmaxed across nodes."""
    h_prime = T.as_tensor(h_prime)
    _check_finite(h_prime, "gat_second_layer")
    z = h_prime @ T.transpose(params.w_out)
    alpha, _ = _attend(z, params.a_out)
    node_scores = T.elu(alpha @ z).reshape(-1)
    ratios = T.softmax(node_scores, axis=0)
    return (ratios, alpha) if return_attention else ratios


class RelationalGraphs:
    """One two-layer graph per student layer ``m = 0..M``."""

    def __init__(self, layers: List[LayerGraphParams]):
        self.layers = layers

    @classmethod
    def init(cls, num_rows: int, in_features: int, hidden_features: int, heads: int, seed: int) -> RelationalGraphs:
        rng = np.random.default_rng(seed)
        return cls([LayerGraphParams.init(in_features, hidden_features, heads, rng) for _ in range(num_rows)])

    def __len__(self) -> int:
        return len(self.layers)

    def params(self) -> Dict[str, Tensor]:
        out = {}
        for m, layer in enumerate(self.layers):
            for name, t in layer.tensors().items():
                out[f"graph.{m}.{name}"] = t
        return out

    def __call__(self, inputs) -> Tensor:
        return compute_ratios(inputs, self.layers)


def compute_ratios(inputs, layers: List[LayerGraphParams]) -> Tensor:
    """Ratio matrix ``(M + 1) x D`` from per-layer node features ``(M + 1) x D x F``."""
    inputs = T.as_tensor(inputs)
    if inputs.ndim != 3 or inputs.shape[0] != len(layers):
        raise ConfigurationError(
            f"expected node features for {len(layers)} layers, got shape {inputs.shape}"
        )
    rows = [gat_second_layer(gat_first_layer(inputs[m], params), params) for m, params in enumerate(layers)]
    return T.stack(rows)

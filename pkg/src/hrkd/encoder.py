"""Miniature BERT-style encoder with a shared trunk and one head per domain."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np

from . import tensor as T
from .exceptions import ConfigurationError, DomainError
from .tensor import Tensor

MASK_PENALTY = -1e9
INIT_STD = 0.02

Params = Dict[str, Tensor]


@dataclass
class EncoderConfig:
    num_layers: int = 2
    hidden: int = 32
    ffn_hidden: int = 64
    heads: int = 2
    vocab_size: int = 1024
    max_len: int = 32
    num_domains: int = 3
    classes_per_domain: List[int] = field(default_factory=lambda: [2, 2, 2])

    def __post_init__(self):
        self.classes_per_domain = [int(c) for c in self.classes_per_domain]
        if self.heads < 1 or self.hidden % self.heads:
            raise ConfigurationError(f"hidden={self.hidden} is not divisible by heads={self.heads}")
        if self.max_len < 1:
            raise ConfigurationError("max_len must be at least 1")
        if self.num_domains < 1:
            raise ConfigurationError("num_domains must be at least 1")
        if self.num_layers < 1:
            raise ConfigurationError("num_layers must be at least 1")
        if len(self.classes_per_domain) != self.num_domains:
            raise ConfigurationError(
                f"classes_per_domain has {len(self.classes_per_domain)} entries for {self.num_domains} domains"
            )
        if min(self.classes_per_domain) < 1:
            raise ConfigurationError("every domain needs at least one class")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DomainBatch:
    domain_id: int
    token_ids: np.ndarray
    labels: np.ndarray
    attention_mask: np.ndarray

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.attention_mask = np.asarray(self.attention_mask, dtype=bool)
        if self.token_ids.ndim != 2 or self.token_ids.shape != self.attention_mask.shape:
            raise DomainError(
                f"token_ids {self.token_ids.shape} and attention_mask {self.attention_mask.shape} must be equal 2-d shapes"
            )
        if self.labels.shape[0] != self.token_ids.shape[0]:
            raise DomainError("labels and token_ids disagree on batch size")

    def __len__(self) -> int:
        return self.token_ids.shape[0]


@dataclass
class EncoderOutput:
    """Everything distillation needs from one forward pass.

    ``attentions[m]`` has shape ``(B, heads, L, L)`` and holds post-softmax
    probabilities of layer ``m + 1``; ``hidden_states[m]`` is that layer's
    ``(B, L, hidden)`` output.
    """

    embeddings: Tensor
    attentions: List[Tensor]
    hidden_states: List[Tensor]
    logits: Tensor


def layer_map(student_layers: int, teacher_layers: int) -> Dict[int, int]:
    """Uniform matching of student layer ``m`` to teacher layer ``m * N / M``."""
    if student_layers < 1 or teacher_layers < 1:
        raise ConfigurationError("layer counts must be positive")
    if teacher_layers % student_layers:
        raise ConfigurationError(
            f"uniform layer matching needs N divisible by M, got N={teacher_layers}, M={student_layers}"
        )
    step = teacher_layers // student_layers
    return {m: m * step for m in range(1, student_layers + 1)}


def init_params(config: EncoderConfig, seed: int) -> Params:
    """Truncation-free normal(0, 0.02) weights, unit LayerNorm gains, zero biases."""
    rng = np.random.default_rng(seed)
    H, F = config.hidden, config.ffn_hidden

    def normal(*shape):
        return Tensor(rng.normal(0.0, INIT_STD, size=shape), requires_grad=True)

    def const(value, *shape):
        return Tensor(np.full(shape, value, dtype=T.DTYPE), requires_grad=True)

    params: Params = {
        "tok_emb": normal(config.vocab_size, H),
        "pos_emb": normal(config.max_len, H),
        "emb_ln.g": const(1.0, H),
        "emb_ln.b": const(0.0, H),
    }
    for m in range(config.num_layers):
        p = f"layers.{m}."
        for name in ("wq", "wk", "wv", "wo"):
            params[p + name] = normal(H, H)
            params[p + "b" + name[1]] = const(0.0, H)
        params[p + "ln1.g"] = const(1.0, H)
        params[p + "ln1.b"] = const(0.0, H)
        params[p + "w1"] = normal(H, F)
        params[p + "b1"] = const(0.0, F)
        params[p + "w2"] = normal(F, H)
        params[p + "b2"] = const(0.0, H)
        params[p + "ln2.g"] = const(1.0, H)
        params[p + "ln2.b"] = const(0.0, H)
    for d, classes in enumerate(config.classes_per_domain):
        params[f"heads.{d}.w"] = normal(H, classes)
        params[f"heads.{d}.b"] = const(0.0, classes)
    return params


def parameter_count(params: Params) -> int:
    return sum(p.size for p in params.values())


def _split_heads(x: Tensor, B: int, L: int, heads: int, dh: int) -> Tensor:
    return T.transpose(x.reshape(B, L, heads, dh), (0, 2, 1, 3))


def forward(config: EncoderConfig, params: Params, batch: DomainBatch) -> EncoderOutput:
    """Run the trunk on ``batch`` and apply the head of ``batch.domain_id``."""
    if not 0 <= batch.domain_id < config.num_domains:
        raise DomainError(f"domain_id {batch.domain_id} outside [0, {config.num_domains})")
    ids = batch.token_ids
    B, L = ids.shape
    if L > config.max_len:
        raise DomainError(f"sequence length {L} exceeds max_len {config.max_len}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise DomainError("token id outside the vocabulary")
    H, heads, dh = config.hidden, config.heads, config.head_dim

    x = T.embedding(params["tok_emb"], ids) + params["pos_emb"][:L]
    x = T.layer_norm(x, params["emb_ln.g"], params["emb_ln.b"])
    embeddings = x

    key_bias = np.where(batch.attention_mask, 0.0, MASK_PENALTY)[:, None, None, :]
    scale = 1.0 / np.sqrt(dh)
    attentions, hidden_states = [], []
    for m in range(config.num_layers):
        p = f"layers.{m}."
        q = _split_heads(x @ params[p + "wq"] + params[p + "bq"], B, L, heads, dh)
        k = _split_heads(x @ params[p + "wk"] + params[p + "bk"], B, L, heads, dh)
        v = _split_heads(x @ params[p + "wv"] + params[p + "bv"], B, L, heads, dh)
        scores = (q @ T.swapaxes(k, -1, -2)) * scale + key_bias
        attn = T.softmax(scores, axis=-1)
        ctx = T.transpose(attn @ v, (0, 2, 1, 3)).reshape(B, L, H)
        x = T.layer_norm(x + ctx @ params[p + "wo"] + params[p + "bo"], params[p + "ln1.g"], params[p + "ln1.b"])
        ffn = T.gelu(x @ params[p + "w1"] + params[p + "b1"]) @ params[p + "w2"] + params[p + "b2"]
        x = T.layer_norm(x + ffn, params[p + "ln2.g"], params[p + "ln2.b"])
        attentions.append(attn)
        hidden_states.append(x)

    pooled = x[:, 0, :]
    d = batch.domain_id
    logits = pooled @ params[f"heads.{d}.w"] + params[f"heads.{d}.b"]
    return EncoderOutput(embeddings, attentions, hidden_states, logits)

"""Distillation losses and the two ways of combining them.

Every loss accepts either a single sample (``L x hidden`` etc.) or a batch
with extra leading axes; MSE terms average over all elements, which equals
the per-sample mean averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from . import tensor as T
from .exceptions import ContractError, DimensionError, DomainError
from .tensor import Tensor


@dataclass
class KdProjection:
    """Learnable maps from student width to teacher width (no bias)."""

    embd: Tensor
    hidn: List[Tensor]

    @classmethod
    def init(cls, student_hidden: int, teacher_hidden: int, num_layers: int, seed: int) -> KdProjection:
        rng = np.random.default_rng(seed)
        std = 1.0 / np.sqrt(student_hidden)

        def draw():
            return Tensor(rng.normal(0.0, std, size=(student_hidden, teacher_hidden)), requires_grad=True)

        return cls(draw(), [draw() for _ in range(num_layers)])

    def params(self) -> Dict[str, Tensor]:
        out = {"proj.embd": self.embd}
        out.update({f"proj.hidn.{m}": w for m, w in enumerate(self.hidn)})
        return out


@dataclass
class LossBreakdown:
    """Per-domain loss components; ``attn[m][d]`` / ``hidn[m][d]`` index student layer ``m + 1``."""

    embd: List[Tensor]
    attn: List[List[Tensor]]
    hidn: List[List[Tensor]]
    pred: List[Tensor]
    total: Tensor | None = None

    @property
    def num_domains(self) -> int:
        return len(self.embd)

    @property
    def num_layers(self) -> int:
        return len(self.attn)

    def as_floats(self) -> Dict[str, list]:
        return {
            "embd": [x.item() for x in self.embd],
            "attn": [[x.item() for x in row] for row in self.attn],
            "hidn": [[x.item() for x in row] for row in self.hidn],
            "pred": [x.item() for x in self.pred],
            "total": None if self.total is None else self.total.item(),
        }


def _mse(pred: Tensor, target: Tensor) -> Tensor:
    diff = pred - target
    return T.mean(diff * diff)


def _projected_mse(student: Tensor, proj: Tensor, teacher: Tensor, what: str) -> Tensor:
    student, proj, teacher = T.as_tensor(student), T.as_tensor(proj), T.as_tensor(teacher)
    if (
        student.shape[-1] != proj.shape[0]
        or proj.shape[1] != teacher.shape[-1]
        or student.shape[:-1] != teacher.shape[:-1]
    ):
        raise DimensionError(
            f"{what}: student {student.shape} x projection {proj.shape} does not align with teacher {teacher.shape}"
        )
    return _mse(student @ proj, teacher)


def embed_loss(student_emb, proj, teacher_emb) -> Tensor:
    return _projected_mse(student_emb, proj, teacher_emb, "embed_loss")


def hidn_loss(student_hidden, proj, teacher_hidden) -> Tensor:
    return _projected_mse(student_hidden, proj, teacher_hidden, "hidn_loss")


def attn_loss(student_attn, teacher_attn) -> Tensor:
    """Mean over heads of per-head MSE; the head axis is third from last."""
    student_attn, teacher_attn = T.as_tensor(student_attn), T.as_tensor(teacher_attn)
    if student_attn.ndim < 3 or student_attn.shape[-3] != teacher_attn.shape[-3]:
        raise DimensionError(
            f"attn_loss: head counts differ between {student_attn.shape} and {teacher_attn.shape}"
        )
    if student_attn.shape != teacher_attn.shape:
        raise DimensionError(f"attn_loss: shapes {student_attn.shape} and {teacher_attn.shape} differ")
    return _mse(student_attn, teacher_attn)


def pred_loss(student_logits, teacher_logits, temperature: float = 1.0) -> Tensor:
    """Soft cross-entropy against the teacher's tempered distribution, batch-averaged."""
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    student_logits, teacher_logits = T.as_tensor(student_logits), T.as_tensor(teacher_logits)
    if student_logits.shape != teacher_logits.shape:
        raise DimensionError(
            f"pred_loss: logits shapes {student_logits.shape} and {teacher_logits.shape} differ"
        )
    target = T.softmax(teacher_logits.detach() / temperature, axis=-1)
    log_probs = T.log_softmax(student_logits / temperature, axis=-1)
    per_sample = -T.tsum(target * log_probs, axis=-1)
    return T.mean(per_sample)


def total_base(components: LossBreakdown, gamma: float = 1.0) -> Tensor:
    """Unweighted multi-domain objective: sum over domains and layers."""
    total = None
    for d in range(components.num_domains):
        term = components.embd[d]
        for m in range(components.num_layers):
            term = term + (components.attn[m][d] + components.hidn[m][d])
        term = term + gamma * components.pred[d]
        total = term if total is None else total + term
    return total


def check_ratio_rows(ratios: Tensor, rows: int, domains: int, atol: float = 1e-6) -> None:
    r = T.as_tensor(ratios).data
    if r.shape != (rows, domains):
        raise ContractError(f"ratio matrix must be {rows}x{domains}, got {r.shape}")
    sums = r.sum(axis=1)
    if not np.all(np.abs(sums - 1.0) <= atol):
        raise ContractError(f"ratio rows must sum to 1 within {atol}, got {sums.tolist()}")


def total_hrkd(components: LossBreakdown, ratios: Tensor, gamma: float = 1.0) -> Tensor:
    """Ratio-weighted objective; ``ratios[0]`` weights the embedding terms.

    The prediction terms carry ``gamma / D`` instead of ratios.
    """
    D, M = components.num_domains, components.num_layers
    ratios = T.as_tensor(ratios)
    check_ratio_rows(ratios, M + 1, D)
    pred_weight = gamma / D
    total = None
    for d in range(D):
        term = ratios[0, d] * components.embd[d]
        for m in range(M):
            term = term + ratios[m + 1, d] * (components.attn[m][d] + components.hidn[m][d])
        term = term + pred_weight * components.pred[d]
        total = term if total is None else total + term
    return total


def uniform_ratios(num_rows: int, num_domains: int) -> Tensor:
    return Tensor(np.full((num_rows, num_domains), 1.0 / num_domains))


def domain_components(
    student_out,
    teacher_out,
    proj: KdProjection,
    layers: Dict[int, int],
    temperature: float,
) -> tuple[Tensor, List[Tensor], List[Tensor], Tensor]:
    """Loss terms of one domain batch: embedding, per-layer attn/hidn, prediction."""
    embd = embed_loss(student_out.embeddings, proj.embd, teacher_out.embeddings)
    attn, hidn = [], []
    for m in sorted(layers):
        n = layers[m]
        attn.append(attn_loss(student_out.attentions[m - 1], teacher_out.attentions[n - 1]))
        hidn.append(hidn_loss(student_out.hidden_states[m - 1], proj.hidn[m - 1], teacher_out.hidden_states[n - 1]))
    pred = pred_loss(student_out.logits, teacher_out.logits, temperature)
    return embd, attn, hidn, pred


def assemble(per_domain: Sequence[tuple]) -> LossBreakdown:
    """Collect ``domain_components`` results (in domain order) into a breakdown."""
    M = len(per_domain[0][1])
    return LossBreakdown(
        embd=[c[0] for c in per_domain],
        attn=[[c[1][m] for c in per_domain] for m in range(M)],
        hidn=[[c[2][m] for c in per_domain] for m in range(M)],
        pred=[c[3] for c in per_domain],
    )

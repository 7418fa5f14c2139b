"""One distillation step: teacher and student forward passes to a scalar loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import losses
from . import tensor as T
from .compare import AggregationTrace, CompareAggregateParams, build_aggregated_set
from .encoder import DomainBatch, EncoderConfig, EncoderOutput, Params, forward, init_params, layer_map
from .exceptions import ConfigurationError
from .graph import RelationalGraphs
from .prototypes import compute_prototypes
from .tensor import Tensor

MODES = ("base_kd", "hrkd")
ABLATIONS = ("no_self_attention", "no_comp_agg", "no_hierarchical", "no_domain_rel")


def check_ablations(ablations: Iterable[str] | None) -> tuple:
    chosen = tuple(sorted(set(ablations or ())))
    unknown = [a for a in chosen if a not in ABLATIONS]
    if unknown:
        raise ConfigurationError(f"unknown ablation(s) {unknown}; choose from {list(ABLATIONS)}")
    return chosen


@dataclass
class StepResult:
    loss: Tensor
    breakdown: losses.LossBreakdown
    ratios: Optional[Tensor] = None
    prototypes: Optional[Tensor] = None
    aggregated: Optional[Tensor] = None
    trace: Optional[AggregationTrace] = None
    attn_row_dev: float = 0.0


def _row_deviation(outputs: Iterable[EncoderOutput]) -> float:
    worst = 0.0
    for out in outputs:
        for attn in out.attentions:
            worst = max(worst, float(np.max(np.abs(attn.data.sum(axis=-1) - 1.0))))
    return worst


class DistillationObjective:
    """Loss of a student against a frozen teacher over one batch per domain."""

    def __init__(
        self,
        teacher_config: EncoderConfig,
        teacher_params: Params,
        student_config: EncoderConfig,
        student_params: Params,
        projection: losses.KdProjection,
        graphs: RelationalGraphs,
        cagg: CompareAggregateParams,
        mode: str = "hrkd",
        ablations: Sequence[str] = (),
        gamma: float = 1.0,
        temperature: float = 1.0,
        detach_prototypes: bool = False,
    ):
        if mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
        if teacher_config.num_domains != student_config.num_domains:
            raise ConfigurationError("teacher and student disagree on the number of domains")
        if teacher_config.classes_per_domain != student_config.classes_per_domain:
            raise ConfigurationError("teacher and student disagree on classes per domain")
        if projection.embd.shape != (student_config.hidden, teacher_config.hidden):
            raise ConfigurationError("projection widths do not bridge student and teacher")
        self.layers = layer_map(student_config.num_layers, teacher_config.num_layers)
        self.teacher_config = teacher_config
        self.teacher_params = teacher_params
        self.student_config = student_config
        self.student_params = student_params
        self.projection = projection
        self.graphs = graphs
        self.cagg = cagg
        self.mode = mode
        self.ablations = check_ablations(ablations)
        self.gamma = gamma
        self.temperature = temperature
        self.detach_prototypes = detach_prototypes

    @classmethod
    def build(
        cls,
        teacher_config: EncoderConfig,
        teacher_params: Params,
        student_config: EncoderConfig,
        seed: int = 0,
        graph_heads: int = 2,
        graph_hidden: int | None = None,
        **kwargs,
    ) -> DistillationObjective:
        """Freshly initialised student, projections, graphs and compare-aggregate weights."""
        layer_map(student_config.num_layers, teacher_config.num_layers)
        rng = np.random.default_rng(seed)
        seeds = rng.integers(0, 2**63 - 1, size=4)
        F = student_config.hidden
        rows = student_config.num_layers + 1
        return cls(
            teacher_config,
            teacher_params,
            student_config,
            init_params(student_config, int(seeds[0])),
            losses.KdProjection.init(F, teacher_config.hidden, student_config.num_layers, int(seeds[1])),
            RelationalGraphs.init(rows, F, graph_hidden or max(1, F // 2), graph_heads, int(seeds[2])),
            CompareAggregateParams.init(rows, student_config.num_domains, F, int(seeds[3])),
            **kwargs,
        )

    def trainable(self) -> Dict[str, Tensor]:
        out = {f"student.{k}": v for k, v in self.student_params.items()}
        out.update(self.projection.params())
        if self.mode == "hrkd":
            out.update(self.graphs.params())
            out.update(self.cagg.params())
        return out

    def teacher_outputs(self, batches: Sequence[DomainBatch]) -> List[EncoderOutput]:
        with T.no_grad():
            return [forward(self.teacher_config, self.teacher_params, b) for b in batches]

    def __call__(self, batches: Sequence[DomainBatch], teacher_outputs=None) -> StepResult:
        if len(batches) != self.student_config.num_domains:
            raise ConfigurationError(
                f"need one batch per domain ({self.student_config.num_domains}), got {len(batches)}"
            )
        if teacher_outputs is None:
            teacher_outputs = self.teacher_outputs(batches)
        student_outputs = [forward(self.student_config, self.student_params, b) for b in batches]
        breakdown = losses.assemble(
            [
                losses.domain_components(s, t, self.projection, self.layers, self.temperature)
                for s, t in zip(student_outputs, teacher_outputs)
            ]
        )
        result = StepResult(None, breakdown, attn_row_dev=_row_deviation(student_outputs + teacher_outputs))
        if self.mode == "base_kd":
            result.loss = losses.total_base(breakdown, self.gamma)
        else:
            rows, D = self.student_config.num_layers + 1, self.student_config.num_domains
            if "no_domain_rel" in self.ablations:
                ratios = losses.uniform_ratios(rows, D)
            else:
                protos = compute_prototypes(
                    student_outputs, [b.attention_mask for b in batches], detach=self.detach_prototypes
                )
                aggregated, trace = build_aggregated_set(
                    protos,
                    self.cagg,
                    self_attention="no_self_attention" not in self.ablations,
                    compare_aggregate="no_comp_agg" not in self.ablations,
                    hierarchical="no_hierarchical" not in self.ablations,
                )
                ratios = self.graphs(aggregated)
                result.prototypes, result.aggregated, result.trace = protos, aggregated, trace
            result.ratios = ratios
            result.loss = losses.total_hrkd(breakdown, ratios, self.gamma)
        breakdown.total = result.loss
        return result

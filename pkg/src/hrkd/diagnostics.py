"""Finite-difference gradient suite over a toy two-domain distillation setup."""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from . import losses
from . import tensor as T
from .encoder import DomainBatch, EncoderConfig, init_params
from .graph import LayerGraphParams, RelationalGraphs, gat_first_layer, gat_second_layer
from .compare import CompareAggregateParams, aggregate, build_aggregated_set, reference_prototypes
from .objective import DistillationObjective
from .tensor import GradCheckReport, Tensor, grad_check


def toy_objective(
    mode: str = "hrkd", seed: int = 0, ablations=(), num_domains: int = 2, **kwargs
) -> Tuple[DistillationObjective, list]:
    """Two domains by default, student M=2 / F=8, teacher N=4 / 12 wide, batches of 2 x 5 tokens.

    All weights are drawn at a larger scale than the training initialisation
    so that no term sits in a flat or degenerate regime.
    """
    rng = np.random.default_rng(seed)
    vocab, L, D = 12, 5, num_domains
    classes = [2 + d % 2 for d in range(D)]
    tcfg = EncoderConfig(num_layers=4, hidden=12, ffn_hidden=16, heads=2, vocab_size=vocab, max_len=L,
                         num_domains=D, classes_per_domain=classes)
    scfg = EncoderConfig(num_layers=2, hidden=8, ffn_hidden=16, heads=2, vocab_size=vocab, max_len=L,
                         num_domains=D, classes_per_domain=classes)
    tparams = init_params(tcfg, int(rng.integers(2**31)))
    for p in tparams.values():
        p.data = p.data + rng.normal(0.0, 0.3, size=p.shape)
        p.requires_grad = False
    obj = DistillationObjective.build(tcfg, tparams, scfg, seed=int(rng.integers(2**31)), mode=mode,
                                      ablations=ablations, **kwargs)
    for p in obj.trainable().values():
        p.data = p.data + rng.normal(0.0, 0.3, size=p.shape)
    batches = []
    for d in range(D):
        ids = rng.integers(3, vocab, size=(2, L))
        ids[:, 0] = 2
        ids[1, 3:] = 0
        batches.append(DomainBatch(d, ids, np.zeros(2, dtype=np.int64), ids != 0))
    return obj, batches


def _loss_checks(rng, h, tol) -> List[Tuple[str, GradCheckReport]]:
    def param(*shape):
        return Tensor(rng.normal(size=shape), requires_grad=True)

    out = []
    es, w, et = param(2, 5, 8), param(8, 12), param(2, 5, 12)
    out.append(("embed_loss", grad_check(lambda: losses.embed_loss(es, w, et), {"E_S": es, "W": w, "E_T": et}, h, tol)))
    hs, wh, ht = param(2, 5, 8), param(8, 12), param(2, 5, 12)
    out.append(("hidn_loss", grad_check(lambda: losses.hidn_loss(hs, wh, ht), {"H_S": hs, "W": wh, "H_T": ht}, h, tol)))
    sa_raw, ta = param(2, 2, 5, 5), Tensor(rng.dirichlet(np.ones(5), size=(2, 2, 5)))
    out.append(("attn_loss", grad_check(lambda: losses.attn_loss(T.softmax(sa_raw), ta), {"A_S": sa_raw}, h, tol)))
    zs, zt = param(4, 3), Tensor(rng.normal(size=(4, 3)))
    out.append(("pred_loss", grad_check(lambda: losses.pred_loss(zs, zt, 2.0), {"z_S": zs}, h, tol)))

    comps = losses.LossBreakdown(
        embd=[param() for _ in range(2)],
        attn=[[param() for _ in range(2)] for _ in range(2)],
        hidn=[[param() for _ in range(2)] for _ in range(2)],
        pred=[param() for _ in range(2)],
    )
    scalars = {f"c{i}": t for i, t in enumerate(comps.embd + sum(comps.attn, []) + sum(comps.hidn, []) + comps.pred)}
    out.append(("total_base", grad_check(lambda: losses.total_base(comps, 1.0), scalars, h, tol)))
    logits = param(3, 2)
    both = dict(scalars, ratio_logits=logits)
    out.append(("total_hrkd", grad_check(lambda: losses.total_hrkd(comps, T.softmax(logits, axis=1), 1.0), both, h, tol)))

    layer = LayerGraphParams.init(8, 4, 2, rng)
    nodes = param(3, 8)
    gparams = dict(layer.tensors(), nodes=nodes)
    out.append(("gat_layers", grad_check(lambda: T.tsum(gat_second_layer(gat_first_layer(nodes * 3.0, layer), layer) ** 2),
                                         gparams, h, tol)))
    protos, wref, wagg = param(3, 8), param(8, 8), param(8, 8)

    def cagg():
        rp, _ = reference_prototypes(protos, wref)
        ap, _ = aggregate(protos, rp[1], wagg)
        return T.tsum(ap * ap)

    out.append(("compare_aggregate", grad_check(cagg, {"h": protos, "W_D": wref, "W_H": wagg}, h, tol)))
    return out


# Instance of the ratio-path check below whose three ratio rows are all
# visibly non-uniform and whose attention scores sit away from the
# LeakyReLU kink.
RATIO_PATH_SEED = 3


def ratio_path_instance(seed: int = RATIO_PATH_SEED, D: int = 3, M: int = 2, F: int = 8, hidden: int = 4, heads: int = 2):
    """Prototypes, compare-aggregate weights and graphs wired so that ratios move.

    On a complete graph, attention rows are identical whenever no row's
    scores change sign, and the ratios then come out exactly uniform. Giving
    every attention vector opposite-signed source and neighbour halves
    breaks that symmetry often enough to exercise the gradient path.
    """
    rng = np.random.default_rng(seed)
    protos = Tensor(rng.normal(size=(M + 1, D, F)) * 2.0, requires_grad=True)
    cagg = CompareAggregateParams.init(M + 1, D, F, int(rng.integers(2**31)))
    graphs = RelationalGraphs.init(M + 1, F, hidden, heads, int(rng.integers(2**31)))
    for layer in graphs.layers:
        for a in layer.a:
            a.data[hidden:] = -0.6 * a.data[:hidden]
        layer.a_out.data[:] = [1.0, -0.6]
    weights = Tensor(rng.uniform(0.5, 2.0, size=(M + 1, D)))
    return protos, cagg, graphs, weights


def _ratio_path_check(h, tol) -> GradCheckReport:
    protos, cagg, graphs, weights = ratio_path_instance()

    def f():
        aggregated, _ = build_aggregated_set(protos, cagg)
        return T.tsum(graphs(aggregated) * weights)

    params = dict(cagg.params(), **graphs.params(), prototypes=protos)
    return grad_check(f, params, h, tol)


def gradient_suite(h: float = 1e-5, tol: float = 1e-4, seed: int = 0) -> List[Tuple[str, GradCheckReport]]:
    """Check every loss, both graph layers, compare-aggregate, the prototype-to-ratio path and two full steps."""
    rng = np.random.default_rng(seed)
    results = _loss_checks(rng, h, tol)
    results.append(("ratio_path", _ratio_path_check(h, tol)))
    for mode in ("base_kd", "hrkd"):
        obj, batches = toy_objective(mode=mode, seed=seed)
        teacher_out = obj.teacher_outputs(batches)
        report = grad_check(lambda: obj(batches, teacher_out).loss, obj.trainable(), h, tol)
        results.append((f"full_step[{mode}]", report))
    return results

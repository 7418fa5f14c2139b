"""Scikit-learn style estimators: a multi-domain teacher and an HRKD-distilled student.

Inputs follow one convention throughout: ``X`` is an integer token-id matrix
whose column 0 holds the ``[CLS]`` id and whose padding uses id 0, and
``domains`` is a parallel vector of domain indices.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from .data import attention_mask
from .encoder import DomainBatch, EncoderConfig, Params, forward, init_params, layer_map
from .exceptions import ConfigurationError, ContractError
from .objective import MODES, DistillationObjective, check_ablations
from .optim import Adam
from .tensor import Tensor
from .validation import check_domains, check_labels, check_tokens, infer_classes

Logger = Optional[Callable[[dict], None]]


class DomainStreams:
    """Independent shuffled round-robin over each domain's sample indices."""

    def __init__(self, domains: np.ndarray, num_domains: int, batch_size: int, rng: np.random.Generator):
        self.pools = [np.flatnonzero(domains == d) for d in range(num_domains)]
        for d, pool in enumerate(self.pools):
            if pool.size == 0:
                raise ContractError(f"domain {d} has no training samples")
        self.batch_size = batch_size
        self.rng = rng
        self.order = [self.rng.permutation(p) for p in self.pools]
        self.cursor = [0] * num_domains

    def steps_per_epoch(self) -> int:
        return max(math.ceil(p.size / self.batch_size) for p in self.pools)

    def next(self, d: int) -> np.ndarray:
        out = []
        need = min(self.batch_size, self.pools[d].size)
        while need:
            if self.cursor[d] >= self.order[d].size:
                self.order[d] = self.rng.permutation(self.pools[d])
                self.cursor[d] = 0
            take = self.order[d][self.cursor[d] : self.cursor[d] + need]
            self.cursor[d] += take.size
            need -= take.size
            out.append(take)
        return np.concatenate(out)


def _batch(X, y, d, idx) -> DomainBatch:
    ids = X[idx]
    return DomainBatch(d, ids, y[idx] if y is not None else np.zeros(len(idx), dtype=np.int64), attention_mask(ids))


def hard_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    logp = T.log_softmax(logits, axis=-1)
    return -T.mean(logp[np.arange(len(labels)), labels])


def predict_logits(config: EncoderConfig, params: Params, X: np.ndarray, domains: np.ndarray, batch_size: int = 256):
    """Per-sample logit vectors (lengths follow each sample's domain head)."""
    out: List[np.ndarray] = [None] * len(X)
    with T.no_grad():
        for d in range(config.num_domains):
            idx = np.flatnonzero(domains == d)
            for start in range(0, idx.size, batch_size):
                chunk = idx[start : start + batch_size]
                logits = forward(config, params, _batch(X, None, d, chunk)).logits.data
                for i, row in zip(chunk, logits):
                    out[i] = row
    return out


def _tensors_to_arrays(params: Dict[str, Tensor], prefix: str = "") -> Dict[str, np.ndarray]:
    return {prefix + k: v.data for k, v in params.items()}


def _arrays_to_tensors(arrays: Dict[str, np.ndarray], prefix: str, requires_grad: bool) -> Dict[str, Tensor]:
    return {
        k[len(prefix) :]: Tensor(v.copy(), requires_grad=requires_grad) for k, v in arrays.items() if k.startswith(prefix)
    }


class _EncoderClassifier(ClassifierMixin, BaseEstimator):
    """Prediction side shared by teacher and student."""

    def _check_X(self, X, domains):
        check_is_fitted(self, "encoder_params_")
        cfg = self.encoder_config_
        X = check_tokens(X, cfg.vocab_size, cfg.max_len)
        return X, check_domains(domains, len(X), cfg.num_domains)

    def decision_function(self, X, domains=None) -> List[np.ndarray]:
        X, domains = self._check_X(X, domains)
        return predict_logits(self.encoder_config_, self.encoder_params_, X, domains)

    def predict(self, X, domains=None) -> np.ndarray:
        return np.array([int(np.argmax(z)) for z in self.decision_function(X, domains)], dtype=np.int64)

    def score(self, X, y, domains=None, sample_weight=None) -> float:
        """Mean accuracy over all samples."""
        pred = self.predict(X, domains)
        return float(np.average(pred == np.asarray(y), weights=sample_weight))

    def domain_scores(self, X, y, domains=None) -> Dict[int, float]:
        """Accuracy of each domain separately."""
        X, domains = self._check_X(X, domains)
        pred = self.predict(X, domains)
        y = np.asarray(y)
        return {
            d: float(np.mean(pred[domains == d] == y[domains == d]))
            for d in range(self.encoder_config_.num_domains)
            if np.any(domains == d)
        }

    def _eval_record(self, eval_set, step, epoch) -> dict:
        Xe, ye, de = eval_set
        scores = self.domain_scores(Xe, ye, de)
        return {
            "kind": "eval",
            "step": step,
            "epoch": epoch,
            "accuracy": [scores.get(d) for d in range(self.encoder_config_.num_domains)],
            "macro": float(np.mean(list(scores.values()))),
        }


class MultiDomainTeacher(_EncoderClassifier):
    """Shared transformer trunk with one classification head per domain.

    Trained with hard-label cross-entropy; each update sums the losses of
    one batch from every domain.

    Parameters
    ----------
    num_layers, hidden, heads, ffn_hidden, max_len : int
        Encoder shape; ``ffn_hidden`` defaults to ``2 * hidden``.
    vocab_size : int, optional
        Inferred from ``X`` when omitted.
    learning_rate, epochs, batch_size, warmup : optimisation settings.
    random_state : int
        Seeds initialisation and batch order.
    """

    def __init__(
        self,
        num_layers: int = 4,
        hidden: int = 64,
        heads: int = 2,
        ffn_hidden: int | None = None,
        max_len: int = 32,
        vocab_size: int | None = None,
        learning_rate: float = 1e-3,
        epochs: int = 3,
        batch_size: int = 32,
        warmup: float = 0.1,
        random_state: int = 0,
    ):
        self.num_layers = num_layers
        self.hidden = hidden
        self.heads = heads
        self.ffn_hidden = ffn_hidden
        self.max_len = max_len
        self.vocab_size = vocab_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.warmup = warmup
        self.random_state = random_state

    def fit(self, X, y, domains=None, classes_per_domain=None, eval_set=None, log: Logger = None, on_epoch_end=None):
        X = check_tokens(X, self.vocab_size, self.max_len)
        domains = check_domains(domains, len(X))
        num_domains = int(domains.max()) + 1
        y = check_labels(y, domains, classes_per_domain)
        if classes_per_domain is None:
            classes_per_domain = infer_classes(y, domains, num_domains)
        cfg = EncoderConfig(
            num_layers=self.num_layers,
            hidden=self.hidden,
            ffn_hidden=self.ffn_hidden or 2 * self.hidden,
            heads=self.heads,
            vocab_size=self.vocab_size or int(X.max()) + 1,
            max_len=self.max_len,
            num_domains=num_domains,
            classes_per_domain=list(classes_per_domain),
        )
        rng = np.random.default_rng(self.random_state)
        self.encoder_config_ = cfg
        self.encoder_params_ = init_params(cfg, int(rng.integers(0, 2**63 - 1)))
        self.classes_per_domain_ = list(cfg.classes_per_domain)
        self.n_domains_ = num_domains

        streams = DomainStreams(domains, num_domains, self.batch_size, rng)
        per_epoch = streams.steps_per_epoch()
        opt = Adam(self.encoder_params_, self.learning_rate, per_epoch * self.epochs, self.warmup)
        step = 0
        for epoch in range(1, self.epochs + 1):
            for _ in range(per_epoch):
                step += 1
                domain_losses = []
                total = None
                for d in range(num_domains):
                    batch = _batch(X, y, d, streams.next(d))
                    loss_d = hard_cross_entropy(forward(cfg, self.encoder_params_, batch).logits, batch.labels)
                    domain_losses.append(loss_d.item())
                    total = loss_d if total is None else total + loss_d
                if not np.isfinite(total.item()):
                    raise ContractError(f"teacher training diverged at step {step} (loss {total.item()})")
                opt.zero_grad()
                T.backward(total)
                opt.step()
                if log is not None:
                    log({"kind": "step", "step": step, "epoch": epoch, "lr": opt.current_lr,
                         "loss": total.item(), "domain_loss": domain_losses})
            if eval_set is not None and log is not None:
                log(self._eval_record(eval_set, step, epoch))
            if on_epoch_end is not None:
                on_epoch_end(self, epoch)
        opt.zero_grad()
        self.n_steps_ = step
        return self

    # -- persistence -------------------------------------------------------
    def export_state(self):
        check_is_fitted(self, "encoder_params_")
        header = {"kind": "teacher", "encoder": self.encoder_config_.to_dict(), "estimator": self.get_params()}
        return header, _tensors_to_arrays(self.encoder_params_)

    @classmethod
    def from_state(cls, header: dict, arrays: Dict[str, np.ndarray]) -> MultiDomainTeacher:
        if header.get("kind") != "teacher":
            raise ConfigurationError(f"expected a teacher checkpoint, got kind {header.get('kind')!r}")
        est = cls(**header["estimator"])
        est.encoder_config_ = EncoderConfig(**header["encoder"])
        est.encoder_params_ = _arrays_to_tensors(arrays, "", requires_grad=False)
        est.classes_per_domain_ = list(est.encoder_config_.classes_per_domain)
        est.n_domains_ = est.encoder_config_.num_domains
        return est


class HRKDStudent(_EncoderClassifier):
    """Small encoder distilled from a multi-domain teacher.

    With ``mode="hrkd"`` the per-layer, per-domain distillation losses are
    weighted by ratios from the domain-relational graphs fed with
    compare-aggregated prototypes; ``mode="base_kd"`` sums them unweighted.
    An unfitted ``teacher`` is fitted on the same data first (needs ``y``);
    a fitted one is used as is and never modified. ``y`` is otherwise
    unused: the student learns from the teacher alone.

    ``ablations`` takes any of ``no_self_attention``, ``no_comp_agg``,
    ``no_hierarchical`` and ``no_domain_rel``.
    """

    def __init__(
        self,
        teacher=None,
        num_layers: int = 2,
        hidden: int = 32,
        heads: int = 2,
        ffn_hidden: int | None = None,
        mode: str = "hrkd",
        ablations: Sequence[str] = (),
        graph_heads: int = 2,
        graph_hidden: int | None = None,
        gamma: float = 1.0,
        temperature: float = 1.0,
        detach_prototypes: bool = False,
        learning_rate: float = 1e-3,
        epochs: int = 10,
        batch_size: int = 32,
        warmup: float = 0.1,
        random_state: int = 0,
    ):
        self.teacher = teacher
        self.num_layers = num_layers
        self.hidden = hidden
        self.heads = heads
        self.ffn_hidden = ffn_hidden
        self.mode = mode
        self.ablations = ablations
        self.graph_heads = graph_heads
        self.graph_hidden = graph_hidden
        self.gamma = gamma
        self.temperature = temperature
        self.detach_prototypes = detach_prototypes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.warmup = warmup
        self.random_state = random_state

    def _resolve_teacher(self, X, y, domains):
        teacher = self.teacher if self.teacher is not None else MultiDomainTeacher()
        try:
            check_is_fitted(teacher, "encoder_params_")
            return teacher
        except NotFittedError:
            if y is None:
                raise ConfigurationError("an unfitted teacher needs labels y to be trained first") from None
            return clone(teacher).fit(X, y, domains)

    def build_objective(self, teacher) -> DistillationObjective:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        tcfg = teacher.encoder_config_
        scfg = EncoderConfig(
            num_layers=self.num_layers,
            hidden=self.hidden,
            ffn_hidden=self.ffn_hidden or 2 * self.hidden,
            heads=self.heads,
            vocab_size=tcfg.vocab_size,
            max_len=tcfg.max_len,
            num_domains=tcfg.num_domains,
            classes_per_domain=list(tcfg.classes_per_domain),
        )
        layer_map(scfg.num_layers, tcfg.num_layers)
        frozen = {k: Tensor(v.data) for k, v in teacher.encoder_params_.items()}
        return DistillationObjective.build(
            tcfg,
            frozen,
            scfg,
            seed=self.random_state,
            graph_heads=self.graph_heads,
            graph_hidden=self.graph_hidden,
            mode=self.mode,
            ablations=check_ablations(self.ablations),
            gamma=self.gamma,
            temperature=self.temperature,
            detach_prototypes=self.detach_prototypes,
        )

    def fit(self, X, y=None, domains=None, eval_set=None, log: Logger = None, on_epoch_end=None):
        X = check_tokens(X)
        domains = check_domains(domains, len(X))
        teacher = self._resolve_teacher(X, y, domains)
        self.teacher_ = teacher
        objective = self.build_objective(teacher)
        cfg = objective.student_config
        X = check_tokens(X, cfg.vocab_size, cfg.max_len)
        domains = check_domains(domains, len(X), cfg.num_domains)
        self.objective_ = objective
        self.encoder_config_ = cfg
        self.encoder_params_ = objective.student_params
        self.layer_map_ = dict(objective.layers)

        rng = np.random.default_rng([self.random_state, 1])
        streams = DomainStreams(domains, cfg.num_domains, self.batch_size, rng)
        per_epoch = streams.steps_per_epoch()
        opt = Adam(objective.trainable(), self.learning_rate, per_epoch * self.epochs, self.warmup)
        step = 0
        for epoch in range(1, self.epochs + 1):
            for _ in range(per_epoch):
                step += 1
                batches = [_batch(X, None, d, streams.next(d)) for d in range(cfg.num_domains)]
                result = objective(batches)
                if not np.isfinite(result.loss.item()):
                    raise ContractError(f"distillation diverged at step {step}")
                opt.zero_grad()
                T.backward(result.loss)
                opt.step()
                if log is not None:
                    log(step_record(result, step, epoch, opt.current_lr))
            if eval_set is not None and log is not None:
                log(self._eval_record(eval_set, step, epoch))
            if on_epoch_end is not None:
                on_epoch_end(self, epoch)
        opt.zero_grad()
        self.n_steps_ = step
        return self

    # -- persistence -------------------------------------------------------
    def export_state(self):
        check_is_fitted(self, "encoder_params_")
        obj = self.objective_
        params = {k: v for k, v in self.get_params(deep=False).items() if k != "teacher"}
        params["ablations"] = list(check_ablations(params["ablations"]))
        header = {
            "kind": "student",
            "encoder": self.encoder_config_.to_dict(),
            "teacher_encoder": obj.teacher_config.to_dict(),
            "layer_map": {str(k): v for k, v in obj.layers.items()},
            "estimator": params,
        }
        arrays = _tensors_to_arrays(obj.student_params, "student.")
        arrays.update(_tensors_to_arrays(obj.projection.params()))
        arrays.update(_tensors_to_arrays(obj.graphs.params()))
        arrays.update(_tensors_to_arrays(obj.cagg.params()))
        return header, arrays

    @classmethod
    def from_state(cls, header: dict, arrays: Dict[str, np.ndarray]) -> HRKDStudent:
        """Restore a student for prediction (the distillation helpers are not rebuilt)."""
        if header.get("kind") != "student":
            raise ConfigurationError(f"expected a student checkpoint, got kind {header.get('kind')!r}")
        est = cls(**header["estimator"])
        est.encoder_config_ = EncoderConfig(**header["encoder"])
        est.encoder_params_ = _arrays_to_tensors(arrays, "student.", requires_grad=False)
        est.layer_map_ = {int(k): v for k, v in header["layer_map"].items()}
        return est


def step_record(result, step: int, epoch: int, lr: float) -> dict:
    """Flatten a distillation step into a JSON-ready metrics record."""
    rec = {
        "kind": "step",
        "step": step,
        "epoch": epoch,
        "lr": lr,
        "loss": result.loss.item(),
        "losses": result.breakdown.as_floats(),
        "ratios": None if result.ratios is None else result.ratios.data.tolist(),
        "reference_attention": None,
        "similarity": None,
        "attn_row_dev": result.attn_row_dev,
    }
    if result.trace is not None:
        rec["reference_attention"] = [a.data.tolist() for a in result.trace.reference]
        rec["similarity"] = [[a.data.tolist() for a in row] for row in result.trace.similarity]
    return rec

"""End-to-end runs: teacher training, distillation, evaluation, with files on disk."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import checkpoint
from .config import RunConfig
from .data import Corpus, Vocabulary, encode_split, subsample
from .encoder import layer_map
from .estimators import HRKDStudent, MultiDomainTeacher
from .exceptions import ConfigurationError

OUTPUT_ENV = "HRKD_OUTPUT_DIR"


def output_dir(path=None) -> Path:
    """``path`` if given, else ``$HRKD_OUTPUT_DIR``, else ``./runs``."""
    return Path(path or os.environ.get(OUTPUT_ENV) or "runs")


class MetricsWriter:
    """Append-only JSON-lines sink; one self-contained record per line."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")
        self.last_step = 0

    def __call__(self, record: dict) -> None:
        step = record.get("step")
        if step is not None:
            if step < self.last_step:
                raise ValueError(f"metrics step went backwards ({step} < {self.last_step})")
            self.last_step = step
        self._fh.write(json.dumps(record, sort_keys=True, allow_nan=False) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class RunResult:
    checkpoint: Path
    metrics: Path
    estimator: object
    vocab: Vocabulary


def _checkpoint_header(est, config: RunConfig, corpus: Corpus, vocab: Vocabulary) -> tuple:
    header, arrays = est.export_state()
    header.update(
        {
            "run_config": config.to_dict(),
            "config_digest": config.digest,
            "domains": corpus.names,
            "vocab": vocab.itos,
        }
    )
    return header, arrays


def load_model(path):
    """Rebuild the estimator stored in a checkpoint; returns ``(estimator, header)``."""
    header, arrays = checkpoint.load(path)
    cls = {"teacher": MultiDomainTeacher, "student": HRKDStudent}.get(header.get("kind"))
    if cls is None:
        raise ConfigurationError(f"{path}: unknown checkpoint kind {header.get('kind')!r}")
    return cls.from_state(header, arrays), header


def train_teacher(config: RunConfig, corpus: Corpus, out_dir=None) -> RunResult:
    """Multi-task teacher on the (optionally subsampled) training split."""
    out = output_dir(out_dir)
    corpus = subsample(corpus, config.sample_rate)
    vocab = Vocabulary.from_corpus(corpus, config.min_freq)
    X, y, d = encode_split(corpus, vocab, "train", config.max_len)
    dev = encode_split(corpus, vocab, "dev", config.max_len)
    est = MultiDomainTeacher(
        num_layers=config.teacher.num_layers,
        hidden=config.teacher.hidden,
        heads=config.teacher.heads,
        ffn_hidden=config.teacher.ffn_hidden,
        max_len=config.max_len,
        vocab_size=len(vocab),
        learning_rate=config.teacher_lr,
        epochs=config.teacher_epochs,
        batch_size=config.batch_size,
        warmup=config.warmup,
        random_state=config.seed,
    )

    def save_epoch(model, epoch):
        checkpoint.save(out / f"teacher_epoch{epoch}.ckpt", *_checkpoint_header(model, config, corpus, vocab))

    metrics_path = out / "teacher_metrics.jsonl"
    with MetricsWriter(metrics_path) as log:
        log(_run_record("teacher", config, corpus))
        est.fit(
            X, y, d,
            classes_per_domain=corpus.classes_per_domain,
            eval_set=dev if len(dev[0]) else None,
            log=log,
            on_epoch_end=save_epoch,
        )
        path = checkpoint.save(out / "teacher.ckpt", *_checkpoint_header(est, config, corpus, vocab))
        log(_final_record(path, corpus, config))
    return RunResult(path, metrics_path, est, vocab)


def distill_student(config: RunConfig, corpus: Corpus, teacher_checkpoint, out_dir=None) -> RunResult:
    """Distil a student from a saved teacher; writes checkpoints and a metrics file."""
    out = output_dir(out_dir)
    teacher, header = load_model(teacher_checkpoint)
    if header["kind"] != "teacher":
        raise ConfigurationError(f"{teacher_checkpoint} is not a teacher checkpoint")
    if header["domains"] != corpus.names:
        raise ConfigurationError(f"teacher domains {header['domains']} do not match corpus domains {corpus.names}")
    tcfg = teacher.encoder_config_
    layer_map(config.student.num_layers, tcfg.num_layers)
    if config.max_len > tcfg.max_len:
        raise ConfigurationError(f"max_len {config.max_len} exceeds the teacher's {tcfg.max_len}")
    if config.student.hidden % config.student.heads:
        raise ConfigurationError("student hidden width not divisible by its heads")

    corpus = subsample(corpus, config.sample_rate)
    vocab = Vocabulary(header["vocab"])
    X, _, d = encode_split(corpus, vocab, "train", tcfg.max_len)
    dev = encode_split(corpus, vocab, "dev", tcfg.max_len)
    est = HRKDStudent(
        teacher=teacher,
        num_layers=config.student.num_layers,
        hidden=config.student.hidden,
        heads=config.student.heads,
        ffn_hidden=config.student.ffn_hidden,
        mode=config.mode,
        ablations=tuple(config.ablations),
        graph_heads=config.graph_heads,
        graph_hidden=config.graph_hidden,
        gamma=config.gamma,
        temperature=config.temperature,
        detach_prototypes=config.detach_prototypes,
        learning_rate=config.student_lr,
        epochs=config.student_epochs,
        batch_size=config.batch_size,
        warmup=config.warmup,
        random_state=config.seed,
    )

    def save_epoch(model, epoch):
        checkpoint.save(out / f"student_epoch{epoch}.ckpt", *_checkpoint_header(model, config, corpus, vocab))

    metrics_path = out / "metrics.jsonl"
    with MetricsWriter(metrics_path) as log:
        log(_run_record("student", config, corpus))
        est.fit(X, None, d, eval_set=dev if len(dev[0]) else None, log=log, on_epoch_end=save_epoch)
        path = checkpoint.save(out / "student.ckpt", *_checkpoint_header(est, config, corpus, vocab))
        log(_final_record(path, corpus, config))
    return RunResult(path, metrics_path, est, vocab)


def evaluate(checkpoint_path, corpus: Corpus, split: str = "test", predictions_path=None) -> Dict:
    """Per-domain argmax accuracy of a saved model plus their macro average.

    With ``predictions_path`` a ``domain<TAB>index<TAB>label<TAB>prediction``
    dump is written as well.
    """
    model, header = load_model(checkpoint_path)
    if header["domains"] != corpus.names:
        raise ConfigurationError(f"checkpoint domains {header['domains']} do not match corpus domains {corpus.names}")
    vocab = Vocabulary(header["vocab"])
    X, y, d = encode_split(corpus, vocab, split, model.encoder_config_.max_len)
    pred = model.predict(X, d) if len(X) else np.zeros(0, dtype=np.int64)
    per_domain = {}
    for k, name in enumerate(corpus.names):
        sel = d == k
        if sel.any():
            per_domain[name] = float(np.mean(pred[sel] == y[sel]))
    if predictions_path is not None:
        lines, counters = [], {}
        for k, label, p in zip(d, y, pred):
            i = counters.get(k, 0)
            counters[k] = i + 1
            lines.append(f"{corpus.names[k]}\t{i}\t{label}\t{p}\n")
        Path(predictions_path).write_text("".join(lines), encoding="utf-8")
    macro = float(np.mean(list(per_domain.values()))) if per_domain else None
    return {"split": split, "accuracy": per_domain, "macro": macro}


def _run_record(role: str, config: RunConfig, corpus: Corpus) -> dict:
    return {
        "kind": "run",
        "role": role,
        "config": config.to_dict(),
        "config_digest": config.digest,
        "domains": corpus.names,
        "train_sizes": [len(dom.train) for dom in corpus.domains],
        "sample_rate": config.sample_rate,
        "mode": config.mode,
        "ablations": list(config.ablations),
    }


def _final_record(path: Path, corpus: Corpus, config: RunConfig) -> dict:
    rec = {"kind": "final", "checkpoint": path.name, "sample_rate": config.sample_rate}
    for split in ("dev", "test"):
        if corpus.size(split):
            rec[split] = evaluate(path, corpus, split)
    return rec

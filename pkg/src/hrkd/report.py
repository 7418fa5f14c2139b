"""Summaries of metrics files: accuracies, loss curves and ratio/similarity extracts."""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from typing import Dict, List

import numpy as np

from .exceptions import FormatError


def read_metrics(path) -> List[dict]:
    records = []
    text = Path(path).read_text(encoding="utf-8")
    for index, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: record {index} is not valid JSON ({exc.msg})") from None
        if not isinstance(rec, dict) or "kind" not in rec:
            raise FormatError(f"{path}: record {index} lacks a 'kind' field")
        records.append(rec)
    return records


def _fmt_row(values, digits: int = 2) -> str:
    return "[" + ", ".join(f"{v:.{digits}f}" for v in values) + "]"


def summarize(path) -> Dict:
    """Machine-readable summary of one metrics file."""
    records = read_metrics(path)
    run = next((r for r in records if r["kind"] == "run"), {})
    steps = [r for r in records if r["kind"] == "step"]
    evals = [r for r in records if r["kind"] == "eval"]
    final = next((r for r in reversed(records) if r["kind"] == "final"), None)
    out = {
        "path": str(path),
        "role": run.get("role"),
        "domains": run.get("domains"),
        "sample_rate": run.get("sample_rate"),
        "mode": run.get("mode"),
        "ablations": run.get("ablations"),
        "steps": len(steps),
    }
    if not steps:
        return out
    by_epoch = defaultdict(list)
    for r in steps:
        by_epoch[r["epoch"]].append(r["loss"])
    out["loss_first"] = steps[0]["loss"]
    out["loss_last"] = steps[-1]["loss"]
    out["loss_curve"] = [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]
    out["dev_curve"] = [r["macro"] for r in evals]
    last = steps[-1]
    out["last_ratios"] = last.get("ratios")
    out["last_similarity"] = last.get("similarity")
    if final is not None:
        out["final"] = {k: final[k] for k in ("dev", "test") if k in final}
    return out


def render(summaries: List[Dict]) -> str:
    """Plain-text report for one or more metrics summaries."""
    lines = []
    for s in summaries:
        lines.append(f"== {s['path']} ({s.get('role') or 'unknown'}) ==")
        if not s["steps"]:
            lines.append("no data: the run logged no training steps")
            lines.append("")
            continue
        lines.append(
            f"mode={s.get('mode')} ablations={s.get('ablations') or []} sample_rate={s.get('sample_rate')} steps={s['steps']}"
        )
        lines.append(f"loss: first {s['loss_first']:.4f}, last {s['loss_last']:.4f}")
        lines.append("epoch mean loss: " + _fmt_row(s["loss_curve"], 4))
        if s["dev_curve"]:
            lines.append("dev macro accuracy by epoch: " + _fmt_row(s["dev_curve"], 4))
        for split, res in s.get("final", {}).items():
            accs = ", ".join(f"{name}={acc:.4f}" for name, acc in res["accuracy"].items())
            lines.append(f"final {split} accuracy: {accs} | macro={res['macro']:.4f}")
        if s.get("last_ratios"):
            lines.append("domain-relational ratios (last step, row per layer):")
            for m, row in enumerate(s["last_ratios"]):
                lines.append(f"  layer {m}: {_fmt_row(row)}")
        if s.get("last_similarity"):
            names = s.get("domains") or []
            lines.append("hierarchical similarity ratios (last step, per domain over layers 0..m):")
            for d in range(len(s["last_similarity"][0])):
                label = names[d] if d < len(names) else f"domain{d}"
                rows = ", ".join(_fmt_row(s["last_similarity"][m][d]) for m in range(len(s["last_similarity"])))
                lines.append(f"  {label}: {rows}")
        lines.append("")

    rated = [s for s in summaries if s.get("final", {}).get("test") and s.get("sample_rate") is not None]
    if len({s["sample_rate"] for s in rated}) > 1 or (rated and len(summaries) > 1):
        lines.append("== accuracy by sample rate ==")
        names = rated[0]["final"]["test"]["accuracy"].keys() if rated else []
        lines.append("rate     " + "  ".join(f"{n:>10s}" for n in names) + "       macro")
        for s in sorted(rated, key=lambda s: s["sample_rate"]):
            test = s["final"]["test"]
            cells = "  ".join(f"{test['accuracy'][n]:10.4f}" for n in names)
            lines.append(f"{s['sample_rate']:<8g} {cells}  {test['macro']:10.4f}")
    return "\n".join(lines).rstrip() + "\n"


def report(paths) -> tuple:
    """``(text, summaries)`` for the given metrics files."""
    paths = list(paths)
    if not paths:
        raise FormatError("report needs at least one metrics file")
    summaries = [summarize(p) for p in paths]
    return render(summaries), summaries

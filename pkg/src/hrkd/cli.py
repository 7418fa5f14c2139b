"""Command-line entry point: ``hrkd <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig, flag_fields
from .exceptions import HRKDError


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="YAML or JSON run configuration")
    group = parser.add_argument_group("config overrides")
    for key, kind in flag_fields():
        flag = "--" + key.replace(".", "-").replace("_", "-")
        if kind is bool:
            group.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None)
        else:
            group.add_argument(flag, dest=key, type=kind, default=None, metavar=kind.__name__.upper())
    group.add_argument("--ablation", dest="ablations", action="append", default=None,
                       help="no_self_attention | no_comp_agg | no_hierarchical | no_domain_rel (repeatable)")


def _config(args) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {key: getattr(args, key, None) for key, _ in flag_fields()}
    overrides["ablations"] = args.ablations
    return base.with_overrides(overrides)


def cmd_gen_data(args) -> int:
    from .data import generate_synthetic_corpus
    from .harness import output_dir

    cfg = _config(args)
    corpus = generate_synthetic_corpus(
        num_domains=cfg.num_domains,
        classes=cfg.classes,
        vocab_size=cfg.vocab_budget,
        sharing=cfg.sharing,
        seed=cfg.seed,
        n_train=cfg.n_train,
        n_dev=cfg.n_dev,
        n_test=cfg.n_test,
    )
    out = output_dir(args.out) / "data" if args.out is None else Path(args.out)
    paths = corpus.write_tsv(out)
    print(f"wrote {len(corpus)} domains to {paths['train'].parent}")
    return 0


def cmd_train_teacher(args) -> int:
    from .data import ingest_dir
    from .harness import train_teacher

    result = train_teacher(_config(args), ingest_dir(args.data), args.out)
    print(f"teacher checkpoint: {result.checkpoint}")
    print(f"metrics: {result.metrics}")
    return 0


def cmd_distill(args) -> int:
    from .data import ingest_dir
    from .harness import distill_student

    result = distill_student(_config(args), ingest_dir(args.data), args.teacher, args.out)
    print(f"student checkpoint: {result.checkpoint}")
    print(f"metrics: {result.metrics}")
    return 0


def cmd_eval(args) -> int:
    from .data import ingest_dir
    from .harness import evaluate

    res = evaluate(args.checkpoint, ingest_dir(args.data), args.split, args.dump_predictions)
    if args.json:
        print(json.dumps(res, sort_keys=True))
    else:
        for name, acc in res["accuracy"].items():
            print(f"{name}\t{acc:.4f}")
        print(f"macro\t{res['macro']:.4f}")
    return 0


def cmd_report(args) -> int:
    from .report import report

    text, summaries = report(args.metrics)
    sys.stdout.write(text)
    if args.json:
        Path(args.json).write_text(json.dumps(summaries, indent=2, sort_keys=True), encoding="utf-8")
    return 0


def cmd_grad_check(args) -> int:
    from .diagnostics import gradient_suite

    ok = True
    for name, rep in gradient_suite(h=args.h, tol=args.tol, seed=args.seed):
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {name}: max relative deviation {rep.max_deviation:.3e}")
        if args.verbose:
            print(rep.format())
        ok &= rep.passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrkd", description="Hierarchical relational knowledge distillation at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic multi-domain corpus as TSV")
    _add_config_flags(p)
    p.add_argument("--out", help="output directory (default: $HRKD_OUTPUT_DIR/data)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teacher", help="train the multi-domain teacher")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="directory with train/dev/test .tsv files")
    p.add_argument("--out", help="run directory (default: $HRKD_OUTPUT_DIR or ./runs)")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="distil a student from a teacher checkpoint")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="per-domain accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--dump-predictions", help="write per-sample predictions as TSV")
    p.add_argument("--json", action="store_true", help="print machine-readable output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="summarise metrics files")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--json", help="also write the summaries as JSON here")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("grad-check", help="finite-difference check of every loss and a full step")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (HRKDError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: run, validate, synth, convert, inspect, plan."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import load_config
from .dataio import MAGIC, CsvSchema, SynthSpec, bank_from_csv, bank_read, bank_write
from .errors import DeepSldaError
from .orderings import make_plan, parse_amount, read_plan, validate_plan, write_plan

OUT_ENV = "DEEPSLDA_OUT"


def _sniff(path: Path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return "bank"
    if head.startswith(b"{"):
        return "plan"
    return "bank"  # let the bank reader produce a BadMagic diagnostic


def cmd_run(args) -> int:
    from .experiment import run_experiment

    cfg = load_config(args.config)
    out = args.out or cfg.output_dir or os.environ.get(OUT_ENV) or "results"
    report = run_experiment(cfg, out, jobs=args.jobs)
    for ordering, entry in report["orderings"].items():
        for name, m in entry["methods"].items():
            o = m["omega_all"]
            print(f"{ordering:15s} {name:20s} omega={o['mean']:.3f} +/- {o['stderr']:.3f}")
    print(f"wrote {Path(out) / 'curves.csv'} and {Path(out) / 'report.json'}")
    return 0


def cmd_validate(args) -> int:
    path = Path(args.path)
    if _sniff(path) == "plan":
        plan = read_plan(path)
        if args.bank is None:
            print("plan validation needs --bank", file=sys.stderr)
            return 2
        report = validate_plan(bank_read(args.bank), plan)
        print("OK" if report.ok else f"FAIL: {report.message}")
        return 0 if report.ok else 1
    bank = bank_read(path)
    bank.validate()
    s = bank.summary()
    print(f"OK n={s['n']} d={s['d']} K={s['K']}")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec.from_dict(json.loads(Path(args.spec).read_text()))
    bank = spec.build(args.split)
    bank_write(bank, args.out)
    print(f"wrote {args.out}: n={bank.n} d={bank.dim} K={bank.num_classes}")
    return 0


def cmd_convert(args) -> int:
    schema = CsvSchema(
        label=args.label,
        features=tuple(args.features.split(",")) if args.features else None,
        instance=args.instance,
        frame=args.frame,
    )
    bank = bank_from_csv(args.csv, schema)
    bank_write(bank, args.out)
    print(f"wrote {args.out}: n={bank.n} d={bank.dim} K={bank.num_classes}")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if _sniff(path) == "plan":
        head = read_plan(path).header()
        print(json.dumps(head, indent=2, sort_keys=True))
        return 0
    bank = bank_read(path)
    summary = bank.summary()
    summary["class_names"] = list(bank.class_names) if bank.class_names else None
    summary["per_class"] = [int((bank.labels == k).sum()) for k in range(bank.num_classes)]
    print(json.dumps(summary, indent=2))
    return 0


def cmd_plan(args) -> int:
    bank = bank_read(args.bank)
    plan = make_plan(
        bank,
        args.kind,
        args.seed,
        parse_amount(json.loads(args.base_init)),
        parse_amount(json.loads(args.eval_every)) if args.eval_every else None,
    )
    write_plan(plan, args.out)
    print(f"wrote {args.out}: {len(plan)} samples, eval points {list(plan.eval_points)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepslda", description="Streaming LDA benchmark harness")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help=f"output directory (default: config output_dir, ${OUT_ENV}, ./results)")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a feature bank or plan manifest")
    v.add_argument("path")
    v.add_argument("--bank", help="bank the plan was built for")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("synth", help="write a synthetic feature bank")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=("train", "test"), default="train")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("convert", help="convert a CSV of features into a bank")
    c.add_argument("--csv", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--label", default="label")
    c.add_argument("--features", help="comma-separated feature columns (default: all others)")
    c.add_argument("--instance")
    c.add_argument("--frame")
    c.set_defaults(func=cmd_convert)

    i = sub.add_parser("inspect", help="print a bank or plan summary")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)

    pl = sub.add_parser("plan", help="write a plan manifest for a bank")
    pl.add_argument("--bank", required=True)
    pl.add_argument("--kind", required=True, choices=("iid", "class_iid", "instance", "class_instance"))
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--base-init", default='{"samples": 0}')
    pl.add_argument("--eval-every")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plan)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DeepSldaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

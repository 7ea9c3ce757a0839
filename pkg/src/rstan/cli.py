"""Command-line driver: ``rstan <subcommand> ...``.

Exit codes: 0 success, 1 contract/config error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ContractError, NumericError

log = logging.getLogger("rstan")


def _config(args):
    from .harness import RunConfig

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in (getattr(args, "set", None) or [])}
    if overrides:
        d = cfg.to_dict()
        for k, v in overrides.items():
            if k not in d:
                raise ContractError(f"unknown config key {k!r}")
            try:
                d[k] = json.loads(v)
            except json.JSONDecodeError:
                d[k] = v
        cfg = RunConfig.from_dict(d)
    return cfg


def _kv(s: str):
    if "=" not in s:
        raise argparse.ArgumentTypeError(f"expected key=value, got {s!r}")
    return tuple(s.split("=", 1))


def cmd_gen_data(args) -> None:
    from . import synth

    cfg = synth.GeneratorConfig(seed=args.seed, n_subjects=args.subjects, clips_per_subject=args.clips,
                                n_frames=args.frames)
    if args.distribution == "B":
        cfg = synth.distribution_b(cfg)
    samples = synth.generate_dataset(cfg)
    path = synth.write_dataset(args.out, samples, cfg)
    print(f"wrote {len(samples)} samples; manifest {path}")


def cmd_train(args) -> None:
    from .harness import train

    cfg = _config(args)
    rec = train(cfg)
    print(f"run {rec.run_id}: {Path(cfg.run_dir) / rec.run_id}")
    for fold, m in sorted(rec.final.items()):
        print(f"fold {fold}: " + ", ".join(f"{k}={v:.4f}" for k, v in m.items()))


def cmd_eval(args) -> None:
    from .harness import evaluate

    m = evaluate(args.checkpoint, manifest=args.manifest, protocol=args.protocol, task=args.task)
    print(json.dumps(m, indent=1, sort_keys=True))


def cmd_gradcheck(args) -> None:
    from .checks import gradcheck_suite

    report = gradcheck_suite(instances=args.instances, tolerance=args.tolerance)
    bad = [e for e in report if not e["passed"]]
    for op in sorted({e["op"] for e in report}):
        errs = [e["error"] for e in report if e["op"] == op]
        ok = all(e["passed"] for e in report if e["op"] == op)
        print(f"{'PASS' if ok else 'FAIL'} {op:28s} n={len(errs):3d} max_rel_err={max(errs):.2e}")
    if args.out:
        import csv

        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["op", "seed", "error", "passed", "detail"], lineterminator="\n")
            w.writeheader()
            w.writerows(report)
    if bad:
        raise NumericError(f"{len(bad)} gradient checks exceeded {args.tolerance}")


def cmd_compare_inputs(args) -> None:
    from .harness import compare_input_structures

    cfg = _config(args)
    table = compare_input_structures(cfg, structures=tuple(args.structures.split(",")), out_csv=args.out)
    for row in table:
        print(f"{row['structure']:13s} fold {row['fold']} accuracy {row['accuracy']:.3f}")


def cmd_plot(args) -> None:
    from .plotting import plot_metrics

    paths = plot_metrics(args.csv, args.out)
    for p in paths:
        print(p)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rstan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset and manifest")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--subjects", type=int, default=20)
    g.add_argument("--clips", type=int, default=25)
    g.add_argument("--frames", type=int, default=128)
    g.add_argument("--distribution", choices=["A", "B"], default="A")
    g.set_defaults(func=cmd_gen_data)

    for name, func, helptext in (("train", cmd_train, "train a model under a protocol"),
                                 ("compare-inputs", cmd_compare_inputs, "STAN under several input structures")):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("--config", help="JSON run config")
        t.add_argument("--set", type=_kv, action="append", metavar="KEY=VALUE", help="override a config field")
        if name == "compare-inputs":
            t.add_argument("--out", default="input_structures.csv")
            t.add_argument("--structures", default="downsampled,random64,multisegment",
                           help="comma-separated sampling structures")
        t.set_defaults(func=func)

    e = sub.add_parser("eval", help="evaluate a fold checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--manifest")
    e.add_argument("--protocol")
    e.add_argument("--task")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference checks of every differentiable op")
    c.add_argument("--instances", type=int, default=20)
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.add_argument("--out", help="write the full report as CSV")
    c.set_defaults(func=cmd_gradcheck)

    pl = sub.add_parser("plot", help="render a metric CSV to SVG curves")
    pl.add_argument("csv")
    pl.add_argument("--out", default="plots")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

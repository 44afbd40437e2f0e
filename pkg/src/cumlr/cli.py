"""Command-line interface: ``cumlr {train,sweep,kappa,solve,repro}``.

Exit codes: 0 success, 2 configuration/usage error (including missing
dataset files), 3 divergence or no convergent learning rate.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from cumlr import __version__, csvio
from cumlr._backend import BACKEND
from cumlr.config import (apply_overrides, build_dataset, build_grid, build_template,
                          dump_yaml, from_dict, load_config, resolve, to_dict)
from cumlr.errors import CumlrError, MisuseError, NoConvergentRateError
from cumlr.repro import SCALES, SCENARIOS, run_scenario
from cumlr.schedule import KINDS, ScheduleShape
from cumlr.tuner import estimate_kappa, kappa_from_rate, predict_schedule_lr, refine, sweep, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3

log = logging.getLogger("cumlr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _config_args(p):
    p.add_argument("--config", "-c", help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("--out", "-o", default=".", help="output directory (default: current)")
    p.add_argument("--threads", type=int, default=1, help="parallel training runs (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cumlr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cumlr {__version__} ({BACKEND} kernels)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="one training run; writes curve.csv")
    _config_args(p)

    p = sub.add_parser("sweep", help="learning-rate sweep; writes sweep.csv")
    _config_args(p)

    p = sub.add_parser("kappa", help="kappa from a constant-rate optimum; appends to scaling.csv")
    _config_args(p)
    p.add_argument("--best-lr", type=float, help="skip the sweep and use this optimum")

    p = sub.add_parser("solve", help="initial rate for a schedule given kappa; appends to predict.csv")
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--shape", choices=KINDS, default="halving_decay")
    p.add_argument("--multipliers", type=float, nargs="+", help="per-epoch multipliers for --shape custom")
    p.add_argument("--epoch-size", "-N", type=int, required=True)
    p.add_argument("--epochs", "-E", type=int, required=True)
    p.add_argument("--out", "-o", default=".")

    p = sub.add_parser("repro", help="run a named reproduction scenario")
    p.add_argument("scenario", help=f"one of: {', '.join(SCENARIOS)}")
    p.add_argument("--scale", choices=SCALES, default="desk")
    p.add_argument("--out", "-o", default="repro_out")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--data-dir", help="MNIST directory for --scale full (default $CUMLR_DATA_DIR)")
    return parser


def _resolved_config(args):
    raw = load_config(args.config) if args.config else {}
    return resolve(from_dict(apply_overrides(raw, args.overrides)))


def _meta(cfg, **extra):
    return csvio.provenance(to_dict(cfg), seed=cfg.training.base_seed, **extra)


def cmd_train(args) -> int:
    cfg = _resolved_config(args)
    if args.print_config:
        print(dump_yaml(cfg), end="")
        return EXIT_OK
    data = build_dataset(cfg)
    result = train(build_template(cfg), data)
    rows = [(seen, lr, loss) for seen, loss, lr in result.loss_curve]
    path = csvio.write_csv(Path(args.out) / "curve.csv", "curve", rows, _meta(cfg, diverged=result.diverged))
    if result.diverged:
        print(f"diverged after {rows[-1][0] if rows else 0} examples; curve written to {path}")
        return EXIT_DIVERGED
    print(f"final_eval_loss={result.final_eval_loss:.6g} eval_accuracy={result.eval_accuracy:.4f} "
          f"curve={path}")
    return EXIT_OK


def _run_sweep(cfg, threads):
    data = build_dataset(cfg)
    result = sweep(build_template(cfg), build_grid(cfg), cfg.training.repeats, data, threads=threads)
    if cfg.sweep.refine:
        result = refine(result, cfg.sweep.zoom_points, dataset=data, threads=threads)
    return result


def cmd_sweep(args) -> int:
    cfg = _resolved_config(args)
    if args.print_config:
        print(dump_yaml(cfg), end="")
        return EXIT_OK
    result = _run_sweep(cfg, args.threads)
    rows = [(r.lr, r.mean_eval_loss, r.std_eval_loss, r.repeats, r.diverged_count) for r in result.records]
    path = csvio.write_csv(Path(args.out) / "sweep.csv", "sweep", rows, _meta(cfg, best_lr=result.best_lr))
    if result.best_lr is None:
        print(f"no convergent rate: all {len(rows)} grid points diverged ({path})")
        return EXIT_DIVERGED
    print(f"best_lr={result.best_lr!r} mean_eval_loss={result.best_record.mean_eval_loss:.6g} sweep={path}")
    return EXIT_OK


def cmd_kappa(args) -> int:
    cfg = _resolved_config(args)
    if args.print_config:
        print(dump_yaml(cfg), end="")
        return EXIT_OK
    if cfg.schedule.kind != "constant":
        raise MisuseError(f"kappa is measured under a constant schedule, config has {cfg.schedule.kind}")
    n, e = cfg.dataset.train_size, cfg.training.epochs
    if args.best_lr is not None:
        est = kappa_from_rate(args.best_lr, n, e, cfg.optimizer.kind)
    else:
        est = estimate_kappa(_run_sweep(cfg, args.threads))
    path = csvio.append_csv(Path(args.out) / "scaling.csv", "scaling",
                            [(est.total_data, e, n, est.best_lr, est.kappa)], _meta(cfg))
    print(f"kappa={est.kappa:.6g} best_lr={est.best_lr!r} train_size={n} epochs={e} "
          f"total_data={est.total_data} scaling={path}")
    return EXIT_OK


def cmd_solve(args) -> int:
    shape = ScheduleShape(args.shape, tuple(args.multipliers) if args.multipliers else None)
    eta0 = predict_schedule_lr(args.kappa, shape, args.epoch_size, args.epochs)
    meta = csvio.provenance({"kappa": args.kappa, "shape": shape.to_dict(),
                             "epoch_size": args.epoch_size, "epochs": args.epochs})
    path = csvio.append_csv(Path(args.out) / "predict.csv", "predict",
                            [(shape.kind, args.epochs, eta0, None, None)], meta)
    print(f"eta0={eta0:.6g} ({eta0!r}) shape={shape.kind} N={args.epoch_size} E={args.epochs} predict={path}")
    return EXIT_OK


def cmd_repro(args) -> int:
    if args.scenario not in SCENARIOS:
        print(f"unknown scenario {args.scenario!r}; valid ids: {', '.join(SCENARIOS)}", file=sys.stderr)
        return EXIT_USAGE
    report = run_scenario(args.scenario, args.scale, args.out, args.threads, args.data_dir)
    print(f"scenario {report.scenario} ({report.scale} scale)")
    for name, lr in report.best_lrs.items():
        print(f"  best_lr[{name}] = {lr!r}")
    for c in report.checks:
        print(f"  {c.line()}")
    for f in report.files:
        print(f"  wrote {f}")
    print("ALL PASS" if report.passed else "FAILED")
    return EXIT_OK if report.passed else 1


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "kappa": cmd_kappa, "solve": cmd_solve,
            "repro": cmd_repro}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"cumlr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"cumlr: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NoConvergentRateError as exc:
        print(f"cumlr: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CumlrError as exc:
        print(f"cumlr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

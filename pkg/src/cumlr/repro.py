"""Named reproduction scenarios with pass/fail thresholds.

Each scenario runs a set of learning-rate sweeps at either ``desk`` scale
(synthetic clusters, seconds to minutes) or ``full`` scale (MNIST with 30000
training images per epoch, tens of minutes or more), writes its CSVs into
``<out>/<scenario>/`` and checks the outcome against fixed bands.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from cumlr import csvio
from cumlr.config import (DatasetConfig, ModelConfig, OptimizerConfig, RunConfig, ScheduleConfig,
                          SweepConfig, TrainingConfig, build_dataset, build_grid, build_template,
                          resolve, to_dict)
from cumlr.errors import ConfigError
from cumlr.schedule import ScheduleShape
from cumlr.tuner import (SweepResult, kappa_from_rate, predict_schedule_lr, proportionality_report,
                         refine, sweep)

log = logging.getLogger(__name__)

SCALES = ("desk", "full")

# SGD: each doubling of total data should roughly halve the optimal rate.
SGD_SLOPE = (-1.35, -0.65)
SGD_RATIO = (0.33, 0.80)
# Adam is only loosely inverse-proportional; desk runs get a wider band.
ADAM_SLOPE = (-1.35, -0.5)
ADAM_RATIO = (0.33, 0.90)
ADAM_MNIST_E10 = (1.5e-4, 1.35e-3)
KAPPA_CV_MAX = 0.35
PREDICT_FACTOR = 2.0


@dataclass
class Check:
    name: str
    value: float
    lo: float | None = None
    hi: float | None = None

    @property
    def passed(self) -> bool:
        if self.value is None or math.isnan(self.value):
            return False
        return (self.lo is None or self.value >= self.lo) and (self.hi is None or self.value <= self.hi)

    def line(self) -> str:
        if self.lo is not None and self.hi is not None:
            band = f"in [{self.lo:.6g}, {self.hi:.6g}]"
        elif self.hi is not None:
            band = f"<= {self.hi:.6g}"
        else:
            band = f">= {self.lo:.6g}"
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name} = {self.value:.6g} (required {band})"


@dataclass
class ScenarioReport:
    scenario: str
    scale: str
    checks: list[Check] = field(default_factory=list)
    files: list[Path] = field(default_factory=list)
    best_lrs: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)


def _dataset_section(scale: str, data_dir) -> DatasetConfig:
    if scale == "desk":
        # seed picked once for the desk setup; see README "Desk-scale setup"
        return DatasetConfig(kind="synthetic", train_size=2048, num_classes=4, per_class_count=640,
                             feature_dim=16, cluster_separation=1.0, noise_scale=0.5, seed=1)
    return DatasetConfig(kind="mnist", path=str(data_dir) if data_dir else None, train_size=30000)


def _sweep_section(scale: str, optimizer: str) -> SweepConfig:
    # bounds come from the optimizer defaults in resolve()
    return SweepConfig(points_per_decade=4, refine=True, zoom_points=7)


class Runner:
    """Shared machinery: builds configs, runs and writes sweeps for one scenario."""

    def __init__(self, scenario: str, scale: str, out_dir, threads: int = 1, data_dir=None):
        if scale not in SCALES:
            raise ConfigError(f"scale must be one of {', '.join(SCALES)}, got {scale!r}")
        self.scenario = scenario
        self.scale = scale
        self.out = Path(out_dir) / scenario
        self.threads = threads
        self.data_dir = data_dir
        self.report = ScenarioReport(scenario, scale)
        self._dataset = None
        self._dataset_key = None

    def config(self, optimizer: str, epochs: int, train_size: int | None = None,
               shape: str = "constant") -> RunConfig:
        ds = _dataset_section(self.scale, self.data_dir)
        if train_size is not None:
            ds = dataclasses.replace(ds, train_size=train_size)
        sizes = [16, 32, 4] if self.scale == "desk" else [784, 256, 10]
        cfg = RunConfig(
            dataset=ds,
            model=ModelConfig(layer_sizes=sizes),
            optimizer=OptimizerConfig(kind=optimizer),
            schedule=ScheduleConfig(kind=shape, eta0=1e-3),
            training=TrainingConfig(epochs=epochs, batch_size=64, base_seed=0, repeats=3),
            sweep=_sweep_section(self.scale, optimizer),
        )
        return resolve(cfg)

    def dataset(self, cfg: RunConfig):
        # the full dataset does not depend on train_size; subsetting happens per run
        key = dataclasses.replace(cfg.dataset, train_size=0)
        if self._dataset is None or self._dataset_key != key:
            self._dataset = build_dataset(cfg)
            self._dataset_key = key
        return self._dataset

    def sweep(self, cfg: RunConfig, tag: str) -> SweepResult:
        data = self.dataset(cfg)
        template = build_template(cfg)
        result = sweep(template, build_grid(cfg), cfg.training.repeats, data, threads=self.threads)
        if cfg.sweep.refine:
            result = refine(result, cfg.sweep.zoom_points, dataset=data, threads=self.threads)
        rows = [(r.lr, r.mean_eval_loss, r.std_eval_loss, r.repeats, r.diverged_count)
                for r in result.records]
        path = csvio.write_csv(self.out / f"sweep_{tag}.csv", "sweep", rows,
                               csvio.provenance(to_dict(cfg), scenario=self.scenario, scale=self.scale,
                                                seed=cfg.training.base_seed, best_lr=result.best_lr))
        self.report.files.append(path)
        self.report.best_lrs[tag] = result.best_lr
        log.info("%s %s: best lr %s", self.scenario, tag, result.best_lr)
        return result

    def write(self, name: str, schema: str, rows, **meta) -> Path:
        path = csvio.write_csv(self.out / name, schema, rows,
                               csvio.provenance(None, scenario=self.scenario, scale=self.scale, **meta))
        self.report.files.append(path)
        return path

    def check(self, name, value, lo=None, hi=None) -> Check:
        c = Check(name, math.nan if value is None else float(value), lo, hi)
        self.report.checks.append(c)
        return c


def _scaling_rows(results: list[tuple[int, int, float | None]]):
    rows = []
    for n, e, lr in results:
        rows.append((n * e, e, n, lr, None if lr is None else kappa_from_rate(lr, n, e).kappa))
    return rows


def _constant_sweeps(r: Runner, optimizer: str, scales: list[tuple[int, int]]):
    out = []
    for n, e in scales:
        res = r.sweep(r.config(optimizer, e, train_size=n), f"N{n}_E{e}_constant")
        out.append((n, e, res.best_lr))
    r.write("scaling.csv", "scaling", _scaling_rows(out), optimizer=optimizer)
    return out


def _check_inverse(r: Runner, points, slope_band, ratio_band):
    usable = [(n * e, lr) for n, e, lr in points if lr is not None]
    if len(usable) < 2:
        r.check("loglog_slope", None, *slope_band)
        return
    rep = proportionality_report(usable)
    r.check("loglog_slope", rep.slope if rep.slope is not None else math.nan, *slope_band)
    if rep.median_ratio is not None:
        r.check("median_doubling_ratio", rep.median_ratio, *ratio_band)


def inverse_prop_sgd(r: Runner):
    epochs = [2, 4, 8, 16] if r.scale == "desk" else [5, 10]
    n = 2048 if r.scale == "desk" else 30000
    pts = _constant_sweeps(r, "sgd", [(n, e) for e in epochs])
    _check_inverse(r, pts, SGD_SLOPE, SGD_RATIO)


def inverse_prop_adam(r: Runner):
    if r.scale == "desk":
        pts = _constant_sweeps(r, "adam", [(2048, e) for e in (2, 4, 8, 16)])
        _check_inverse(r, pts, ADAM_SLOPE, ADAM_RATIO)
    else:
        (_, _, lr), = _constant_sweeps(r, "adam", [(30000, 10)])
        r.check("best_lr_N30000_E10", lr, *ADAM_MNIST_E10)


def data_epoch_equiv(r: Runner):
    if r.scale == "desk":
        opt, pairs = "sgd", [(1024, 8), (2048, 4)]
    else:
        opt, pairs = "adam", [(15000, 10), (30000, 5)]
    steps, lrs = [], []
    for n, e in pairs:
        res = r.sweep(r.config(opt, e, train_size=n), f"N{n}_E{e}_constant")
        steps.append(res.refine_step or 1.0)
        lrs.append(res.best_lr)
    r.write("scaling.csv", "scaling", _scaling_rows([(n, e, lr) for (n, e), lr in zip(pairs, lrs)]),
            optimizer=opt)
    if None in lrs:
        r.check("best_lr_ratio", None, 1.0, max(steps))
        return
    # one refined-grid step, with slack for rounding in the grid construction
    r.check("best_lr_ratio", max(lrs) / min(lrs), 1.0, max(steps) * (1 + 1e-9))


def kappa_constancy(r: Runner):
    if r.scale == "desk":
        opt, n, epochs = "sgd", 2048, [4, 8, 16]
    else:
        opt, n, epochs = "adam", 30000, [5, 10]
    pts = _constant_sweeps(r, opt, [(n, e) for e in epochs])
    usable = [(n * e, lr) for n, e, lr in pts if lr is not None]
    cv = proportionality_report(usable).kappa_cv if len(usable) >= 2 else None
    r.check("kappa_cv", cv, 0.0, KAPPA_CV_MAX)


def _predict(r: Runner, kind: str):
    if r.scale == "desk":
        opt, n, e_kappa, epochs = "sgd", 2048, 4, [4, 8]
    else:
        opt, n, e_kappa, epochs = "adam", 30000, 10, [5, 10]
    base = r.sweep(r.config(opt, e_kappa, train_size=n), f"N{n}_E{e_kappa}_constant")
    r.write("scaling.csv", "scaling", _scaling_rows([(n, e_kappa, base.best_lr)]), optimizer=opt)
    if base.best_lr is None:
        r.check("kappa_measured", None, 0.0)
        return
    kappa = kappa_from_rate(base.best_lr, n, e_kappa, opt)
    rows = []
    for e in epochs:
        predicted = predict_schedule_lr(kappa, ScheduleShape(kind), n, e)
        swept = r.sweep(r.config(opt, e, train_size=n, shape=kind), f"N{n}_E{e}_{kind}").best_lr
        ratio = None if swept is None else swept / predicted
        rows.append((kind, e, predicted, swept, ratio))
        r.check(f"swept_over_predicted_E{e}", ratio, 1 / PREDICT_FACTOR, PREDICT_FACTOR)
    r.write("predict.csv", "predict", rows, optimizer=opt, kappa=kappa.kappa,
            kappa_measured_at={"train_size": n, "epochs": e_kappa})


def decay_predict(r: Runner):
    _predict(r, "halving_decay")


def cyclic_predict(r: Runner):
    _predict(r, "cyclical_triple")


SCENARIOS: dict[str, Callable[[Runner], None]] = {
    "inverse_prop_sgd": inverse_prop_sgd,
    "inverse_prop_adam": inverse_prop_adam,
    "data_epoch_equiv": data_epoch_equiv,
    "kappa_constancy": kappa_constancy,
    "decay_predict": decay_predict,
    "cyclic_predict": cyclic_predict,
}


def run_scenario(name: str, scale: str = "desk", out_dir=".", threads: int = 1,
                 data_dir=None) -> ScenarioReport:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; valid: {', '.join(SCENARIOS)}")
    runner = Runner(name, scale, out_dir, threads, data_dir)
    SCENARIOS[name](runner)
    return runner.report

"""Seeded training runs, learning-rate sweeps, and kappa-based rate prediction.

The workflow: sweep a constant rate at a cheap scale, take the optimum
``eta*``, form ``kappa = eta* * N * E``, then solve for the rate at any other
total data or schedule shape.
"""

from __future__ import annotations

import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from cumlr._backend import kernels
from cumlr.data import Dataset, take_subset
from cumlr.errors import (ConfigError, InsufficientDataError, MisuseError,
                          NoConvergentRateError)
from cumlr.nn import evaluate_flat, init_mlp, pack, params_from_flat, validate_layer_sizes
from cumlr.optim import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON
from cumlr.schedule import CONSTANT, Schedule, ScheduleShape, eta_at, solve_eta0

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")

# batch cross-entropy above this many nats counts as divergence even while finite
DIVERGENCE_LOSS = 1e6


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "sgd"
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.kind!r}; choose from {', '.join(OPTIMIZERS)}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.epsilon > 0.0):
            raise ConfigError("Adam needs 0 <= beta1, beta2 < 1 and epsilon > 0")


@dataclass(frozen=True)
class TrainRun:
    train_size: int
    epochs: int
    layer_sizes: tuple[int, ...]
    eta0: float = 1e-3
    shape: ScheduleShape = CONSTANT
    optimizer: OptimizerSpec = OptimizerSpec()
    batch_size: int = 64
    seed: int = 0
    dataset_id: str = "synthetic"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", validate_layer_sizes(self.layer_sizes))
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError(f"epochs must be a positive integer, got {self.epochs}")
        if int(self.train_size) != self.train_size or self.train_size < 1:
            raise ConfigError(f"train_size must be a positive integer, got {self.train_size}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError(f"batch_size must be a positive integer, got {self.batch_size}")

    @property
    def total_data(self) -> int:
        return self.train_size * self.epochs

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.eta0, self.shape, self.train_size, self.epochs)


@dataclass
class TrainResult:
    final_eval_loss: float
    eval_accuracy: float
    loss_curve: list[tuple[int, float, float]]   # (examples_seen, train_loss, lr)
    diverged: bool
    params: object = field(default=None, repr=False)


def train(run: TrainRun, dataset: Dataset) -> TrainResult:
    """Train from scratch and evaluate on the held-out split.

    Each epoch reshuffles with an RNG seeded by ``(run.seed, epoch)``; the
    last partial minibatch is kept. A non-finite batch loss, or one above
    ``DIVERGENCE_LOSS``, ends the run early with ``final_eval_loss = inf``.
    """
    if run.train_size > dataset.train_size:
        raise ConfigError(f"train_size {run.train_size} exceeds the {dataset.train_size} available examples")
    sizes = run.layer_sizes
    if sizes[0] != dataset.feature_dim or sizes[-1] != dataset.num_classes:
        raise ConfigError(
            f"layer sizes {list(sizes)} do not fit data with {dataset.feature_dim} features "
            f"and {dataset.num_classes} classes")
    data = take_subset(dataset, run.train_size)
    schedule = run.schedule
    X, y = data.train_inputs, data.train_labels
    N, bs = run.train_size, run.batch_size
    theta = pack(init_mlp(sizes, run.seed))
    use_adam = run.optimizer.kind == "adam"
    m = np.zeros_like(theta) if use_adam else np.zeros(0)
    v = np.zeros_like(theta) if use_adam else np.zeros(0)
    t = 0
    opt = run.optimizer
    curve = []
    seen = 0
    diverged = False
    for epoch in range(run.epochs):
        lr = eta_at(schedule, epoch * N)
        perm = np.random.default_rng([run.seed, epoch]).permutation(N).astype(np.int64)
        losses, t = kernels.run_epoch(theta, list(sizes), X, y, perm, bs, lr, use_adam, m, v, t,
                                      opt.beta1, opt.beta2, opt.epsilon, DIVERGENCE_LOSS)
        for k, loss in enumerate(losses.tolist()):
            seen += min(bs, N - k * bs)
            curve.append((seen, loss, lr))
        if losses.size and not losses[-1] <= DIVERGENCE_LOSS:
            diverged = True
            break
    if diverged:
        return TrainResult(math.inf, math.nan, curve, True)
    loss, acc = evaluate_flat(theta, sizes, dataset.eval_inputs, dataset.eval_labels)
    if not math.isfinite(loss):
        return TrainResult(math.inf, math.nan, curve, True)
    return TrainResult(loss, acc, curve, False, params_from_flat(theta, sizes, run.seed))


def make_grid(lo: float, hi: float, points_per_decade: int) -> list[float]:
    """Log-uniform grid from ``lo`` to ``hi`` inclusive, at least ``points_per_decade`` per decade."""
    if not (0 < lo < hi) or not (math.isfinite(lo) and math.isfinite(hi)):
        raise ConfigError(f"grid needs 0 < lo < hi, got lo={lo}, hi={hi}")
    if int(points_per_decade) != points_per_decade or points_per_decade < 1:
        raise ConfigError(f"points_per_decade must be a positive integer, got {points_per_decade}")
    decades = math.log10(hi) - math.log10(lo)
    return _log_grid(lo, hi, max(1, math.ceil(decades * points_per_decade - 1e-9)))


def geometric_grid(lo: float, hi: float, points: int) -> list[float]:
    if int(points) != points or points < 2:
        raise ConfigError(f"a refinement grid needs at least 2 points, got {points}")
    return _log_grid(lo, hi, int(points) - 1)


def _log_grid(lo, hi, steps):
    a, b = math.log10(lo), math.log10(hi)
    grid = [10.0 ** (a + (b - a) * k / steps) for k in range(steps + 1)]
    grid[0], grid[-1] = float(lo), float(hi)
    return grid


@dataclass(frozen=True)
class SweepRecord:
    lr: float
    mean_eval_loss: float
    std_eval_loss: float
    repeats: int
    diverged_count: int
    losses: tuple[float, ...]


@dataclass
class SweepResult:
    grid: list[float]
    records: list[SweepRecord]
    repeats: int
    best_lr: float | None
    template: TrainRun
    refine_step: float | None = None     # ratio between adjacent refined points

    @property
    def refined(self) -> bool:
        return self.refine_step is not None

    @property
    def best_record(self) -> SweepRecord | None:
        for r in self.records:
            if r.lr == self.best_lr:
                return r
        return None

    def require_best(self) -> float:
        if self.best_lr is None:
            raise NoConvergentRateError("no convergent rate: every grid point diverged")
        return self.best_lr


def summarize(lr: float, losses: Sequence[float]) -> SweepRecord:
    """Aggregate repeat losses; NaN counts as divergence, any divergence makes the mean infinite."""
    clean = [math.inf if (math.isnan(x) or math.isinf(x)) else float(x) for x in losses]
    diverged = sum(1 for x in clean if math.isinf(x))
    if diverged:
        mean = std = math.inf
    else:
        mean = math.fsum(clean) / len(clean)
        std = statistics.stdev(clean) if len(clean) > 1 else 0.0
    return SweepRecord(float(lr), mean, std, len(clean), diverged, tuple(clean))


def select_best(records: Sequence[SweepRecord]) -> float | None:
    """Grid rate with the lowest mean loss; ties go to the smaller rate."""
    best = None
    for r in sorted(records, key=lambda r: r.lr):
        if math.isinf(r.mean_eval_loss):
            continue
        if best is None or r.mean_eval_loss < best.mean_eval_loss:
            best = r
    return None if best is None else best.lr


def _runner_for(dataset, runner):
    if runner is not None:
        return runner
    if dataset is None:
        raise ConfigError("sweep needs either a dataset or a runner")
    return lambda run: train(run, dataset).final_eval_loss


def _run_points(template, rates, repeats, run_fn, threads) -> list[SweepRecord]:
    if int(repeats) != repeats or repeats < 1:
        raise ConfigError(f"repeats must be a positive integer, got {repeats}")
    jobs = [replace(template, eta0=float(lr), seed=template.seed + i)
            for lr in rates for i in range(repeats)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            losses = list(pool.map(run_fn, jobs))
    else:
        losses = [run_fn(j) for j in jobs]
    records = []
    for k, lr in enumerate(rates):
        rec = summarize(lr, losses[k * repeats:(k + 1) * repeats])
        log.debug("lr=%.6g mean=%.6g diverged=%d", lr, rec.mean_eval_loss, rec.diverged_count)
        records.append(rec)
    return records


def sweep(template: TrainRun, grid: Sequence[float], repeats: int = 3,
          dataset: Dataset | None = None, *,
          runner: Callable[[TrainRun], float] | None = None, threads: int = 1) -> SweepResult:
    """Train ``repeats`` seeded runs per grid rate and pick the lowest mean eval loss.

    Repeat ``i`` uses seed ``template.seed + i``. ``runner`` (run -> final
    eval loss) replaces real training, e.g. for tests. Results do not depend
    on ``threads``.
    """
    rates = sorted(float(g) for g in grid)
    if not rates:
        raise ConfigError("empty learning-rate grid")
    records = _run_points(template, rates, repeats, _runner_for(dataset, runner), threads)
    return SweepResult(rates, records, repeats, select_best(records), template)


def refine_bounds(grid: Sequence[float], best: float) -> tuple[float, float]:
    grid = sorted(grid)
    i = grid.index(best)
    if len(grid) == 1:
        return best / 2.0, best * 2.0
    lo = grid[i - 1] if i > 0 else grid[0] / 2.0
    hi = grid[i + 1] if i < len(grid) - 1 else grid[-1] * 2.0
    return lo, hi


def refine(result: SweepResult, zoom_points: int = 7, repeats: int | None = None,
           dataset: Dataset | None = None, *,
           runner: Callable[[TrainRun], float] | None = None, threads: int = 1) -> SweepResult:
    """One zoom level around the optimum, merged with the original sweep.

    The zoom grid spans the optimum's two grid neighbours, or reaches one
    octave past the grid when the optimum sits on its edge. Points already
    swept are reused, not re-run.
    """
    if result.refined:
        raise MisuseError("sweep has already been refined once")
    if result.best_lr is None:
        return result
    repeats = result.repeats if repeats is None else repeats
    lo, hi = refine_bounds(result.grid, result.best_lr)
    zoom = geometric_grid(lo, hi, zoom_points)
    fresh = [z for z in zoom if not any(math.isclose(z, g, rel_tol=1e-9) for g in result.grid)]
    new = _run_points(result.template, fresh, repeats, _runner_for(dataset, runner), threads)
    records = sorted(list(result.records) + new, key=lambda r: r.lr)
    step = (hi / lo) ** (1.0 / (zoom_points - 1))
    return SweepResult([r.lr for r in records], records, result.repeats, select_best(records),
                       result.template, refine_step=step)


@dataclass(frozen=True)
class KappaEstimate:
    kappa: float
    train_size: int
    epochs: int
    optimizer: str
    best_lr: float

    @property
    def total_data(self) -> int:
        return self.train_size * self.epochs


def kappa_from_rate(best_lr: float, train_size: int, epochs: int, optimizer: str = "sgd") -> KappaEstimate:
    if not best_lr > 0:
        raise ConfigError(f"best learning rate must be positive, got {best_lr}")
    return KappaEstimate(best_lr * (train_size * epochs), int(train_size), int(epochs), optimizer, float(best_lr))


def estimate_kappa(result: SweepResult) -> KappaEstimate:
    """``kappa = eta* * N * E`` from a constant-rate sweep."""
    t = result.template
    if t.shape.kind != "constant":
        raise MisuseError(f"kappa is measured from a constant-rate sweep, not {t.shape.kind}")
    return kappa_from_rate(result.require_best(), t.train_size, t.epochs, t.optimizer.kind)


def predict_constant_lr(kappa: KappaEstimate | float, total_data: int) -> float:
    """Constant rate for ``total_data`` examples: ``kappa / D``."""
    if total_data < 1:
        raise ConfigError(f"total data must be at least 1, got {total_data}")
    if isinstance(kappa, KappaEstimate):
        # best_lr * D_measured / D, which is exact at the measurement scale
        return kappa.best_lr * (kappa.total_data / total_data)
    return float(kappa) / total_data


def predict_schedule_lr(kappa: KappaEstimate | float, shape: ScheduleShape, epoch_size: int, epochs: int) -> float:
    k = kappa.kappa if isinstance(kappa, KappaEstimate) else float(kappa)
    return solve_eta0(k, shape, epoch_size, epochs)


@dataclass
class ProportionalityReport:
    scales: list[float]
    best_lrs: list[float]
    slope: float | None             # d log(eta*) / d log(scale); None when degenerate
    intercept: float | None
    degenerate: bool
    ratios: list[tuple[float, float, float]]    # (scale, 2*scale, eta*(2s)/eta*(s))
    kappas: list[float]
    kappa_cv: float

    @property
    def median_ratio(self) -> float | None:
        return statistics.median(r for _, _, r in self.ratios) if self.ratios else None


def proportionality_report(points: Sequence[tuple[float, float]]) -> ProportionalityReport:
    """Check ``eta* ~ 1/scale`` over ``(scale, eta*)`` points.

    ``scale`` is total data or epoch count. Reports the log-log least-squares
    slope, the ratio at every available doubling, and the coefficient of
    variation (sample std / mean) of ``eta* * scale``.
    """
    if len(points) < 2:
        raise InsufficientDataError(f"need at least 2 points, got {len(points)}")
    scales = [float(s) for s, _ in points]
    lrs = [float(r) for _, r in points]
    if any(s <= 0 for s in scales) or any(not r > 0 for r in lrs):
        raise ConfigError("scales and learning rates must be positive")
    lx, ly = np.log(scales), np.log(lrs)
    degenerate = bool(np.ptp(lx) == 0.0)
    if degenerate:
        slope = intercept = None
    else:
        slope, intercept = (float(c) for c in np.polyfit(lx, ly, 1))
    by_scale = {}
    for s, r in zip(scales, lrs):
        by_scale.setdefault(s, r)
    ratios = [(s, 2 * s, by_scale[2 * s] / r) for s, r in sorted(by_scale.items()) if 2 * s in by_scale]
    kappas = [s * r for s, r in zip(scales, lrs)]
    cv = statistics.stdev(kappas) / statistics.fmean(kappas)
    return ProportionalityReport(scales, lrs, slope, intercept, degenerate, ratios, kappas, cv)

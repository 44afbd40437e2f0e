"""Per-epoch learning-rate schedules and the cumulative learning quantity.

A schedule is ``eta(x) = eta0 * m(floor(x / N))`` where ``x`` counts training
examples seen, ``N`` is the epoch size and ``m`` a per-epoch multiplier with
``m(0) = 1``. Its integral over ``[0, N*E)`` is

    kappa = eta0 * N * sum(m(e) for e in range(E))

which is linear in ``eta0``, so it can be inverted exactly for a target
kappa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from cumlr.errors import ConfigError, DomainError, SingularShapeError

KINDS = ("constant", "halving_decay", "cyclical_triple", "custom")


@dataclass(frozen=True)
class ScheduleShape:
    kind: str = "constant"
    multipliers: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.kind == "custom":
            if not self.multipliers:
                raise ConfigError("custom schedules need a non-empty multiplier list")
            mult = tuple(float(m) for m in self.multipliers)
            if any(not math.isfinite(m) or m < 0 for m in mult):
                raise ConfigError("schedule multipliers must be finite and non-negative")
            if not any(mult):
                raise SingularShapeError("custom schedule multipliers are all zero")
            if mult[0] != 1.0:
                raise ConfigError(f"the epoch-0 multiplier must be 1, got {mult[0]}")
            object.__setattr__(self, "multipliers", mult)
        elif self.multipliers is not None:
            raise ConfigError(f"{self.kind} schedules take no explicit multipliers")

    def multiplier(self, epoch: int) -> float:
        if epoch < 0:
            raise DomainError(f"epoch index must be non-negative, got {epoch}")
        if self.kind == "constant":
            return 1.0
        if self.kind == "halving_decay":
            return math.ldexp(1.0, -epoch)
        if self.kind == "cyclical_triple":
            # even 0-based epochs run at eta0, odd ones at 3*eta0
            return 3.0 if epoch % 2 else 1.0
        if epoch >= len(self.multipliers):
            raise DomainError(f"custom schedule defines {len(self.multipliers)} epochs, asked for epoch {epoch}")
        return self.multipliers[epoch]

    def multipliers_for(self, epochs: int) -> list[float]:
        return [self.multiplier(e) for e in range(epochs)]

    def total(self, epochs: int) -> float:
        """``sum(m(e) for e < epochs)``."""
        return math.fsum(self.multipliers_for(epochs))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.multipliers is not None:
            d["multipliers"] = list(self.multipliers)
        return d


CONSTANT = ScheduleShape("constant")
HALVING_DECAY = ScheduleShape("halving_decay")
CYCLICAL_TRIPLE = ScheduleShape("cyclical_triple")


def shape(kind: str, multipliers: Sequence[float] | None = None) -> ScheduleShape:
    return ScheduleShape(kind, tuple(multipliers) if multipliers is not None else None)


def _check_scale(epoch_size, epochs):
    if int(epoch_size) != epoch_size or epoch_size < 1:
        raise ConfigError(f"epoch size must be a positive integer, got {epoch_size}")
    if int(epochs) != epochs or epochs < 1:
        raise ConfigError(f"epoch count must be a positive integer, got {epochs}")


@dataclass(frozen=True)
class Schedule:
    eta0: float
    shape: ScheduleShape
    epoch_size: int
    epochs: int

    def __post_init__(self):
        if not (self.eta0 > 0 and math.isfinite(self.eta0)):
            raise ConfigError(f"initial learning rate must be positive, got {self.eta0}")
        _check_scale(self.epoch_size, self.epochs)
        if self.shape.kind == "custom" and len(self.shape.multipliers) < self.epochs:
            raise ConfigError(
                f"custom schedule defines {len(self.shape.multipliers)} epochs but {self.epochs} are trained")

    @property
    def total_data(self) -> int:
        return self.epoch_size * self.epochs

    def epoch_rate(self, epoch: int) -> float:
        return self.eta0 * self.shape.multiplier(epoch)


@dataclass(frozen=True)
class KappaValue:
    kappa: float
    total_data: int
    source: str = "analytic"

    def __post_init__(self):
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ConfigError(f"kappa must be positive and finite, got {self.kappa}")
        if self.total_data < 1:
            raise ConfigError(f"total data must be at least 1, got {self.total_data}")


def eta_at(schedule: Schedule, x: int) -> float:
    """Learning rate in force after ``x`` training examples."""
    if not 0 <= x < schedule.total_data:
        raise DomainError(f"x={x} outside [0, {schedule.total_data})")
    return schedule.epoch_rate(int(x // schedule.epoch_size))


def kappa_analytic(schedule: Schedule) -> KappaValue:
    k = schedule.eta0 * schedule.epoch_size * schedule.shape.total(schedule.epochs)
    return KappaValue(k, schedule.total_data, "analytic")


def kappa_numeric(schedule: Schedule, step_size: int) -> KappaValue:
    """Left Riemann sum with one node per optimizer update.

    Updates happen every ``step_size`` examples across the whole run; each
    contributes the rate in force where it starts times the examples it
    covers (the final one may be short).
    """
    if int(step_size) != step_size or step_size < 1:
        raise ConfigError(f"step size must be a positive integer, got {step_size}")
    total = schedule.total_data
    parts = []
    for x in range(0, total, step_size):
        parts.append(eta_at(schedule, x) * min(step_size, total - x))
    return KappaValue(math.fsum(parts), total, f"numeric(step_size={step_size})")


def solve_eta0(kappa: KappaValue | float, shape: ScheduleShape, epoch_size: int, epochs: int) -> float:
    """Initial rate whose schedule integrates to ``kappa`` over ``epochs`` epochs of ``epoch_size``."""
    k = kappa.kappa if isinstance(kappa, KappaValue) else float(kappa)
    if not (k > 0 and math.isfinite(k)):
        raise ConfigError(f"kappa must be positive and finite, got {k}")
    _check_scale(epoch_size, epochs)
    s = shape.total(epochs)
    if s <= 0.0:
        raise SingularShapeError(f"{shape.kind} schedule multipliers sum to zero over {epochs} epochs")
    return k / (epoch_size * s)

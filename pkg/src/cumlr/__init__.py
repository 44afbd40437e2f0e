"""Learning-rate tuning with the cumulative learning constant.

Find the optimal constant learning rate at a small scale, turn it into
``kappa = eta * N * E``, and solve for the optimal rate at larger data
scales or under decaying and cyclical schedules.
"""

__version__ = "0.1.0"

from cumlr._backend import BACKEND  # noqa: E402
from cumlr.data import SyntheticSpec, generate_synthetic, load_mnist  # noqa: E402
from cumlr.schedule import (  # noqa: E402
    CONSTANT, CYCLICAL_TRIPLE, HALVING_DECAY, KappaValue, Schedule, ScheduleShape,
    eta_at, kappa_analytic, kappa_numeric, solve_eta0,
)
from cumlr.tuner import (  # noqa: E402
    KappaEstimate, OptimizerSpec, SweepResult, TrainRun, estimate_kappa, kappa_from_rate, make_grid,
    predict_constant_lr, predict_schedule_lr, proportionality_report, refine, sweep, train,
)

__all__ = [
    "BACKEND", "CONSTANT", "CYCLICAL_TRIPLE", "HALVING_DECAY", "KappaEstimate", "KappaValue",
    "OptimizerSpec", "Schedule", "ScheduleShape", "SweepResult", "SyntheticSpec", "TrainRun",
    "estimate_kappa", "eta_at", "generate_synthetic", "kappa_analytic", "kappa_from_rate",
    "kappa_numeric", "load_mnist", "make_grid", "predict_constant_lr",
    "predict_schedule_lr", "proportionality_report", "refine", "solve_eta0", "sweep", "train",
]

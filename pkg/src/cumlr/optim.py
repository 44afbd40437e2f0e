"""SGD and Adam update rules, plus a descent-lemma checker on quadratics.

The step functions here are pure: they return new parameter (and state)
objects. The training loop uses the in-place kernels directly; both routes
share the same arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cumlr._backend import kernels
from cumlr.errors import ConfigError, DivergenceError, ShapeError
from cumlr.nn import GradientSet, MlpParams, pack, params_from_flat

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.epsilon <= 0.0:
            raise ConfigError(f"Adam epsilon must be positive, got {self.epsilon}")
        if self.t < 0:
            raise ConfigError("Adam step count cannot be negative")
        if self.m.shape != self.v.shape:
            raise ShapeError("Adam moment buffers differ in shape")
        if self.t == 0 and (self.m.any() or self.v.any()):
            raise ConfigError("Adam moments must be zero before the first step")

    @classmethod
    def zeros(cls, params: MlpParams, beta1=ADAM_BETA1, beta2=ADAM_BETA2,
              epsilon=ADAM_EPSILON) -> "AdamState":
        n = params.num_params
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, epsilon)

    def moments(self, layer_sizes):
        """First and second moments reshaped like the parameters."""
        return (params_from_flat(self.m, layer_sizes), params_from_flat(self.v, layer_sizes))


def _flat_grad(params: MlpParams, grads: GradientSet) -> np.ndarray:
    if grads.layer_sizes != params.layer_sizes:
        raise ShapeError(f"gradient layout {grads.layer_sizes} != parameter layout {params.layer_sizes}")
    g = pack(grads)
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient entries")
    return g


def _check_eta(eta):
    if not eta > 0.0:
        raise ConfigError(f"learning rate must be positive, got {eta}")


def sgd_step(params: MlpParams, grads: GradientSet, eta: float) -> MlpParams:
    """``p - eta * g`` for every parameter."""
    _check_eta(eta)
    g = _flat_grad(params, grads)
    theta = pack(params)
    kernels.sgd_update(theta, g, float(eta))
    return params_from_flat(theta, params.layer_sizes, params.init_seed)


def adam_step(params: MlpParams, grads: GradientSet, state: AdamState,
              eta: float) -> tuple[MlpParams, AdamState]:
    """Adam with bias correction; ``state.t`` advances by one."""
    _check_eta(eta)
    g = _flat_grad(params, grads)
    if state.m.shape != g.shape:
        raise ShapeError(f"Adam state has {state.m.shape[0]} entries, parameters have {g.shape[0]}")
    theta = pack(params)
    m, v = state.m.copy(), state.v.copy()
    t = state.t + 1
    kernels.adam_update(theta, g, m, v, float(eta), state.beta1, state.beta2, state.epsilon, t)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.epsilon)
    return params_from_flat(theta, params.layer_sizes, params.init_seed), new_state


# values this small are already subnormal and carry no relative precision
_SUBNORMAL_SLACK = 1e-300


@dataclass
class QuadraticProblem:
    """``f(x) = 1/2 * sum(curvature_i * x_i**2)``, smooth with ``L = max(curvature)``."""

    curvature: np.ndarray
    point: np.ndarray

    def __post_init__(self):
        self.curvature = np.asarray(self.curvature, dtype=np.float64)
        self.point = np.asarray(self.point, dtype=np.float64)
        if self.curvature.ndim != 1 or self.curvature.size == 0:
            raise ConfigError("curvature must be a non-empty vector")
        if np.any(self.curvature <= 0):
            raise ConfigError("curvatures must be positive")
        if self.point.shape != self.curvature.shape:
            raise ShapeError("point and curvature differ in dimension")

    @property
    def dimension(self) -> int:
        return self.curvature.size

    @property
    def smoothness(self) -> float:
        return float(self.curvature.max())

    def value(self, x) -> float:
        return 0.5 * float(np.dot(self.curvature, x * x))

    def gradient(self, x) -> np.ndarray:
        return self.curvature * x


@dataclass
class DescentStep:
    step: int
    f_before: float
    f_after: float
    bound: float          # f(x_t) - eta*|g|^2 + (L/2) eta^2 |g|^2
    margin: float         # bound - f_after
    tolerance: float = 0.0

    @property
    def holds(self) -> bool:
        return self.margin >= -self.tolerance


@dataclass
class DescentReport:
    eta: float
    smoothness: float
    steps: list[DescentStep] = field(default_factory=list)

    @property
    def all_hold(self) -> bool:
        return all(s.holds for s in self.steps)

    @property
    def violations(self) -> list[int]:
        return [s.step for s in self.steps if not s.holds]

    @property
    def nonincreasing(self) -> bool:
        return all(s.f_after <= s.f_before for s in self.steps)

    @property
    def losses(self) -> list[float]:
        if not self.steps:
            return []
        return [self.steps[0].f_before] + [s.f_after for s in self.steps]


def check_descent_lemma(problem: QuadraticProblem, eta: float, steps: int,
                        rtol: float = 1e-12) -> DescentReport:
    """Run full-batch gradient descent and record the one-step smoothness bound.

    For a quadratic the bound is tight along the top-curvature direction, so
    the margin is compared after allowing ``rtol`` of rounding slack relative
    to the size of the terms, plus an absolute floor for subnormal values.
    """
    _check_eta(eta)
    L = problem.smoothness
    x = problem.point.copy()
    report = DescentReport(eta=eta, smoothness=L)
    for t in range(steps):
        g = problem.gradient(x)
        gn2 = float(np.dot(g, g))
        f0 = problem.value(x)
        x = x - eta * g
        f1 = problem.value(x)
        quad = 0.5 * L * eta * eta * gn2
        bound = f0 - eta * gn2 + quad
        slack = rtol * (abs(f0) + eta * gn2 + quad + abs(f1)) + _SUBNORMAL_SLACK
        report.steps.append(DescentStep(t, f0, f1, bound, bound - f1, slack))
    return report

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cumlr.errors import ConfigError, InsufficientDataError, MisuseError, NoConvergentRateError
from cumlr.nn import pack
from cumlr.schedule import CONSTANT, CYCLICAL_TRIPLE, HALVING_DECAY, Schedule, kappa_analytic
from cumlr.tuner import (DIVERGENCE_LOSS, OptimizerSpec, TrainRun, estimate_kappa,
                         geometric_grid, kappa_from_rate, make_grid, predict_constant_lr,
                         predict_schedule_lr, proportionality_report, refine, refine_bounds, summarize,
                         sweep, train)

DESK = TrainRun(2048, 2, (16, 32, 4), eta0=0.1)


def mocked(table):
    """Runner returning a fixed loss per learning rate (seed ignored unless the value is callable)."""
    def run(r):
        v = table[r.eta0]
        return v(r.seed) if callable(v) else v
    return run


# ---------------------------------------------------------------- train

def test_epochs_zero_rejected():
    with pytest.raises(ConfigError):
        TrainRun(100, 0, (16, 4))


def test_single_epoch_constant_applies_eta0_everywhere(desk_data):
    res = train(TrainRun(300, 1, (16, 8, 4), eta0=0.037, batch_size=64), desk_data)
    assert {lr for _, _, lr in res.loss_curve} == {0.037}
    assert [s for s, _, _ in res.loss_curve] == [64, 128, 192, 256, 300]


def test_train_is_bitwise_deterministic(backend, desk_data):
    run = TrainRun(512, 3, (16, 32, 4), eta0=0.2, seed=5)
    a, b = train(run, desk_data), train(run, desk_data)
    assert a.loss_curve == b.loss_curve
    assert a.final_eval_loss == b.final_eval_loss
    assert pack(a.params).tobytes() == pack(b.params).tobytes()


def test_train_adam_deterministic(backend, desk_data):
    run = TrainRun(512, 2, (16, 32, 4), eta0=3e-3, optimizer=OptimizerSpec("adam"), seed=1)
    assert train(run, desk_data).loss_curve == train(run, desk_data).loss_curve


def test_backends_train_to_the_same_loss(desk_data, monkeypatch):
    from cumlr import _backend
    import cumlr.tuner
    if "cython" not in _backend.available():
        pytest.skip("compiled kernels not built")
    run = TrainRun(1024, 4, (16, 32, 4), eta0=0.3)
    out = []
    for name in ("python", "cython"):
        monkeypatch.setattr(cumlr.tuner, "kernels", _backend.load(name))
        out.append(train(run, desk_data).final_eval_loss)
    assert out[0] == pytest.approx(out[1], rel=1e-10)


def test_tiny_two_class_run_learns(tiny_two_class):
    assert tiny_two_class.train_size == 256
    res = train(TrainRun(256, 4, (8, 32, 2), eta0=0.1), tiny_two_class)
    assert not res.diverged
    assert res.final_eval_loss < math.log(2)
    assert res.eval_accuracy > 0.5


def test_curve_follows_halving_schedule(desk_data):
    res = train(TrainRun(256, 3, (16, 8, 4), eta0=0.4, shape=HALVING_DECAY, batch_size=100), desk_data)
    sched = {}
    for seen, _, lr in res.loss_curve:
        sched.setdefault(lr, []).append(seen)
    assert sorted(sched) == [0.1, 0.2, 0.4]
    assert sched[0.4] == [100, 200, 256]
    # examples-weighted sum of the rates actually applied equals the analytic kappa
    prev, total = 0, 0.0
    for seen, _, lr in res.loss_curve:
        total += lr * (seen - prev)
        prev = seen
    assert total == pytest.approx(kappa_analytic(Schedule(0.4, HALVING_DECAY, 256, 3)).kappa, rel=1e-14)


def test_train_divergence_is_contained(desk_data):
    res = train(TrainRun(2048, 4, (16, 32, 4), eta0=100.0), desk_data)
    assert res.diverged
    assert res.final_eval_loss == math.inf
    assert len(res.loss_curve) < 4 * 32
    assert not res.loss_curve[-1][1] <= DIVERGENCE_LOSS


def test_train_rejects_mismatched_data(desk_data):
    with pytest.raises(ConfigError):
        train(TrainRun(5000, 1, (16, 4)), desk_data)
    with pytest.raises(ConfigError):
        train(TrainRun(100, 1, (10, 4)), desk_data)
    with pytest.raises(ConfigError):
        train(TrainRun(100, 1, (16, 3)), desk_data)


def test_train_run_validation():
    with pytest.raises(ConfigError):
        TrainRun(0, 1, (2, 2))
    with pytest.raises(ConfigError):
        TrainRun(10, 1, (2, 2), batch_size=0)
    with pytest.raises(ConfigError):
        OptimizerSpec("rmsprop")
    assert TrainRun(30000, 13, (2, 2)).total_data == 390000


# ---------------------------------------------------------------- grids

def test_make_grid_decades():
    assert make_grid(1e-4, 1e-2, 1) == pytest.approx([1e-4, 1e-3, 1e-2], rel=1e-14)
    assert make_grid(1e-4, 1e-2, 1)[0] == 1e-4 and make_grid(1e-4, 1e-2, 1)[-1] == 1e-2


def test_make_grid_rejects_empty_range():
    with pytest.raises(ConfigError):
        make_grid(1e-3, 1e-3, 4)
    with pytest.raises(ConfigError):
        make_grid(0.0, 1.0, 4)
    with pytest.raises(ConfigError):
        make_grid(1e-3, 1e-2, 0)


def test_make_grid_quarter_decades():
    g = make_grid(1e-4, 1e-3, 4)
    assert len(g) == 5
    np.testing.assert_allclose(np.diff(np.log10(g)), 0.25, rtol=1e-12)
    np.testing.assert_allclose(np.array(g[1:]) / np.array(g[:-1]), 10 ** 0.25, rtol=1e-12)


@given(lo=st.floats(-6, 0), span=st.floats(0.05, 4), ppd=st.integers(1, 12))
def test_make_grid_strictly_increasing(lo, span, ppd):
    g = make_grid(10 ** lo, 10 ** (lo + span), ppd)
    assert g[0] == 10 ** lo and g[-1] == 10 ** (lo + span)
    assert all(b > a for a, b in zip(g, g[1:]))


# ---------------------------------------------------------------- sweep (mocked)

def test_sweep_argmin():
    res = sweep(DESK, [1e-4, 1e-3, 1e-2], runner=mocked({1e-4: 0.5, 1e-3: 0.3, 1e-2: 0.9}))
    assert res.best_lr == 1e-3
    assert [r.mean_eval_loss for r in res.records] == [0.5, 0.3, 0.9]
    assert all(r.std_eval_loss == 0.0 and r.repeats == 3 for r in res.records)


def test_sweep_nan_run_is_never_selected():
    table = {1e-4: 0.5, 1e-3: 0.3, 1e-2: lambda seed: math.nan if seed == 1 else 0.01}
    res = sweep(DESK, [1e-4, 1e-3, 1e-2], runner=mocked(table))
    rec = res.records[2]
    assert rec.mean_eval_loss == math.inf and rec.diverged_count == 1
    assert res.best_lr == 1e-3


def test_sweep_tie_goes_to_smaller_rate():
    res = sweep(DESK, [1e-3, 1e-4, 1e-2], runner=mocked({1e-4: 0.3, 1e-3: 0.3, 1e-2: 0.9}))
    assert res.grid == [1e-4, 1e-3, 1e-2]
    assert res.best_lr == 1e-4


def test_sweep_seeds_are_base_plus_index():
    seen = []
    sweep(TrainRun(10, 1, (2, 2), seed=40), [0.1, 0.2], repeats=4,
          runner=lambda r: seen.append((r.eta0, r.seed)) or 1.0)
    assert sorted(seen) == [(0.1, 40), (0.1, 41), (0.1, 42), (0.1, 43),
                            (0.2, 40), (0.2, 41), (0.2, 42), (0.2, 43)]


def test_summarize_uses_sample_std():
    rec = summarize(0.1, [1.0, 2.0, 4.0])
    assert rec.mean_eval_loss == pytest.approx(7 / 3)
    assert rec.std_eval_loss == pytest.approx(np.std([1.0, 2.0, 4.0], ddof=1))


def test_all_diverged_has_no_best():
    res = sweep(DESK, [1.0, 10.0], runner=lambda r: math.inf)
    assert res.best_lr is None
    assert [r.diverged_count for r in res.records] == [3, 3]
    with pytest.raises(NoConvergentRateError):
        res.require_best()
    assert refine(res, runner=lambda r: math.inf) is res


@settings(max_examples=100, deadline=None)
@given(losses=st.lists(st.floats(0.01, 10.0), min_size=2, max_size=9),
       a=st.floats(1e-3, 1e3), b=st.floats(-1e3, 1e3))
def test_argmin_invariant_under_positive_affine_maps(losses, a, b):
    grid = [10.0 ** (-k) for k in range(len(losses))]
    base = sweep(DESK, grid, repeats=1, runner=mocked(dict(zip(grid, losses))))
    scaled = {g: a * v + b for g, v in zip(grid, losses)}
    other = sweep(DESK, grid, repeats=1, runner=mocked(scaled))
    # ties created by rounding in a*v+b can only move the choice toward the smaller tied rate
    best = base.best_lr
    if len(set(scaled.values())) == len(set(losses)):
        assert other.best_lr == best


# ---------------------------------------------------------------- refine

def test_refine_interior_point_spans_neighbours():
    grid = make_grid(1e-4, 1e-2, 4)
    best = grid[4]
    assert best == pytest.approx(1e-3)
    lo, hi = refine_bounds(grid, best)
    assert lo == pytest.approx(10 ** -3.25) and hi == pytest.approx(10 ** -2.75)

    calls = []

    def runner(r):
        calls.append(r.eta0)
        return abs(math.log10(r.eta0) + 3.0) + 0.1

    res = refine(sweep(DESK, grid, runner=runner), zoom_points=7, runner=runner)
    zoom = [g for g in res.grid if lo * (1 - 1e-12) <= g <= hi * (1 + 1e-12)]
    assert len(zoom) == 7
    assert res.refine_step == pytest.approx(10 ** (0.5 / 6))
    # the zoom endpoints and centre already exist and are not re-run
    assert len(calls) == 3 * (len(grid) + 4)
    assert res.refined


def test_refine_keeps_original_best_when_zoom_is_worse():
    grid = make_grid(1e-4, 1e-2, 4)
    table = {g: 1.0 for g in grid}
    table[grid[4]] = 0.2

    def runner(r):
        return table.get(r.eta0, 0.5)

    res = refine(sweep(DESK, grid, runner=runner), runner=runner)
    assert res.best_lr == grid[4]


def test_refine_at_lower_boundary_extends_one_octave():
    grid = make_grid(1e-3, 1.0, 4)
    lo, hi = refine_bounds(grid, grid[0])
    assert lo == grid[0] / 2 and hi == grid[1]
    lo, hi = refine_bounds(grid, grid[-1])
    assert lo == grid[-2] and hi == grid[-1] * 2
    res = refine(sweep(DESK, grid, runner=lambda r: r.eta0), runner=lambda r: r.eta0)
    assert res.best_lr == pytest.approx(5e-4)
    assert min(res.grid) == pytest.approx(5e-4)


def test_refine_only_once():
    res = refine(sweep(DESK, [0.1, 1.0], runner=lambda r: 1.0), runner=lambda r: 1.0)
    with pytest.raises(MisuseError):
        refine(res, runner=lambda r: 1.0)


def test_geometric_grid():
    g = geometric_grid(1.0, 64.0, 7)
    assert g == pytest.approx([1, 2, 4, 8, 16, 32, 64], rel=1e-14)
    with pytest.raises(ConfigError):
        geometric_grid(1.0, 2.0, 1)


# ---------------------------------------------------------------- real sweeps

def _small_template():
    return TrainRun(512, 2, (16, 16, 4), eta0=0.1)


def test_sweep_is_deterministic_and_thread_independent(desk_data):
    grid = make_grid(1e-2, 1.0, 2)
    a = sweep(_small_template(), grid, 2, desk_data)
    b = sweep(_small_template(), grid, 2, desk_data, threads=4)
    assert a.records == b.records
    assert a.best_lr == b.best_lr


def test_sweep_contains_divergence(desk_data):
    grid = make_grid(1e-2, 1e3, 1)
    res = sweep(_small_template(), grid, 2, desk_data)
    diverged = [r.lr for r in res.records if r.diverged_count]
    assert diverged and max(diverged) == 1e3
    assert res.best_lr not in diverged
    assert math.isfinite(res.best_record.mean_eval_loss)


def test_sweep_needs_data_or_runner():
    with pytest.raises(ConfigError):
        sweep(DESK, [0.1])
    with pytest.raises(ConfigError):
        sweep(DESK, [], runner=lambda r: 1.0)
    with pytest.raises(ConfigError):
        sweep(DESK, [0.1], repeats=0, runner=lambda r: 1.0)


# ---------------------------------------------------------------- kappa and prediction

def _sweep_with_best(best, n, e, shape=CONSTANT, kind="sgd"):
    t = TrainRun(n, e, (2, 2), shape=shape, optimizer=OptimizerSpec(kind))
    return sweep(t, [best / 2, best, best * 2], runner=mocked({best / 2: 1.0, best: 0.5, best * 2: 1.0}))


def test_estimate_kappa_worked_example():
    k = estimate_kappa(_sweep_with_best(0.000423, 30000, 13, kind="adam"))
    assert k.kappa == pytest.approx(164.97, abs=1e-9)
    assert (k.train_size, k.epochs, k.optimizer, k.best_lr) == (30000, 13, "adam", 0.000423)


def test_estimate_kappa_table_rows():
    assert estimate_kappa(_sweep_with_best(0.00045, 30000, 10, kind="adam")).kappa == pytest.approx(135.0)
    assert estimate_kappa(_sweep_with_best(0.1, 30000, 10)).kappa == pytest.approx(30000.0)


def test_estimate_kappa_requires_constant_shape():
    with pytest.raises(MisuseError):
        estimate_kappa(_sweep_with_best(0.1, 100, 4, shape=HALVING_DECAY))


def test_predict_constant_examples():
    assert predict_constant_lr(165, 390000) == pytest.approx(0.000423, abs=5e-7)
    assert predict_constant_lr(165, 600000) == pytest.approx(0.000275, rel=1e-15)
    with pytest.raises(ConfigError):
        predict_constant_lr(165, 0)


@settings(max_examples=300)
@given(lr=st.floats(1e-7, 10.0), n=st.integers(1, 100000), e=st.integers(1, 100))
def test_kappa_round_trip_is_exact(lr, n, e):
    k = kappa_from_rate(lr, n, e)
    assert predict_constant_lr(k, n * e) == lr


def test_predict_schedule_examples():
    assert predict_schedule_lr(165, HALVING_DECAY, 30000, 13) == pytest.approx(0.00275, abs=5e-7)
    assert predict_schedule_lr(165, HALVING_DECAY, 30000, 5) == pytest.approx(0.00284, abs=5e-6)
    k = kappa_from_rate(0.000423, 30000, 13)
    assert predict_schedule_lr(k, CONSTANT, 30000, 13) == pytest.approx(predict_constant_lr(k, 390000),
                                                                       rel=1e-15)
    assert predict_schedule_lr(80, CYCLICAL_TRIPLE, 10, 4) == pytest.approx(1.0)


def test_report_on_published_sgd_pairs():
    rep = proportionality_report([(5, 0.14), (10, 0.1), (8, 0.10625), (16, 0.0625)])
    ratios = {(a, b): r for a, b, r in rep.ratios}
    assert ratios[(5.0, 10.0)] == pytest.approx(0.714, abs=5e-4)
    assert ratios[(8.0, 16.0)] == pytest.approx(0.588, abs=5e-4)
    assert rep.slope < 0


def test_report_on_exact_inverse_law():
    kappa = 165.0
    rep = proportionality_report([(d, kappa / d) for d in (1e4, 2e4, 4e4, 8e4)])
    assert rep.slope == pytest.approx(-1.0, abs=1e-12)
    assert rep.kappa_cv == pytest.approx(0.0, abs=1e-12)
    assert [r for _, _, r in rep.ratios] == pytest.approx([0.5, 0.5, 0.5], rel=1e-12)
    assert rep.median_ratio == pytest.approx(0.5)


def test_report_degenerate_points():
    rep = proportionality_report([(10, 0.1), (10, 0.1)])
    assert rep.degenerate and rep.slope is None
    assert rep.kappa_cv == 0.0
    assert rep.median_ratio is None


def test_report_needs_two_points():
    with pytest.raises(InsufficientDataError):
        proportionality_report([(10, 0.1)])
    with pytest.raises(ConfigError):
        proportionality_report([(10, 0.1), (20, -0.1)])

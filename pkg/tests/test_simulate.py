from datetime import datetime

import numpy as np
import pytest
from scipy import stats

from ancestor_hawkes.core import (
    IMMIGRANT,
    AncestorParams,
    ClassicParams,
    ConstantBackground,
    ContractError,
    KernelSpec,
    PiecewiseBackground,
    StabilityError,
    rebuild_child_sets,
)
from ancestor_hawkes.recovery import preset
from ancestor_hawkes.seasonal import CalendarGrid, SeasonalBackground
from ancestor_hawkes.simulate import (
    SimulationRequest,
    ThinningBoundError,
    simulate,
    simulate_immigrants,
    simulate_offspring,
)

S1 = preset("scenario1").params


def test_request_needs_one_stop_rule():
    with pytest.raises(ContractError):
        SimulationRequest(S1)
    with pytest.raises(ContractError):
        SimulationRequest(S1, horizon=10.0, n_events=5)


def test_deterministic_per_seed():
    a = simulate(SimulationRequest(S1, n_events=500, seed=11))
    b = simulate(SimulationRequest(S1, n_events=500, seed=11))
    c = simulate(SimulationRequest(S1, n_events=500, seed=12))
    assert a.log == b.log and np.array_equal(a.truth.parents, b.truth.parents)
    assert not a.log == c.log


def test_fixed_count_and_truth_consistency():
    d = simulate(SimulationRequest(S1, n_events=800, seed=3))
    assert len(d.log) == 800
    assert d.log.horizon == d.log.times[-1]
    d.truth.check(d.log)
    trig = d.truth.triggered
    assert np.all(d.log.times[d.truth.parents[trig]] < d.log.times[trig])
    again = rebuild_child_sets(d.log, d.truth.parents)
    assert again.child_sets == d.truth.child_sets


def test_unstable_fixed_count_rejected():
    p = AncestorParams(ConstantBackground([0.1]), [[0.5]], [[1.2]], KernelSpec(1, 1), KernelSpec(1, 1))
    with pytest.raises(StabilityError):
        simulate(SimulationRequest(p, n_events=10))


def test_no_excitation_means_all_immigrants():
    p = AncestorParams(ConstantBackground([0.05] * 3), np.zeros((3, 3)), np.zeros((3, 3)),
                       KernelSpec(1, 1), KernelSpec(1, 1))
    d = simulate(SimulationRequest(p, horizon=2000.0, seed=1))
    assert np.all(d.truth.parents == IMMIGRANT)


def test_zero_background_is_empty():
    rng = np.random.default_rng(0)
    t, d = simulate_immigrants(ConstantBackground([0.0, 0.0]), 100.0, rng)
    assert t.size == 0 and d.size == 0


def test_immigrant_counts_poisson_mean():
    rng = np.random.default_rng(5)
    counts = np.array([np.bincount(simulate_immigrants(ConstantBackground([0.05] * 3), 10_000.0, rng)[1],
                                   minlength=3) for _ in range(50)])
    # mean over 50 seeds of Poisson(500): standard error sqrt(500/50)
    assert np.all(np.abs(counts.mean(axis=0) - 500) < 3 * np.sqrt(500 / 50) * 1.5)


def test_thinning_matches_direct_sampler():
    grid = CalendarGrid.build(datetime(2021, 1, 1), datetime(2021, 1, 15), "UTC")
    flat = SeasonalBackground.flat([0.2], grid)
    rng = np.random.default_rng(8)
    a = [simulate_immigrants(flat, grid.horizon, rng)[0].size for _ in range(100)]
    b = [simulate_immigrants(ConstantBackground([0.2]), grid.horizon, rng)[0].size for _ in range(100)]
    assert stats.mannwhitneyu(a, b).pvalue > 0.001


def test_piecewise_thinning_counts_per_bin():
    bg = PiecewiseBackground([0.0, 100.0, 200.0], [[0.1, 0.5]])
    rng = np.random.default_rng(2)
    t = np.concatenate([simulate_immigrants(bg, 200.0, rng)[0] for _ in range(200)])
    assert np.sum(t < 100) / 200 == pytest.approx(10.0, abs=3 * np.sqrt(10 / 200))
    assert np.sum(t >= 100) / 200 == pytest.approx(50.0, abs=3 * np.sqrt(50 / 200))


def test_infinite_thinning_bound_rejected():
    class Unbounded(PiecewiseBackground):
        def upper_bound(self, m):
            return np.inf

    with pytest.raises(ThinningBoundError):
        simulate_immigrants(Unbounded([0.0, 1.0], [[1.0]]), 1.0, np.random.default_rng(0))


def _offspring_counts(imm, reps, K, L):
    p = AncestorParams(ConstantBackground([0.1, 0.1]), K, L, KernelSpec(2.0, 2.0), KernelSpec(0.5, 0.5))
    rng = np.random.default_rng(21)
    out = np.zeros((reps, 2))
    for r in range(reps):
        _, d = simulate_offspring(0.0, 0, imm, p, 1e4, rng)
        out[r] = np.bincount(d, minlength=2)
    return out


def test_offspring_mean_immigrant_parent():
    c = _offspring_counts(True, 10_000, [[0.6, 0.6], [0.6, 0.6]], [[0.3, 0.05], [0.05, 0.3]])
    assert abs(c[:, 1].mean() - 0.6) < 3 * np.sqrt(0.6 / 10_000)


def test_offspring_mean_triggered_parent():
    c = _offspring_counts(False, 10_000, [[0.6, 0.0], [0.6, 0.6]], [[0.3, 0.05], [0.05, 0.3]])
    assert abs(c[:, 0].mean() - 0.3) < 3 * np.sqrt(0.3 / 10_000)


def test_zero_magnitude_means_no_children():
    c = _offspring_counts(True, 2000, [[0.6, 0.0], [0.6, 0.6]], [[0.3, 0.05], [0.05, 0.3]])
    assert c[:, 1].sum() == 0


def test_child_lags_follow_truncated_exponential():
    p = AncestorParams(ConstantBackground([0.1]), [[5.0]], [[0.0]], KernelSpec(0.5, 0.5), KernelSpec(1, 1))
    rng = np.random.default_rng(1)
    window = 3.0
    lags = np.concatenate([simulate_offspring(1.0, 0, True, p, 1.0 + window, rng)[0] - 1.0 for _ in range(800)])
    assert lags.min() > 0 and lags.max() <= window
    cdf = lambda x: -np.expm1(-0.5 * x) / -np.expm1(-0.5 * window)  # noqa: E731
    assert stats.kstest(lags, cdf).pvalue > 0.001


def test_parent_must_precede_horizon():
    with pytest.raises(ContractError):
        simulate_offspring(5.0, 0, True, S1, 5.0, np.random.default_rng(0))


def test_classic_equals_nested_ancestor():
    c = ClassicParams(ConstantBackground([0.1, 0.1]), [[0.3, 0.2], [0.1, 0.3]], KernelSpec(1.0, 2.0))
    a = c.as_ancestor()
    x = simulate(SimulationRequest(c, horizon=500.0, seed=4))
    y = simulate(SimulationRequest(a, horizon=500.0, seed=4))
    assert x.log == y.log

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ancestor_hawkes.core import (
    IMMIGRANT,
    TIE_JITTER,
    AncestorParams,
    ClassicParams,
    ConstantBackground,
    ContractError,
    EventLog,
    KernelSpec,
    PiecewiseBackground,
    PriorSpec,
    StructuralError,
    all_immigrant,
    intensity_at,
    kernel_density,
    kernel_primitive,
    rebuild_child_sets,
)


def _log(times, dims, T=10.0, M=2):
    return EventLog(np.array(times, float), np.array(dims), T, M)


def test_eventlog_rejects_bad_input():
    with pytest.raises(ContractError):
        _log([1.0, 1.0], [0, 1])
    with pytest.raises(ContractError):
        _log([2.0, 1.0], [0, 1])
    with pytest.raises(ContractError):
        _log([1.0], [2])
    with pytest.raises(ContractError):
        _log([11.0], [0])
    with pytest.raises(ContractError):
        EventLog(np.zeros(0), np.zeros(0, int), 0.0, 1)


def test_eventlog_is_read_only():
    log = _log([1.0, 2.0], [0, 1])
    with pytest.raises(ValueError):
        log.times[0] = 5.0


def test_ties_jittered_in_input_order():
    log = EventLog.from_unsorted([3.0, 1.0, 1.0], [0, 1, 0], 5.0, 2)
    assert log.times[0] == 1.0
    assert log.times[1] == 1.0 + TIE_JITTER
    assert list(log.dims) == [1, 0, 0]


def test_kernel_density_and_primitive():
    k = KernelSpec(2.0, 0.5)
    assert kernel_density(k, 0, 0, 1.0) == pytest.approx(2 * math.exp(-2))
    assert kernel_density(k, 0, 1, 1.0) == pytest.approx(0.5 * math.exp(-0.5))
    assert kernel_primitive(k, 1, 1, 0.0) == 0.0
    assert kernel_primitive(k, 1, 0, 1e9) == 1.0
    with pytest.raises(ContractError):
        kernel_density(k, 0, 0, -1.0)
    with pytest.raises(ContractError):
        kernel_primitive(k, 0, 0, -0.1)
    with pytest.raises(ContractError):
        KernelSpec(0.0, 1.0)
    with pytest.raises(ContractError):
        KernelSpec(1.0, 1.0, family="power")


@given(st.floats(0.01, 20), st.floats(0.0, 50))
def test_primitive_is_integral_of_density(rate, z):
    k = KernelSpec(rate, rate)
    # trapezoid integral on a fine grid is an independent check
    grid = np.linspace(0, z, 4001)
    dens = rate * np.exp(-rate * grid)
    approx = float(np.sum((dens[1:] + dens[:-1]) * np.diff(grid)) / 2)
    assert kernel_primitive(k, 0, 0, z) == pytest.approx(approx, abs=1e-5 * max(1.0, rate * z) ** 2)


def test_piecewise_background():
    bg = PiecewiseBackground([0.0, 1.0, 3.0], [[1.0, 2.0], [0.0, 4.0]])
    assert bg.rate(0, 0.5) == 1.0
    assert bg.rate(0, 1.0) == 2.0
    assert bg.integral(0, 3.0) == pytest.approx(5.0)
    assert bg.integral(1, 2.0) == pytest.approx(4.0)
    assert bg.upper_bound(1) == 4.0
    with pytest.raises(ContractError):
        PiecewiseBackground([0.5, 1.0], [[1.0]])


def test_restricted_requires_diagonal_L():
    bg = ConstantBackground([0.1, 0.1])
    with pytest.raises(ContractError):
        AncestorParams(bg, np.eye(2), np.ones((2, 2)) * 0.1, KernelSpec(1, 1), KernelSpec(1, 1), restricted=True)
    AncestorParams(bg, np.eye(2), np.eye(2) * 0.1, KernelSpec(1, 1), KernelSpec(1, 1), restricted=True)


def test_prior_spec_roundtrip_and_validation():
    p = PriorSpec(K=(np.ones((2, 2)), np.full((2, 2), 5.0)))
    q = PriorSpec.from_dict(p.to_dict())
    assert np.array_equal(q.magnitude("K", 2)[1], np.full((2, 2), 5.0))
    with pytest.raises(ContractError):
        PriorSpec(mu=(0.0, 1.0))


@st.composite
def logs_with_parents(draw):
    n = draw(st.integers(0, 25))
    M = draw(st.integers(1, 4))
    gaps = draw(st.lists(st.floats(0.01, 3.0), min_size=n, max_size=n))
    times = np.cumsum(gaps)
    dims = draw(st.lists(st.integers(0, M - 1), min_size=n, max_size=n))
    parents = [draw(st.integers(-1, i - 1)) for i in range(n)]
    T = float(times[-1] + 1.0) if n else 1.0
    return EventLog(times, np.array(dims, dtype=np.int64), T, M), parents


@given(logs_with_parents())
def test_child_sets_partition_and_roundtrip(case):
    log, parents = case
    b = rebuild_child_sets(log, parents)
    b.check(log)
    assert np.array_equal(b.to_parents(), parents)
    assert b.immigrants.size + b.triggered.size == len(log)
    assert b.immigrant_counts().sum() == b.immigrants.size
    for (p, m), kids in b.child_sets.items():
        assert all(parents[c] == p and log.dims[c] == m and c > p for c in kids)


def test_inadmissible_parent_rejected():
    log = _log([1.0, 2.0], [0, 1])
    with pytest.raises(StructuralError):
        rebuild_child_sets(log, [IMMIGRANT, 1])
    with pytest.raises(StructuralError):
        rebuild_child_sets(log, [0, IMMIGRANT])


def _naive_intensity(p, log, parents, m, t):
    lam = p.background.rate(m, t)
    for i in range(len(log)):
        if log.times[i] < t:
            s = int(log.dims[i])
            if parents[i] == IMMIGRANT:
                eta, r = p.K[s, m], p.g.rate(s, m)
            else:
                eta, r = p.L[s, m], p.h.rate(s, m)
            lam += eta * r * math.exp(-r * (t - log.times[i]))
    return lam


@settings(max_examples=50)
@given(logs_with_parents(), st.floats(0.0, 1.0))
def test_intensity_matches_naive_sum(case, frac):
    log, parents = case
    M = log.num_dims
    rng = np.random.default_rng(len(log))
    p = AncestorParams(ConstantBackground(rng.uniform(0.1, 1, M)), rng.uniform(0, 1, (M, M)),
                       rng.uniform(0, 1, (M, M)), KernelSpec(1.5, 0.7), KernelSpec(0.4, 2.5))
    b = rebuild_child_sets(log, parents)
    t = frac * log.horizon
    for m in range(M):
        assert intensity_at(p, log, b, m, t) == pytest.approx(_naive_intensity(p, log, parents, m, t), rel=1e-12)


def test_event_at_t_does_not_count():
    p = ClassicParams(ConstantBackground([0.5]), [[1.0]], KernelSpec(1.0, 1.0))
    log = _log([2.0], [0], M=1)
    assert intensity_at(p, log, None, 0, 2.0) == 0.5
    assert intensity_at(p, log, all_immigrant(log), 0, 3.0) == pytest.approx(0.5 + math.exp(-1))


def test_ancestor_intensity_needs_labels():
    p = AncestorParams(ConstantBackground([0.5]), [[0.2]], [[0.2]], KernelSpec(1, 1), KernelSpec(1, 1))
    with pytest.raises(ContractError):
        intensity_at(p, _log([1.0], [0], M=1), None, 0, 2.0)

"""Exact simulation through the cluster (branching) representation.

Random streams: a request seeded with ``seed`` draws the attempt-``k`` window from
``SeedSequence(seed, spawn_key=(k,))``, which is split into one stream for the
immigrants and one for the offspring generations. Offspring are expanded one
generation at a time across all clusters, so the output depends only on the seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    IMMIGRANT,
    AncestorParams,
    BranchingState,
    ClassicParams,
    ConstantBackground,
    ContractError,
    EventLog,
    StabilityError,
    as_ancestor,
    jitter_ties,
    rebuild_child_sets,
)
from .likelihood import stationary_rates, spectral_radius


class ThinningBoundError(ContractError):
    pass


class SimulationOverflow(RuntimeError):
    """The cascade exceeded the configured event budget."""


@dataclass(frozen=True)
class SimulationRequest:
    """Exactly one of ``horizon`` and ``n_events`` must be set."""

    params: AncestorParams | ClassicParams
    horizon: float | None = None
    n_events: int | None = None
    seed: int = 0
    max_events: int = 5_000_000

    def __post_init__(self):
        if (self.horizon is None) == (self.n_events is None):
            raise ContractError("set exactly one of horizon and n_events")
        if self.horizon is not None and not self.horizon > 0:
            raise ContractError("horizon must be > 0")
        if self.n_events is not None and self.n_events < 1:
            raise ContractError("n_events must be >= 1")


@dataclass(frozen=True, eq=False)
class SimulatedData:
    log: EventLog
    truth: BranchingState

    @property
    def horizon(self) -> float:
        return self.log.horizon


def simulate_immigrants(background, horizon: float, rng: np.random.Generator):
    """Background events on ``[0, horizon]`` as ``(times, dims)``, sorted by time."""
    times, dims = [], []
    for m in range(background.num_dims):
        if isinstance(background, ConstantBackground):
            n = rng.poisson(background.mu[m] * horizon)
            t = rng.uniform(0.0, horizon, n)
        else:
            bound = background.upper_bound(m)
            if not np.isfinite(bound):
                raise ThinningBoundError(f"no finite thinning bound for dimension {m}")
            n = rng.poisson(bound * horizon)
            t = rng.uniform(0.0, horizon, n)
            if n:
                keep = rng.random(n) * bound < background.rates_at(np.full(n, m), t)
                t = t[keep]
        times.append(t)
        dims.append(np.full(t.size, m, dtype=np.int64))
    t, d = np.concatenate(times), np.concatenate(dims)
    order = np.argsort(t, kind="stable")
    return t[order], d[order]


def _offspring(t, d, imm, p: AncestorParams, horizon, rng):
    """Direct children of a batch of parents; returns (times, dims, parent position)."""
    M = p.num_dims
    g_rate, h_rate = p.g.rate_matrix(M), p.h.rate_matrix(M)
    imm = imm[:, None]
    eta = np.where(imm, p.K[d], p.L[d])
    rate = np.where(imm, g_rate[d], h_rate[d])
    mass = -np.expm1(-rate * (horizon - t)[:, None])
    counts = rng.poisson(eta * mass).reshape(-1)
    cells = np.repeat(np.arange(counts.size), counts)
    par, target = np.divmod(cells, M)
    u = 1.0 - rng.random(cells.size)
    lag = -np.log1p(-u * mass.reshape(-1)[cells]) / rate.reshape(-1)[cells]
    return t[par] + lag, target.astype(np.int64), par


def simulate_offspring(parent_time: float, parent_dim: int, is_immigrant: bool,
                       params, horizon: float, rng: np.random.Generator):
    """Direct children of a single parent on ``(parent_time, horizon]``."""
    if not parent_time < horizon:
        raise ContractError("parent must precede the horizon")
    t, d, _ = _offspring(np.array([float(parent_time)]), np.array([int(parent_dim)]),
                         np.array([bool(is_immigrant)]), as_ancestor(params), horizon, rng)
    order = np.argsort(t, kind="stable")
    return t[order], d[order]


def _simulate_window(p: AncestorParams, horizon: float, seq: np.random.SeedSequence, max_events: int):
    imm_rng, off_rng = (np.random.default_rng(s) for s in seq.spawn(2))
    t, d = simulate_immigrants(p.background, horizon, imm_rng)
    times, dims, parents, gens = [t], [d], [np.full(t.size, IMMIGRANT)], [np.zeros(t.size, np.int64)]
    ids = np.arange(t.size)
    total, gen, imm = t.size, 0, np.ones(t.size, dtype=bool)
    while t.size:
        gen += 1
        t, d, pos = _offspring(t, d, imm, p, horizon, off_rng)
        parent_ids = ids[pos]
        ids = np.arange(total, total + t.size)
        total += t.size
        if total > max_events:
            raise SimulationOverflow(f"more than {max_events} events; parameters may be explosive")
        imm = np.zeros(t.size, dtype=bool)
        times.append(t)
        dims.append(d)
        parents.append(parent_ids)
        gens.append(np.full(t.size, gen, np.int64))
    times, dims = np.concatenate(times), np.concatenate(dims)
    parents, gens = np.concatenate(parents), np.concatenate(gens)
    # a parent sorts before its child even under exact float ties
    order = np.lexsort((gens, times))
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    par = parents[order]
    par = np.where(par == IMMIGRANT, IMMIGRANT, rank[np.maximum(par, 0)])
    return jitter_ties(times[order]), dims[order], par


def _initial_horizon(p: AncestorParams, n: int) -> float:
    if not isinstance(p.background, ConstantBackground):
        raise ContractError("a target event count needs a constant background")
    total = stationary_rates(p).sum()
    if total <= 0:
        raise ContractError("zero-rate process never reaches the target count")
    return 1.1 * n / total


def simulate(request: SimulationRequest) -> SimulatedData:
    """Simulate events plus the true branching labels.

    With ``n_events`` set the window doubles until it holds enough events, and the
    result is cut at the ``n_events``-th event, whose time becomes the horizon.
    """
    p = as_ancestor(request.params)
    if request.horizon is not None:
        seq = np.random.SeedSequence(request.seed, spawn_key=(0,))
        t, d, par = _simulate_window(p, request.horizon, seq, request.max_events)
        log = EventLog(t, d, request.horizon, p.num_dims)
        return SimulatedData(log, rebuild_child_sets(log, par))

    rho = spectral_radius(p.L)
    if rho >= 1:
        raise StabilityError(f"spectral radius {rho:.4f} >= 1; a fixed event count may never terminate")
    n = request.n_events
    horizon = _initial_horizon(p, n)
    for attempt in range(64):
        seq = np.random.SeedSequence(request.seed, spawn_key=(attempt,))
        t, d, par = _simulate_window(p, horizon, seq, request.max_events)
        if t.size >= n:
            log = EventLog(t[:n], d[:n], float(t[n - 1]), p.num_dims)
            return SimulatedData(log, rebuild_child_sets(log, par[:n]))
        horizon *= 2.0
    raise SimulationOverflow("target event count not reached")

"""Domain types, exponential kernels and the Ancestor Hawkes intensity.

Conventions used across the package:

* Time is measured in hours (one model time unit = one hour).
* Dimensions are 0-based in memory (``0 .. M-1``); files and the CLI use 1-based labels.
* Events are 0-based; a parent index of ``IMMIGRANT`` (-1) marks a background event.
* Influence matrices are stored source-major: ``K[j, m]`` is the influence of an
  event in dimension ``j`` on dimension ``m`` (``K_{j->m}``). The stationary-mean
  formulas use the transpose (column convention), see :mod:`ancestor_hawkes.likelihood`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

IMMIGRANT = -1
TIE_JITTER = 1e-9


class ContractError(ValueError):
    """An argument violates an operation's precondition."""


class StructuralError(ValueError):
    """A branching structure is inconsistent with its event log."""


class StabilityError(ValueError):
    """Parameters are supercritical where a subcritical process is required."""


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventLog:
    """Time-ordered multivariate events on ``[0, horizon]``."""

    times: np.ndarray
    dims: np.ndarray
    horizon: float
    num_dims: int

    def __post_init__(self):
        times = _frozen(self.times, float).reshape(-1)
        dims = _frozen(self.dims, np.int64).reshape(-1)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "num_dims", int(self.num_dims))
        if self.num_dims < 1:
            raise ContractError("num_dims must be >= 1")
        if not self.horizon > 0:
            raise ContractError("horizon must be > 0")
        if times.shape != dims.shape:
            raise ContractError("times and dims must have the same length")
        if times.size:
            if times[0] < 0 or times[-1] > self.horizon:
                raise ContractError("event times must lie in [0, horizon]")
            if np.any(np.diff(times) <= 0):
                raise ContractError("event times must be strictly increasing")
            if dims.min() < 0 or dims.max() >= self.num_dims:
                raise ContractError("dimension index out of range")

    @classmethod
    def from_unsorted(cls, times, dims, horizon, num_dims) -> "EventLog":
        """Sort events by time and separate exact ties by ``TIE_JITTER`` in input order."""
        times = np.asarray(times, dtype=float)
        dims = np.asarray(dims, dtype=np.int64)
        order = np.argsort(times, kind="stable")
        return cls(jitter_ties(times[order]), dims[order], horizon, num_dims)

    def __len__(self) -> int:
        return int(self.times.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.num_dims == other.num_dims
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.dims, other.dims)
        )

    def counts(self) -> np.ndarray:
        return np.bincount(self.dims, minlength=self.num_dims)

    def truncate(self, n: int, horizon: float | None = None) -> "EventLog":
        hz = self.horizon if horizon is None else horizon
        return EventLog(self.times[:n], self.dims[:n], hz, self.num_dims)


def jitter_ties(times: np.ndarray) -> np.ndarray:
    """Push each non-increasing time just past its predecessor (sorted input)."""
    out = np.array(times, dtype=float)
    for i in range(1, out.size):
        if out[i] <= out[i - 1]:
            out[i] = out[i - 1] + TIE_JITTER
    return out


@dataclass(frozen=True)
class KernelSpec:
    """Exponential kernel family with one rate for self pairs and one for cross pairs."""

    rate_diag: float
    rate_off: float
    family: str = "exponential"

    def __post_init__(self):
        if self.family != "exponential":
            raise ContractError(f"unsupported kernel family {self.family!r}")
        if not (self.rate_diag > 0 and self.rate_off > 0):
            raise ContractError("kernel rates must be > 0")

    def rate(self, source: int, target: int) -> float:
        return self.rate_diag if source == target else self.rate_off

    def rate_matrix(self, num_dims: int) -> np.ndarray:
        r = np.full((num_dims, num_dims), float(self.rate_off))
        np.fill_diagonal(r, self.rate_diag)
        return r


def kernel_density(spec: KernelSpec, source: int, target: int, lag: float) -> float:
    if lag < 0:
        raise ContractError(f"negative lag {lag}")
    beta = spec.rate(source, target)
    return beta * math.exp(-beta * lag)


def kernel_primitive(spec: KernelSpec, source: int, target: int, z: float) -> float:
    if z < 0:
        raise ContractError(f"negative argument {z}")
    return -math.expm1(-spec.rate(source, target) * z)


# --- backgrounds -------------------------------------------------------------


class Background(Protocol):
    num_dims: int

    def rate(self, m: int, t: float) -> float: ...

    def rates_at(self, dims: np.ndarray, times: np.ndarray) -> np.ndarray: ...

    def integral(self, m: int, horizon: float) -> float: ...

    def upper_bound(self, m: int) -> float: ...


@dataclass(frozen=True, eq=False)
class ConstantBackground:
    """Time-constant immigrant rate per dimension (events/hour)."""

    mu: np.ndarray

    def __post_init__(self):
        mu = _frozen(self.mu).reshape(-1)
        if np.any(mu < 0) or not np.all(np.isfinite(mu)):
            raise ContractError("background rates must be finite and >= 0")
        object.__setattr__(self, "mu", mu)

    @property
    def num_dims(self) -> int:
        return int(self.mu.size)

    def rate(self, m, t):
        return float(self.mu[m])

    def rates_at(self, dims, times):
        return self.mu[np.asarray(dims, dtype=np.int64)]

    def integral(self, m, horizon):
        return float(self.mu[m]) * horizon

    def upper_bound(self, m):
        return float(self.mu[m])


@dataclass(frozen=True, eq=False)
class PiecewiseBackground:
    """Piecewise-constant rate: ``rates[m, b]`` on ``[edges[b], edges[b+1])``."""

    edges: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        edges = _frozen(self.edges).reshape(-1)
        rates = _frozen(self.rates)
        if rates.ndim != 2 or edges.size != rates.shape[1] + 1:
            raise ContractError("need len(edges) == n_bins + 1 and rates of shape (M, n_bins)")
        if edges[0] != 0 or np.any(np.diff(edges) <= 0):
            raise ContractError("bin edges must start at 0 and increase")
        if np.any(rates < 0):
            raise ContractError("background rates must be >= 0")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "rates", rates)

    @classmethod
    def uniform(cls, rates, horizon: float) -> "PiecewiseBackground":
        rates = np.asarray(rates, dtype=float)
        return cls(np.linspace(0.0, horizon, rates.shape[1] + 1), rates)

    @property
    def num_dims(self) -> int:
        return int(self.rates.shape[0])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def bin_of(self, times) -> np.ndarray:
        idx = np.searchsorted(self.edges, np.asarray(times, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.rates.shape[1] - 1)

    def rate(self, m, t):
        return float(self.rates[m, self.bin_of(t)])

    def rates_at(self, dims, times):
        return self.rates[np.asarray(dims, dtype=np.int64), self.bin_of(times)]

    def integral(self, m, horizon):
        upper = np.minimum(self.edges[1:], horizon)
        covered = np.clip(upper - self.edges[:-1], 0.0, None)
        return float(covered @ self.rates[m])

    def upper_bound(self, m):
        return float(self.rates[m].max())


# --- parameters --------------------------------------------------------------


def _as_matrix(a, num_dims: int, name: str) -> np.ndarray:
    a = _frozen(a)
    if a.shape != (num_dims, num_dims):
        raise ContractError(f"{name} must be {num_dims}x{num_dims}")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ContractError(f"{name} entries must be finite and >= 0")
    return a


@dataclass(frozen=True, eq=False)
class AncestorParams:
    """Parameters of the Ancestor Hawkes process.

    ``K`` drives offspring of immigrant events through kernel ``g``; ``L`` drives
    offspring of triggered events through kernel ``h``. Both are source-major.
    """

    background: Background
    K: np.ndarray
    L: np.ndarray
    g: KernelSpec
    h: KernelSpec
    restricted: bool = False

    def __post_init__(self):
        M = self.background.num_dims
        object.__setattr__(self, "K", _as_matrix(self.K, M, "K"))
        L = _as_matrix(self.L, M, "L")
        if self.restricted and np.any(L[~np.eye(M, dtype=bool)] != 0):
            raise ContractError("restricted variant requires zero off-diagonal L")
        object.__setattr__(self, "L", L)

    @property
    def num_dims(self) -> int:
        return self.background.num_dims


@dataclass(frozen=True, eq=False)
class ClassicParams:
    """Classic multivariate Hawkes: one influence matrix for every event."""

    background: Background
    K: np.ndarray
    g: KernelSpec

    def __post_init__(self):
        object.__setattr__(self, "K", _as_matrix(self.K, self.background.num_dims, "K"))

    @property
    def num_dims(self) -> int:
        return self.background.num_dims

    def as_ancestor(self) -> AncestorParams:
        """The nested Ancestor model with ``L = K`` and ``h = g``."""
        return AncestorParams(self.background, self.K, self.K, self.g, self.g)


def as_ancestor(params: AncestorParams | ClassicParams) -> AncestorParams:
    return params.as_ancestor() if isinstance(params, ClassicParams) else params


@dataclass(frozen=True)
class PriorSpec:
    """Gamma (shape, rate) hyperparameters for every parameter block.

    Magnitude priors may be scalar pairs or pairs of ``M x M`` arrays.
    Defaults follow the simulation-study and group-chat choices.
    """

    mu: tuple = (1.0, 1.0)
    K: tuple = (1.0, 10.0)
    L: tuple = (1.0, 10.0)
    beta_diag: tuple = (2.0, 1.0)
    beta_off: tuple = (2.0, 1.0)
    gamma_diag: tuple = (2.0, 1.0)
    gamma_off: tuple = (2.0, 1.0)
    alpha: tuple = (1.0, 1.0)
    theta: tuple = (1.0, 1.0)

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            pair = getattr(self, name)
            if len(pair) != 2:
                raise ContractError(f"prior {name} must be a (shape, rate) pair")
            if not all(np.all(np.asarray(v, dtype=float) > 0) for v in pair):
                raise ContractError(f"prior {name} hyperparameters must be > 0")

    def magnitude(self, name: str, num_dims: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = getattr(self, name)
        shape = (num_dims, num_dims)
        return np.broadcast_to(np.asarray(a, float), shape), np.broadcast_to(np.asarray(b, float), shape)

    def to_dict(self) -> dict:
        return {k: [np.asarray(v, float).tolist() for v in getattr(self, k)] for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        return cls(**{k: tuple(v) for k, v in d.items()})


# --- branching structure -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class BranchingState:
    """Parent vector plus the derived child sets and immigrant/triggered partition."""

    parents: np.ndarray
    dims: np.ndarray
    num_dims: int
    child_sets: dict = field(repr=False)

    @property
    def immigrants(self) -> np.ndarray:
        """Indices with no parent (immigrant parent set)."""
        return np.flatnonzero(self.parents == IMMIGRANT)

    @property
    def triggered(self) -> np.ndarray:
        return np.flatnonzero(self.parents != IMMIGRANT)

    @property
    def is_immigrant(self) -> np.ndarray:
        return self.parents == IMMIGRANT

    def children(self, parent: int, m: int) -> frozenset:
        return self.child_sets.get((parent, m), frozenset())

    def immigrant_counts(self) -> np.ndarray:
        return np.bincount(self.dims[self.is_immigrant], minlength=self.num_dims)

    def to_parents(self) -> np.ndarray:
        """Invert the child sets back to a parent vector."""
        out = np.full(self.dims.size, -2, dtype=np.int64)
        for (p, _m), kids in self.child_sets.items():
            for c in kids:
                out[c] = p
        return out

    def check(self, log: EventLog | None = None) -> None:
        """Raise :class:`StructuralError` unless B, S and the partitions agree."""
        n = self.parents.size
        if log is not None and (len(log) != n or not np.array_equal(log.dims, self.dims)):
            raise StructuralError("branching state does not match event log")
        idx = np.arange(n)
        if np.any(self.parents >= idx) or np.any(self.parents < IMMIGRANT):
            raise StructuralError("every parent must precede its child")
        seen = 0
        for (p, m), kids in self.child_sets.items():
            for c in kids:
                if self.parents[c] != p or self.dims[c] != m:
                    raise StructuralError(f"child set ({p}, {m}) holds inconsistent event {c}")
            seen += len(kids)
        if seen != n:
            raise StructuralError("child sets do not partition the events")


def rebuild_child_sets(log: EventLog, parents: Sequence[int] | np.ndarray) -> BranchingState:
    """Build the child sets ``S[(parent, m)]`` from a parent vector."""
    parents = np.asarray(parents, dtype=np.int64).reshape(-1)
    n = len(log)
    if parents.size != n:
        raise StructuralError(f"expected {n} parents, got {parents.size}")
    bad = (parents < IMMIGRANT) | (parents >= np.arange(n))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise StructuralError(f"event {i} has inadmissible parent {parents[i]}")
    sets: dict = {}
    for c, (p, m) in enumerate(zip(parents.tolist(), log.dims.tolist())):
        sets.setdefault((p, m), []).append(c)
    child_sets = {k: frozenset(v) for k, v in sets.items()}
    return BranchingState(_frozen(parents, np.int64), log.dims, log.num_dims, child_sets)


def all_immigrant(log: EventLog) -> BranchingState:
    return rebuild_child_sets(log, np.full(len(log), IMMIGRANT))


# --- intensity ---------------------------------------------------------------


def intensity_at(
    params: AncestorParams | ClassicParams,
    log: EventLog,
    branching: BranchingState | None,
    m: int,
    t: float,
) -> float:
    """Conditional intensity of dimension ``m`` at time ``t`` given the labels.

    Only events strictly before ``t`` contribute. For classic parameters the
    branching labels are irrelevant and may be ``None``.
    """
    if not 0 <= t <= log.horizon:
        raise ContractError(f"t={t} outside [0, {log.horizon}]")
    p = as_ancestor(params)
    past = log.times < t
    lags = t - log.times[past]
    src = log.dims[past]
    if branching is None:
        if not isinstance(params, ClassicParams):
            raise ContractError("Ancestor intensity requires branching labels")
        imm = np.ones(src.size, dtype=bool)
    else:
        imm = branching.is_immigrant[past]
    g_rate = np.where(src == m, p.g.rate_diag, p.g.rate_off)
    h_rate = np.where(src == m, p.h.rate_diag, p.h.rate_off)
    trig_imm = p.K[src, m] * g_rate * np.exp(-g_rate * lags)
    trig_tr = p.L[src, m] * h_rate * np.exp(-h_rate * lags)
    excite = np.where(imm, trig_imm, trig_tr).sum()
    return p.background.rate(m, t) + float(excite)

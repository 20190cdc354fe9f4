"""Summary statistics, posterior predictive checks, count envelopes and traces."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chain import ChainDraws
from .core import ContractError, EventLog
from .likelihood import spectral_radius
from .simulate import SimulationOverflow, SimulationRequest, simulate

STATISTICS = ("upper_tail_mean_iet", "acf1_iet", "ripley_k_2h")
ENVELOPE_LEVELS = (2.5, 25.0, 50.0, 75.0, 97.5)
UPPER_QUANTILE = 0.9
RIPLEY_WINDOW = 2.0


class InsufficientDataError(ContractError):
    def __init__(self, statistic: str, needed: int, got: int):
        super().__init__(f"{statistic} needs at least {needed} events, got {got}")
        self.statistic = statistic


# --- summary statistics -------------------------------------------------------


@dataclass(frozen=True)
class SummaryStats:
    upper_tail_mean_iet: float
    acf1_iet: float
    ripley_k_2h: float
    acf1_degenerate: bool = False

    def to_dict(self) -> dict:
        return {"upper_tail_mean_iet": self.upper_tail_mean_iet, "acf1_iet": self.acf1_iet,
                "ripley_k_2h": self.ripley_k_2h, "acf1_degenerate": self.acf1_degenerate}


def upper_tail_mean(iet: np.ndarray, q: float = UPPER_QUANTILE) -> float:
    """Mean of the gaps strictly above their type-7 ``q`` quantile.

    When none exceeds it (all gaps equal at the top) the quantile itself is returned.
    """
    if iet.size < 1:
        raise InsufficientDataError("upper_tail_mean_iet", 2, iet.size + 1)
    cut = np.quantile(iet, q, method="linear")
    above = iet[iet > cut]
    return float(above.mean()) if above.size else float(cut)


def lag1_acf(x: np.ndarray) -> tuple[float, bool]:
    """Mean-centred lag-1 autocorrelation with the full-sample denominator.

    Zero variance gives ``(0.0, True)``.
    """
    if x.size < 2:
        raise InsufficientDataError("acf1_iet", 3, x.size + 1)
    c = x - x.mean()
    denom = float(np.dot(c, c))
    if denom == 0.0:
        return 0.0, True
    return float(np.dot(c[:-1], c[1:]) / denom), False


def ripley_forward(times: np.ndarray, window: float = RIPLEY_WINDOW) -> float:
    """Average number of later events in ``(t_i, t_i + window]``; no edge correction."""
    if times.size < 1:
        raise InsufficientDataError("ripley_k_2h", 1, 0)
    right = np.searchsorted(times, times + window, side="right")
    left = np.searchsorted(times, times, side="right")
    return float((right - left).sum() / times.size)


def _stats_of(times: np.ndarray) -> SummaryStats:
    iet = np.diff(times)
    acf, degenerate = lag1_acf(iet)
    return SummaryStats(upper_tail_mean(iet), acf, ripley_forward(times), degenerate)


def compute_summary_stats(log: EventLog, pooled: bool = True):
    """Statistics of the pooled event stream, or a tuple with one entry per dimension."""
    if pooled:
        if len(log) < 3:
            raise InsufficientDataError("acf1_iet" if len(log) == 2 else "upper_tail_mean_iet", 3, len(log))
        return _stats_of(np.asarray(log.times))
    out = []
    for m in range(log.num_dims):
        t = np.asarray(log.times[log.dims == m])
        if t.size < 3:
            raise InsufficientDataError(f"acf1_iet (dimension {m + 1})", 3, t.size)
        out.append(_stats_of(t))
    return tuple(out)


def _stat_vector(log: EventLog, names) -> np.ndarray:
    """Requested statistics of a pooled log; NaN where the log is too short."""
    t = np.asarray(log.times)
    iet = np.diff(t)
    out = np.full(len(names), np.nan)
    for k, name in enumerate(names):
        try:
            if name == "upper_tail_mean_iet":
                out[k] = upper_tail_mean(iet)
            elif name == "acf1_iet":
                out[k] = lag1_acf(iet)[0]
            else:
                out[k] = ripley_forward(t)
        except InsufficientDataError:
            pass
    return out


# --- posterior predictive -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class PpcResult:
    statistic: str
    observed: float
    draws: np.ndarray
    p_value: float
    upper_tail: float  # P(draw >= observed)
    lower_tail: float  # P(draw <= observed)
    replaced: int = 0

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "observed": self.observed, "p_value": self.p_value,
                "upper_tail": self.upper_tail, "lower_tail": self.lower_tail, "replaced": self.replaced,
                "draws": [None if not np.isfinite(x) else float(x) for x in self.draws]}


def predictive_p_value(observed: float, draws) -> tuple[float, float, float]:
    """Two-sided p-value ``min(1, 2 min(upper, lower))`` plus both tail proportions.

    Non-finite draws are ignored; with none left every value is NaN.
    """
    d = np.asarray(draws, dtype=float)
    d = d[np.isfinite(d)]
    if d.size == 0 or not np.isfinite(observed):
        return math.nan, math.nan, math.nan
    upper = float(np.mean(d >= observed))
    lower = float(np.mean(d <= observed))
    return min(1.0, 2.0 * min(upper, lower)), upper, lower


def _canonical_order(draws: ChainDraws) -> np.ndarray:
    # sort rows so that selection does not depend on the order the draws were stored in
    mat = draws.parameter_matrix()
    return np.lexsort(mat.T[::-1])


def _predictive_logs(draws: ChainDraws, R: int, seed: int, horizon: float | None, max_events: int):
    """Simulate ``R`` logs from distinct stable draws; returns the logs and the replacement count."""
    if R > len(draws):
        raise ContractError(f"asked for {R} replicates but the chain holds {len(draws)} draws")
    horizon = draws.horizon if horizon is None else float(horizon)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = _canonical_order(draws)[rng.permutation(len(draws))]
    logs, replaced = [], 0
    for i in order:
        if len(logs) == R:
            break
        params = draws.params_at(int(i))
        rho = spectral_radius(params.K if draws.model == "classic" else params.L)
        sim_seed = int(rng.integers(2**63))
        if rho >= 1:
            replaced += 1
            continue
        try:
            sim = simulate(SimulationRequest(params, horizon=horizon, seed=sim_seed, max_events=max_events))
        except SimulationOverflow:
            replaced += 1
            continue
        logs.append(sim.log)
    if len(logs) < R:
        raise ContractError(f"only {len(logs)} of {R} draws could be simulated")
    return logs, replaced


def posterior_predictive(draws: ChainDraws, observed: EventLog, R: int, stats=STATISTICS, seed: int = 0,
                         horizon: float | None = None, max_events: int = 1_000_000) -> list[PpcResult]:
    """Predictive distribution of each pooled statistic from ``R`` retained draws.

    Draws are taken without replacement; draws with spectral radius >= 1 (or whose
    simulation overflows) are skipped and counted in ``replaced``.
    """
    stats = tuple(stats)
    unknown = set(stats) - set(STATISTICS)
    if unknown:
        raise ContractError(f"unknown statistics {sorted(unknown)}")
    if R == 0:
        return []
    logs, replaced = _predictive_logs(draws, R, seed, horizon, max_events)
    sims = np.array([_stat_vector(lg, stats) for lg in logs])
    obs = _stat_vector(observed, stats)
    out = []
    for k, name in enumerate(stats):
        p, up, lo = predictive_p_value(obs[k], sims[:, k])
        out.append(PpcResult(name, float(obs[k]), sims[:, k], p, up, lo, replaced))
    return out


@dataclass(frozen=True, eq=False)
class Envelope:
    grid: np.ndarray
    levels: tuple
    quantiles: np.ndarray  # len(levels) x len(grid)
    observed: np.ndarray
    replaced: int = 0

    def coverage(self, lo: int = 0, hi: int = -1) -> float:
        """Share of grid points where the observed curve lies inside the chosen band."""
        inside = (self.observed >= self.quantiles[lo]) & (self.observed <= self.quantiles[hi])
        return float(inside.mean())


def cumulative_counts(times, grid) -> np.ndarray:
    return np.searchsorted(np.asarray(times), np.asarray(grid, float), side="right")


def cumulative_envelope(draws: ChainDraws, observed: EventLog, grid, R: int, seed: int = 0,
                        max_events: int = 1_000_000) -> Envelope:
    """Pointwise predictive quantiles of the pooled cumulative count on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or grid.min() < 0 or grid.max() > observed.horizon:
        raise ContractError("grid must be a nonempty vector inside [0, horizon]")
    if R < 1:
        raise ContractError("need at least one replicate")
    logs, replaced = _predictive_logs(draws, R, seed, observed.horizon, max_events)
    curves = np.array([cumulative_counts(lg.times, grid) for lg in logs], dtype=float)
    q = np.percentile(curves, ENVELOPE_LEVELS, axis=0)
    return Envelope(grid, ENVELOPE_LEVELS, q, cumulative_counts(observed.times, grid).astype(float), replaced)


# --- traces -------------------------------------------------------------------


def drift_statistic(x) -> float:
    """|mean(first half) - mean(second half)| / pooled SD of the halves."""
    x = np.asarray(x, dtype=float)
    if x.size < 4:
        raise ContractError("need at least four draws")
    half = x.size // 2
    a, b = x[:half], x[x.size - half:]
    diff = abs(a.mean() - b.mean())
    sd = math.sqrt(0.5 * (a.var(ddof=1) + b.var(ddof=1)))
    if sd == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return float(diff / sd)


@dataclass(frozen=True, eq=False)
class TraceReport:
    series: dict
    drift: dict
    stable: bool

    def to_rows(self):
        names = list(self.series)
        yield ["draw"] + names
        n = len(next(iter(self.series.values()))) if names else 0
        for i in range(n):
            yield [i] + [repr(float(self.series[k][i])) for k in names]


def trace_report(draws: ChainDraws) -> TraceReport:
    """Trace series for background scales, K/L entries, kernel rates and the spectral radius."""
    if len(draws) == 0:
        raise ContractError("empty chain")
    M = draws.num_dims
    series = {}
    if draws.background == "seasonal":
        series.update({f"alpha_{m + 1}": draws.alpha[:, m] for m in range(M)})
    elif draws.background == "piecewise":
        w = np.diff(draws.bin_edges) / (draws.bin_edges[-1] - draws.bin_edges[0])
        series.update({f"mu_{m + 1}_mean": draws.mu[:, m] @ w for m in range(M)})
    else:
        series.update({f"mu_{m + 1}": draws.mu[:, m] for m in range(M)})
    series.update({f"K_{j + 1}_{m + 1}": draws.K[:, j, m] for j in range(M) for m in range(M)})
    if draws.L is not None:
        series.update({f"L_{j + 1}_{m + 1}": draws.L[:, j, m] for j in range(M) for m in range(M)})
    series.update(draws.rates)
    series[draws.rho_name] = draws.rho
    drift = {k: drift_statistic(v) if len(v) >= 4 else math.nan for k, v in series.items()}
    return TraceReport(series, drift, bool(np.all(draws.rho < 1)))

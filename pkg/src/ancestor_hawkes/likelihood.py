"""Branching-conditional log-likelihoods and stability diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _sweeps
from .core import (
    IMMIGRANT,
    AncestorParams,
    BranchingState,
    ClassicParams,
    ConstantBackground,
    EventLog,
    StructuralError,
)

# Returned (never produced by log(0)) when a zero magnitude or zero background
# rate has to explain an observed event.
LOG_ZERO = float("-inf")


def spectral_radius(A, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Perron root of a nonnegative matrix.

    Power iteration bracketed by the Collatz-Wielandt bounds; falls back to a
    dense eigenvalue solve when the iterate loses positivity or stalls.
    """
    A = np.ascontiguousarray(A, dtype=float)
    if not np.any(A):
        return 0.0
    rho = _sweeps.perron_root(A, tol, max_iter)
    if np.isnan(rho):
        rho = np.max(np.abs(np.linalg.eigvals(A)))
    return float(rho)


@dataclass(frozen=True, eq=False)
class StabilityReport:
    spectral_radius_L: float
    spectral_radius_K: float
    stable: bool
    triggered_rate: np.ndarray | None = None
    total_rate: np.ndarray | None = None


def stationary_rates(params: AncestorParams | ClassicParams) -> np.ndarray:
    """Long-run mean intensity ``mu + (I - L')^{-1} K' mu`` (primes: column convention)."""
    return _stationary(_as_anc(params))[1]


def _as_anc(params):
    return params.as_ancestor() if isinstance(params, ClassicParams) else params


def _stationary(p: AncestorParams):
    mu = np.asarray(p.background.mu, dtype=float)
    M = mu.size
    # column convention: entry (d, j) is the influence j -> d
    r = np.linalg.solve(np.eye(M) - p.L.T, p.K.T @ mu)
    return r, mu + r


def stability_report(params: AncestorParams | ClassicParams) -> StabilityReport:
    """Spectral radii and, for a stable constant background, the stationary rates."""
    p = _as_anc(params)
    rho_K = spectral_radius(p.K)
    rho_L = rho_K if isinstance(params, ClassicParams) else spectral_radius(p.L)
    stable = rho_L < 1
    if not stable or not isinstance(p.background, ConstantBackground):
        return StabilityReport(rho_L, rho_K, stable)
    r, lam = _stationary(p)
    return StabilityReport(rho_L, rho_K, stable, r, lam)


def _background_term(background, log: EventLog, branching: BranchingState) -> float:
    imm = branching.is_immigrant
    rates = background.rates_at(log.dims[imm], log.times[imm])
    if np.any(rates <= 0):
        return LOG_ZERO
    comp = sum(background.integral(m, log.horizon) for m in range(log.num_dims))
    return float(np.sum(np.log(rates)) - comp)


def _offspring_term(eta, rate, log: EventLog, parents: np.ndarray, select) -> float:
    """Compensators and child densities for the parents flagged by ``select``.

    ``eta`` and ``rate`` are source-major M x M matrices.
    """
    t, d, T = log.times, log.dims, log.horizon
    src = d[select]
    tau = T - t[select]
    comp = np.sum(eta[src] * -np.expm1(-rate[src] * tau[:, None]))
    kids = np.flatnonzero((parents != IMMIGRANT) & select[np.maximum(parents, 0)])
    par = parents[kids]
    e = eta[d[par], d[kids]]
    if np.any(e <= 0):
        return LOG_ZERO
    r = rate[d[par], d[kids]]
    lag = t[kids] - t[par]
    return float(np.sum(np.log(e) + np.log(r) - r * lag) - comp)


def _check(log, branching):
    if len(log) != branching.parents.size:
        raise StructuralError("branching state does not match event log")


def classic_conditional_loglik(params: ClassicParams, log: EventLog, branching: BranchingState) -> float:
    """Log-likelihood of the classic model given the parent labels."""
    _check(log, branching)
    bg = _background_term(params.background, log, branching)
    if bg == LOG_ZERO:
        return LOG_ZERO
    every = np.ones(len(log), dtype=bool)
    off = _offspring_term(params.K, params.g.rate_matrix(log.num_dims), log, branching.parents, every)
    return bg + off


def ancestor_conditional_loglik(params: AncestorParams, log: EventLog, branching: BranchingState) -> float:
    """Log-likelihood of the Ancestor model given the parent labels.

    Immigrant parents reproduce through ``(K, g)``, triggered parents through ``(L, h)``.
    """
    _check(log, branching)
    M = log.num_dims
    bg = _background_term(params.background, log, branching)
    imm = branching.is_immigrant
    k_term = _offspring_term(params.K, params.g.rate_matrix(M), log, branching.parents, imm)
    l_term = _offspring_term(params.L, params.h.rate_matrix(M), log, branching.parents, ~imm)
    if LOG_ZERO in (bg, k_term, l_term):
        return LOG_ZERO
    return bg + k_term + l_term


def parent_block_loglik(params: AncestorParams, log: EventLog, branching: BranchingState,
                        parent: int, as_immigrant: bool) -> float:
    """Offspring block of one parent, evaluated under the requested label."""
    M = log.num_dims
    eta, rate = ((params.K, params.g.rate_matrix(M)) if as_immigrant
                 else (params.L, params.h.rate_matrix(M)))
    select = np.zeros(len(log), dtype=bool)
    select[parent] = True
    return _offspring_term(eta, rate, log, branching.parents, select)

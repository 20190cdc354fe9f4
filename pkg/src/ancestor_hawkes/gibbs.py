"""Latent-branching Gibbs samplers for the classic and Ancestor Hawkes models.

Block order within an iteration is fixed: branching -> background -> K -> L ->
kernel rates. Every Gamma is shape-rate. Chains start from the all-immigrant
branching with every parameter at its prior mean.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import _sweeps
from .chain import ChainDraws
from .core import (
    IMMIGRANT,
    AncestorParams,
    BranchingState,
    ClassicParams,
    ConstantBackground,
    ContractError,
    EventLog,
    KernelSpec,
    PiecewiseBackground,
    PriorSpec,
    rebuild_child_sets,
)
from .likelihood import spectral_radius
from .seasonal import N_CELLS, N_HOUR, N_MONTH, N_WDAY, CalendarGrid, SeasonalBackground
from .slice import slice_sample

MODELS = ("classic", "ancestor", "ancestor-restricted")
BACKGROUNDS = ("constant", "piecewise", "seasonal")


class ChainError(RuntimeError):
    """A chain produced an invalid state; ``last_good`` holds the previous one."""

    def __init__(self, message, last_good):
        super().__init__(message)
        self.last_good = last_good


@dataclass(frozen=True)
class McmcConfig:
    n_iter: int = 20_000
    burn_in: int = 5_000
    thin: int = 1
    seed: int = 0
    slice_width: float = 1.0
    max_doublings: int = 50
    # parent candidates further back than tail_cutoff / (slowest kernel rate) are skipped
    tail_cutoff: float = 50.0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iter:
            raise ContractError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ContractError("thin must be >= 1")
        if self.slice_width <= 0 or self.max_doublings < 0 or self.tail_cutoff <= 0:
            raise ContractError("invalid slice or cutoff settings")

    @property
    def n_retained(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return asdict(self)


def _gamma(rng, shape, rate):
    return rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float))


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(x, dtype=float))


# --- branching ---------------------------------------------------------------


def _cutoff(tail_cutoff, *kernels) -> float:
    slowest = min(min(k.rate_diag, k.rate_off) for k in kernels)
    return tail_cutoff / slowest


def _compensators(eta, rate, dims, tau):
    """Per-event censored compensator sums and the primitive matrix (N x M)."""
    prim = -np.expm1(-rate[dims] * tau[:, None])
    return (eta[dims] * prim).sum(axis=1), prim


def classic_sample_branching(log: EventLog, params: ClassicParams, rng: np.random.Generator,
                             tail_cutoff: float = math.inf) -> BranchingState:
    """Draw every parent label independently from its full conditional."""
    parents = np.full(len(log), IMMIGRANT, dtype=np.int64)
    if len(log):
        log_mu = _log(params.background.rates_at(log.dims, log.times))
        M = log.num_dims
        _sweeps.classic_sweep(log.times, log.dims, parents, _log(params.K), params.g.rate_matrix(M),
                              log_mu, _cutoff(tail_cutoff, params.g), rng.random(len(log)))
    return rebuild_child_sets(log, parents)


def ancestor_sample_branching(log: EventLog, params: AncestorParams, state: BranchingState,
                              rng: np.random.Generator, tail_cutoff: float = math.inf) -> BranchingState:
    """One reverse-time sweep over the parent labels of the Ancestor model."""
    state.check(log)
    parents = np.array(state.parents, dtype=np.int64)
    if len(log):
        _ancestor_step(log, params, parents, *_sweeps.build_links(parents, len(log)),
                       _cutoff(tail_cutoff, params.g, params.h), rng)
    out = rebuild_child_sets(log, parents)
    out.check(log)
    return out


def _ancestor_step(log, params, parents, head, nxt, prv, cutoff, rng):
    M = log.num_dims
    g_rate, h_rate = params.g.rate_matrix(M), params.h.rate_matrix(M)
    tau = log.horizon - log.times
    comp_K, _ = _compensators(params.K, g_rate, log.dims, tau)
    comp_L, _ = _compensators(params.L, h_rate, log.dims, tau)
    log_mu = _log(params.background.rates_at(log.dims, log.times))
    _sweeps.ancestor_sweep(log.times, log.dims, parents, head, nxt, prv, _log(params.K), _log(params.L),
                           g_rate, h_rate, log_mu, comp_K, comp_L, cutoff, rng.random(len(log)))


# --- background --------------------------------------------------------------


def sample_mu_constant(branching: BranchingState, prior, horizon: float, rng: np.random.Generator) -> np.ndarray:
    a, b = prior
    return _gamma(rng, a + branching.immigrant_counts(), b + horizon)


def immigrant_bin_counts(branching: BranchingState, times, edges) -> np.ndarray:
    """Immigrant counts per (dimension, bin)."""
    edges = np.asarray(edges, dtype=float)
    imm = branching.is_immigrant
    n_bins = edges.size - 1
    b = np.clip(np.searchsorted(edges, np.asarray(times)[imm], side="right") - 1, 0, n_bins - 1)
    flat = branching.dims[imm] * n_bins + b
    return np.bincount(flat, minlength=branching.num_dims * n_bins).reshape(branching.num_dims, n_bins)


def sample_mu_piecewise(branching: BranchingState, log: EventLog, edges, prior,
                        rng: np.random.Generator) -> np.ndarray:
    """Per (dimension, bin) rates given immigrant counts and bin widths."""
    edges = np.asarray(edges, dtype=float)
    if edges.size < 2:
        raise ContractError("need at least one bin")
    if edges[0] != 0 or not np.isclose(edges[-1], log.horizon) or np.any(np.diff(edges) <= 0):
        raise ContractError("bins must partition [0, horizon]")
    a, b = (np.broadcast_to(np.asarray(v, float), (edges.size - 1,)) for v in prior)
    counts = immigrant_bin_counts(branching, log.times, edges)
    return _gamma(rng, a + counts, b + np.diff(edges))


def _seasonal_update(bg: SeasonalBackground, imm_dims, imm_cells, priors: PriorSpec, rng,
                     fixed_theta=False):
    M = bg.num_dims
    E = bg.exposure
    n_mc = np.bincount(imm_dims * N_CELLS + imm_cells, minlength=M * N_CELLS).reshape(M, N_CELLS)
    n_cell = n_mc.sum(axis=0).reshape(N_HOUR, N_WDAY, N_MONTH)
    a_t, b_t = priors.theta
    th, tw, tm = bg.theta_hour, bg.theta_wday, bg.theta_month
    alpha = np.array(bg.alpha)
    empty = {}
    if not fixed_theta:
        A = alpha.sum()
        expo = A * np.einsum("hdm,d,m->h", E, tw, tm)
        th = _gamma(rng, a_t + n_cell.sum(axis=(1, 2)), b_t + expo)
        empty["hour"] = np.flatnonzero(E.sum(axis=(1, 2)) == 0)
        expo = A * np.einsum("hdm,h,m->d", E, th, tm)
        tw = _gamma(rng, a_t + n_cell.sum(axis=(0, 2)), b_t + expo)
        empty["wday"] = np.flatnonzero(E.sum(axis=(0, 2)) == 0)
        expo = A * np.einsum("hdm,h,d->m", E, th, tw)
        tm = _gamma(rng, a_t + n_cell.sum(axis=(0, 1)), b_t + expo)
        empty["month"] = np.flatnonzero(E.sum(axis=(0, 1)) == 0)
        bg = SeasonalBackground(alpha, th, tw, tm, bg.grid).normalized()
    a_a, b_a = priors.alpha
    weighted = float(np.sum(E * bg.cell_factor()))
    alpha = _gamma(rng, a_a + n_mc.sum(axis=1), b_a + weighted)
    return SeasonalBackground(alpha, bg.theta_hour, bg.theta_wday, bg.theta_month, bg.grid), empty


def sample_seasonal_background(branching: BranchingState, log: EventLog, background: SeasonalBackground,
                               priors: PriorSpec, rng: np.random.Generator, fixed_theta: bool = False):
    """Update the seasonal factors and scales from the immigrant events.

    Each factor vector gets a per-entry Gamma draw given the others, all three are
    then rescaled to exposure-weighted mean one, and ``alpha`` is drawn last.
    Returns the new background and, per factor, the entries with zero exposure
    (those are drawn from their prior).
    """
    imm = branching.is_immigrant
    cells = background.grid.cell_of(log.times[imm])
    return _seasonal_update(background, log.dims[imm], cells, priors, rng, fixed_theta)


# --- magnitudes --------------------------------------------------------------


@dataclass
class OffspringStats:
    """Sufficient statistics of the offspring blocks given the branching labels.

    ``count_*[j, m]``: children in ``m`` of parents in ``j`` (immigrant / triggered
    parents). ``exposure_*[j, m]``: summed censored kernel mass of those parents.
    """

    count_K: np.ndarray
    exposure_K: np.ndarray
    count_L: np.ndarray
    exposure_L: np.ndarray


def _offspring_counts(times, dims, parents, M, classic=False):
    kids = np.flatnonzero(parents >= 0)
    par = parents[kids]
    from_imm = np.ones(kids.size, bool) if classic else parents[par] < 0
    idx = dims[par] * M + dims[kids]
    c_K = np.bincount(idx[from_imm], minlength=M * M).reshape(M, M)
    c_L = np.bincount(idx[~from_imm], minlength=M * M).reshape(M, M)
    return kids, par, from_imm, c_K, c_L


def offspring_stats(branching: BranchingState, log: EventLog, g: KernelSpec, h: KernelSpec,
                    classic: bool = False) -> OffspringStats:
    M = log.num_dims
    parents = np.asarray(branching.parents)
    *_, c_K, c_L = _offspring_counts(log.times, log.dims, parents, M, classic)
    tau = log.horizon - log.times
    onehot = np.eye(M)[log.dims]
    imm = np.ones(len(log), bool) if classic else parents < 0
    G = -np.expm1(-g.rate_matrix(M)[log.dims] * tau[:, None])
    H = -np.expm1(-h.rate_matrix(M)[log.dims] * tau[:, None])
    return OffspringStats(c_K, (onehot * imm[:, None]).T @ G, c_L, (onehot * ~imm[:, None]).T @ H)


def sample_K_L(branching: BranchingState, log: EventLog, g: KernelSpec, h: KernelSpec,
               priors: PriorSpec, rng: np.random.Generator, restricted: bool = False):
    """Conjugate draws of K (immigrant parents) and L (triggered parents)."""
    M = log.num_dims
    st = offspring_stats(branching, log, g, h)
    aK, bK = priors.magnitude("K", M)
    aL, bL = priors.magnitude("L", M)
    K = _gamma(rng, aK + st.count_K, bK + st.exposure_K)
    L = _gamma(rng, aL + st.count_L, bL + st.exposure_L)
    if restricted:
        L = np.diag(np.diag(L))
    return K, L


# --- kernel rates ------------------------------------------------------------


@dataclass
class _RateData:
    n_child: float
    lag_sum: float
    coef: np.ndarray
    tau: np.ndarray


def _rate_data(times, dims, parents, horizon, eta, kids, par, use, select_parents, diag):
    """Children/parent summaries for one (family, diag/off) kernel rate."""
    same = dims[par] == dims[kids]
    pick = use & (same if diag else ~same)
    lags = times[kids[pick]] - times[par[pick]]
    p_idx = np.flatnonzero(select_parents)
    d = dims[p_idx]
    own = eta[d, d]
    coef = own if diag else eta[d].sum(axis=1) - own
    keep = np.flatnonzero(coef > 0)[::-1]  # latest parents first: ascending censoring time
    return _RateData(float(pick.sum()), float(lags.sum()), np.ascontiguousarray(coef[keep]),
                     np.ascontiguousarray(horizon - times[p_idx[keep]]))


def _slice_rate(x0, prior, data: _RateData, rng, width, max_doublings):
    a, b = prior

    def logf(x):
        return _sweeps.rate_log_conditional(x, a, b, data.n_child, data.lag_sum, data.coef, data.tau)

    return slice_sample(x0, logf, rng, width, max_doublings)


def sample_kernel_rates(branching: BranchingState, log: EventLog, K, L, g: KernelSpec, h: KernelSpec,
                        priors: PriorSpec, rng: np.random.Generator, width: float = 1.0,
                        max_doublings: int = 50):
    """Slice-sample ``(beta_diag, beta_off)`` from immigrant parents and
    ``(gamma_diag, gamma_off)`` from triggered parents."""
    parents = np.asarray(branching.parents)
    kids, par, from_imm, *_ = _offspring_counts(log.times, log.dims, parents, log.num_dims)
    imm = parents < 0
    args = (log.times, log.dims, parents, log.horizon)
    out = []
    for eta, use, sel, prior, x0, diag in (
        (K, from_imm, imm, priors.beta_diag, g.rate_diag, True),
        (K, from_imm, imm, priors.beta_off, g.rate_off, False),
        (L, ~from_imm, ~imm, priors.gamma_diag, h.rate_diag, True),
        (L, ~from_imm, ~imm, priors.gamma_off, h.rate_off, False),
    ):
        data = _rate_data(*args, np.asarray(eta, float), kids, par, use, sel, diag)
        out.append(_slice_rate(x0, prior, data, rng, width, max_doublings))
    return KernelSpec(out[0], out[1]), KernelSpec(out[2], out[3])


# --- chain -------------------------------------------------------------------


def _initial_background(kind, log, priors, bin_edges, calendar):
    M = log.num_dims
    if kind == "constant":
        a, b = priors.mu
        return ConstantBackground(np.full(M, a / b))
    if kind == "piecewise":
        if bin_edges is None:
            raise ContractError("piecewise background needs bin edges")
        edges = np.asarray(bin_edges, dtype=float)
        a, b = (np.broadcast_to(np.asarray(v, float), (edges.size - 1,)) for v in priors.mu)
        return PiecewiseBackground(edges, np.tile(a / b, (M, 1)))
    if kind == "seasonal":
        if calendar is None:
            raise ContractError("seasonal background needs a calendar grid")
        if not np.isclose(calendar.horizon, log.horizon):
            raise ContractError("calendar window does not match the log horizon")
        a, b = priors.alpha
        a_t, b_t = priors.theta
        bg = SeasonalBackground(np.full(M, a / b), np.full(N_HOUR, a_t / b_t), np.full(N_WDAY, a_t / b_t),
                                np.full(N_MONTH, a_t / b_t), calendar)
        return bg.normalized()
    raise ContractError(f"unknown background {kind!r}")


def _check_state(bg, K, L, g, h, parents):
    arrays = [K, np.atleast_1d(g.rate_diag), np.atleast_1d(g.rate_off)]
    arrays += [getattr(bg, "mu", None), getattr(bg, "rates", None), getattr(bg, "alpha", None)]
    if L is not None:
        arrays += [L, np.atleast_1d(h.rate_diag), np.atleast_1d(h.rate_off)]
    for a in arrays:
        if a is not None and (not np.all(np.isfinite(a)) or np.any(np.asarray(a) < 0)):
            return False
    return True


def run_chain(log: EventLog, model: str = "ancestor", priors: PriorSpec | None = None,
              config: McmcConfig | None = None, background: str = "constant",
              bin_edges=None, calendar: CalendarGrid | None = None) -> ChainDraws:
    """Run one Gibbs chain and return the retained draws.

    ``background`` is ``"constant"``, ``"piecewise"`` (needs ``bin_edges``) or
    ``"seasonal"`` (needs ``calendar`` covering ``[0, log.horizon]``).
    """
    if model not in MODELS:
        raise ContractError(f"unknown model {model!r}")
    if background not in BACKGROUNDS:
        raise ContractError(f"unknown background {background!r}")
    priors = priors or PriorSpec()
    config = config or McmcConfig()
    classic = model == "classic"
    restricted = model == "ancestor-restricted"
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    started = time.perf_counter()

    M, N, T = log.num_dims, len(log), log.horizon
    times, dims = log.times, log.dims
    tau = T - times
    onehot = np.eye(M)[dims]
    off_diag = ~np.eye(M, dtype=bool)
    cells = calendar.cell_of(times) if background == "seasonal" else None

    bg = _initial_background(background, log, priors, bin_edges, calendar)
    aK, bK = priors.magnitude("K", M)
    aL, bL = priors.magnitude("L", M)
    K = aK / bK
    L = None if classic else np.where(off_diag & restricted, 0.0, aL / bL)
    g = KernelSpec(priors.beta_diag[0] / priors.beta_diag[1], priors.beta_off[0] / priors.beta_off[1])
    h = None if classic else KernelSpec(priors.gamma_diag[0] / priors.gamma_diag[1],
                                        priors.gamma_off[0] / priors.gamma_off[1])
    parents = np.full(N, IMMIGRANT, dtype=np.int64)
    head, nxt, prv = _sweeps.build_links(parents, N)

    draws = ChainDraws.allocate(model, background, M, T, config, priors, bg, bin_edges, calendar)
    last_good = None
    for it in range(1, config.n_iter + 1):
        g_rate = g.rate_matrix(M)
        comp_K, G = _compensators(K, g_rate, dims, tau)
        log_mu = _log(bg.rates_at(dims, times))
        if classic:
            _sweeps.classic_sweep(times, dims, parents, _log(K), g_rate, log_mu,
                                  _cutoff(config.tail_cutoff, g), rng.random(N))
        else:
            h_rate = h.rate_matrix(M)
            comp_L, H = _compensators(L, h_rate, dims, tau)
            _sweeps.ancestor_sweep(times, dims, parents, head, nxt, prv, _log(K), _log(L), g_rate, h_rate,
                                   log_mu, comp_K, comp_L, _cutoff(config.tail_cutoff, g, h), rng.random(N))
        imm = parents < 0

        if background == "constant":
            a, b = priors.mu
            bg = ConstantBackground(_gamma(rng, a + np.bincount(dims[imm], minlength=M), b + T))
        elif background == "piecewise":
            edges = bg.edges
            a, b = (np.broadcast_to(np.asarray(v, float), (edges.size - 1,)) for v in priors.mu)
            nb = edges.size - 1
            bins = np.clip(np.searchsorted(edges, times[imm], side="right") - 1, 0, nb - 1)
            counts = np.bincount(dims[imm] * nb + bins, minlength=M * nb).reshape(M, nb)
            bg = PiecewiseBackground(edges, _gamma(rng, a + counts, b + np.diff(edges)))
        else:
            bg, empty = _seasonal_update(bg, dims[imm], cells[imm], priors, rng)
            draws.note_empty_cells(empty)

        kids, par, from_imm, c_K, c_L = _offspring_counts(times, dims, parents, M, classic)
        par_imm = np.ones(N, bool) if classic else imm
        K = _gamma(rng, aK + c_K, bK + (onehot * par_imm[:, None]).T @ G)
        if not classic:
            L = _gamma(rng, aL + c_L, bL + (onehot * ~imm[:, None]).T @ H)
            if restricted:
                L[off_diag] = 0.0

        base = (times, dims, parents, T)
        rates = []
        specs = [(K, from_imm, par_imm, priors.beta_diag, g.rate_diag, True),
                 (K, from_imm, par_imm, priors.beta_off, g.rate_off, False)]
        if not classic:
            specs += [(L, ~from_imm, ~imm, priors.gamma_diag, h.rate_diag, True),
                      (L, ~from_imm, ~imm, priors.gamma_off, h.rate_off, False)]
        for eta, use, sel, prior, x0, diag in specs:
            data = _rate_data(*base, eta, kids, par, use, sel, diag)
            rates.append(_slice_rate(x0, prior, data, rng, config.slice_width, config.max_doublings))
        g = KernelSpec(rates[0], rates[1])
        if not classic:
            h = KernelSpec(rates[2], rates[3])

        if not _check_state(bg, K, L, g, h, parents):
            raise ChainError(f"invalid parameter state at iteration {it}", last_good)
        last_good = {"iteration": it, "background": bg, "K": K.copy(),
                     "L": None if classic else L.copy(), "g": g, "h": h, "parents": parents.copy()}
        if it > config.burn_in and (it - config.burn_in) % config.thin == 0:
            rho = spectral_radius(K if classic else L)
            draws.record(bg, K, L, g, h, rho, imm, dims)
    draws.finish(time.perf_counter() - started, last_good)
    return draws


def chain_state_consistent(parents, head, nxt, prv) -> bool:
    """True when the linked child lists are exactly the inverse of ``parents``."""
    n = parents.size
    seen = np.full(n, -2, dtype=np.int64)
    for p in range(n):
        c, prev = head[p], -1
        while c >= 0:
            if seen[c] != -2 or prv[c] != prev:
                return False
            seen[c] = p
            prev, c = c, nxt[c]
    return bool(np.array_equal(np.where(parents >= 0, seen, IMMIGRANT), np.where(parents >= 0, parents, IMMIGRANT))
                and np.all(seen[parents < 0] == -2))

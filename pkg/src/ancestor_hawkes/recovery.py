"""Scenario presets and the simulate -> fit -> aggregate recovery harness."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .chain import ChainDraws
from .core import AncestorParams, ConstantBackground, ContractError, KernelSpec, PriorSpec
from .gibbs import ChainError, McmcConfig, run_chain
from .likelihood import spectral_radius
from .seasonal import CalendarGrid, SeasonalBackground
from .simulate import SimulationOverflow, SimulationRequest, simulate
from .slice import SliceSamplerError

_S2_K = [[0.18, 0.12, 0.00, 0.10],
         [0.00, 0.16, 0.12, 0.00],
         [0.10, 0.00, 0.17, 0.12],
         [0.12, 0.10, 0.00, 0.15]]
_S2_L = [[0.30, 0.22, 0.20, 0.00],
         [0.20, 0.28, 0.00, 0.18],
         [0.22, 0.20, 0.26, 0.00],
         [0.00, 0.22, 0.20, 0.30]]
_S2_MU = [0.05, 0.07, 0.04, 0.06]

# Hand-built stand-in for a 9-person chat over 2021: heterogeneous, partly sparse
# influence, fast kernels (replies within minutes), a few thousand events a year.
_CHAT_K = [[0.00, 0.35, 0.25, 0.00, 0.01, 0.00, 0.05, 0.22, 0.33],
           [0.07, 0.14, 0.11, 0.06, 0.00, 0.08, 0.00, 0.10, 0.26],
           [0.01, 0.07, 0.00, 0.12, 0.05, 0.01, 0.26, 0.14, 0.02],
           [0.05, 0.19, 0.07, 0.12, 0.00, 0.16, 0.35, 0.34, 0.00],
           [0.10, 0.02, 0.00, 0.00, 0.00, 0.09, 0.03, 0.27, 0.35],
           [0.13, 0.04, 0.00, 0.00, 0.03, 0.13, 0.07, 0.26, 0.03],
           [0.07, 0.03, 0.12, 0.01, 0.04, 0.17, 0.07, 0.06, 0.06],
           [0.00, 0.00, 0.00, 0.02, 0.02, 0.21, 0.12, 0.00, 0.03],
           [0.00, 0.05, 0.00, 0.02, 0.07, 0.02, 0.00, 0.00, 0.00]]
_CHAT_L = [[0.13, 0.05, 0.00, 0.08, 0.00, 0.00, 0.09, 0.02, 0.00],
           [0.00, 0.15, 0.00, 0.00, 0.04, 0.04, 0.01, 0.01, 0.05],
           [0.00, 0.00, 0.14, 0.00, 0.13, 0.00, 0.00, 0.10, 0.07],
           [0.02, 0.00, 0.04, 0.11, 0.15, 0.01, 0.02, 0.01, 0.12],
           [0.08, 0.00, 0.00, 0.06, 0.20, 0.01, 0.00, 0.04, 0.00],
           [0.20, 0.15, 0.05, 0.01, 0.01, 0.16, 0.11, 0.00, 0.03],
           [0.00, 0.07, 0.01, 0.09, 0.04, 0.08, 0.12, 0.00, 0.06],
           [0.01, 0.00, 0.14, 0.00, 0.07, 0.02, 0.08, 0.12, 0.01],
           [0.05, 0.01, 0.00, 0.00, 0.05, 0.03, 0.03, 0.08, 0.17]]
_CHAT_ALPHA = [0.0126, 0.0131, 0.0190, 0.0099, 0.0171, 0.0173, 0.0261, 0.0272, 0.0168]
CHAT_WINDOW = (datetime(2021, 1, 1), datetime(2022, 1, 1))
CHAT_TZ = "Europe/London"

PRESETS = ("scenario1", "scenario2", "scenario3", "realdata")


@dataclass(frozen=True, eq=False)
class Scenario:
    """Generating parameters plus the stop rule and the background family to fit."""

    name: str
    params: AncestorParams
    n_events: int | None = 2000
    horizon: float | None = None
    background: str = "constant"
    calendar: CalendarGrid | None = None

    def __post_init__(self):
        if (self.n_events is None) == (self.horizon is None):
            raise ContractError("set exactly one of n_events and horizon")
        rho = spectral_radius(self.params.L)
        if rho >= 1:
            raise ContractError(f"generating parameters are not stable (spectral radius {rho:.3f})")


def chat_calendar() -> CalendarGrid:
    return CalendarGrid.build(*CHAT_WINDOW, CHAT_TZ)


def chat_background(grid: CalendarGrid | None = None) -> SeasonalBackground:
    grid = grid or chat_calendar()
    h = np.arange(24)
    hour = 1.0 + 0.8 * np.cos(2 * np.pi * (h - 19) / 24)
    wday = np.array([0.9, 0.9, 0.95, 1.0, 1.1, 1.2, 1.1])
    month = 1.0 + 0.25 * np.cos(2 * np.pi * (np.arange(12) - 11) / 12)
    return SeasonalBackground(np.array(_CHAT_ALPHA), hour, wday, month, grid).normalized()


def preset(name: str, n_events: int = 2000) -> Scenario:
    """Built-in scenarios; ``realdata`` uses a seasonal background over 2021."""
    if name == "scenario1":
        L = np.full((3, 3), 0.05)
        np.fill_diagonal(L, 0.3)
        p = AncestorParams(ConstantBackground(np.full(3, 0.05)), np.full((3, 3), 0.6), L,
                           KernelSpec(2.0, 2.0), KernelSpec(0.5, 0.5))
        return Scenario(name, p, n_events=n_events)
    if name == "scenario2":
        p = AncestorParams(ConstantBackground(_S2_MU), np.array(_S2_K), np.array(_S2_L),
                           KernelSpec(4.0, 3.0), KernelSpec(0.8, 0.5))
        return Scenario(name, p, n_events=n_events)
    if name == "scenario3":
        p = AncestorParams(ConstantBackground(_S2_MU), np.array(_S2_K), np.array(_S2_L),
                           KernelSpec(2.4, 2.4), KernelSpec(2.4, 2.4))
        return Scenario(name, p, n_events=n_events)
    if name == "realdata":
        grid = chat_calendar()
        p = AncestorParams(chat_background(grid), np.array(_CHAT_K), np.array(_CHAT_L),
                           KernelSpec(6.0, 4.0), KernelSpec(8.0, 5.0))
        return Scenario(name, p, n_events=None, horizon=grid.horizon, background="seasonal", calendar=grid)
    raise ContractError(f"unknown preset {name!r}; choose from {PRESETS}")


def scenario_from_draws(draws: ChainDraws, name: str = "fitted") -> Scenario:
    """Posterior means of an Ancestor fit as generating parameters over the same window."""
    if draws.model == "classic":
        raise ContractError("need an Ancestor fit")
    p = draws.posterior_mean()
    if draws.background == "constant":
        return Scenario(name, p, n_events=None, horizon=draws.horizon)
    return Scenario(name, p, n_events=None, horizon=draws.horizon, background=draws.background,
                    calendar=draws.calendar)


# --- report -------------------------------------------------------------------


def _corr(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    if a.std() == 0 or b.std() == 0:
        return math.nan
    return float(np.corrcoef(a, b)[0, 1])


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


@dataclass(frozen=True, eq=False)
class RecoveryReport:
    scenario: str
    K_true: np.ndarray
    L_true: np.ndarray
    K_means: np.ndarray  # replicate x M x M posterior means
    L_means: np.ndarray
    background_means: np.ndarray  # replicate x M (mu, or alpha when seasonal)
    rate_means: dict  # name -> per-replicate posterior means
    failed: tuple = ()
    classic_K_means: np.ndarray | None = None
    classic_background_means: np.ndarray | None = None
    classic_rate_means: dict = field(default_factory=dict)

    @property
    def n_ok(self) -> int:
        return int(self.K_means.shape[0])

    @property
    def K_avg(self) -> np.ndarray:
        return self.K_means.mean(axis=0)

    @property
    def L_avg(self) -> np.ndarray:
        return self.L_means.mean(axis=0)

    @property
    def K_sd(self) -> np.ndarray:
        return self.K_means.std(axis=0, ddof=1) if self.n_ok > 1 else np.zeros_like(self.K_true)

    @property
    def L_sd(self) -> np.ndarray:
        return self.L_means.std(axis=0, ddof=1) if self.n_ok > 1 else np.zeros_like(self.L_true)

    @property
    def corr_K(self) -> float:
        return _corr(self.K_true, self.K_avg)

    @property
    def corr_L(self) -> float:
        return _corr(self.L_true, self.L_avg)

    @property
    def rmse_K(self) -> float:
        return _rmse(self.K_avg, self.K_true)

    @property
    def rmse_L(self) -> float:
        return _rmse(self.L_avg, self.L_true)

    def replicate_rmse(self) -> np.ndarray:
        """Per-replicate RMSE over every K and L entry together."""
        err = np.concatenate([(self.K_means - self.K_true).reshape(self.n_ok, -1),
                              (self.L_means - self.L_true).reshape(self.n_ok, -1)], axis=1)
        return np.sqrt(np.mean(err ** 2, axis=1))

    def scatter_rows(self):
        """(matrix, source, target, generating, mean recovered, sd) for every entry."""
        M = self.K_true.shape[0]
        blocks = (("K", self.K_true, self.K_avg, self.K_sd), ("L", self.L_true, self.L_avg, self.L_sd))
        for name, true, avg, sd in blocks:
            for j in range(M):
                for m in range(M):
                    yield name, j + 1, m + 1, float(true[j, m]), float(avg[j, m]), float(sd[j, m])

    def to_dict(self) -> dict:
        nan = lambda x: None if not np.isfinite(x) else float(x)  # noqa: E731
        out = {
            "scenario": self.scenario, "replicates_ok": self.n_ok, "failed_replicates": list(self.failed),
            "K_true": self.K_true.tolist(), "L_true": self.L_true.tolist(),
            "K_mean": self.K_avg.tolist(), "L_mean": self.L_avg.tolist(),
            "K_sd": self.K_sd.tolist(), "L_sd": self.L_sd.tolist(),
            "corr_K": nan(self.corr_K), "corr_L": nan(self.corr_L),
            "rmse_K": self.rmse_K, "rmse_L": self.rmse_L,
            "background_mean": self.background_means.mean(axis=0).tolist(),
            "rates_mean": {k: float(np.mean(v)) for k, v in self.rate_means.items()},
        }
        if self.classic_K_means is not None:
            out["classic_K_mean"] = self.classic_K_means.mean(axis=0).tolist()
            out["classic_background_mean"] = self.classic_background_means.mean(axis=0).tolist()
            out["classic_rates_mean"] = {k: float(np.mean(v)) for k, v in self.classic_rate_means.items()}
        return out


def _background_mean(draws: ChainDraws) -> np.ndarray:
    if draws.background == "seasonal":
        return draws.alpha.mean(axis=0)
    if draws.background == "piecewise":
        w = np.diff(draws.bin_edges) / draws.horizon
        return draws.mu.mean(axis=0) @ w
    return draws.mu.mean(axis=0)


_FIT_ERRORS = (ChainError, SliceSamplerError, SimulationOverflow, FloatingPointError)


def recovery_study(scenario: Scenario | str, replicates: int = 200, config: McmcConfig | None = None,
                   priors: PriorSpec | None = None, seed: int = 0, classic: bool = False,
                   model: str = "ancestor", progress=None) -> RecoveryReport:
    """Simulate ``replicates`` data sets, fit each, and aggregate the posterior means.

    Replicate ``r`` simulates with seed ``(seed, r)`` and fits with chain seed
    ``config.seed + r``. Failed chains are dropped and listed in ``failed``.
    With ``classic`` set, the classic model is fitted to the same data as well.
    """
    if isinstance(scenario, str):
        scenario = preset(scenario)
    if replicates < 1:
        raise ContractError("need at least one replicate")
    config = config or McmcConfig(n_iter=6000, burn_in=2000)
    p = scenario.params
    Ks, Ls, bgs, rates = [], [], [], {}
    cK, cbg, crates = [], [], {}
    failed = []
    for r in range(replicates):
        sim_seed = int(np.random.SeedSequence([seed, r]).generate_state(1, np.uint64)[0])
        cfg = McmcConfig(**{**config.to_dict(), "seed": config.seed + r})
        try:
            data = simulate(SimulationRequest(p, horizon=scenario.horizon, n_events=scenario.n_events, seed=sim_seed))
            fit = run_chain(data.log, model=model, priors=priors, config=cfg, background=scenario.background,
                            calendar=scenario.calendar)
            cfit = (run_chain(data.log, model="classic", priors=priors, config=cfg, background=scenario.background,
                              calendar=scenario.calendar) if classic else None)
        except _FIT_ERRORS:
            failed.append(r)
            continue
        Ks.append(fit.K.mean(axis=0))
        Ls.append(fit.L.mean(axis=0))
        bgs.append(_background_mean(fit))
        for k, v in fit.rates.items():
            rates.setdefault(k, []).append(float(v.mean()))
        if cfit is not None:
            cK.append(cfit.K.mean(axis=0))
            cbg.append(_background_mean(cfit))
            for k, v in cfit.rates.items():
                crates.setdefault(k, []).append(float(v.mean()))
        if progress is not None:
            progress(r)
    if not Ks:
        raise ContractError("every replicate failed")
    return RecoveryReport(
        scenario.name, np.array(p.K), np.array(p.L), np.array(Ks), np.array(Ls), np.array(bgs),
        {k: np.array(v) for k, v in rates.items()}, tuple(failed),
        np.array(cK) if classic else None, np.array(cbg) if classic else None,
        {k: np.array(v) for k, v in crates.items()},
    )

"""Retained posterior draws and their CSV + JSON sidecar serialization."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .core import AncestorParams, ClassicParams, ConstantBackground, KernelSpec, PiecewiseBackground, PriorSpec
from .seasonal import N_HOUR, N_MONTH, N_WDAY, CalendarGrid, SeasonalBackground

SCHEMA_VERSION = 1


@dataclass(eq=False)
class ChainDraws:
    model: str
    background: str
    num_dims: int
    horizon: float
    config: dict
    priors: dict
    K: np.ndarray
    rates: dict
    rho: np.ndarray
    n_immigrant: np.ndarray
    immigrant_counts: np.ndarray
    mu: np.ndarray | None = None
    alpha: np.ndarray | None = None
    theta_hour: np.ndarray | None = None
    theta_wday: np.ndarray | None = None
    theta_month: np.ndarray | None = None
    L: np.ndarray | None = None
    bin_edges: np.ndarray | None = None
    calendar: CalendarGrid | None = None
    wall_clock: float = 0.0
    empty_cells: dict = field(default_factory=dict)
    last_state: dict | None = field(default=None, repr=False)
    _n: int = 0

    # --- construction during a run -----------------------------------------

    @classmethod
    def allocate(cls, model, background, M, horizon, config, priors, bg, bin_edges, calendar):
        n = config.n_retained
        classic = model == "classic"
        names = ["beta_diag", "beta_off"] + ([] if classic else ["gamma_diag", "gamma_off"])
        kw = dict(
            model=model, background=background, num_dims=M, horizon=float(horizon),
            config=config.to_dict(), priors=priors.to_dict(),
            K=np.zeros((n, M, M)), rates={k: np.zeros(n) for k in names},
            rho=np.zeros(n), n_immigrant=np.zeros(n, np.int64), immigrant_counts=np.zeros((n, M), np.int64),
            L=None if classic else np.zeros((n, M, M)),
        )
        if background == "constant":
            kw["mu"] = np.zeros((n, M))
        elif background == "piecewise":
            kw["bin_edges"] = np.asarray(bg.edges, float)
            kw["mu"] = np.zeros((n, M, bg.edges.size - 1))
        else:
            kw.update(alpha=np.zeros((n, M)), theta_hour=np.zeros((n, N_HOUR)), theta_wday=np.zeros((n, N_WDAY)),
                      theta_month=np.zeros((n, N_MONTH)), calendar=calendar)
        return cls(**kw)

    def record(self, bg, K, L, g, h, rho, imm, dims):
        i = self._n
        if self.background == "seasonal":
            self.alpha[i], self.theta_hour[i] = bg.alpha, bg.theta_hour
            self.theta_wday[i], self.theta_month[i] = bg.theta_wday, bg.theta_month
        elif self.background == "piecewise":
            self.mu[i] = bg.rates
        else:
            self.mu[i] = bg.mu
        self.K[i] = K
        self.rates["beta_diag"][i], self.rates["beta_off"][i] = g.rate_diag, g.rate_off
        if L is not None:
            self.L[i] = L
            self.rates["gamma_diag"][i], self.rates["gamma_off"][i] = h.rate_diag, h.rate_off
        self.rho[i] = rho
        self.immigrant_counts[i] = np.bincount(dims[imm], minlength=self.num_dims)
        self.n_immigrant[i] = imm.sum()
        self._n += 1

    def note_empty_cells(self, empty: dict):
        for k, v in empty.items():
            if len(v):
                self.empty_cells[k] = sorted(set(self.empty_cells.get(k, [])) | set(int(x) for x in v))

    def finish(self, wall_clock, last_state):
        self.wall_clock = float(wall_clock)
        self.last_state = last_state

    # --- access ---------------------------------------------------------------

    def __len__(self) -> int:
        return int(self.K.shape[0])

    @property
    def rho_name(self) -> str:
        return "rho_K" if self.model == "classic" else "rho_L"

    def background_at(self, i: int):
        if self.background == "seasonal":
            return SeasonalBackground(self.alpha[i], self.theta_hour[i], self.theta_wday[i],
                                      self.theta_month[i], self.calendar)
        if self.background == "piecewise":
            return PiecewiseBackground(self.bin_edges, self.mu[i])
        return ConstantBackground(self.mu[i])

    def params_at(self, i: int):
        bg = self.background_at(i)
        g = KernelSpec(self.rates["beta_diag"][i], self.rates["beta_off"][i])
        if self.model == "classic":
            return ClassicParams(bg, self.K[i], g)
        h = KernelSpec(self.rates["gamma_diag"][i], self.rates["gamma_off"][i])
        return AncestorParams(bg, self.K[i], self.L[i], g, h, restricted=self.model == "ancestor-restricted")

    def posterior_mean(self):
        """Parameters at the posterior mean of every block."""
        mean = lambda a: None if a is None else a.mean(axis=0)  # noqa: E731
        if self.background == "seasonal":
            bg = SeasonalBackground(mean(self.alpha), mean(self.theta_hour), mean(self.theta_wday),
                                    mean(self.theta_month), self.calendar)
        elif self.background == "piecewise":
            bg = PiecewiseBackground(self.bin_edges, mean(self.mu))
        else:
            bg = ConstantBackground(mean(self.mu))
        r = {k: float(v.mean()) for k, v in self.rates.items()}
        g = KernelSpec(r["beta_diag"], r["beta_off"])
        if self.model == "classic":
            return ClassicParams(bg, mean(self.K), g)
        L = mean(self.L)
        if self.model == "ancestor-restricted":
            L = np.diag(np.diag(L))
        return AncestorParams(bg, mean(self.K), L, g, KernelSpec(r["gamma_diag"], r["gamma_off"]),
                              restricted=self.model == "ancestor-restricted")

    def parameter_matrix(self) -> np.ndarray:
        """Every retained draw as one row of numbers (the CSV body without iteration)."""
        return np.column_stack([c for _, c in self._columns()])

    # --- serialization ----------------------------------------------------------

    def _columns(self):
        M = self.num_dims
        cols = []
        if self.background == "constant":
            cols += [(f"mu_{m + 1}", self.mu[:, m]) for m in range(M)]
        elif self.background == "piecewise":
            cols += [(f"mu_{m + 1}_{b + 1}", self.mu[:, m, b]) for m in range(M) for b in range(self.mu.shape[2])]
        else:
            cols += [(f"alpha_{m + 1}", self.alpha[:, m]) for m in range(M)]
            for name in ("theta_hour", "theta_wday", "theta_month"):
                arr = getattr(self, name)
                cols += [(f"{name}_{k + 1}", arr[:, k]) for k in range(arr.shape[1])]
        cols += [(f"K_{j + 1}_{m + 1}", self.K[:, j, m]) for j in range(M) for m in range(M)]
        if self.L is not None:
            cols += [(f"L_{j + 1}_{m + 1}", self.L[:, j, m]) for j in range(M) for m in range(M)]
        cols += list(self.rates.items())
        cols.append((self.rho_name, self.rho))
        cols.append(("n_immigrant", self.n_immigrant))
        cols += [(f"n_immigrant_{m + 1}", self.immigrant_counts[:, m]) for m in range(M)]
        return cols

    def metadata(self, include_timing: bool = False) -> dict:
        meta = {
            "schema_version": SCHEMA_VERSION,
            "model": self.model,
            "background": self.background,
            "num_dims": self.num_dims,
            "horizon": self.horizon,
            "n_retained": len(self),
            "config": self.config,
            "priors": self.priors,
            "columns": [name for name, _ in self._columns()],
            "empty_seasonal_cells": self.empty_cells,
        }
        if self.bin_edges is not None:
            meta["bin_edges"] = [float(x) for x in self.bin_edges]
        if self.calendar is not None:
            meta["calendar"] = {"start": self.calendar.start.isoformat(), "end": self.calendar.end.isoformat(),
                                "tz": self.calendar.tz}
        if include_timing:
            meta["wall_clock_seconds"] = self.wall_clock
        return meta

    def save(self, csv_path, include_timing: bool = False) -> Path:
        """Write the draws CSV and a ``.json`` sidecar next to it."""
        csv_path = Path(csv_path)
        cols = self._columns()
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw"] + [name for name, _ in cols])
            for i in range(len(self)):
                w.writerow([i] + [_fmt(c[i]) for _, c in cols])
        sidecar = csv_path.with_suffix(".json")
        sidecar.write_text(json.dumps(self.metadata(include_timing), indent=2, sort_keys=True) + "\n")
        return sidecar

    @classmethod
    def load(cls, csv_path) -> "ChainDraws":
        csv_path = Path(csv_path)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        col = {name: body[:, k] for k, name in enumerate(header)}
        M, n = meta["num_dims"], body.shape[0]
        model, background = meta["model"], meta["background"]
        mat = lambda p: np.stack([[col[f"{p}_{j + 1}_{m + 1}"] for m in range(M)] for j in range(M)]).transpose(2, 0, 1)  # noqa: E731
        rates = {k: col[k] for k in ("beta_diag", "beta_off", "gamma_diag", "gamma_off") if k in col}
        kw = dict(
            model=model, background=background, num_dims=M, horizon=meta["horizon"], config=meta["config"],
            priors=meta["priors"], K=mat("K"), rates=rates, rho=col["rho_K" if model == "classic" else "rho_L"],
            n_immigrant=col["n_immigrant"].astype(np.int64),
            immigrant_counts=np.column_stack([col[f"n_immigrant_{m + 1}"] for m in range(M)]).astype(np.int64),
            L=None if model == "classic" else mat("L"), empty_cells=meta.get("empty_seasonal_cells", {}),
        )
        if background == "constant":
            kw["mu"] = np.column_stack([col[f"mu_{m + 1}"] for m in range(M)])
        elif background == "piecewise":
            edges = np.asarray(meta["bin_edges"], float)
            nb = edges.size - 1
            kw["bin_edges"] = edges
            kw["mu"] = np.stack([[col[f"mu_{m + 1}_{b + 1}"] for b in range(nb)] for m in range(M)]).transpose(2, 0, 1)
        else:
            c = meta["calendar"]
            kw["calendar"] = CalendarGrid.build(datetime.fromisoformat(c["start"]), datetime.fromisoformat(c["end"]),
                                                c["tz"])
            kw["alpha"] = np.column_stack([col[f"alpha_{m + 1}"] for m in range(M)])
            for name, size in (("theta_hour", N_HOUR), ("theta_wday", N_WDAY), ("theta_month", N_MONTH)):
                kw[name] = np.column_stack([col[f"{name}_{k + 1}"] for k in range(size)])
        out = cls(**kw)
        out._n = n
        return out

    def prior_spec(self) -> PriorSpec:
        return PriorSpec.from_dict(self.priors)


def _fmt(x) -> str:
    if isinstance(x, (np.integer, int)):
        return str(int(x))
    return repr(float(x))

"""Calendar binning, exposure tensors and the separable seasonal background.

The seasonal immigrant rate is ``alpha[m] * theta_hour[h] * theta_wday[d] * theta_month[mo]``
where ``(h, d, mo)`` is the local calendar cell of the time. Cells are 0-based in
memory; :func:`calendar_bins` reports the 1-based labels (hour 1..24, Monday=1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from zoneinfo import ZoneInfo

import numpy as np

from .core import ContractError, _frozen

N_HOUR, N_WDAY, N_MONTH = 24, 7, 12
N_CELLS = N_HOUR * N_WDAY * N_MONTH
_HOUR = timedelta(hours=1)


def as_zone(tz) -> ZoneInfo | timezone:
    if isinstance(tz, (ZoneInfo, timezone)):
        return tz
    if tz in ("UTC", "utc", "Z"):
        return timezone.utc
    return ZoneInfo(str(tz))


def localize(dt: datetime, tz) -> datetime:
    """Attach ``tz`` to a naive local datetime and return it in UTC.

    Repeated wall times resolve to their first occurrence; wall times skipped by a
    DST jump land after the transition (``fold=0`` semantics of :mod:`zoneinfo`).
    """
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=as_zone(tz), fold=0)
    return dt.astimezone(timezone.utc)


def calendar_bins(t: float, start: datetime, tz) -> tuple[int, int, int]:
    """1-based (hour-of-day, weekday with Monday=1, month) of ``t`` hours after ``start``."""
    local = (localize(start, tz) + timedelta(hours=float(t))).astimezone(as_zone(tz))
    return local.hour + 1, local.isoweekday(), local.month


def _offset(utc: datetime, zone) -> timedelta:
    return utc.astimezone(zone).utcoffset()


def _offset_spans(start: datetime, end: datetime, zone):
    """Split ``[start, end)`` (UTC) into spans of constant UTC offset."""
    spans = []
    cur, off = start, _offset(start, zone)
    probe = cur
    while probe < end:
        nxt = min(probe + _HOUR, end)
        if _offset(nxt, zone) != off:
            # transitions fall on whole UTC seconds: bisect on integer timestamps
            lo, hi = math.floor(probe.timestamp()), math.ceil(nxt.timestamp())
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if _offset(datetime.fromtimestamp(mid, timezone.utc), zone) == off:
                    lo = mid
                else:
                    hi = mid
            switch = max(datetime.fromtimestamp(hi, timezone.utc), probe)
            spans.append((cur, switch, off))
            cur, off = switch, _offset(switch, zone)
        probe = nxt
    spans.append((cur, end, off))
    return [sp for sp in spans if sp[1] > sp[0]]


@dataclass(frozen=True, eq=False)
class CalendarGrid:
    """Piecewise-constant map from elapsed hours to local calendar cells.

    ``edges`` are hours since ``start``; segment ``s`` covers ``[edges[s], edges[s+1])``
    and sits in flat cell ``cells[s]`` (C order over hour x weekday x month).
    """

    start: datetime
    end: datetime
    tz: str
    edges: np.ndarray
    cells: np.ndarray

    @classmethod
    def build(cls, start: datetime, end: datetime, tz) -> "CalendarGrid":
        zone = as_zone(tz)
        s_utc, e_utc = localize(start, tz), localize(end, tz)
        if not e_utc > s_utc:
            raise ContractError("calendar window must be nonempty")
        edges, cells = [], []
        for a, b, off in _offset_spans(s_utc, e_utc, zone):
            # naive UTC arithmetic inside a constant-offset span
            cur, b = a.replace(tzinfo=None), b.replace(tzinfo=None)
            while cur < b:
                local = cur + off
                nxt_local = local.replace(minute=0, second=0, microsecond=0) + _HOUR
                nxt = min(nxt_local - off, b)
                edges.append((cur - s_utc.replace(tzinfo=None)) / _HOUR)
                cells.append(np.ravel_multi_index((local.hour, local.weekday(), local.month - 1),
                                                  (N_HOUR, N_WDAY, N_MONTH)))
                cur = nxt
        edges.append((e_utc - s_utc) / _HOUR)
        return cls(start, end, str(tz), _frozen(edges), _frozen(cells, np.int64))

    @property
    def horizon(self) -> float:
        return float(self.edges[-1])

    def cell_of(self, times) -> np.ndarray:
        seg = np.searchsorted(self.edges, np.asarray(times, dtype=float), side="right") - 1
        return self.cells[np.clip(seg, 0, self.cells.size - 1)]

    def exposure(self, upto: float | None = None) -> np.ndarray:
        """Hours spent in each calendar cell on ``[0, upto]`` as a 24x7x12 tensor."""
        upper = self.edges[1:] if upto is None else np.minimum(self.edges[1:], upto)
        widths = np.clip(upper - self.edges[:-1], 0.0, None)
        flat = np.bincount(self.cells, weights=widths, minlength=N_CELLS)
        return flat.reshape(N_HOUR, N_WDAY, N_MONTH)


def exposure_tensor(start: datetime, end: datetime, tz) -> np.ndarray:
    return CalendarGrid.build(start, end, tz).exposure()


def exposure_weights(E: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalized hour, weekday and month marginals of an exposure tensor."""
    total = E.sum()
    return E.sum(axis=(1, 2)) / total, E.sum(axis=(0, 2)) / total, E.sum(axis=(0, 1)) / total


@dataclass(frozen=True, eq=False)
class SeasonalBackground:
    """Separable multiplicative seasonal immigrant rate on a calendar grid."""

    alpha: np.ndarray
    theta_hour: np.ndarray
    theta_wday: np.ndarray
    theta_month: np.ndarray
    grid: CalendarGrid

    def __post_init__(self):
        for name, size in (("theta_hour", N_HOUR), ("theta_wday", N_WDAY), ("theta_month", N_MONTH)):
            v = _frozen(getattr(self, name)).reshape(-1)
            if v.size != size or np.any(v < 0):
                raise ContractError(f"{name} must have {size} nonnegative entries")
            object.__setattr__(self, name, v)
        alpha = _frozen(self.alpha).reshape(-1)
        if np.any(alpha < 0):
            raise ContractError("alpha must be >= 0")
        object.__setattr__(self, "alpha", alpha)
        E = self.grid.exposure()
        E.setflags(write=False)
        object.__setattr__(self, "_E", E)
        object.__setattr__(self, "_weights", exposure_weights(E))

    @classmethod
    def flat(cls, alpha, grid: CalendarGrid) -> "SeasonalBackground":
        return cls(alpha, np.ones(N_HOUR), np.ones(N_WDAY), np.ones(N_MONTH), grid)

    @property
    def num_dims(self) -> int:
        return int(self.alpha.size)

    @property
    def exposure(self) -> np.ndarray:
        return self._E

    @property
    def weights(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self._weights

    def cell_factor(self) -> np.ndarray:
        """Product of the three seasonal factors for every cell (24x7x12)."""
        return (self.theta_hour[:, None, None] * self.theta_wday[None, :, None]
                * self.theta_month[None, None, :])

    def normalized(self) -> "SeasonalBackground":
        """Rescale every theta vector to exposure-weighted mean one, compensating alpha."""
        w_h, w_d, w_m = self.weights
        s = np.array([w_h @ self.theta_hour, w_d @ self.theta_wday, w_m @ self.theta_month])
        return SeasonalBackground(self.alpha * s.prod(), self.theta_hour / s[0],
                                  self.theta_wday / s[1], self.theta_month / s[2], self.grid)

    def rate(self, m, t):
        return float(self.rates_at(np.array([m]), np.array([t]))[0])

    def rates_at(self, dims, times):
        cells = self.grid.cell_of(times)
        return self.alpha[np.asarray(dims, dtype=np.int64)] * self.cell_factor().reshape(-1)[cells]

    def integral(self, m, horizon):
        E = self._E if horizon >= self.grid.horizon else self.grid.exposure(horizon)
        return float(self.alpha[m] * np.sum(E * self.cell_factor()))

    def time_average(self, m: int) -> float:
        return self.integral(m, self.grid.horizon) / self.grid.horizon

    def upper_bound(self, m):
        return float(self.alpha[m] * self.theta_hour.max() * self.theta_wday.max() * self.theta_month.max())

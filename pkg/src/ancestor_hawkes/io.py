"""File formats: raw message logs, event/truth CSVs and run configuration."""
from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .core import IMMIGRANT, BranchingState, ContractError, EventLog, PriorSpec
from .gibbs import BACKGROUNDS, MODELS, McmcConfig
from .seasonal import CalendarGrid, as_zone, localize

CONFIG_SCHEMA_VERSION = 1
EVENTS_HEADER = ["time_hours", "dimension"]
TRUTH_HEADER = ["event_index", "parent_index"]
RAW_HEADER = ["timestamp", "sender"]


class DataFormatError(ContractError):
    """A row of an input file could not be parsed."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = f"{path}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.path, self.line = path, line


class EmptyLogWarning(UserWarning):
    pass


# --- raw message logs ---------------------------------------------------------


@dataclass(frozen=True)
class RawMessageLog:
    """``(timestamp, sender)`` rows in file order; timestamps are local wall-clock times."""

    rows: tuple

    def __post_init__(self):
        for ts, sender in self.rows:
            if not isinstance(ts, datetime):
                raise ContractError(f"timestamp {ts!r} is not a datetime")
            if not str(sender).strip():
                raise ContractError("sender labels must be nonempty")

    @classmethod
    def read_csv(cls, path) -> "RawMessageLog":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != RAW_HEADER:
                raise DataFormatError(f"expected header {','.join(RAW_HEADER)}", path, 1)
            for line, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2:
                    raise DataFormatError(f"expected 2 fields, got {len(row)}", path, line)
                try:
                    ts = datetime.fromisoformat(row[0].strip())
                except ValueError:
                    raise DataFormatError(f"unparseable timestamp {row[0]!r}", path, line) from None
                sender = row[1].strip()
                if not sender:
                    raise DataFormatError("empty sender", path, line)
                rows.append((ts, sender))
        return cls(tuple(rows))


@dataclass(frozen=True, eq=False)
class Ingested:
    log: EventLog
    senders: tuple  # senders[m] is the label of dimension m (0-based)
    dropped: int
    calendar: CalendarGrid


def ingest(raw: RawMessageLog, start: datetime, end: datetime, tz) -> Ingested:
    """Convert raw rows to an event log in hours since ``start`` (local wall time in ``tz``).

    Rows outside ``[start, end)`` are dropped and counted. Senders get dimensions in
    order of first appearance among the kept rows; exact ties are jittered in file order.
    """
    grid = CalendarGrid.build(start, end, tz)
    t0, t1 = localize(start, tz), localize(end, tz)
    times, labels, dropped = [], [], 0
    for ts, sender in raw.rows:
        u = localize(ts, tz)
        if not t0 <= u < t1:
            dropped += 1
            continue
        times.append((u - t0).total_seconds() / 3600.0)
        labels.append(sender)
    senders = tuple(dict.fromkeys(labels))
    index = {s: m for m, s in enumerate(senders)}
    if not times:
        warnings.warn("no events inside the window", EmptyLogWarning, stacklevel=2)
    log = EventLog.from_unsorted(times, [index[s] for s in labels], grid.horizon, max(1, len(senders)))
    if len(log) and log.times[-1] > log.horizon:
        raise ContractError("tie jitter pushed an event past the end of the window")
    return Ingested(log, senders, dropped, grid)


# --- event and truth files ----------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_events(log: EventLog, path, meta: dict | None = None) -> Path:
    """Events CSV (1-based dimensions) plus a JSON sidecar holding horizon and dimension count."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENTS_HEADER)
        for t, d in zip(log.times, log.dims):
            w.writerow([_fmt(t), int(d) + 1])
    side = {"horizon": log.horizon, "num_dims": log.num_dims, "n_events": len(log), **(meta or {})}
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return sidecar


def read_events(path, horizon: float | None = None, num_dims: int | None = None) -> tuple[EventLog, dict]:
    """Read an events CSV. Horizon and dimension count come from the sidecar when present,
    else from the arguments, else from the data (last time, largest dimension)."""
    path = Path(path)
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    times, dims = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != EVENTS_HEADER:
            raise DataFormatError(f"expected header {','.join(EVENTS_HEADER)}", path, 1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t, d = float(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise DataFormatError(f"bad row {row!r}", path, line) from None
            if d < 1:
                raise DataFormatError("dimensions are 1-based", path, line)
            times.append(t)
            dims.append(d - 1)
    T = horizon if horizon is not None else meta.get("horizon", max(times, default=0.0))
    M = num_dims if num_dims is not None else meta.get("num_dims", max(dims, default=0) + 1)
    return EventLog(np.array(times), np.array(dims, dtype=np.int64), T, M), meta


def write_truth(branching: BranchingState, path) -> None:
    """``event_index,parent_index`` with 1-based events and 0 for immigrants."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for i, p in enumerate(branching.parents):
            w.writerow([i + 1, 0 if p == IMMIGRANT else int(p) + 1])


def read_truth(path) -> np.ndarray:
    """0-based parent vector with ``IMMIGRANT`` for background events."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRUTH_HEADER:
            raise DataFormatError(f"expected header {','.join(TRUTH_HEADER)}", path, 1)
        parents = []
        for line, row in enumerate(reader, start=2):
            try:
                i, p = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise DataFormatError(f"bad row {row!r}", path, line) from None
            if i != len(parents) + 1:
                raise DataFormatError("event indices must be 1, 2, ... in order", path, line)
            parents.append(IMMIGRANT if p == 0 else p - 1)
    return np.array(parents, dtype=np.int64)


# --- run configuration --------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    model: str = "ancestor"
    background: str = "constant"
    priors: PriorSpec = field(default_factory=PriorSpec)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    tz: str | None = None
    window: tuple | None = None  # (start, end) local ISO datetimes, for raw data and seasonal fits
    n_bins: int = 12  # piecewise background: equal-width bins over [0, T]
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ContractError(f"model must be one of {MODELS}")
        if self.background not in BACKGROUNDS:
            raise ContractError(f"background must be one of {BACKGROUNDS}")
        if self.tz is not None:
            try:
                as_zone(self.tz)
            except Exception:
                raise ContractError(f"unknown time zone {self.tz!r}") from None
        if self.window is not None:
            if len(self.window) != 2:
                raise ContractError("window must be [start, end]")
            try:
                a, b = (datetime.fromisoformat(str(x)) for x in self.window)
            except ValueError:
                raise ContractError("window bounds must be ISO datetimes") from None
            if not b > a:
                raise ContractError("window must be nonempty")
        if self.background == "seasonal" and (self.tz is None or self.window is None):
            raise ContractError("a seasonal background needs both tz and window")
        if self.n_bins < 1:
            raise ContractError("n_bins must be >= 1")

    @property
    def window_datetimes(self) -> tuple[datetime, datetime] | None:
        if self.window is None:
            return None
        return tuple(datetime.fromisoformat(str(x)) for x in self.window)

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION, "model": self.model, "background": self.background,
            "priors": self.priors.to_dict(), "mcmc": self.mcmc.to_dict(), "tz": self.tz,
            "window": None if self.window is None else [str(x) for x in self.window],
            "n_bins": self.n_bins, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        version = d.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ContractError(f"unsupported config schema_version {version}")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractError(f"unknown config keys {sorted(unknown)}")
        if "priors" in d:
            d["priors"] = PriorSpec.from_dict(d["priors"])
        if "mcmc" in d:
            d["mcmc"] = McmcConfig(**d["mcmc"])
        if d.get("window") is not None:
            d["window"] = tuple(d["window"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise DataFormatError(f"invalid JSON: {e.msg}", path, e.lineno) from None

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

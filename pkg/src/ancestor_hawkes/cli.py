"""Command-line entry point: ``ancestor-hawkes <subcommand> ...``.

Settings resolve as defaults < config file (``--config`` or ``$ANCESTOR_HAWKES_CONFIG``)
< flags. Every run prints one JSON line with the resolved seed, the config hash and
the files written. Failures print a JSON object to stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .chain import ChainDraws
from .core import ContractError, StabilityError, StructuralError
from .diagnostics import STATISTICS, compute_summary_stats, cumulative_envelope, posterior_predictive, trace_report
from .gibbs import ChainError, McmcConfig, run_chain
from .io import DataFormatError, RawMessageLog, RunConfig, ingest, read_events, write_events, write_truth
from .recovery import PRESETS, preset, recovery_study
from .simulate import SimulationOverflow, SimulationRequest, simulate
from .slice import SliceSamplerError

CONFIG_ENV = "ANCESTOR_HAWKES_CONFIG"

# exit codes per failure class
EXIT_CODES = {
    "usage": 2, DataFormatError: 3, StabilityError: 4, StructuralError: 5, ContractError: 6,
    ChainError: 7, SliceSamplerError: 7, SimulationOverflow: 8, OSError: 9,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _resolve_config(args) -> RunConfig:
    path = args.config or os.environ.get(CONFIG_ENV)
    cfg = RunConfig.load(path) if path else RunConfig()
    over = {}
    for flag in ("model", "background"):
        if getattr(args, flag, None) is not None:
            over[flag] = getattr(args, flag)
    if args.seed is not None:
        over["seed"] = args.seed
    cfg = replace(cfg, **over)
    mc = cfg.mcmc.to_dict()
    for flag, key in (("iters", "n_iter"), ("burnin", "burn_in"), ("thin", "thin")):
        if getattr(args, flag, None) is not None:
            mc[key] = getattr(args, flag)
    if getattr(args, "iters", None) is not None and getattr(args, "burnin", None) is None:
        mc["burn_in"] = min(mc["burn_in"], mc["n_iter"] // 4)
    mc["seed"] = cfg.seed
    return replace(cfg, mcmc=McmcConfig(**mc))


def _load_data(path, cfg: RunConfig):
    """Events CSV (``time_hours,dimension``) or a raw ``timestamp,sender`` log."""
    with open(path, newline="") as fh:
        header = fh.readline().strip().replace(" ", "")
    if header == "timestamp,sender":
        if cfg.window is None or cfg.tz is None:
            raise ContractError("raw message logs need window and tz in the config")
        out = ingest(RawMessageLog.read_csv(path), *cfg.window_datetimes, cfg.tz)
        return out.log, out.calendar, {"senders": list(out.senders), "dropped": out.dropped}
    log, meta = read_events(path)
    calendar = None
    if cfg.background == "seasonal":
        from .seasonal import CalendarGrid
        calendar = CalendarGrid.build(*cfg.window_datetimes, cfg.tz)
    return log, calendar, meta


def _scenario_name(args) -> str:
    if args.preset and args.scenario:
        raise UsageError("give either --scenario or --preset")
    if args.scenario:
        return f"scenario{args.scenario}"
    return args.preset or "scenario1"


# --- subcommands --------------------------------------------------------------


def cmd_simulate(args, cfg, out: Path):
    sc = preset(_scenario_name(args), n_events=args.events)
    req = SimulationRequest(sc.params, horizon=sc.horizon, n_events=None if sc.horizon else sc.n_events, seed=cfg.seed)
    data = simulate(req)
    meta = {"scenario": sc.name, "seed": cfg.seed}
    if sc.calendar is not None:
        meta.update(window=[sc.calendar.start.isoformat(), sc.calendar.end.isoformat()], tz=sc.calendar.tz)
    write_events(data.log, out / "events.csv", meta)
    write_truth(data.truth, out / "truth.csv")
    return ["events.csv", "events.json", "truth.csv"]


def cmd_fit(args, cfg, out: Path):
    log, calendar, _ = _load_data(args.data, cfg)
    edges = None
    if cfg.background == "piecewise":
        edges = np.linspace(0.0, log.horizon, cfg.n_bins + 1)
    draws = run_chain(log, model=cfg.model, priors=cfg.priors, config=cfg.mcmc, background=cfg.background,
                      bin_edges=edges, calendar=calendar)
    draws.save(out / "draws.csv")
    return ["draws.csv", "draws.json"]


def cmd_ppc(args, cfg, out: Path):
    draws = ChainDraws.load(args.chain)
    log, _, _ = _load_data(args.data, cfg)
    R = min(args.replicates, len(draws))
    res = posterior_predictive(draws, log, R, STATISTICS, seed=cfg.seed)
    _dump({"replicates": R, "results": [r.to_dict() for r in res]}, out / "ppc.json")
    grid = np.linspace(0.0, log.horizon, 101)
    files = ["ppc.json"]
    if R > 0:
        env = cumulative_envelope(draws, log, grid, R, seed=cfg.seed)
        with open(out / "envelope.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_hours"] + [f"q{lv:g}" for lv in env.levels] + ["observed"])
            for k, t in enumerate(grid):
                w.writerow([repr(float(t))] + [repr(float(q)) for q in env.quantiles[:, k]] + [int(env.observed[k])])
        files.append("envelope.csv")
    return files


def cmd_summarize(args, cfg, out: Path):
    log, _, _ = _load_data(args.data, cfg)
    stats = compute_summary_stats(log, pooled=not args.per_dimension)
    body = ([s.to_dict() for s in stats] if args.per_dimension else stats.to_dict())
    _dump({"n_events": len(log), "pooled": not args.per_dimension, "stats": body}, out / "summary.json")
    return ["summary.json"]


def cmd_recover(args, cfg, out: Path):
    sc = preset(_scenario_name(args), n_events=args.events)
    rep = recovery_study(sc, replicates=args.replicates, config=cfg.mcmc, priors=cfg.priors, seed=cfg.seed,
                         classic=args.classic)
    _dump(rep.to_dict(), out / "recovery.json")
    with open(out / "recovery_scatter.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["matrix", "source", "target", "generating", "recovered_mean", "recovered_sd"])
        for row in rep.scatter_rows():
            w.writerow(list(row[:3]) + [repr(x) for x in row[3:]])
    return ["recovery.json", "recovery_scatter.csv"]


def cmd_traces(args, cfg, out: Path):
    rep = trace_report(ChainDraws.load(args.chain))
    with open(out / "traces.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rep.to_rows())
    drift = {k: (None if not np.isfinite(v) else v) for k, v in rep.drift.items()}
    _dump({"drift": drift, "stable": rep.stable}, out / "drift.json")
    return ["traces.csv", "drift.json"]


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "ppc": cmd_ppc, "summarize": cmd_summarize,
            "recover": cmd_recover, "traces": cmd_traces}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ancestor-hawkes", description="Simulate, fit and check Ancestor Hawkes models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV})")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", default=".", type=Path)

    def mcmc(sp):
        sp.add_argument("--model", choices=["classic", "ancestor", "ancestor-restricted"])
        sp.add_argument("--background", choices=["constant", "piecewise", "seasonal"])
        sp.add_argument("--iters", type=int)
        sp.add_argument("--burnin", type=int)
        sp.add_argument("--thin", type=int)

    def scenario(sp):
        sp.add_argument("--scenario", type=int, choices=[1, 2, 3])
        sp.add_argument("--preset", choices=PRESETS)
        sp.add_argument("--events", type=int, default=2000, help="events per data set (constant presets)")

    sp = sub.add_parser("simulate", help="simulate a scenario; writes events and truth CSVs")
    common(sp)
    scenario(sp)

    sp = sub.add_parser("fit", help="run the Gibbs sampler; writes draws CSV and metadata")
    common(sp)
    mcmc(sp)
    sp.add_argument("--data", required=True)

    sp = sub.add_parser("ppc", help="posterior predictive checks and cumulative envelope")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--chain", required=True, help="draws CSV written by fit")
    sp.add_argument("--replicates", type=int, default=100)

    sp = sub.add_parser("summarize", help="summary statistics of an event log")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--per-dimension", action="store_true")

    sp = sub.add_parser("recover", help="simulate-and-refit recovery study")
    common(sp)
    mcmc(sp)
    scenario(sp)
    sp.add_argument("--replicates", type=int, default=10)
    sp.add_argument("--classic", action="store_true", help="also fit the classic model")

    sp = sub.add_parser("traces", help="trace series and drift statistics of a chain")
    common(sp)
    sp.add_argument("--chain", required=True)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        return _fail("usage", str(e), EXIT_CODES["usage"])
    try:
        cfg = _resolve_config(args)
        out = args.out_dir
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](args, cfg, out)
    except UsageError as e:
        return _fail("usage", str(e), EXIT_CODES["usage"])
    except Exception as e:  # noqa: BLE001 - every failure becomes a JSON error
        for cls, code in EXIT_CODES.items():
            if isinstance(cls, type) and isinstance(e, cls):
                return _fail(type(e).__name__, str(e), code)
        return _fail(type(e).__name__, str(e), 1)
    print(json.dumps({"command": args.command, "seed": cfg.seed, "config_hash": cfg.digest(),
                      "outputs": [str(out / f) for f in files]}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())

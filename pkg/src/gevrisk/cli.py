"""Command-line entry point: ``gevrisk [--config F] [--out D] [--jobs N] [--seed S] COMMAND``."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import sys
from datetime import date, datetime
from importlib import resources
from pathlib import Path

import click
import numpy as np

from . import pipeline as pl
from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError, GevRiskError
from .gev import GevParams, gev_quantile
from .heston import DETAIL_FIELDS, ROW_FIELDS, heston_experiment, parse_delta

log = logging.getLogger("gevrisk")


# ---------------------------------------------------------------------------
# output helpers


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    if isinstance(v, datetime):
        return v.isoformat()
    if isinstance(v, date):
        return v.isoformat()
    return v


def _json_default(v):
    if isinstance(v, (date, datetime)):
        return v.isoformat()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(type(v))


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


class RunWriter:
    """Writes files under one run directory and records their hashes for the manifest."""

    def __init__(self, root: Path):
        self.root = root
        self.files: dict[str, str] = {}
        root.mkdir(parents=True, exist_ok=True)

    def _put(self, rel: str, data: bytes) -> None:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(data)
        self.files[rel] = hashlib.sha256(data).hexdigest()

    def csv(self, rel: str, fields, rows) -> None:
        import io

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_cell(r.get(f)) for f in fields])
        self._put(rel, buf.getvalue().encode())

    def json(self, rel: str, obj) -> None:
        text = json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n"
        self._put(rel, text.encode())

    def text(self, rel: str, s: str) -> None:
        self._put(rel, s.encode())

    def manifest(self, command: str, run_id: str, inputs: dict[str, str], extra: dict | None = None) -> None:
        self.json("manifest.json", {
            "command": command,
            "run_id": run_id,
            "inputs": inputs,
            "outputs": dict(sorted(self.files.items())),
            **(extra or {}),
        })


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _run_id(command: str, cfg: PipelineConfig, inputs: dict[str, str], flags: dict | None = None) -> str:
    h = hashlib.sha256()
    h.update(command.encode())
    h.update(cfg.dump().encode())
    h.update(json.dumps(inputs, sort_keys=True).encode())
    h.update(json.dumps(flags or {}, sort_keys=True).encode())
    return h.hexdigest()[:12]


# ---------------------------------------------------------------------------
# command plumbing


class Ctx:
    def __init__(self, cfg: PipelineConfig, out: Path, jobs: int):
        self.cfg, self.out, self.jobs = cfg, out, jobs


def _fail(exc: GevRiskError) -> None:
    click.echo(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}),
               err=True)
    sys.exit(exc.exit_code)


def _start(ctx: Ctx, command: str, data_dir: str | None, flags: dict | None = None):
    inputs = {}
    files = []
    if data_dir is not None:
        files = pl.discover_symbols(data_dir)
        inputs = {f.name: _sha(f) for f in files}
    run_id = _run_id(command, ctx.cfg, inputs, flags)
    w = RunWriter(ctx.out / command / run_id)
    w.text("config.yaml", ctx.cfg.dump())
    return files, inputs, run_id, w


def _analyze(ctx: Ctx, files):
    bars = pl.load_pool(files, ctx.cfg)
    results = pl.analyze_pool(bars, ctx.cfg, ctx.jobs)
    if all(r.error for r in results):
        first = results[0]
        raise DataError(f"no symbol survived the pipeline; first error: {first.symbol}: {first.error}")
    return bars, results


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="YAML configuration file (defaults apply when omitted).")
@click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True)
@click.option("--jobs", type=click.IntRange(1), default=1, show_default=True)
@click.option("--seed", type=int, default=None, help="Override the configuration seed.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, config_path, out, jobs, seed, verbose):
    """Extreme-value risk monitoring on intraday returns and Heston simulations."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(config_path, seed=seed)
    except ConfigError as exc:
        _fail(exc)
    ctx.obj = Ctx(cfg, Path(out), jobs)


def _guard(fn):
    import functools

    @functools.wraps(fn)
    def inner(*a, **kw):
        try:
            return fn(*a, **kw)
        except GevRiskError as exc:
            _fail(exc)

    return inner


@main.command()
@click.argument("data_dir", type=click.Path())
@click.pass_obj
@_guard
def analyze(ctx: Ctx, data_dir):
    """Filter, standardize, fit rolling GEV models and write per-symbol and pool reports."""
    files, inputs, run_id, w = _start(ctx, "analyze", data_dir)
    _, results = _analyze(ctx, files)
    for r in results:
        s = r.symbol
        if r.exclusions:
            w.json(f"{s}/exclusions.json", r.exclusions.to_dict())
        if r.slr is not None:
            w.csv(f"{s}/slr.csv", ["timestamp", "slr"],
                  ({"timestamp": t, "slr": v} for t, v in zip(r.slr.timestamps, r.slr.slr)))
        if r.maxima is not None:
            w.csv(f"{s}/maxima.csv", ["block_end", "maximum"],
                  ({"block_end": t, "maximum": v} for t, v in zip(r.maxima.block_end, r.maxima.values)))
        if r.trajectory is not None:
            w.csv(f"{s}/trajectory.csv", ["t", "xi", "mu", "sigma", "ks_pvalue", "mpi", "var99", "pass"],
                  r.trajectory.rows())
            w.csv(f"{s}/var.csv", ["t", "gev_var", "normal_var", "gp_var"], r.var_rows)
    w.csv("cross_section.csv",
          ["t", "low_evi", "mid_evi", "high_evi", "low_var", "mid_var", "high_var"],
          pl.pool_cross_sections(results))
    w.json("pool_summary.json", {
        "symbols": [r.summary() for r in results],
        "stable_fraction": float(np.mean([bool(r.stability and r.stability.stable) for r in results])),
        "window_k": ctx.cfg.window_k,
    })
    w.manifest("analyze", run_id, inputs)
    click.echo(str(w.root))


@main.command()
@click.option("--full", is_flag=True, help="Full grid: 8 z values x 600 reps.")
@click.pass_obj
@_guard
def simulate(ctx: Ctx, full):
    """Run the Heston GEV validation experiment."""
    spec = ctx.cfg.experiment_spec(full)
    _, inputs, run_id, w = _start(ctx, "simulate", None, {"full": full})
    res = heston_experiment(spec, ctx.jobs)
    w.csv("experiment.csv", ROW_FIELDS, res.rows)
    w.csv("experiment_details.csv", DETAIL_FIELDS, res.details)
    w.csv("var_comparison.csv", ["z", "delta", "window", "gev_var", "gp_var"],
          ({"z": z, "delta": d, "window": i, "gev_var": g, "gp_var": p}
           for (z, d), pairs in sorted(res.var_pairs.items()) for i, (g, p) in enumerate(pairs)))
    summary = res.summary()
    ref = json.loads(resources.files("gevrisk").joinpath("data/heston_reference.json").read_text())
    lines = []
    for row in ref["rows"]:
        key = f"{parse_delta(row['delta']):.10g}"
        got = summary.get(key)
        if got is None:
            continue
        got["reference"] = {k: row[k] for k in ("mEVI", "mu_bar", "sigma_bar", "var99")}
        lines.append(f"delta={row['delta']}: mEVI {got['mEVI']:+.3f} (ref {row['mEVI']:+.2f}), "
                     f"VaR {got['var99']:.2f} (ref {row['var99']:.2f})")
    w.json("summary.json", {"cells": summary, "rows": len(res.rows), "failed": sum(bool(d.get("error"))
                                                                                  for d in res.details)})
    w.manifest("simulate", run_id, inputs, {"full": full})
    for line in lines:
        click.echo(line)
    click.echo(str(w.root))


@main.command(name="backtest")
@click.argument("data_dir", type=click.Path())
@click.pass_obj
@_guard
def backtest_cmd(ctx: Ctx, data_dir):
    """Value paths of the gev / normal / equal rebalancing strategies."""
    files, inputs, run_id, w = _start(ctx, "backtest", data_dir)
    bars, results = _analyze(ctx, files)
    prices = pl.daily_closes(bars)
    paths, snaps = pl.run_backtests(prices, pl.var_frames(results), ctx.cfg)
    rows = [{"date": s.t.date(), "strategy": k, "value": s.value} for k, states in paths.items() for s in states]
    w.csv("backtest.csv", ["date", "strategy", "value"], rows)
    w.json("weights.json", snaps)
    w.manifest("backtest", run_id, inputs)
    for k, states in paths.items():
        click.echo(f"{k}: final value {states[-1].value:.4f}")
    click.echo(str(w.root))


@main.command()
@click.argument("data_dir", type=click.Path())
@click.pass_obj
@_guard
def jumps(ctx: Ctx, data_dir):
    """Flag |SLR| above the prevailing GEV-VaR of the latest completed fit."""
    files, inputs, run_id, w = _start(ctx, "jumps", data_dir)
    _, results = _analyze(ctx, files)
    reports = []
    for r in results:
        rep = pl.symbol_jumps(r)
        if rep is None:
            continue
        w.csv(f"{r.symbol}/jumps.csv", ["timestamp", "slr", "threshold"], rep.rows())
        reports.append(rep.to_dict())
    w.json("jumps.json", reports)
    w.manifest("jumps", run_id, inputs)
    click.echo(str(w.root))


@main.command()
@click.argument("data_dir", type=click.Path())
@click.pass_obj
@_guard
def changepoints(ctx: Ctx, data_dir):
    """BOCD on the thinned EVI trajectory of every symbol."""
    files, inputs, run_id, w = _start(ctx, "changepoints", data_dir)
    _, results = _analyze(ctx, files)
    reports = [rep.to_dict() for r in results if (rep := pl.symbol_changepoints(r, ctx.cfg)) is not None]
    w.json("changepoints.json", reports)
    w.manifest("changepoints", run_id, inputs)
    click.echo(str(w.root))


if __name__ == "__main__":
    main()

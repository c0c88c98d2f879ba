"""Command-line entry point: ``settle-sense <command> --scenario FILE --out DIR``.

Every command writes one or more CSV tables (header line, numbers at six
significant digits), ``effective_config.yaml`` and ``manifest.json`` holding
the seed, package version, config digest and SHA-256 of each output.
Failures exit nonzero with ``{"category": ..., "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Sequence

import numpy as np
from scipy import special

from . import __version__, ground
from .building import limit_state
from .config import RunConfig, dump_effective, load_scenario
from .errors import ConfigError, SettleSenseError
from .optimize import optimize_location
from .soi import PriorCache, soi_at
from .subset import level_cov, run_subset_simulation
from .updating import case_study_problem, update_reliability

log = logging.getLogger("settlesense")

COMMANDS = ("settlement-grid", "reliability", "update", "soi", "soi-map", "optimize")
THREADS_ENV = "SETTLE_SENSE_THREADS"

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INTERNAL = 70


def fmt(value) -> str:
    """Canonical text for one CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        out = format(v, ".6g")
        return "0" if out == "-0" else out
    return str(value)


class Table:
    def __init__(self, name: str, columns: Sequence[str]):
        self.name = name
        self.columns = list(columns)
        self.rows: List[list] = []

    def add(self, **values):
        missing = set(self.columns) - set(values)
        if missing:
            raise KeyError(f"{self.name}: missing columns {sorted(missing)}")
        self.rows.append([values[c] for c in self.columns])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([fmt(v) for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        recs = [{c: fmt(v) for c, v in zip(self.columns, row)} for row in self.rows]
        return json.dumps(recs, indent=1) + "\n"


def resolve_threads(arg) -> int:
    if arg is not None:
        n = arg
    else:
        env = os.environ.get(THREADS_ENV)
        if env is None or env.strip() == "":
            return 1
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer (got {env!r})") from None
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _map(fn: Callable, items, workers: int) -> list:
    """``map`` that keeps input order whatever the worker count."""
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- commands ------------------------------------------------------------------


def cmd_settlement_grid(cfg: RunConfig, workers: int) -> List[Table]:
    sg = cfg.effective["settlement_grid"]
    xs = np.linspace(*sg["x_range"], int(sg["n_grid"][0]))
    ys = np.linspace(*sg["y_range"], int(sg["n_grid"][1]))
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    s = ground.settlement(cfg.scenario.tunnel, xx.ravel(), yy.ravel(), 0.0, sg["v_l"] / 100.0, sg["k"])
    t = Table("settlement_grid", ["x", "y", "s_mm"])
    for x, y, v in zip(xx.ravel(), yy.ravel(), s):
        t.add(x=x, y=y, s_mm=v)
    return [t]


def cmd_reliability(cfg: RunConfig, workers: int) -> List[Table]:
    sc = cfg.scenario
    ss = run_subset_simulation(lambda u: limit_state(sc, sc.model.to_physical(u)), sc.model.dim, cfg.subset)
    summary = Table("reliability", ["p_f", "cov", "beta", "n_levels", "n_per_level", "n_evaluations"])
    summary.add(p_f=ss.p_f, cov=ss.cov, beta=float(-special.ndtri(ss.p_f)), n_levels=len(ss.levels),
                n_per_level=ss.n_per_level, n_evaluations=ss.n_evaluations)
    levels = Table("levels", ["level", "threshold", "probability", "cov"])
    for i, lv in enumerate(ss.levels):
        levels.add(level=i, threshold=lv.threshold, probability=lv.probability, cov=level_cov(lv, ss.n_per_level))
    return [summary, levels]


UPDATE_COLUMNS = ["x", "y", "z", "s_m", "p_f", "p_f_given_z", "r_up", "cov_pf", "cov_pfz", "n_evaluations",
                  "n_ss", "c1", "c2", "p_z", "p_z_given_f", "converged"]


def cmd_update(cfg: RunConfig, workers: int) -> List[Table]:
    if not cfg.measurements:
        raise ConfigError("no measurements configured", "measurements")

    def one(meas):
        res = update_reliability(case_study_problem(cfg.scenario, meas), cfg.update, cfg.seed, strict=False)
        if res.cov_pfz > cfg.update.cov_thr:
            log.warning("measurement at %s: COV %.3g above target", meas.location, res.cov_pfz)
        return meas, res

    t = Table("update", UPDATE_COLUMNS)
    for meas, r in _map(one, cfg.measurements, workers):
        x, y, z = meas.location
        t.add(x=x, y=y, z=z, s_m=meas.value, p_f=r.p_f, p_f_given_z=r.p_f_given_z, r_up=r.r_up, cov_pf=r.cov_pf,
              cov_pfz=r.cov_pfz, n_evaluations=r.n_evaluations, n_ss=r.n_ss, c1=r.c1, c2=r.c2, p_z=r.p_z,
              p_z_given_f=r.p_z_given_f, converged=bool(r.cov_pfz <= cfg.update.cov_thr))
    return [t]


def cmd_soi(cfg: RunConfig, workers: int) -> List[Table]:
    if not cfg.soi_locations:
        raise ConfigError("no soi_locations configured", "soi_locations")
    cache = PriorCache(cfg.scenario, cfg.update, cfg.seed)
    ests = _map(lambda loc: soi_at(loc, cfg.scenario, cfg.soi, cfg.update, cfg.seed, cache),
                cfg.soi_locations, workers)
    summary = Table("soi", ["x", "y", "z", "soi", "soi_sd", "n_unconverged"])
    curve = Table("soi_readings", ["x", "y", "z", "reading", "r_up", "r_up_sd", "p_f", "p_f_given_z", "cov_pfz",
                                   "n_ss", "converged"])
    for est in ests:
        x, y, z = est.location
        summary.add(x=x, y=y, z=z, soi=est.soi, soi_sd=math.sqrt(est.noise_var),
                    n_unconverged=sum(not p.converged for p in est.per_z))
        for p in est.per_z:
            curve.add(x=x, y=y, z=z, reading=p.z, r_up=p.r_up, r_up_sd=p.r_up_sd, p_f=p.p_f,
                      p_f_given_z=p.p_f_given_z, cov_pfz=p.cov, n_ss=p.n_ss, converged=p.converged)
    return [summary, curve]


def _run_optimizer(cfg: RunConfig, workers: int):
    runs = []
    for y_s in cfg.faces:
        sc = cfg.scenario.with_face(float(y_s))
        cache = PriorCache(sc, cfg.update, cfg.seed)

        def soi_fn(loc, sc=sc, cache=cache):
            return soi_at(loc, sc, cfg.soi, cfg.update, cfg.seed, cache)

        log.info("optimizing over the region for face position y_s=%g", y_s)
        runs.append((float(y_s), optimize_location(cfg.region, soi_fn, cfg.optimizer, cfg.seed, workers)))
    return runs


def _optimize_tables(cfg: RunConfig, runs) -> List[Table]:
    rg = cfg.region
    summary = Table("optimize", ["x_min", "x_max", "y_min", "y_max", "y_s", "l_star_x", "l_star_y", "soi_star",
                                 "best_observed", "n_iterations", "n_failed", "termination"])
    trace = Table("optimize_trace", ["y_s", "step", "phase", "x", "y", "soi", "noise_var", "max_ei"])
    for y_s, tr in runs:
        summary.add(x_min=rg.x_range[0], x_max=rg.x_range[1], y_min=rg.y_range[0], y_max=rg.y_range[1], y_s=y_s,
                    l_star_x=tr.l_star[0], l_star_y=tr.l_star[1], soi_star=tr.soi_star,
                    best_observed=float(tr.best_observed[-1]), n_iterations=tr.n_iterations,
                    n_failed=len(tr.failed_points), termination=tr.termination)
        n0 = len(tr.initial_points)
        for i in range(len(tr.points)):
            initial = i < n0
            trace.add(y_s=y_s, step=0 if initial else i - n0 + 1, phase="initial" if initial else "active",
                      x=tr.points[i][0], y=tr.points[i][1], soi=tr.values[i], noise_var=tr.noise[i],
                      max_ei=float("nan") if initial else tr.iterations[i - n0]["max_ei"])
    return [summary, trace]


def cmd_optimize(cfg: RunConfig, workers: int) -> List[Table]:
    return _optimize_tables(cfg, _run_optimizer(cfg, workers))


def cmd_soi_map(cfg: RunConfig, workers: int) -> List[Table]:
    runs = _run_optimizer(cfg, workers)
    grid = cfg.region.grid()
    surface = Table("soi_map", ["y_s", "x", "y", "soi_mean", "soi_sd"])
    training = Table("soi_map_training", ["y_s", "x", "y", "soi", "noise_var"])
    for y_s, tr in runs:
        for (x, y), m, v in zip(grid, tr.surface, tr.surface_var):
            surface.add(y_s=y_s, x=x, y=y, soi_mean=m, soi_sd=math.sqrt(max(v, 0.0)))
        for (x, y), s, nv in zip(tr.points, tr.values, tr.noise):
            training.add(y_s=y_s, x=x, y=y, soi=s, noise_var=nv)
    return [surface, training] + _optimize_tables(cfg, runs)


HANDLERS: Dict[str, Callable] = {
    "settlement-grid": cmd_settlement_grid,
    "reliability": cmd_reliability,
    "update": cmd_update,
    "soi": cmd_soi,
    "soi-map": cmd_soi_map,
    "optimize": cmd_optimize,
}


# -- plumbing --------------------------------------------------------------------


def _write(path: Path, text: str) -> str:
    data = text.encode("utf-8")
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def write_outputs(out: Path, command: str, cfg: RunConfig, tables: List[Table], json_mirror: bool = False):
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for t in tables:
        hashes[f"{t.name}.csv"] = _write(out / f"{t.name}.csv", t.to_csv())
        if json_mirror:
            hashes[f"{t.name}.json"] = _write(out / f"{t.name}.json", t.to_json())
    hashes["effective_config.yaml"] = _write(out / "effective_config.yaml", dump_effective(cfg.effective))
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "config_file": "effective_config.yaml",
        "outputs": dict(sorted(hashes.items())),
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="settle-sense", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--scenario", required=True, help="scenario YAML file (an empty file gives the defaults)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (fallback: ${THREADS_ENV}, else 1)")
    p.add_argument("--json", action="store_true", help="also write a JSON mirror of every table")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def _fail(category: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"category": category, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    parser.__class__ = _Parser
    try:
        args = parser.parse_args(argv)
    except _ArgError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        workers = resolve_threads(args.threads)
        cfg = load_scenario(args.scenario, args.seed)
        tables = HANDLERS[args.command](cfg, workers)
        write_outputs(Path(args.out), args.command, cfg, tables, args.json)
    except ConfigError as exc:
        return _fail(exc.category, str(exc), EXIT_USAGE)
    except SettleSenseError as exc:
        return _fail(exc.category, str(exc), EXIT_COMPUTE)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_IO)
    except Exception as exc:  # noqa: BLE001 - last-resort report in the documented format
        log.debug("internal error", exc_info=True)
        return _fail("internal", f"{type(exc).__name__}: {exc}", EXIT_INTERNAL)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

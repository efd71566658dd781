"""Trial orchestration and the experiment recipes.

Every trial draws from its own stream, keyed by the experiment kind, the cell
index and the trial index, so records do not depend on how trials are spread
over workers.  Records are written cell by cell in trial order.
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..crossings import CrossingSpec, max_disjoint_crossings
from ..errors import ConfigurationError
from ..geom_graph import build_graph, connected_components, kernel_cutoff, spans_window
from ..lattice import build_fields, build_lattice_graph, coupled_crossing_check, coupling_window, derive_params
from ..point_process import Box, sample_marked, split_layers
from ..renorm import Scales, chain_window, plant_seed, run_chain
from ..rng import generator_from_seed, stream, stream_seed
from ..tanemura import BernoulliOracle, count_crossings_of_zeta, run_tanemura
from .config import ExperimentConfig, ExperimentKind
from . import stats

HEADER = ["experiment", "L", "lambda", "zeta", "trial", "seed", "count", "success", "ms"]


@dataclass
class Record:
    experiment: str
    L: float
    lam: float
    zeta: float | None
    trial: int
    seed: int
    count: int
    success: bool | None = None
    ms: float | None = None

    def row(self, timing: bool) -> list:
        return [self.experiment, _fmt(self.L), _fmt(self.lam), "" if self.zeta is None else _fmt(self.zeta),
                self.trial, self.seed, self.count, "" if self.success is None else int(self.success),
                f"{self.ms:.3f}" if timing and self.ms is not None else ""]


def _fmt(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


# ---------------------------------------------------------------------------
# cells: one (L, lambda, zeta) combination each


@dataclass(frozen=True)
class Cell:
    index: int
    L: float
    lam: float
    zeta: float | None


def cells_of(cfg: ExperimentConfig) -> list:
    kind = cfg.kind
    lam = cfg["lambda"]
    zeta = cfg["kernel.zeta"] if cfg["kernel.family"] == "miller_abrahams" else None
    if kind is ExperimentKind.THRESHOLD_SWEEP:
        L = cfg.L[-1]
        if cfg["sweep.param"] == "lambda":
            return [Cell(i, L, x, zeta) for i, x in enumerate(cfg["sweep.values"])]
        return [Cell(i, L, lam, x) for i, x in enumerate(cfg["sweep.values"])]
    if kind is ExperimentKind.RENORM_DEMO:
        return [Cell(0, cfg["renorm.n"], lam, zeta)]
    if kind is ExperimentKind.TANEMURA_DEMO:
        return [Cell(i, L, cfg["tanemura.p"], None) for i, L in enumerate(cfg.L)]
    return [Cell(i, L, lam, zeta) for i, L in enumerate(cfg.L)]


def slice_width(cfg: ExperimentConfig, params) -> float:
    if cfg["slice.k"] is not None:
        return float(cfg["slice.k"])
    sc = Scales(params.q, cfg["renorm.m"], cfg["renorm.n"], cfg["d"])
    return 4 * sc.N / params.q


def lattice_params(cfg: ExperimentConfig):
    kernel = cfg.kernel(normalized=True)
    dist = cfg.mark_distribution()
    params = derive_params(kernel, dist, cfg["lambda"], cfg["lambda_star"], cfg["ell_star"], cfg["d"],
                           K=cfg["K"], eps=cfg["eps"])
    return kernel, dist, params


# ---------------------------------------------------------------------------
# single trials; each returns (count, success or None when set after calibration)


def _scaling_trial(cfg, cell, rng):
    kernel, dist, d, L = cfg.kernel(), cfg.mark_distribution(), cfg["d"], cell.L
    r = kernel_cutoff(kernel)
    window = Box((-L - r,) + (-L,) * (d - 1), (L + r,) + (L,) * (d - 1))
    g = build_graph(sample_marked(cell.lam, window, dist, rng), kernel)
    return max_disjoint_crossings(g, CrossingSpec.continuum(L, d), witnesses=False).count, None


def _slice_trial(cfg, cell, rng):
    kernel, dist, params = lattice_params(cfg)
    d, L = cfg["d"], cell.L
    spec = CrossingSpec.slice(L, d, slice_width(cfg, params))
    lo, hi = spec.box()
    lo = (lo[0] - 1.0,) + lo[1:]
    hi = (hi[0] + 1.0,) + hi[1:]
    fld = build_fields(params, dist, Box(lo, hi), rng)
    gp = build_lattice_graph(fld, "plus", kernel, params)
    return max_disjoint_crossings(gp, spec, witnesses=False).count, None


def _sweep_trial(cfg, cell, rng):
    kernel = cfg.kernel(zeta=cell.zeta) if cell.zeta is not None else cfg.kernel()
    window = Box.cube(cell.L, cfg["d"])
    g = build_graph(sample_marked(cell.lam, window, cfg.mark_distribution(), rng), kernel)
    big = int(np.bincount(connected_components(g)).max()) if g.n else 0
    return big, spans_window(g, window, 0, cfg["sweep.reach"])


def _coupling_trial(cfg, cell, rng):
    kernel, dist, params = lattice_params(cfg)
    layers = split_layers(cell.lam, cfg["lambda_star"], cfg["K"], coupling_window(cell.L, cfg["d"]), dist, rng)
    res = coupled_crossing_check(layers, kernel, params, cell.L)
    return res.continuum - res.lattice, res.ok and res.embedded_edges


def _renorm_trial(cfg, cell, rng):
    kernel, dist, params = lattice_params(cfg)
    sc = Scales.of(params, cfg["renorm.m"], cfg["renorm.n"]).require_proper()
    fld = build_fields(params, dist, chain_window(sc), rng)
    fld = plant_seed(fld, params, dist, np.zeros(sc.d, np.int64), sc.mu, rng)
    st = run_chain(fld, kernel, params, sc, steps=cfg["renorm.steps"], check=True)
    return sum(bool(f) for f in st.flags), st.failed_at is None


def _tanemura_trial(cfg, cell, rng):
    M = int(cell.L)
    st = run_tanemura(M, BernoulliOracle(cell.lam, rng), check=True)
    return st.N, st.N == count_crossings_of_zeta(st.zeta(), st.links)


TRIALS = {
    ExperimentKind.SCALING_CURVE: _scaling_trial,
    ExperimentKind.SLICE_SCALING: _slice_trial,
    ExperimentKind.THRESHOLD_SWEEP: _sweep_trial,
    ExperimentKind.COUPLING_CHECK: _coupling_trial,
    ExperimentKind.RENORM_DEMO: _renorm_trial,
    ExperimentKind.TANEMURA_DEMO: _tanemura_trial,
}


def run_trial(task) -> Record:
    values, cell, t = task
    cfg = ExperimentConfig(values)
    kind = cfg.kind
    seed = stream_seed(cfg.seed, kind.value, cell.index, t)
    t0 = time.perf_counter()
    count, ok = TRIALS[kind](cfg, cell, generator_from_seed(seed))
    ms = (time.perf_counter() - t0) * 1e3
    return Record(kind.value, cell.L, cell.lam, cell.zeta, t, seed, int(count), ok, ms)


def check_feasible(cfg: ExperimentConfig) -> None:
    """Build-time checks that need derived parameters; no random draws."""
    kind = cfg.kind
    if kind in (ExperimentKind.SLICE_SCALING, ExperimentKind.COUPLING_CHECK, ExperimentKind.RENORM_DEMO):
        _, _, params = lattice_params(cfg)
        if kind is ExperimentKind.COUPLING_CHECK and not params.strict:
            raise ConfigurationError("CouplingCheck needs the strict lattice step (eps = null)")
        if kind is ExperimentKind.RENORM_DEMO:
            if params.strict:
                raise ConfigurationError("RenormDemo needs a coarse lattice step: set eps (e.g. 0.5)")
            Scales.of(params, cfg["renorm.m"], cfg["renorm.n"]).require_proper()


# ---------------------------------------------------------------------------
# the run


@dataclass
class RunResult:
    records: list
    summary: dict
    interrupted: bool = False
    out_dir: Path | None = None


class _Writer:
    def __init__(self, out_dir, timing: bool):
        self.timing = timing
        self.fh = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            self.fh = open(out_dir / "records.csv", "w", newline="")
            self.csv = csv.writer(self.fh, lineterminator="\n")
            self.csv.writerow(HEADER)

    def write(self, recs) -> None:
        if self.fh is None:
            return
        for r in recs:
            self.csv.writerow(r.row(self.timing))
        self.fh.flush()

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()


def _map(tasks, pool):
    if pool is None:
        return [run_trial(t) for t in tasks]
    return list(pool.map(run_trial, tasks, chunksize=max(1, len(tasks) // (4 * pool._max_workers))))


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Run every cell, writing ``records.csv`` and ``summary.json`` under ``out_dir``."""
    check_feasible(cfg)
    out_dir = None if out_dir is None else Path(out_dir)
    threads = cfg["threads"]
    writer = _Writer(out_dir, cfg["output.timing"])
    records, c_value, interrupted = [], None, False
    pool = ProcessPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for cell in cells_of(cfg):
            batch = _map([(cfg.values, cell, t) for t in range(cfg.trials)], pool)
            if cfg.kind in (ExperimentKind.SCALING_CURVE, ExperimentKind.SLICE_SCALING):
                if c_value is None:
                    c_value = _calibrate(cfg, batch, cell)
                # at least one crossing, so a zero pilot median cannot make the event trivial
                thr = max(c_value * cell.L ** _exponent(cfg), 1)
                for r in batch:
                    r.success = r.count >= thr
            writer.write(batch)
            records.extend(batch)
    except KeyboardInterrupt:
        interrupted = True
    finally:
        writer.close()
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    summary = summarize(cfg, records, c_value)
    summary["interrupted"] = interrupted
    if out_dir is not None:
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunResult(records, summary, interrupted, out_dir)


def _exponent(cfg) -> int:
    return 1 if cfg.kind is ExperimentKind.SLICE_SCALING else cfg["d"] - 1


def _calibrate(cfg, pilot, cell) -> float:
    if cfg["calibration.rule"] == "fixed":
        return float(cfg["calibration.c"])
    return stats.calibrate_c([r.count for r in pilot], cell.L, _exponent(cfg), cfg["calibration.factor"])


def summarize(cfg: ExperimentConfig, records, c_value=None) -> dict:
    by_cell: dict = {}
    for r in records:
        by_cell.setdefault((r.L, r.lam, r.zeta), []).append(r)
    kind = cfg.kind
    xkey = {"lambda": 1, "zeta": 2}[cfg["sweep.param"]] if kind is ExperimentKind.THRESHOLD_SWEEP else 0
    cells = [stats.cell_stats(key[xkey], [r.count for r in rs], [bool(r.success) for r in rs])
             for key, rs in by_cell.items()]
    out = {"experiment": kind.value, "version": __version__, "config": cfg.echo(),
           "config_hash": cfg.content_hash(), "cells": [c.as_dict() for c in cells], "warnings": []}
    if kind in (ExperimentKind.SCALING_CURVE, ExperimentKind.SLICE_SCALING):
        out.update(_scaling_summary(cfg, cells, c_value))
    elif kind is ExperimentKind.THRESHOLD_SWEEP:
        out.update(_sweep_summary(cfg, cells, by_cell))
    else:
        out["all_success"] = all(c.failures == 0 for c in cells)
        if not out["all_success"] and kind in (ExperimentKind.COUPLING_CHECK, ExperimentKind.TANEMURA_DEMO):
            out["warnings"].append("a coupled inequality or recount failed; see records with success = 0")
    return out


def _scaling_summary(cfg, cells, c_value) -> dict:
    e = _exponent(cfg)
    fit = stats.fit_failure_decay([c.x for c in cells], [c.failures for c in cells],
                                  [c.trials for c in cells], e)
    flagged = [c.x for c in cells if c.successes == 0]
    out = {"calibration": {"rule": cfg["calibration.rule"], "c": c_value, "exponent": e,
                           "pilot_L": cells[0].x if cells else None},
           "fit": fit.as_dict(), "all_failure_cells": flagged}
    warn = []
    if flagged:
        warn.append("cells where every trial failed (likely subcritical): " + ", ".join(map(_fmt, flagged)))
    if c_value is not None and c_value <= 0:
        warn.append("calibrated c is 0: the pilot median count is 0 (likely subcritical)")
    out["warnings"] = warn
    out["subcritical_flag"] = bool(flagged) or (c_value is not None and c_value <= 0)
    return out


def _sweep_summary(cfg, cells, by_cell) -> dict:
    x = [c.x for c in cells]
    k = [c.successes for c in cells]
    n = [c.trials for c in cells]
    fit = stats.fit_logistic(x, k, n)
    outcomes = [[bool(r.success) for r in rs] for rs in by_cell.values()]
    if cfg["sweep.bootstrap"] > 0:
        fit.interval = stats.bootstrap_logistic(x, outcomes, cfg["sweep.bootstrap"],
                                                stream(cfg.seed, "bootstrap"))
    viol = stats.monotone_violations(x, k, n)
    warn = [f"frequency drops by more than 2 sigma between {a} and {b}" for a, b in viol]
    if not fit.converged:
        warn.append("logistic fit did not converge: " + fit.message)
    return {"logistic": fit.as_dict(), "monotone_violations": [list(v) for v in viol], "warnings": warn,
            "param": cfg["sweep.param"]}


# ---------------------------------------------------------------------------
# named recipes


def _require(cfg, kind):
    if cfg.kind is not kind:
        raise ConfigurationError(f"expected a {kind.value} config, got {cfg.kind.value}")


def run_scaling(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    _require(cfg, ExperimentKind.SCALING_CURVE)
    return run_experiment(cfg, out_dir)


def run_slice_scaling(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    _require(cfg, ExperimentKind.SLICE_SCALING)
    return run_experiment(cfg, out_dir)


def run_threshold_sweep(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    _require(cfg, ExperimentKind.THRESHOLD_SWEEP)
    return run_experiment(cfg, out_dir)

"""Sweep orchestration: per-level cells, aggregate tables and the manifest."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import (
    DegenerateSweep,
    NotApplicable,
    SlopeFit,
    SweepRecord,
    analyze,
    corollary_b_decay,
    futaki_convergence,
    futaki_on_torus,
    r_m_scaling,
    remainder_growth,
    spread_ratio,
    weight_decay,
)
from .config import ExperimentConfig, parse_config
from .integrator import MetricState, build_grid, grid_points, sample_points
from .solver import solve
from .toric import decompose_by_characters, enumerate_basis

logger = logging.getLogger(__name__)

WORKERS_ENV = "POLYBALANCED_WORKERS"

# criterion thresholds
BLOCK_TOL = 1e-6
PERP_TOL = 1e-6
POLYBALANCED_TOL = 1e-5
HAMILTONIAN_TOL = 1e-6
DEGENERATE_GAMMA_TOL = 1e-8
GAMMA_WINDOW = (-1.4, -0.6)
R_SLOPE = -1.6
R_SLOPE_FUTAKI_FREE = -2.5
GAMMA_SLOPE_FUTAKI_FREE = -1.6
REMAINDER_MARGIN = 0.4
F_SPREAD = 2.0
FUTAKI_SLOPE = -0.6
BOOKKEEPING_TOL = 1e-10


class MissingFiles(FileNotFoundError):
    pass


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def cell_path(out: Path, m: int) -> Path:
    return out / "cells" / f"m_{m:03d}.json"


def run_cell(canonical: dict, m: int) -> dict:
    """Enumerate, decompose, solve and analyze one level ``m``."""
    cfg = parse_config(canonical)
    pol, act = cfg.polarization(), cfg.action()
    t0 = time.perf_counter()
    basis = enumerate_basis(pol, m)
    dec = decompose_by_characters(basis, act)
    grid = build_grid(basis, cfg.quadrature)
    result = solve(MetricState.symmetric(basis), dec, grid, cfg.solver)
    points = sample_points(pol, cfg.samples.count, cfg.samples.seed)
    ham_points = grid_points(pol, cfg.samples.grid_per_axis)
    record = analyze(result, grid, points, ham_points)
    return {
        "config_hash": cfg.hash,
        "m": m,
        "record": record.as_dict(),
        "log_c": result.state.log_c.tolist(),
        "beta": result.beta.tolist(),
        "gamma": result.gamma.tolist(),
        "diverged": bool(result.diverged),
        "direction": None if result.direction is None else result.direction.tolist(),
        "elapsed": time.perf_counter() - t0,
    }


def _load_cell(path: Path, cfg_hash: str):
    try:
        cell = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return None
    if cell.get("config_hash") != cfg_hash or "record" not in cell:
        return None
    return cell


# -- checks -----------------------------------------------------------------------


@dataclass(frozen=True)
class Outcome:
    status: str          # pass | fail | skip | inconclusive
    detail: str


def _fit_outcome(fit: SlopeFit, ok: bool, what: str) -> Outcome:
    text = f"{what} slope {fit.exponent:.4f} (residual {fit.residual:.3f}, m {fit.m_range[0]}..{fit.m_range[1]})"
    if fit.inconclusive:
        return Outcome("inconclusive", text)
    return Outcome("pass" if ok else "fail", text)


def _slope_check(fn, records, test, what) -> tuple[Outcome, SlopeFit | None]:
    try:
        fit = fn(records)
    except DegenerateSweep as exc:
        return Outcome("skip", str(exc)), None
    except ValueError as exc:
        return Outcome("skip", str(exc)), None
    return _fit_outcome(fit, test(fit.exponent), what), fit


def evaluate_checks(cfg: ExperimentConfig, records: list[SweepRecord]):
    """Returns ``(outcomes, fits)`` keyed by check / fit name, in a fixed order."""
    conv = [r for r in records if r.converged]
    n = cfg.polarization().dimension
    outcomes: dict[str, Outcome] = {}
    fits: dict[str, SlopeFit | None] = {}
    for name in cfg.checks:
        if name == "converged":
            bad = [r.m for r in records if not r.converged]
            outcomes[name] = Outcome("fail" if bad else "pass",
                                     f"non-converged levels {bad}" if bad else "all levels converged")
        elif name == "mass_identity":
            worst = max((r.mass_error for r in conv), default=0.0)
            ok = worst <= cfg.quadrature.target_error
            outcomes[name] = Outcome("pass" if ok else "fail", f"worst relative mass error {worst:.3e}")
        elif name == "beta0_limit":
            fact = math.factorial(n)
            rel = [r for r in conv if r.m >= 4]
            if not rel:
                outcomes[name] = Outcome("skip", "no level with m >= 4")
                continue
            worst = max(abs(r.beta0 - fact) / (3 * fact * n / r.m) for r in rel)
            outcomes[name] = Outcome("pass" if worst <= 1 else "fail",
                                     f"max |beta0 - n!| / (3 n! n / m) = {worst:.4f}")
        elif name == "fixed_point":
            if not conv:
                outcomes[name] = Outcome("skip", "no converged level")
                continue
            spread = max(r.block_spread for r in conv)
            perp = max(r.perp_norm for r in conv)
            poly = max(r.polybalanced_dev for r in conv)
            ok = spread <= BLOCK_TOL and perp <= PERP_TOL and poly <= POLYBALANCED_TOL
            outcomes[name] = Outcome("pass" if ok else "fail",
                                     f"block spread {spread:.2e}, perp {perp:.2e}, B_circ deviation {poly:.2e}")
        elif name == "degenerate_consistency":
            deg = [r for r in conv if r.degenerate]
            if not deg:
                outcomes[name] = Outcome("skip", "no degenerate level")
                continue
            worst = max(r.max_gamma_dev for r in deg)
            fut = max(abs(float(v)) for v in futaki_on_torus(cfg.polarization(), cfg.subtorus)) \
                if cfg.subtorus else 0.0
            ok = worst <= DEGENERATE_GAMMA_TOL and fut <= DEGENERATE_GAMMA_TOL
            outcomes[name] = Outcome("pass" if ok else "fail",
                                     f"max |gamma - 1| {worst:.2e}, Futaki on torus {fut:.2e}")
        elif name == "weight_decay":
            outcomes[name], fits[name] = _slope_check(
                weight_decay, records, lambda s: GAMMA_WINDOW[0] <= s <= GAMMA_WINDOW[1], "max|gamma-1|")
        elif name == "r_m_scaling":
            outcomes[name], fits[name] = _slope_check(
                r_m_scaling, records, lambda s: s <= R_SLOPE, "r_m^-1")
        elif name == "corollary_b":
            futs = futaki_on_torus(cfg.polarization(), cfg.subtorus)
            try:
                g_fit, r_fit = corollary_b_decay(records, futs)
            except (NotApplicable, DegenerateSweep) as exc:
                outcomes[name], fits[name] = Outcome("skip", str(exc)), None
                continue
            except ValueError as exc:
                outcomes[name], fits[name] = Outcome("skip", str(exc)), None
                continue
            fits[name] = g_fit
            fits[name + "_r"] = r_fit
            ok = g_fit.exponent <= GAMMA_SLOPE_FUTAKI_FREE and r_fit.exponent <= R_SLOPE_FUTAKI_FREE
            o = _fit_outcome(g_fit, ok, "max|gamma-1|")
            outcomes[name] = Outcome(o.status, o.detail + f"; r_m^-1 slope {r_fit.exponent:.4f}")
        elif name == "bergman_expansion":
            if not conv:
                outcomes[name] = Outcome("skip", "no converged level")
                continue
            if all(r.degenerate for r in conv):
                worst = max(r.sup_R_m for r in conv)
                outcomes[name] = Outcome("pass" if worst <= 1e-6 else "fail",
                                         f"balanced family: sup |B_bullet - N'_m| = {worst:.2e}")
                continue
            o, fit = _slope_check(remainder_growth, records,
                                  lambda s: s <= n - 2 + REMAINDER_MARGIN, "sup|R_m|")
            fits[name] = fit
            ratio = spread_ratio([r.sup_f_m for r in conv if not r.degenerate])
            chain = max(r.chain_gap for r in conv)
            status = o.status
            if status == "pass" and (ratio >= F_SPREAD):
                status = "fail"
            outcomes[name] = Outcome(status, o.detail + f"; sup|f_m| max/median {ratio:.3f}; "
                                     f"I_m chain gap {chain:.2e}")
        elif name == "hamiltonian":
            vals = [r.hamiltonian_dev for r in conv if not math.isnan(r.hamiltonian_dev)]
            if not vals:
                outcomes[name] = Outcome("skip", "no direction to test")
                continue
            worst = max(vals)
            outcomes[name] = Outcome("pass" if worst <= HAMILTONIAN_TOL else "fail",
                                     f"sup |f_lambda - moment map| = {worst:.2e}")
        elif name == "futaki_link":
            o, fit = _slope_check(futaki_convergence, records, lambda s: s <= FUTAKI_SLOPE,
                                  "|F_hat - F|")
            fits[name] = fit
            book = max((r.bookkeeping_gap for r in conv if not r.degenerate), default=0.0)
            status = o.status
            if status == "pass" and book > BOOKKEEPING_TOL:
                status = "fail"
            outcomes[name] = Outcome(status, o.detail if o.status == "skip"
                                     else o.detail + f"; bookkeeping gap {book:.2e}")
    return outcomes, fits


# -- output files -------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".12e")


def sweep_csv(records: list[SweepRecord]) -> str:
    lines = [",".join(SweepRecord.CSV_COLUMNS)]
    for r in records:
        d = r.as_dict()
        lines.append(",".join(_fmt(d[c]) for c in SweepRecord.CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


@dataclass
class RunOutcome:
    manifest_path: Path
    manifest: dict
    records: list[SweepRecord]
    outcomes: dict

    @property
    def exit_code(self) -> int:
        return 1 if any(o.status == "fail" for o in self.outcomes.values()) else 0


def run_config(cfg: ExperimentConfig, out: Path | str | None = None, workers: int | None = None,
               resume: bool = False) -> RunOutcome:
    """Run every level of ``cfg`` and write cells, ``sweep.csv``, ``summary.json`` and
    ``manifest.json`` under ``out``."""
    out = Path(out or cfg.output_dir or f"runs/{cfg.name}")
    workers = default_workers() if workers is None else max(1, int(workers))
    canonical = cfg.canonical()
    t_start = time.perf_counter()
    cells: dict[int, dict] = {}
    todo = []
    for m in cfg.m_list:
        cell = _load_cell(cell_path(out, m), cfg.hash) if resume else None
        if cell is not None:
            logger.info("m=%d: reusing %s", m, cell_path(out, m))
            cells[m] = cell
        else:
            todo.append(m)
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {m: pool.submit(run_cell, canonical, m) for m in todo}
            for m in todo:
                cells[m] = futures[m].result()
                _write(cell_path(out, m), _dump(cells[m]))
    else:
        for m in todo:
            logger.info("m=%d: solving", m)
            cells[m] = run_cell(canonical, m)
            _write(cell_path(out, m), _dump(cells[m]))
    records = [SweepRecord.from_dict(cells[m]["record"]) for m in cfg.m_list]
    outcomes, fits = evaluate_checks(cfg, records)
    _write(out / "sweep.csv", sweep_csv(records))
    summary = {
        "name": cfg.name,
        "config_hash": cfg.hash,
        "fits": {k: (None if v is None else v.as_dict()) for k, v in fits.items()},
        "checks": {k: {"status": o.status, "detail": o.detail} for k, o in outcomes.items()},
    }
    _write(out / "summary.json", _dump(summary))
    _write(out / "config.json", _dump(canonical))
    manifest = {
        "name": cfg.name,
        "config_hash": cfg.hash,
        "tool_version": __version__,
        "config": "config.json",
        "cells": {str(m): str(cell_path(Path("."), m)) for m in cfg.m_list},
        "sweep_csv": "sweep.csv",
        "summary": "summary.json",
        "wall_clock": {**{str(m): cells[m]["elapsed"] for m in cfg.m_list},
                       "total": time.perf_counter() - t_start},
        "criteria": {k: o.status for k, o in outcomes.items()},
    }
    manifest_path = out / "manifest.json"
    _write(manifest_path, _dump(manifest))
    return RunOutcome(manifest_path, manifest, records, outcomes)


# -- report ---------------------------------------------------------------------------


def report(manifest_path) -> str:
    """Text summary of a finished run; depends only on the files it names."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFiles(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    needed = [manifest["sweep_csv"], manifest["summary"], *manifest["cells"].values()]
    missing = [p for p in needed if not (base / p).is_file()]
    if missing:
        raise MissingFiles("missing result files: " + ", ".join(missing))
    summary = json.loads((base / manifest["summary"]).read_text(encoding="utf-8"))
    lines = [f"run {manifest['name']} (config {manifest['config_hash'][:12]}, "
             f"version {manifest['tool_version']})", "", "sweep"]
    lines += (base / manifest["sweep_csv"]).read_text(encoding="utf-8").splitlines()
    lines += ["", "slope fits", "fit,exponent,intercept,residual,m_min,m_max"]
    for name in sorted(summary["fits"]):
        f = summary["fits"][name]
        if f is None:
            continue
        lines.append(f"{name},{f['exponent']:.6f},{f['intercept']:.6f},{f['residual']:.6f},"
                     f"{f['m_range'][0]},{f['m_range'][1]}")
    lines += ["", "criteria", "criterion,status,detail"]
    for name, c in summary["checks"].items():
        lines.append(f"{name},{c['status']},{c['detail']}")
    lines.append("")
    for name, c in summary["checks"].items():
        lines.append(f"{c['status'].upper()}: {name}")
    return "\n".join(lines) + "\n"

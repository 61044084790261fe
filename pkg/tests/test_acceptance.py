"""Acceptance criteria, one test per criterion.

The Hirzebruch sweep (m = 3..10) is run once through the experiment runner
and shared by criteria 2-6, 8 and 10.  Each test prints a one-line verdict;
the terminal summary lists all of them.
"""

import json
import time
from importlib import resources
from math import comb
from pathlib import Path

import numpy as np
import pytest

from polybalanced.asymptotics import (
    NotApplicable,
    bergman_expansion,
    corollary_b_decay,
    futaki_convergence,
    futaki_on_torus,
    hamiltonian,
    moment_map_oracle,
    normalized_direction,
    r_m_scaling,
    remainder_growth,
    spread_ratio,
    weight_decay,
)
from polybalanced.config import load_config
from polybalanced.integrator import MetricState, QuadratureSpec, build_grid, grid_points, sample_points
from polybalanced.runner import run_config
from polybalanced.solver import SolverSpec, solve
from polybalanced.toric import SubtorusAction, ToricPolarization, decompose_by_characters, enumerate_basis
from polybalanced.weights import WeightVector, center, pairing_m

GOLDEN = Path(__file__).parent / "golden"
CONFIGS = resources.files("polybalanced") / "configs"
SEGMENT = ToricPolarization([(0,), (1,)])
HIRZEBRUCH = ToricPolarization([(0, 0), (2, 0), (1, 1), (0, 1)])
CUBE = ToricPolarization([(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)])


def verdict(n, ok, detail):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Each bundled config run once with a single worker."""
    out = {}
    for name in ("p1_trivial", "square_symmetric", "hirzebruch_f1"):
        cfg = load_config(CONFIGS / f"{name}.json")
        t0 = time.perf_counter()
        res = run_config(cfg, tmp_path_factory.mktemp(name), workers=1)
        out[name] = (res, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def hz(runs):
    res, elapsed = runs["hirzebruch_f1"]
    assert all(r.converged for r in res.records)
    return res.records, elapsed


def solved(pol, m, gens, spec=QuadratureSpec(nodes_per_axis=40), solver=SolverSpec()):
    basis = enumerate_basis(pol, m)
    dec = decompose_by_characters(basis, SubtorusAction(gens))
    grid = build_grid(basis, spec)
    return solve(MetricState.symmetric(basis), dec, grid, solver), grid


def test_criterion_01_exact_balanced_oracle():
    t0 = time.perf_counter()
    worst_c, worst_b = 0.0, 0.0
    for m in range(1, 9):
        res, _ = solved(SEGMENT, m, (), solver=SolverSpec(tolerance=1e-12))
        assert res.converged
        c2 = res.state.c2 / res.state.c2[0]
        binom = np.array([comb(m, i) for i in range(m + 1)], float)
        worst_c = max(worst_c, float(np.max(np.abs(c2 / binom - 1))))
        assert np.max(np.abs(res.gamma - 1)) <= 1e-12
        b = bergman_expansion(res, sample_points(SEGMENT, 50, 100 + m)).b_bullet
        worst_b = max(worst_b, float(np.max(np.abs(b - (m + 1)))))
    elapsed = time.perf_counter() - t0
    ok = worst_c <= 1e-6 and worst_b <= 1e-6 and elapsed < 30
    verdict(1, ok, f"binomial dev {worst_c:.1e}, B dev {worst_b:.1e}, {elapsed:.1f} s")
    assert worst_c <= 1e-6 and worst_b <= 1e-6
    assert elapsed < 30


def test_criterion_02_mass_and_beta0(hz):
    records, _ = hz
    target = load_config(CONFIGS / "hirzebruch_f1.json").quadrature.target_error
    for r in records:
        assert r.mass_error <= target
        assert r.beta0 == pytest.approx(r.m**2 * 3 / r.N_m, rel=1e-12)
        if r.m >= 4:
            assert abs(r.beta0 - 2) <= 3 * 2 * 2 / r.m
    # cube at m = 4 through the solver, higher m from the definition
    res, grid = solved(CUBE, 4, [(1, 0, 0)], spec=QuadratureSpec(nodes_per_axis=16))
    assert res.converged
    assert abs(res.gram.sum() / (64 * 6) - 1) <= grid.spec.target_error
    assert res.beta0 == pytest.approx(64 * 6 / 125, rel=1e-12)
    for m in range(4, 41):
        beta0 = m**3 * 6 / (m + 1) ** 3
        assert abs(beta0 - 6) <= 3 * 6 * 3 / m
    verdict(2, True, f"worst mass error {max(r.mass_error for r in records):.1e}")


def test_criterion_03_fixed_point_identities(hz):
    records, elapsed = hz
    spread = max(r.block_spread for r in records)
    perp = max(r.perp_norm for r in records)
    dev = max(r.polybalanced_dev for r in records)
    ok = spread <= 1e-6 and perp <= 1e-6 and dev <= 1e-5 and elapsed < 600
    verdict(3, ok, f"spread {spread:.1e}, perp {perp:.1e}, B_circ {dev:.1e}, {elapsed:.0f} s")
    assert spread <= 1e-6 and perp <= 1e-6 and dev <= 1e-5
    assert elapsed < 600


def test_criterion_04_weight_exponent(hz):
    fit = weight_decay(hz[0])
    ok = -1.4 <= fit.exponent <= -0.6 and fit.residual < 0.5
    verdict(4, ok, f"slope {fit.exponent:.3f}, residual {fit.residual:.3f}")
    assert -1.4 <= fit.exponent <= -0.6
    assert fit.residual < 0.5


def test_criterion_05_r_exponent(hz):
    records, _ = hz
    fit = r_m_scaling(records)
    futaki = futaki_on_torus(HIRZEBRUCH, [(0, 1)])
    with pytest.raises(NotApplicable):
        corollary_b_decay(records, futaki)
    verdict(5, fit.exponent <= -1.6, f"slope {fit.exponent:.3f}; Futaki-free case SKIPPED (F = {futaki[0]})")
    assert fit.exponent <= -1.6


def test_criterion_06_bergman_expansion(hz):
    records, _ = hz
    fit = remainder_growth(records)
    ratio = spread_ratio([r.sup_f_m for r in records])
    n = HIRZEBRUCH.dimension
    bound = n - 2 + 0.4
    ok = fit.exponent <= bound and ratio < 2
    verdict(6, ok, f"remainder slope {fit.exponent:.3f} (bound {bound}), sup|f_m| ratio {ratio:.3f}")
    assert ratio < 2
    assert fit.exponent <= bound


@pytest.mark.parametrize("pol, m", [(SEGMENT, 2), (SEGMENT, 4), (HIRZEBRUCH, 4)],
                         ids=["P1-m2", "P1-m4", "hirzebruch-m4"])
def test_criterion_07_hamiltonian(pol, m):
    if pol is SEGMENT:
        res, _ = solved(SEGMENT, m, [(1,)])
        lam = center(np.arange(m + 1, dtype=float), res.dec)
    else:
        res, _ = solved(HIRZEBRUCH, m, [(0, 1)])
        _, lam = normalized_direction(res)
    pts = grid_points(pol, 20)
    assert len(pts) == 20**pol.dimension
    dev = float(np.max(np.abs(hamiltonian(res, lam, pts) - moment_map_oracle(res, lam, pts))))
    verdict(7, dev <= 1e-6, f"dimension {pol.dimension}, m={m}: sup dev {dev:.1e}")
    assert dev <= 1e-6


def test_criterion_08_futaki(hz, runs):
    fit = futaki_convergence(hz[0])
    square, _ = runs["square_symmetric"]
    bb = max(r.max_gamma_dev * r.beta0 for r in square.records)
    oracle = max(abs(r.futaki_oracle) for r in square.records)
    ok = fit.exponent <= -0.6 and oracle == 0 and bb <= 1e-8
    verdict(8, ok, f"slope {fit.exponent:.3f}; square oracle {oracle}, |beta_bar| {bb:.1e}")
    assert all(r.degenerate for r in square.records)
    assert oracle == 0 and bb <= 1e-8
    assert fit.exponent <= -0.6


def test_criterion_09_pairing_bounded():
    worst = 0.0
    for m in range(2, 51):
        dec = decompose_by_characters(enumerate_basis(SEGMENT, m), SubtorusAction([(1,)]))
        lam = WeightVector(np.arange(m + 1) - m / 2, dec)
        val = pairing_m(lam, lam)
        worst = max(worst, abs(val - m * (m + 1) * (m + 2) / (12 * m**3)))
        assert 1 / 13 <= val <= 1 / 3
    verdict(9, worst <= 1e-12, f"max dev {worst:.1e}")
    assert worst <= 1e-12


def test_criterion_10_goldens(runs):
    same = {}
    for name, (res, _) in runs.items():
        csv = (res.manifest_path.parent / "sweep.csv").read_bytes()
        same[name] = csv == (GOLDEN / f"{name}.csv").read_bytes()
        manifest = json.loads(res.manifest_path.read_text())
        assert manifest["config_hash"] == load_config(CONFIGS / f"{name}.json").hash
    verdict(10, all(same.values()), ", ".join(f"{k} {'ok' if v else 'differs'}" for k, v in same.items()))
    assert all(same.values())

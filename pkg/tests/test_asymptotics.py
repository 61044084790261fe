import math
from fractions import Fraction

import numpy as np
import pytest

from polybalanced.asymptotics import (
    DegenerateSweep,
    NotApplicable,
    SweepRecord,
    bergman_expansion,
    corollary_b_decay,
    fit_slope,
    futaki_estimate,
    futaki_oracle,
    hamiltonian,
    is_degenerate,
    moment_map_oracle,
    normalized_direction,
    remainder_growth,
    spread_ratio,
    weight_decay,
)
from polybalanced.integrator import MetricState, QuadratureSpec, build_grid, grid_points, sample_points
from polybalanced.solver import solve
from polybalanced.toric import SubtorusAction, ToricPolarization, decompose_by_characters, enumerate_basis
from polybalanced.weights import WeightVector, center, pairing_m

SEGMENT = ToricPolarization([(0,), (1,)])
SQUARE = ToricPolarization([(0, 0), (1, 0), (1, 1), (0, 1)])
HIRZEBRUCH = ToricPolarization([(0, 0), (2, 0), (1, 1), (0, 1)])


def solved(pol, m, gens):
    basis = enumerate_basis(pol, m)
    dec = decompose_by_characters(basis, SubtorusAction(gens))
    grid = build_grid(basis, QuadratureSpec(nodes_per_axis=40))
    res = solve(MetricState.symmetric(basis), dec, grid)
    assert res.converged
    return res


@pytest.fixture(scope="module")
def hz3():
    return solved(HIRZEBRUCH, 3, [(0, 1)])


def record(m, gamma, r_inv=1.0, sup_r=1.0, degenerate=False):
    return SweepRecord(m=m, N_m=1, nu_m=1, beta0=1.0, max_gamma_dev=gamma, r_m_inv=r_inv,
                       pairing_m=1.0, futaki_hat=0.0, futaki_oracle=0.0, sup_f_m=1.0,
                       sup_R_m=sup_r, converged=True, degenerate=degenerate)


def test_fit_slope_recovers_power_law():
    ms = np.arange(3, 11)
    fit = fit_slope(ms, 5.0 * ms**-1.3)
    assert fit.exponent == pytest.approx(-1.3, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(5.0), abs=1e-12)
    assert fit.residual < 1e-12 and not fit.inconclusive
    # rescaling the data leaves the exponent alone
    assert fit_slope(ms, 17.0 * ms**-1.3).exponent == pytest.approx(fit.exponent, abs=1e-12)
    noisy = fit_slope(ms, ms**-1.0 * np.where(ms % 2, 10.0, 0.1))
    assert noisy.inconclusive


def test_fit_slope_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_slope([3, 4], [1.0, 2.0])
    with pytest.raises(ValueError):
        fit_slope([3, 4, 5], [1.0, 0.0, 2.0])


def test_degenerate_branch():
    res = solved(SQUARE, 2, [(1, 1)])
    assert is_degenerate(res)
    with pytest.raises(DegenerateSweep):
        normalized_direction(res)
    recs = [record(m, 1e-13, degenerate=True) for m in (1, 2, 3)]
    with pytest.raises(DegenerateSweep, match="exactly balanced"):
        weight_decay(recs)


def test_hamiltonian_of_zero_and_linearity(hz3):
    pts = sample_points(HIRZEBRUCH, 30, 2)
    zero = WeightVector(np.zeros(hz3.dec.nu), hz3.dec)
    assert np.all(hamiltonian(hz3, zero, pts) == 0.0)
    _, lam = normalized_direction(hz3)
    assert np.allclose(hamiltonian(hz3, lam * 2.5, pts), 2.5 * hamiltonian(hz3, lam, pts), atol=1e-14)
    with pytest.raises(ValueError):
        hamiltonian(hz3, WeightVector(np.ones(hz3.dec.nu), hz3.dec), pts)


@pytest.mark.parametrize("m", [2, 4])
def test_segment_hamiltonian_is_moment_map(m):
    res = solved(SEGMENT, m, [(1,)])
    lam = center(np.arange(m + 1, dtype=float), res.dec)
    x = np.linspace(-3, 3, 20)[:, None]
    f = hamiltonian(res, lam, x)
    # binomial state: |sigma_j|^2 is a binomial distribution in q = e^{2x}
    q = np.exp(2 * x[:, 0])
    exact = (m * q / (1 + q) - m / 2) / m
    assert np.max(np.abs(f - exact)) <= 1e-10
    assert np.max(np.abs(f - moment_map_oracle(res, lam, x))) <= 1e-6
    assert abs(hamiltonian(res, lam, [[0.0]])[0]) <= 1e-14
    assert np.allclose(hamiltonian(res, lam, -x), -f, atol=1e-12)


def test_hirzebruch_hamiltonian_on_grid(hz3):
    _, lam = normalized_direction(hz3)
    pts = grid_points(HIRZEBRUCH, 20)
    assert np.max(np.abs(hamiltonian(hz3, lam, pts) - moment_map_oracle(hz3, lam, pts))) <= 1e-6


def test_futaki_oracle_exact_value():
    # boundary integral of y over the four edges, lattice-normalized: 0 + 1/2 + 1 + 1/2
    tot, mom_y = 5, Fraction(2)
    hand = -(mom_y - tot * Fraction(4, 9)) / (2 * 6 * Fraction(3, 2))
    assert hand == Fraction(1, 81)
    assert futaki_oracle(HIRZEBRUCH, [Fraction(0), Fraction(1)]) == Fraction(1, 81)
    assert futaki_oracle(HIRZEBRUCH, [Fraction(0), Fraction(-1)]) == Fraction(-1, 81)
    assert futaki_oracle(HIRZEBRUCH, [0.0, 1.0]) == pytest.approx(1 / 81, rel=1e-15)
    # symmetric polytopes have vanishing Futaki character
    assert futaki_oracle(SQUARE, [Fraction(1), Fraction(1)]) == 0


def test_bookkeeping_and_normalization(hz3):
    est = futaki_estimate(hz3)
    direct, chain = est["bookkeeping"]
    assert abs(direct - chain) <= 1e-10 * abs(direct)
    _, lam = normalized_direction(hz3)
    assert pairing_m(lam, lam) == pytest.approx(1.0, abs=1e-12)
    assert est["ell"][0] == pytest.approx(0.0, abs=1e-10)
    assert np.sign(est["futaki_hat"]) == np.sign(est["futaki_oracle"])


def test_expansion_identities(hz3):
    exp = bergman_expansion(hz3, sample_points(HIRZEBRUCH, 50, 4))
    assert exp.identity_gap <= 1e-12
    assert exp.chain_gap <= 1e-10


def test_remainder_corner_limit_matches_closed_form(hz3):
    # deep in a vertex chart only the vertex section survives, and the
    # remainder tends to m^2 beta_bar_k^2 / (beta0^2 beta_k) for its block
    m = 3
    corners = {(0, 0): (-12.0, -12.0), (2, 0): (12.0, -12.0), (1, 1): (10.0, 20.0), (0, 1): (-20.0, 10.0)}
    pts = [list(p) for p in hz3.dec.basis.lattice_points]
    for v, x in corners.items():
        k = hz3.dec.block_of[pts.index([m * v[0], m * v[1]])]
        bb = hz3.beta[k] - hz3.beta0
        limit = m**2 * bb**2 / (hz3.beta0**2 * hz3.beta[k])
        got = bergman_expansion(hz3, [x]).remainder[0]
        assert abs(got - limit) <= 1e-5 * limit


def exact_remainder_sup(m):
    """``max_k m^2 beta_bar_k^2 / (beta0^2 beta_k)`` from the exact block weights."""
    basis = enumerate_basis(HIRZEBRUCH, m)
    y = basis.lattice_points[:, 1].astype(float)
    ct = y - y.mean()
    mass = 3 * m**2
    t = mass * (m * 4 / 9 - y.mean()) / np.sum(ct**2)
    beta0 = mass / basis.N
    bb = t * ct
    return m**2 * np.max(bb**2 / (beta0**2 * (beta0 + bb)))


def test_remainder_stays_bounded():
    vals = [exact_remainder_sup(m) for m in range(3, 201)]
    assert max(vals) < 0.14
    assert abs(vals[-1] - exact_remainder_sup(400)) < 2e-3
    # at large m the growth exponent settles near zero
    ms = np.arange(100, 201)
    assert abs(fit_slope(ms, vals[97:]).exponent) < 0.1
    assert remainder_growth([record(m, 0.1, sup_r=v) for m, v in zip(range(3, 11), vals)]).exponent > 0.4


def test_futaki_free_rate_not_applicable_with_futaki():
    recs = [record(m, m**-2.0, m**-3.0) for m in range(3, 9)]
    with pytest.raises(NotApplicable):
        corollary_b_decay(recs, [Fraction(1, 81)])
    gamma, r = corollary_b_decay(recs, [Fraction(0)])
    assert gamma.exponent == pytest.approx(-2.0) and r.exponent == pytest.approx(-3.0)


def test_futaki_free_rate_negative_control():
    # a family decaying only like 1/m must not meet the faster rate
    recs = [record(m, 0.3 / m, 0.5 / m**2) for m in range(3, 9)]
    gamma, _ = corollary_b_decay(recs, [0.0])
    assert gamma.exponent > -1.6


def test_spread_ratio():
    assert spread_ratio([1.0, 1.0, 1.0]) == 1.0
    assert spread_ratio([1.0, 2.0, 5.0]) == 2.5

"""Large-m diagnostics of polybalanced states.

Each converged level ``m`` is reduced to a :class:`SweepRecord`; the decay
laws are then tested as log-log slopes across the records.  The direction
``lambda`` is the centered block vector normalized on the unit sphere of the
m-pairing, ``lambda = r_m beta_bar`` with ``(lambda, lambda)_m = 1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from fractions import Fraction

import numpy as np

from .integrator import (
    QuadratureGrid,
    gram_integrals,
    potential,
    section_norms,
)
from .solver import BalanceResult, normalized_sections, orthonormal_scales, polybalanced_identity_check
from .toric import ToricPolarization
from .weights import WeightVector, center, norm_m, pairing_m

DEGENERATE_TOL = 1e-8
INCONCLUSIVE_RESIDUAL = 0.5


class DegenerateSweep(ValueError):
    """Raised when every record has vanishing centered weights."""


class NotApplicable(ValueError):
    pass


@dataclass(frozen=True)
class SlopeFit:
    exponent: float
    intercept: float
    residual: float          # RMS of the log-space residuals
    m_range: tuple[int, int]
    points: int

    @property
    def inconclusive(self) -> bool:
        return self.residual > INCONCLUSIVE_RESIDUAL

    def as_dict(self) -> dict:
        d = asdict(self)
        d["m_range"] = list(self.m_range)
        return d


def fit_slope(ms, values) -> SlopeFit:
    """Least-squares slope of ``log(value)`` against ``log(m)``."""
    ms = np.asarray(ms, dtype=float)
    values = np.asarray(values, dtype=float)
    if ms.size < 3:
        raise ValueError("a slope fit needs at least 3 points")
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise ValueError("slope fits need positive finite values")
    lx, ly = np.log(ms), np.log(values)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    return SlopeFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))),
                    (int(ms[0]), int(ms[-1])), int(ms.size))


# -- direction, Futaki ----------------------------------------------------------


def is_degenerate(result: BalanceResult, tol: float = DEGENERATE_TOL) -> bool:
    return float(np.max(np.abs(result.beta_bar.values))) <= tol


def normalized_direction(result: BalanceResult) -> tuple[float, WeightVector]:
    """``(r_m^{-1}, lambda)`` with ``lambda = r_m beta_bar`` on the unit m-sphere."""
    if is_degenerate(result):
        raise DegenerateSweep("beta_bar vanishes; no normalized direction")
    r_inv = norm_m(result.beta_bar)
    return r_inv, result.beta_bar * (1.0 / r_inv)


def fit_character(result: BalanceResult, lam: WeightVector):
    """Write ``lambda_j = c0 + <ell, p_j>`` by least squares over the sections.

    Returns ``(ell, c0, max residual)``; the residual is zero up to rounding
    when ``lambda`` lies in the sub-torus directions.
    """
    p = result.dec.basis.lattice_points.astype(float)
    A = np.hstack([np.ones((p.shape[0], 1)), p])
    y = lam.on_sections()
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.max(np.abs(A @ coef - y))) if y.size else 0.0
    return coef[1:], float(coef[0]), resid


def futaki_oracle(pol: ToricPolarization, ell) -> float | Fraction:
    """Toric Futaki functional of the affine function ``<ell, y>``.

    ``-(int_{dP} ell dsigma - |dP| ell(b_P)) / (2 (n+1)! vol P)`` with the
    lattice-normalized boundary measure.  Exact when ``ell`` is rational.
    """
    tot, mom = pol.boundary_moments()
    bc = pol.barycenter
    n = pol.dimension
    exact = all(isinstance(a, (int, Fraction)) for a in ell)
    if not exact:
        tot, mom, bc = float(tot), [float(v) for v in mom], [float(v) for v in bc]
    val = sum(a * (mo - tot * b) for a, mo, b in zip(ell, mom, bc))
    den = 2 * math.factorial(n + 1) * (pol.volume if exact else float(pol.volume))
    return -val / den


def futaki_estimate(result: BalanceResult) -> dict:
    """``F_hat_m = r_m^{-1} m^{n+2} <X_lambda, X_lambda>_m / (C_4 m^n)``.

    Also returns the two sides of the bookkeeping identity
    ``sum n_k lambda_k beta_k = r_m^{-1} sum n_k lambda_k^2``.
    """
    r_inv, lam = normalized_direction(result)
    basis = result.dec.basis
    pol = basis.polarization
    n, m = pol.dimension, basis.m
    c4 = math.factorial(n + 1) * float(pol.degree)
    pairing = pairing_m(lam, lam)
    mult = np.asarray(result.dec.multiplicities, dtype=float)
    direct = float(np.sum(mult * lam.values * result.beta))
    chain = r_inv * float(np.sum(mult * lam.values**2))
    ell, _, _ = fit_character(result, lam)
    return {
        "r_inv": r_inv,
        "pairing": pairing,
        "futaki_hat": r_inv * m ** (n + 2) * pairing / (c4 * m**n),
        "futaki_oracle": float(futaki_oracle(pol, [float(a) for a in ell])),
        "bookkeeping": (direct, chain),
        "ell": ell,
    }


def futaki_on_torus(pol: ToricPolarization, generators) -> list[Fraction]:
    """Exact Futaki values on each sub-torus generator."""
    return [futaki_oracle(pol, [Fraction(a) for a in g]) for g in generators]


# -- Hamiltonians and the Bergman expansion ---------------------------------------


def _require_converged(result: BalanceResult) -> None:
    if not result.converged:
        raise ValueError("diagnostic needs a converged result")


def _block_scales(result: BalanceResult) -> np.ndarray:
    m = result.m
    n = result.dec.basis.polarization.dimension
    return result.state.c * np.sqrt(m**n / result.beta[result.dec.block_of])


def hamiltonian(result: BalanceResult, lam: WeightVector, points) -> np.ndarray:
    """``f_lambda`` as the weighted quotient of section norms.

    ``sum lambda_k gamma_k |sigma_{k,i}|^2 / (m sum gamma_k |sigma_{k,i}|^2)``
    with the normalized sections of the converged state.
    """
    _require_converged(result)
    scale = max(1.0, float(np.max(np.abs(lam.values))) * result.dec.basis.N)
    if not lam.is_trace_free(1e-10 * scale):
        raise ValueError("lambda must be trace-free")
    norms = section_norms(result.state, result.dec.basis, _block_scales(result), points)
    g = result.gamma[result.dec.block_of]
    return (norms @ (lam.on_sections() * g)) / (result.m * (norms @ g))


def moment_map_oracle(result: BalanceResult, lam: WeightVector, points, h: float = 1e-5) -> np.ndarray:
    """``(<ell, grad phi / 2> + c0) / m`` with the gradient by central differences."""
    basis = result.dec.basis
    ell, c0, _ = fit_character(result, lam)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    grad = np.empty_like(pts)
    for a in range(pts.shape[1]):
        e = np.zeros(pts.shape[1])
        e[a] = h
        grad[:, a] = (potential(pts + e, result.state, basis)
                      - potential(pts - e, result.state, basis)) / (2 * h)
    return (0.5 * grad @ ell + c0) / result.m


@dataclass(frozen=True, eq=False)
class BergmanExpansion:
    f_m: np.ndarray
    remainder: np.ndarray       # B_bullet - N'_m - f_m m^(n-1)
    i_m: np.ndarray             # the function I_m, which equals the remainder at a polybalanced state
    b_bullet: np.ndarray
    b_circ: np.ndarray
    identity_gap: float         # |(B_bullet - B_circ) - sum (1 - gamma_k) |sigma|^2|

    @property
    def chain_gap(self) -> float:
        return float(np.max(np.abs(self.remainder - self.i_m)))


def bergman_expansion(result: BalanceResult, points) -> BergmanExpansion:
    _require_converged(result)
    basis = result.dec.basis
    n, m = basis.polarization.dimension, basis.m
    norms = section_norms(result.state, basis, _block_scales(result), points)
    g = result.gamma[result.dec.block_of]
    b_bullet = norms.sum(axis=1)
    b_circ = norms @ g
    # block sums first, then the weighted total: an evaluation independent of b_circ
    per_block = np.stack([norms[:, list(b)].sum(axis=1) for b in result.dec.blocks], axis=1)
    rhs = per_block @ (1.0 - result.gamma)
    identity_gap = float(np.max(np.abs((b_bullet - b_circ) - rhs)))
    n_prime = float(basis.N_prime)
    if is_degenerate(result):
        f_m = np.zeros(b_bullet.shape)
        i_m = np.zeros(b_bullet.shape)
    else:
        r_inv, lam = normalized_direction(result)
        f_lam = hamiltonian(result, lam, points)
        f_m = -(r_inv * m**2 / result.beta0**2) * f_lam
        lam_j = lam.on_sections()
        i_m = (r_inv / result.beta0) * (norms @ ((1.0 - 1.0 / g) * lam_j * g))
    remainder = b_bullet - n_prime - f_m * m ** (n - 1)
    return BergmanExpansion(f_m, remainder, i_m, b_bullet, b_circ, identity_gap)


# -- per-level record ------------------------------------------------------------


@dataclass(frozen=True)
class SweepRecord:
    m: int
    N_m: int
    nu_m: int
    beta0: float
    max_gamma_dev: float
    r_m_inv: float
    pairing_m: float
    futaki_hat: float
    futaki_oracle: float
    sup_f_m: float
    sup_R_m: float
    converged: bool
    degenerate: bool = False
    iterations: int = 0
    residual: float = 0.0
    mass_error: float = 0.0
    block_spread: float = 0.0
    perp_norm: float = 0.0
    polybalanced_dev: float = 0.0
    normalization_dev: float = 0.0
    hamiltonian_dev: float = math.nan
    identity_gap: float = 0.0
    chain_gap: float = 0.0
    bookkeeping_gap: float = 0.0
    lambda_over_m: float = 0.0

    CSV_COLUMNS = ("m", "N_m", "nu_m", "beta0", "max_gamma_dev", "r_m_inv", "pairing_m",
                   "futaki_hat", "futaki_oracle", "sup_f_m", "sup_R_m", "converged")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepRecord":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def analyze(result: BalanceResult, grid: QuadratureGrid, points, ham_points=None) -> SweepRecord:
    """Collect every per-level diagnostic of a solve into one record.

    Non-converged results only carry the solver fields; the rest is NaN.
    """
    basis = result.dec.basis
    nan = math.nan
    gram = gram_integrals(result.state, grid, check=False)
    common = dict(
        m=basis.m, N_m=basis.N, nu_m=result.dec.nu, beta0=result.beta0,
        max_gamma_dev=result.max_gamma_deviation, converged=bool(result.converged),
        iterations=int(result.iterations), residual=float(result.residual),
        mass_error=float(gram.mass_error), block_spread=result.block_spread,
        perp_norm=result.perp_norm,
    )
    if not result.converged:
        return SweepRecord(r_m_inv=nan, pairing_m=nan, futaki_hat=nan, futaki_oracle=nan,
                           sup_f_m=nan, sup_R_m=nan, **common)
    exp = bergman_expansion(result, points)
    _, dev = normalized_sections(result, grid)
    extra = dict(
        polybalanced_dev=polybalanced_identity_check(result, points),
        normalization_dev=max(dev.values()),
        identity_gap=exp.identity_gap, chain_gap=exp.chain_gap,
        sup_f_m=float(np.max(np.abs(exp.f_m))), sup_R_m=float(np.max(np.abs(exp.remainder))),
    )
    if is_degenerate(result):
        ham = nan
        if result.sub.dim and ham_points is not None:
            lam = result.sub.basis[0]
            ham = float(np.max(np.abs(hamiltonian(result, lam, ham_points)
                                      - moment_map_oracle(result, lam, ham_points))))
        return SweepRecord(r_m_inv=0.0, pairing_m=0.0, futaki_hat=0.0,
                           futaki_oracle=float(futaki_oracle_for(result)), degenerate=True,
                           hamiltonian_dev=ham, **common, **extra)
    fut = futaki_estimate(result)
    _, lam = normalized_direction(result)
    ham = nan
    if ham_points is not None:
        ham = float(np.max(np.abs(hamiltonian(result, lam, ham_points)
                                  - moment_map_oracle(result, lam, ham_points))))
    direct, chain = fut["bookkeeping"]
    return SweepRecord(
        r_m_inv=fut["r_inv"], pairing_m=fut["pairing"], futaki_hat=fut["futaki_hat"],
        futaki_oracle=fut["futaki_oracle"], hamiltonian_dev=ham,
        bookkeeping_gap=abs(direct - chain) / max(abs(direct), 1e-300),
        lambda_over_m=float(np.max(np.abs(lam.values))) / basis.m,
        **common, **extra,
    )


def futaki_oracle_for(result: BalanceResult) -> float:
    """Largest Futaki value over the sub-torus generators (0 for the trivial torus)."""
    gens = result.dec.action.generators
    vals = futaki_on_torus(result.dec.basis.polarization, gens)
    return float(max((abs(v) for v in vals), default=0))


# -- sweep-level laws ------------------------------------------------------------


def _usable(records) -> list[SweepRecord]:
    recs = [r for r in records if r.converged]
    if any(b.m <= a.m for a, b in zip(recs, recs[1:])):
        raise ValueError("records must have strictly increasing m")
    if recs and all(r.degenerate for r in recs):
        raise DegenerateSweep("exactly balanced family: beta_bar vanishes at every level")
    return [r for r in recs if not r.degenerate]


def weight_decay(records) -> SlopeFit:
    """Slope of ``max_k |gamma_{m,k} - 1|`` against ``m``."""
    recs = _usable(records)
    return fit_slope([r.m for r in recs], [r.max_gamma_dev for r in recs])


def r_m_scaling(records) -> SlopeFit:
    recs = _usable(records)
    return fit_slope([r.m for r in recs], [r.r_m_inv for r in recs])


def corollary_b_decay(records, futaki_values, tol: float = 1e-8) -> tuple[SlopeFit, SlopeFit]:
    """Weight and ``r_m^{-1}`` slopes on an instance with vanishing Futaki character.

    Raises :class:`NotApplicable` when the Futaki character is nonzero on
    the sub-torus (or the torus is trivial), and :class:`DegenerateSweep`
    when the family is exactly balanced.
    """
    vals = [abs(float(v)) for v in futaki_values]
    if not vals or max(vals) > tol:
        raise NotApplicable("Futaki character does not vanish on the sub-torus")
    return weight_decay(records), r_m_scaling(records)


def futaki_convergence(records) -> SlopeFit:
    """Slope of ``|F_hat_m - F(ell_lambda)|`` against ``m``."""
    recs = _usable(records)
    return fit_slope([r.m for r in recs], [abs(r.futaki_hat - r.futaki_oracle) for r in recs])


def remainder_growth(records) -> SlopeFit:
    recs = [r for r in records if r.converged]
    return fit_slope([r.m for r in recs], [r.sup_R_m for r in recs])


def spread_ratio(values) -> float:
    """``max / median`` of positive values (1 means perfectly uniform)."""
    v = np.asarray(values, dtype=float)
    return float(np.max(v) / np.median(v))

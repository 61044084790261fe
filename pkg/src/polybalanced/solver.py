"""Relative balancing: the critical diagonal state of the Chow energy.

The group ``G_m = T^perp . S_m`` meets the diagonal torus in the directions
``b_j = lambda_k + a_j`` with ``lambda`` orthogonal to the sub-torus and
``a`` trace-free inside each block.  The first variation of the Chow norm
along ``b`` is ``sum_j b_j G_j``, so a diagonal state is critical exactly
when the Gram diagonal ``G`` is constant on blocks (value ``beta_k``) and
the centered block vector lies in the sub-torus directions.

Sections are handled in lexicographic order throughout; block membership
comes from ``CharacterDecomposition.block_of``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .integrator import (
    GramReport,
    MetricState,
    QuadratureGrid,
    bergman_pointwise,
    gram_integrals,
    offdiagonal_check,
)
from .toric import CharacterDecomposition
from .weights import TorusSubspace, WeightVector, center, norm_m, project_to_t, torus_subspace

logger = logging.getLogger(__name__)

METHODS = ("fixed-point", "descent")


@dataclass(frozen=True)
class SolverSpec:
    method: str = "fixed-point"
    step: float = 1.0
    max_iterations: int = 2000
    tolerance: float = 1e-10
    divergence_bound: float = 40.0    # sup |log c_j| beyond which the orbit is declared escaping

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown solver method {self.method!r}; expected one of {METHODS}")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValueError("max_iterations must be a positive integer")
        if not 0 < self.step <= 1:
            raise ValueError("step must lie in (0, 1]")


def block_means(values: np.ndarray, dec: CharacterDecomposition) -> np.ndarray:
    sums = np.bincount(dec.block_of, weights=values, minlength=dec.nu)
    return sums / np.asarray(dec.multiplicities, dtype=float)


def project_to_lie(v: np.ndarray, dec: CharacterDecomposition, sub: TorusSubspace) -> np.ndarray:
    """Orthogonal projection of a per-section vector onto diag Lie(G_m).

    The within-block trace-free part is kept as is; the block means are
    centered and stripped of their sub-torus component.
    """
    means = block_means(v, dec)
    within = v - means[dec.block_of]
    _, perp = project_to_t(center(means, dec), sub)
    return within + perp.on_sections()


def balancing_defect(gram: GramReport, dec: CharacterDecomposition, sub: TorusSubspace) -> np.ndarray:
    """Gradient of the Chow energy along diag Lie(G_m), one entry per section.

    It vanishes exactly when the Gram diagonal is block-constant with
    centered block values in the sub-torus directions.
    """
    G = gram.diagonal
    u = G - gram.total_mass / G.size
    return project_to_lie(u, dec, sub)


@dataclass(frozen=True, eq=False)
class BalanceResult:
    state: MetricState
    dec: CharacterDecomposition
    sub: TorusSubspace
    gram: np.ndarray
    beta: np.ndarray
    beta0: float
    gamma: np.ndarray
    beta_bar: WeightVector
    residual: float
    iterations: int
    converged: bool
    diverged: bool = False
    direction: np.ndarray | None = None           # escaping one-parameter direction, if any
    history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def m(self) -> int:
        return self.state.m

    @property
    def block_spread(self) -> float:
        """Largest within-block spread of the Gram diagonal."""
        spread = 0.0
        for b in self.dec.blocks:
            vals = self.gram[list(b)]
            spread = max(spread, float(vals.max() - vals.min()))
        return spread

    @property
    def perp_norm(self) -> float:
        """Size of the part of the centered block weights outside the sub-torus."""
        _, perp = project_to_t(self.beta_bar, self.sub)
        return norm_m(perp)

    @property
    def max_gamma_deviation(self) -> float:
        return float(np.max(np.abs(self.gamma - 1.0)))


def _summarize(state, grid, dec, sub, gram, residual, iterations, converged,
               diverged=False, direction=None, history=()) -> BalanceResult:
    beta = block_means(gram.diagonal, dec)
    mult = np.asarray(dec.multiplicities, dtype=float)
    beta0 = float(np.dot(mult, beta) / mult.sum())
    beta_bar = WeightVector(beta - beta0, dec)
    return BalanceResult(
        state=state, dec=dec, sub=sub, gram=gram.diagonal, beta=beta, beta0=beta0,
        gamma=beta / beta0, beta_bar=beta_bar, residual=residual, iterations=iterations,
        converged=converged, diverged=diverged, direction=direction, history=tuple(history),
    )


def energy_change(state: MetricState, direction: np.ndarray, s: float, grid: QuadratureGrid,
                  nodes: int = 4) -> float:
    """Chow energy difference along ``log c -> log c + s*direction``.

    Gauss-Legendre on the path integral of the gradient, so it is consistent
    with the Gram diagonal to quadrature accuracy.
    """
    t, w = np.polynomial.legendre.leggauss(nodes)
    t = 0.5 * (t + 1.0)
    total = 0.0
    for ti, wi in zip(t, w):
        g = gram_integrals(MetricState(state.m, state.log_c + s * ti * direction), grid, check=False)
        total += 0.5 * wi * float(direction @ g.diagonal)
    return s * total


def _fixed_point_step(G, defect):
    target = G - defect
    if np.all(target > 0):
        return 0.5 * np.log(target / G)
    return -0.5 * defect / G


def solve(state0: MetricState, dec: CharacterDecomposition, grid: QuadratureGrid,
          spec: SolverSpec = SolverSpec(), sub: TorusSubspace | None = None,
          callback=None) -> BalanceResult:
    """Drive the projected balancing defect to zero.

    ``fixed-point`` rescales ``c_j^2`` by the ratio of the nearest critical
    Gram value to the current one, keeps only the Lie(G_m) part of the
    log-update and renormalizes to the det-one gauge.  If the residual stops
    decreasing the solver falls back to ``descent``: the same direction with
    Armijo backtracking on the Chow energy.

    ``callback(iteration, log_c, residual)``, if given, sees every iterate.
    """
    if sub is None:
        sub = torus_subspace(dec)
    if np.any(~np.isfinite(state0.log_c)):
        raise ValueError("initial state must be strictly positive")
    method = spec.method
    d = state0.log_c.copy()
    history: list[float] = []
    best = (math.inf, d.copy())
    stall = 0
    gram = gram_integrals(MetricState(state0.m, d), grid)
    for it in range(int(spec.max_iterations) + 1):
        defect = balancing_defect(gram, dec, sub)
        residual = float(np.max(np.abs(defect)))
        history.append(residual)
        if residual < best[0]:
            best = (residual, d.copy())
            stall = 0
        else:
            stall += 1
        logger.debug("iteration %d residual %.3e", it, residual)
        if callback is not None:
            callback(it, d.copy(), residual)
        if residual <= spec.tolerance:
            state = MetricState(state0.m, d)
            return _summarize(state, grid, dec, sub, gram, residual, it, True, history=history)
        if it == spec.max_iterations:
            break
        if np.max(np.abs(d)) > spec.divergence_bound:
            direction = project_to_lie(d, dec, sub)
            direction /= np.linalg.norm(direction)
            state = MetricState(state0.m, d)
            logger.warning("orbit escapes along a one-parameter subgroup after %d steps", it)
            return _summarize(state, grid, dec, sub, gram, residual, it, False, True,
                              direction, history)
        if method == "fixed-point" and stall >= 5:
            logger.info("fixed-point iteration stalled; switching to descent")
            method = "descent"
        step = project_to_lie(_fixed_point_step(gram.diagonal, defect), dec, sub)
        if method == "fixed-point":
            d = d + spec.step * step
        else:
            slope = float(defect @ step)
            s = spec.step
            while s > 1e-12:
                if energy_change(MetricState(state0.m, d), step, s, grid) <= 1e-4 * s * slope:
                    break
                s *= 0.5
            d = d + s * step
        gram = gram_integrals(MetricState(state0.m, d), grid)
    residual, d = best
    state = MetricState(state0.m, d)
    gram = gram_integrals(state, grid)
    logger.warning("no convergence after %d iterations (residual %.3e)", spec.max_iterations, residual)
    return _summarize(state, grid, dec, sub, gram, residual, int(spec.max_iterations), False,
                      history=history)


def normalized_sections(result: BalanceResult, grid: QuadratureGrid, tol: float = 1e-6):
    """Scales making ``sigma_j = scale_j z^{p_j}`` an L^2-orthonormal basis.

    ``scale_j = c_j (m^n / beta_k)^(1/2)``.  Orthonormality is re-checked by
    quadrature; the returned dict carries the worst diagonal and
    off-diagonal deviations.
    """
    if not result.converged:
        raise ValueError("sections are only normalized at a converged state")
    m = result.m
    n = result.dec.basis.polarization.dimension
    beta_j = result.beta[result.dec.block_of]
    scales = result.state.c * np.sqrt(m**n / beta_j)
    gram = gram_integrals(result.state, grid)
    diag_dev = float(np.max(np.abs(gram.diagonal / beta_j - 1.0)))
    rng = np.random.default_rng(0)
    N = result.dec.basis.N
    off = 0.0
    if N > 1:
        pairs = []
        while len(pairs) < min(10, N * (N - 1) // 2):
            a, b = rng.choice(N, size=2, replace=False)
            pairs.append((a, b))
        # scale_a scale_b / (c_a c_b) times the entry of the c-scaled sections, divided by m^n
        raw = offdiagonal_check(result.state, grid, pairs)
        off = raw * float(np.max(m**n / beta_j)) / m**n
    if diag_dev > tol:
        logger.warning("normalized sections deviate from orthonormal by %.2e", diag_dev)
    return scales, {"diagonal": diag_dev, "offdiagonal": off}


def orthonormal_scales(result: BalanceResult) -> np.ndarray:
    """Scales from each section's own Gram entry (exactly orthonormal by construction)."""
    m = result.m
    n = result.dec.basis.polarization.dimension
    return result.state.c * np.sqrt(m**n / result.gram)


def polybalanced_identity_check(result: BalanceResult, points) -> float:
    """``sup |B_circ(x) - m^n / beta_0|`` over ``points``.

    ``B_circ`` is assembled from an orthonormal basis of each block weighted
    by ``gamma_k``; it is constant only when the Gram diagonal is constant
    on blocks, so the deviation measures how far the state is from
    polybalanced.
    """
    basis = result.dec.basis
    n = basis.polarization.dimension
    sample = bergman_pointwise(result.state, basis, orthonormal_scales(result),
                               result.dec.block_of, result.gamma, points)
    return float(np.max(np.abs(sample.b_circ - basis.m**n / result.beta0)))

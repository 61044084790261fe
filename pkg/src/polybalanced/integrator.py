"""Integrals over a toric manifold for torus-invariant Fubini-Study metrics.

A diagonal state ``c`` on the monomial basis gives, in logarithmic
coordinates ``x`` on the open torus orbit, the potential

    phi(x) = log sum_j c_j^2 exp(2 <p_j, x>).

With ``psi = phi / 2`` the top power of the pulled-back Fubini-Study form
integrates like ``n! det(Hess psi) dx`` after the angular fibres are
integrated out, so its total mass is ``n! vol(mP) = m^n deg``.  The weights
``w_j = c_j^2 exp(2 <p_j, x> - phi)`` are the pointwise FS norms of the
scaled sections and sum to one.

Two quadrature schemes are provided.  ``chart`` (default) splits R^n into
the normal cones of the vertices of P; on the cone of vertex ``v`` the
substitution ``q_a = exp(2 <e_a, x>)`` (edge directions ``e_a``) turns every
Gram integrand into a rational function on the unit cube without poles, so
tensor Gauss-Legendre converges geometrically.  Nodes are placed in
``v = q^(1/p)`` (``chart_power`` p, default 2): this spreads out the region
near ``q = 0`` where states with uneven scalings change fastest, and it
smooths the ``q log q`` terms of the energy integrand.  ``tanh`` maps each axis of R^n to
(-1, 1) by ``x = s artanh(t)``; it needs no Delzant hypothesis and serves
as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .toric import SectionBasis, ToricPolarization


class QuadratureError(RuntimeError):
    """Quadrature missed its target; ``achieved`` carries the error estimate."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved relative error {achieved:.3e})")
        self.achieved = achieved


SCHEMES = ("chart", "tanh")


@dataclass(frozen=True)
class QuadratureSpec:
    scheme: str = "chart"
    nodes_per_axis: int = 64
    target_error: float = 1e-9
    tanh_scale: float = 1.0
    chart_power: int = 2

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}; expected one of {SCHEMES}")
        if int(self.nodes_per_axis) != self.nodes_per_axis or self.nodes_per_axis < 8:
            raise ValueError("nodes_per_axis must be an integer >= 8")
        if not 0 < self.target_error <= 1e-4:
            raise ValueError("target_error must lie in (0, 1e-4]")
        if self.tanh_scale <= 0:
            raise ValueError("tanh_scale must be positive")
        if int(self.chart_power) != self.chart_power or self.chart_power < 1:
            raise ValueError("chart_power must be a positive integer")


@dataclass(frozen=True, eq=False)
class MetricState:
    """Positive diagonal scalings ``c_j = exp(d_j)`` in the det-one gauge."""

    m: int
    log_c: np.ndarray

    def __post_init__(self):
        d = np.array(self.log_c, dtype=float)
        if d.ndim != 1 or not np.all(np.isfinite(d)):
            raise ValueError("log-scalings must be a finite vector")
        d = d - d.mean()
        d.setflags(write=False)
        object.__setattr__(self, "log_c", d)

    @classmethod
    def from_scalings(cls, m: int, c) -> "MetricState":
        c = np.asarray(c, dtype=float)
        if np.any(c <= 0):
            raise ValueError("scalings must be positive")
        return cls(m, np.log(c))

    @classmethod
    def symmetric(cls, basis: SectionBasis) -> "MetricState":
        return cls(basis.m, np.zeros(basis.N))

    @property
    def c(self) -> np.ndarray:
        return np.exp(self.log_c)

    @property
    def c2(self) -> np.ndarray:
        return np.exp(2.0 * self.log_c)


@dataclass(frozen=True, eq=False)
class _Panel:
    points: np.ndarray      # (P, n) log coordinates x
    expo: np.ndarray        # (P, N) exponent of each monomial relative to the panel's leading term
    coords: np.ndarray      # (N, n) lattice points in the panel's coordinates
    jac: np.ndarray         # (P,) quadrature weight times Jacobian
    cov_scale: float        # det(Hess psi) = cov_scale * det(Cov_w(coords)) in panel coordinates


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    basis: SectionBasis
    spec: QuadratureSpec
    panels: tuple[_Panel, ...]

    @property
    def n_nodes(self) -> int:
        return sum(p.points.shape[0] for p in self.panels)


@lru_cache(maxsize=16)
def _gauss_legendre(k: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(k)


def _tensor(nodes: np.ndarray, weights: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    grids = np.meshgrid(*([nodes] * n), indexing="ij")
    wgrids = np.meshgrid(*([weights] * n), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return pts, w


def build_grid(basis: SectionBasis, spec: QuadratureSpec) -> QuadratureGrid:
    pol = basis.polarization
    n = pol.dimension
    lattice = basis.lattice_points.astype(float)
    t, w = _gauss_legendre(int(spec.nodes_per_axis))
    panels = []
    if spec.scheme == "chart":
        p = int(spec.chart_power)
        v = 0.5 * (t + 1.0)
        u, wu = _tensor(v**p, 0.5 * w * p * v ** (p - 1), n)
        logq = np.log(u)
        for chart in pol.vertex_charts:
            edges = np.array(chart.edges, dtype=float)          # rows e_a
            rel = lattice - basis.m * np.array(chart.vertex, dtype=float)
            k = np.rint(np.linalg.solve(edges.T, rel.T).T)      # p - m v = E^T k
            tau = 0.5 * logq
            x = np.linalg.solve(edges, tau.T).T                 # E x = tau
            jac = wu / np.prod(u, axis=1)
            panels.append(_Panel(x, logq @ k.T, k, jac, 1.0))
    else:
        s = spec.tanh_scale
        tt, wt = _tensor(t, w, n)
        x = s * np.arctanh(tt)
        jac = wt * np.prod(s / (1.0 - tt**2), axis=1)
        panels.append(_Panel(x, 2.0 * x @ lattice.T, lattice, jac, 2.0**n))
    return QuadratureGrid(basis, spec, tuple(panels))


def _det(cov: np.ndarray) -> np.ndarray:
    n = cov.shape[-1]
    if n == 1:
        return cov[:, 0, 0]
    if n == 2:
        return cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] * cov[:, 1, 0]
    return np.linalg.det(cov)


def _panel_terms(panel: _Panel, log_c: np.ndarray):
    """Log-weights, weights and Monge-Ampere density at the panel nodes."""
    logt = 2.0 * log_c[None, :] + panel.expo
    logw = logt - logsumexp(logt, axis=1, keepdims=True)
    w = np.exp(logw)
    mu = w @ panel.coords
    dev = panel.coords[None, :, :] - mu[:, None, :]
    cov = np.einsum("pj,pja,pjb->pab", w, dev, dev)
    n = panel.coords.shape[1]
    dens = math.factorial(n) * panel.cov_scale * _det(cov) * panel.jac
    return logw, w, dens


@dataclass(frozen=True, eq=False)
class GramReport:
    """Diagonal Gram integrals ``G_j`` of the scaled sections ``c_j s_j``."""

    diagonal: np.ndarray
    total_mass: float
    expected_mass: float

    @property
    def mass_error(self) -> float:
        return abs(self.total_mass - self.expected_mass) / self.expected_mass


def gram_integrals(state: MetricState, grid: QuadratureGrid, check: bool = True) -> GramReport:
    """``G_j = int w_j n! det(Hess psi) dx``; the sum is checked against ``m^n deg``."""
    basis = grid.basis
    if state.log_c.shape != (basis.N,):
        raise ValueError("state does not match the section basis")
    G = np.zeros(basis.N)
    for panel in grid.panels:
        _, w, dens = _panel_terms(panel, state.log_c)
        G += dens @ w
    if not np.all(np.isfinite(G)):
        raise QuadratureError("non-finite Gram integral", math.inf)
    expected = float(basis.mass)
    report = GramReport(G, float(G.sum()), expected)
    if check and report.mass_error > grid.spec.target_error:
        raise QuadratureError("mass identity violated", report.mass_error)
    if np.any(G <= 0):
        raise QuadratureError("non-positive Gram diagonal", report.mass_error)
    return report


def chow_energy(state: MetricState, grid: QuadratureGrid) -> float:
    """Energy whose gradient in the log-scalings is the Gram diagonal.

    Computed from the Legendre dual of ``psi``: at a point with weights
    ``w`` it equals ``sum_j w_j (log w_j / 2 - d_j)``; the energy is minus
    its Monge-Ampere integral.  Along one-parameter diagonal subgroups it is
    convex, which is what the solver minimizes.
    """
    total = 0.0
    for panel in grid.panels:
        logw, w, dens = _panel_terms(panel, state.log_c)
        u = np.sum(w * (0.5 * logw - state.log_c[None, :]), axis=1)
        total -= float(dens @ u)
    return total


def offdiagonal_check(state: MetricState, grid: QuadratureGrid, pairs) -> float:
    """Largest off-diagonal Gram entry among ``pairs``.

    The angular fibre integral of ``z^p conj(z^q)`` is evaluated by the
    trapezoid rule on enough nodes to integrate every character exactly,
    and multiplied by the radial integral of ``sqrt(w_p w_q)``.
    """
    lattice = grid.basis.lattice_points
    pairs = [(int(a), int(b)) for a, b in pairs]
    for a, b in pairs:
        if a == b:
            raise ValueError("off-diagonal check needs distinct sections")
        if np.array_equal(lattice[a], lattice[b]):
            raise ValueError(f"sections {a} and {b} share a lattice point: not applicable")
    radial = np.zeros(len(pairs))
    idx_a = np.array([a for a, _ in pairs], dtype=int)
    idx_b = np.array([b for _, b in pairs], dtype=int)
    for panel in grid.panels:
        _, w, dens = _panel_terms(panel, state.log_c)
        radial += dens @ np.sqrt(w[:, idx_a] * w[:, idx_b])
    worst = 0.0
    for r, a, b in zip(radial, idx_a, idx_b):
        delta = lattice[a] - lattice[b]
        nodes = 2 * int(np.max(np.abs(delta))) + 3
        theta = 2.0 * np.pi * np.arange(nodes) / nodes
        fibre = 1.0 + 0.0j
        for d in delta:
            fibre *= np.mean(np.exp(1j * d * theta))
        worst = max(worst, abs(fibre * r))
    return worst


# -- pointwise quantities -------------------------------------------------------


def _weights_at(state: MetricState, basis: SectionBasis, points: np.ndarray):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    logt = 2.0 * state.log_c[None, :] + 2.0 * pts @ basis.lattice_points.T.astype(float)
    lse = logsumexp(logt, axis=1)
    return lse, np.exp(logt - lse[:, None])


def potential(points, state: MetricState, basis: SectionBasis) -> np.ndarray:
    """``phi(x) = log sum_j c_j^2 exp(2 <p_j, x>)`` by log-sum-exp."""
    lse, _ = _weights_at(state, basis, points)
    return lse


def section_weights(points, state: MetricState, basis: SectionBasis) -> np.ndarray:
    """``w_j(x)``, the FS norms of the scaled sections; rows sum to one."""
    return _weights_at(state, basis, points)[1]


def potential_derivatives(points, state: MetricState, basis: SectionBasis):
    """Analytic gradient and Hessian of ``phi`` from moments of the weights."""
    _, w = _weights_at(state, basis, points)
    p = basis.lattice_points.astype(float)
    mu = w @ p
    dev = p[None, :, :] - mu[:, None, :]
    cov = np.einsum("pj,pja,pjb->pab", w, dev, dev)
    return 2.0 * mu, 4.0 * cov


@dataclass(frozen=True, eq=False)
class PointSample:
    points: np.ndarray
    b_circ: np.ndarray       # sum_k gamma_k sum_i |sigma_{k,i}|^2
    b_bullet: np.ndarray     # sum_j |sigma_j|^2

    def __post_init__(self):
        if self.points.shape[0] == 0:
            raise ValueError("empty sample")
        if not (np.all(np.isfinite(self.b_circ)) and np.all(np.isfinite(self.b_bullet))):
            raise ValueError("non-finite Bergman values")


def section_norms(state: MetricState, basis: SectionBasis, section_scales, points) -> np.ndarray:
    """``|scale_j z^{p_j}|^2_FS = scale_j^2 exp(2 <p_j, x> - phi(x))``, one row per point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    scales = np.asarray(section_scales, dtype=float)
    logt = 2.0 * np.log(scales)[None, :] + 2.0 * pts @ basis.lattice_points.T.astype(float)
    lse = potential(pts, state, basis)
    return np.exp(logt - lse[:, None])


def bergman_pointwise(state: MetricState, basis: SectionBasis, section_scales, block_of,
                      gamma, points) -> PointSample:
    """Weighted and unweighted Bergman sums of the sections ``scale_j z^{p_j}``."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0):
        raise ValueError("block weights must be positive")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    norms = section_norms(state, basis, section_scales, pts)
    return PointSample(pts, norms @ gamma[np.asarray(block_of)], norms.sum(axis=1))


def sample_points(pol: ToricPolarization, count: int, seed: int) -> np.ndarray:
    """Seeded points spread over the whole manifold.

    A vertex chart is picked uniformly and ``q`` uniformly in the unit cube,
    so points approach every torus-invariant divisor.
    """
    if count < 1:
        raise ValueError("need at least one sample point")
    rng = np.random.default_rng(seed)
    charts = pol.vertex_charts
    which = rng.integers(len(charts), size=count)
    q = rng.uniform(1e-6, 1.0, size=(count, pol.dimension))
    out = np.empty((count, pol.dimension))
    for i in range(count):
        edges = np.array(charts[which[i]].edges, dtype=float)
        out[i] = np.linalg.solve(edges, 0.5 * np.log(q[i]))
    return out


def grid_points(pol: ToricPolarization, per_axis: int = 20, limit: float = 0.95) -> np.ndarray:
    """Tensor grid ``x_a = artanh(t)`` with ``t`` evenly spaced in ``[-limit, limit]``."""
    t = np.arctanh(np.linspace(-limit, limit, per_axis))
    mesh = np.meshgrid(*([t] * pol.dimension), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)

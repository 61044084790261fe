"""Lattice polytopes, monomial section bases and character blocks.

A smooth projective toric manifold with an ample line bundle is encoded by
its moment polytope ``P``.  Sections of ``L^m`` are monomials indexed by the
lattice points of ``mP``; a sub-torus given by integer covectors acts on the
monomial ``p`` through the character ``(<l_1, p>, ..., <l_r, p>)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
import sympy
from scipy.spatial import ConvexHull


class PolytopeError(ValueError):
    """Raised for degenerate or otherwise unusable polytope input."""


def _primitive(vec) -> tuple[int, ...]:
    """Scale a rational vector to the primitive integer vector on its ray."""
    fr = [Fraction(int(sympy.Rational(v).p), int(sympy.Rational(v).q)) for v in vec]
    den = math.lcm(*[f.denominator for f in fr])
    ints = [int(f * den) for f in fr]
    g = math.gcd(*ints)
    if g == 0:
        raise PolytopeError("zero vector has no primitive representative")
    return tuple(i // g for i in ints)


def _kernel_vector(rows: list[tuple[int, ...]], n: int) -> tuple[int, ...]:
    """Primitive integer generator of the one-dimensional kernel of ``rows``."""
    if not rows:
        if n != 1:
            raise PolytopeError("kernel is not one-dimensional")
        return (1,)
    ns = sympy.Matrix(rows).nullspace()
    if len(ns) != 1:
        raise PolytopeError("kernel is not one-dimensional")
    return _primitive(list(ns[0]))


@dataclass(frozen=True)
class Facet:
    normal: tuple[int, ...]        # primitive inward normal a
    offset: int                    # a.y >= offset on P
    vertices: tuple[int, ...]      # indices into ToricPolarization.vertices


@dataclass(frozen=True)
class VertexChart:
    """Affine chart at a vertex: lattice points are ``m*v + E^T k`` with k >= 0."""

    vertex: tuple[int, ...]
    edges: tuple[tuple[int, ...], ...]   # primitive edge directions, rows of E


class ToricPolarization:
    """Polarized toric manifold given by a full-dimensional lattice polytope.

    Only the vertex list is required; facets are computed and, when
    ``inequalities`` is supplied, cross-checked against it.
    """

    def __init__(self, vertices, inequalities=None):
        pts = np.asarray(vertices)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise PolytopeError("vertex list must be a non-empty list of points")
        if not np.issubdtype(pts.dtype, np.integer):
            if not np.all(pts == np.round(pts)):
                raise PolytopeError("vertices must be lattice points")
            pts = np.round(pts).astype(np.int64)
        self.dimension = int(pts.shape[1])
        if self.dimension < 1:
            raise PolytopeError("dimension must be positive")
        uniq = sorted({tuple(int(c) for c in p) for p in pts})
        self.vertices = tuple(self._extreme_points(uniq))
        self.facets = tuple(self._compute_facets())
        if inequalities is not None:
            self._check_inequalities(inequalities)

    # -- construction -----------------------------------------------------------

    def _extreme_points(self, pts: list[tuple[int, ...]]) -> list[tuple[int, ...]]:
        n = self.dimension
        if len(pts) < n + 1:
            raise PolytopeError("polytope is not full-dimensional")
        if n == 1:
            return [pts[0], pts[-1]]
        arr = np.array(pts, dtype=float)
        if np.linalg.matrix_rank(arr[1:] - arr[0]) < n:
            raise PolytopeError("polytope is not full-dimensional")
        hull = ConvexHull(arr)
        return sorted(pts[i] for i in hull.vertices)

    def _compute_facets(self) -> list[Facet]:
        n = self.dimension
        verts = self.vertices
        if n == 1:
            lo, hi = verts[0][0], verts[1][0]
            return [Facet((1,), lo, (0,)), Facet((-1,), -hi, (1,))]
        hull = ConvexHull(np.array(verts, dtype=float))
        facets: dict[tuple[int, ...], Facet] = {}
        for simplex in hull.simplices:
            base = verts[simplex[0]]
            rows = [tuple(verts[i][c] - base[c] for c in range(n)) for i in simplex[1:]]
            a = _kernel_vector(rows, n)
            vals = [sum(ai * vi for ai, vi in zip(a, v)) for v in verts]
            b = sum(ai * bi for ai, bi in zip(a, base))
            if min(vals) < b:
                a = tuple(-ai for ai in a)
                b = -b
                vals = [-v for v in vals]
            if a in facets:
                continue
            on = tuple(i for i, v in enumerate(vals) if v == b)
            facets[a] = Facet(a, b, on)
        return sorted(facets.values(), key=lambda f: f.normal)

    def _check_inequalities(self, inequalities) -> None:
        given = set()
        for row in inequalities:
            # either a flat row (a_1, ..., a_n, b) or a pair (normal, b)
            if len(row) == 2 and isinstance(row[0], (tuple, list)):
                row = (*row[0], row[1])
            *a, b = (int(x) for x in row)
            if len(a) != self.dimension:
                raise PolytopeError(f"inequality {row} has the wrong dimension")
            g = math.gcd(*a)
            given.add((tuple(x // g for x in a), Fraction(b, g)))
        mine = {(f.normal, Fraction(f.offset)) for f in self.facets}
        if given != mine:
            raise PolytopeError("supplied inequalities do not match the vertex hull")

    # -- exact invariants -------------------------------------------------------

    @cached_property
    def simplices(self) -> tuple[tuple[int, ...], ...]:
        """A triangulation of P by vertex-index simplices."""
        n = self.dimension
        if n == 1:
            return ((0, 1),)
        from scipy.spatial import Delaunay

        tri = Delaunay(np.array(self.vertices, dtype=float))
        out = []
        for s in tri.simplices:
            if self._simplex_det(s) != 0:
                out.append(tuple(int(i) for i in s))
        return tuple(out)

    def _simplex_det(self, s) -> int:
        v0 = self.vertices[s[0]]
        rows = [[self.vertices[i][c] - v0[c] for c in range(self.dimension)] for i in s[1:]]
        return int(sympy.Matrix(rows).det())

    @cached_property
    def volume(self) -> Fraction:
        """Euclidean volume of P, exact."""
        total = sum(abs(self._simplex_det(s)) for s in self.simplices)
        return Fraction(total, math.factorial(self.dimension))

    @cached_property
    def degree(self) -> Fraction:
        """``c_1(L)^n[M] = n! vol(P)``."""
        return self.volume * math.factorial(self.dimension)

    @cached_property
    def barycenter(self) -> tuple[Fraction, ...]:
        """Barycenter of P under Lebesgue measure, exact."""
        n = self.dimension
        acc = [Fraction(0)] * n
        for s in self.simplices:
            w = Fraction(abs(self._simplex_det(s)), math.factorial(n))
            for c in range(n):
                acc[c] += w * Fraction(sum(self.vertices[i][c] for i in s), n + 1)
        return tuple(a / self.volume for a in acc)

    def boundary_moments(self) -> tuple[Fraction, tuple[Fraction, ...]]:
        """Lattice-normalized boundary measure of P and its first moment.

        Each facet carries the Euclidean measure divided by the length of its
        primitive normal, the normalization under which lattice points on the
        boundary are counted with density one.
        """
        n = self.dimension
        total = Fraction(0)
        moment = [Fraction(0)] * n
        for f in self.facets:
            a = f.normal
            if n == 1:
                mass = Fraction(1)
                total += mass
                for c in range(n):
                    moment[c] += mass * self.vertices[f.vertices[0]][c]
                continue
            a2 = sum(x * x for x in a)
            for s in self._facet_simplices(f):
                v0 = self.vertices[s[0]]
                rows = [[self.vertices[i][c] - v0[c] for c in range(n)] for i in s[1:]]
                rows.append(list(a))
                mass = Fraction(abs(int(sympy.Matrix(rows).det())), a2 * math.factorial(n - 1))
                total += mass
                for c in range(n):
                    moment[c] += mass * Fraction(sum(self.vertices[i][c] for i in s), n)
        return total, tuple(moment)

    def _facet_simplices(self, f: Facet) -> list[tuple[int, ...]]:
        n = self.dimension
        idx = list(f.vertices)
        if n == 2:
            return [tuple(idx)] if len(idx) == 2 else []
        # Triangulate the facet by projecting onto n-1 coordinates where it stays full-dimensional.
        from scipy.spatial import Delaunay

        pts = np.array([self.vertices[i] for i in idx], dtype=float)
        for drop in range(n):
            proj = np.delete(pts, drop, axis=1)
            if np.linalg.matrix_rank(proj[1:] - proj[0]) == n - 1:
                if len(idx) == n:
                    return [tuple(idx)]
                tri = Delaunay(proj)
                return [tuple(idx[i] for i in s) for s in tri.simplices]
        raise PolytopeError("degenerate facet")

    # -- geometry helpers -------------------------------------------------------

    def contains(self, point, m: int = 1) -> bool:
        return all(sum(a * p for a, p in zip(f.normal, point)) >= m * f.offset for f in self.facets)

    def bounding_box(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        arr = np.array(self.vertices)
        return tuple(int(v) for v in arr.min(axis=0)), tuple(int(v) for v in arr.max(axis=0))

    @cached_property
    def vertex_charts(self) -> tuple[VertexChart, ...]:
        """Edge cones at each vertex; raises unless P is Delzant."""
        n = self.dimension
        charts = []
        for vi, v in enumerate(self.vertices):
            incident = [f for f in self.facets if vi in f.vertices]
            if len(incident) != n:
                raise PolytopeError(f"polytope is not simple at vertex {v}")
            edges = []
            for f in incident:
                others = [g.normal for g in incident if g is not f]
                e = _kernel_vector(others, n)
                if sum(a * x for a, x in zip(f.normal, e)) < 0:
                    e = tuple(-x for x in e)
                edges.append(e)
            det = int(sympy.Matrix(edges).det()) if n > 1 else edges[0][0]
            if abs(det) != 1:
                raise PolytopeError(f"vertex {v} is not smooth (edge determinant {det})")
            charts.append(VertexChart(v, tuple(edges)))
        return tuple(charts)

    def is_delzant(self) -> bool:
        try:
            self.vertex_charts
        except PolytopeError:
            return False
        return True

    def __repr__(self) -> str:
        return f"ToricPolarization(vertices={list(self.vertices)})"


@dataclass(frozen=True)
class SectionBasis:
    """Monomial basis of ``H^0(M, L^m)``: lattice points of ``mP`` in lex order."""

    polarization: ToricPolarization
    m: int
    lattice_points: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return int(self.lattice_points.shape[0])

    @property
    def N_prime(self) -> Fraction:
        return Fraction(self.N) / self.polarization.degree

    @property
    def mass(self) -> Fraction:
        """Total volume ``m^n deg`` of the pulled-back Fubini-Study form."""
        return self.polarization.degree * self.m ** self.polarization.dimension


def enumerate_basis(pol: ToricPolarization, m: int) -> SectionBasis:
    """List the lattice points of ``mP`` lexicographically."""
    if not isinstance(m, (int, np.integer)) or isinstance(m, bool) or m < 1:
        raise ValueError(f"level m must be a positive integer, got {m!r}")
    m = int(m)
    lo, hi = pol.bounding_box()
    n = pol.dimension
    normals = np.array([f.normal for f in pol.facets], dtype=np.int64)
    offsets = np.array([f.offset for f in pol.facets], dtype=np.int64) * m
    axes = [np.arange(m * lo[c], m * hi[c] + 1, dtype=np.int64) for c in range(n)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    keep = np.all(grid @ normals.T >= offsets, axis=1)
    pts = grid[keep]
    order = np.lexsort(pts.T[::-1])
    pts = pts[order]
    pts.setflags(write=False)
    return SectionBasis(pol, m, pts)


def count_lattice_points(pol: ToricPolarization, m: int) -> int:
    """Brute-force box scan, one point at a time; independent of enumerate_basis."""
    lo, hi = pol.bounding_box()
    ranges = [range(m * lo[c], m * hi[c] + 1) for c in range(pol.dimension)]
    return sum(1 for p in itertools.product(*ranges) if pol.contains(p, m))


@dataclass(frozen=True)
class SubtorusAction:
    """Integer covectors spanning the one-parameter subgroups of a sub-torus."""

    generators: tuple[tuple[int, ...], ...]

    def __init__(self, generators=()):
        gens = tuple(tuple(int(c) for c in g) for g in generators)
        if gens:
            dims = {len(g) for g in gens}
            if len(dims) != 1:
                raise ValueError("generators must share one dimension")
            if sympy.Matrix(gens).rank() != len(gens):
                raise ValueError("sub-torus generators must be linearly independent")
        object.__setattr__(self, "generators", gens)

    @property
    def rank(self) -> int:
        return len(self.generators)


@dataclass(frozen=True)
class CharacterDecomposition:
    """Blocks of sections sharing a character, sorted by character tuple."""

    basis: SectionBasis
    action: SubtorusAction
    characters: tuple[tuple[int, ...], ...]
    blocks: tuple[tuple[int, ...], ...]      # 0-based section indices per block

    @property
    def nu(self) -> int:
        return len(self.blocks)

    @property
    def multiplicities(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.blocks)

    @cached_property
    def block_of(self) -> np.ndarray:
        """Block index of each section."""
        out = np.empty(self.basis.N, dtype=np.int64)
        for k, b in enumerate(self.blocks):
            out[list(b)] = k
        return out

    @cached_property
    def order(self) -> np.ndarray:
        """Section indices listed block by block: ``order[j(k,i) - 1]``."""
        return np.array([j for b in self.blocks for j in b], dtype=np.int64)

    def index_map(self, k: int, i: int) -> int:
        return index_map(self.multiplicities, k, i)


def index_map(multiplicities, k: int, i: int) -> int:
    """Flat 1-based index ``j(k, i) = i + n_1 + ... + n_{k-1}`` (k, i 1-based)."""
    n = list(multiplicities)
    if not 1 <= k <= len(n):
        raise IndexError(f"block index {k} outside 1..{len(n)}")
    if not 1 <= i <= n[k - 1]:
        raise IndexError(f"position {i} outside 1..{n[k - 1]} in block {k}")
    return i + sum(n[: k - 1])


def decompose_by_characters(basis: SectionBasis, act: SubtorusAction) -> CharacterDecomposition:
    n = basis.polarization.dimension
    if act.rank and len(act.generators[0]) != n:
        raise ValueError(f"generators live in dimension {len(act.generators[0])}, basis in {n}")
    groups: dict[tuple[int, ...], list[int]] = {}
    gens = np.array(act.generators, dtype=np.int64).reshape(act.rank, n)
    chars = basis.lattice_points @ gens.T
    for j, ch in enumerate(chars):
        groups.setdefault(tuple(int(c) for c in ch), []).append(j)
    keys = sorted(groups)
    return CharacterDecomposition(
        basis, act, tuple(keys), tuple(tuple(groups[key]) for key in keys)
    )

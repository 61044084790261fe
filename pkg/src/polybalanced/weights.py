"""Block-diagonal weight vectors and the orthogonal torus/complement split.

Diagonal endomorphisms acting by a scalar on each character block are
stored as one entry per block.  The Hermitian pairing weights block ``k`` by
its multiplicity ``n_k`` and divides by ``m^(n+2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .toric import CharacterDecomposition

TRACE_TOL = 1e-12


class DecompositionMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WeightVector:
    """One scalar per character block, trace-free against the multiplicities."""

    values: np.ndarray
    dec: CharacterDecomposition

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != (self.dec.nu,):
            raise ValueError(f"expected {self.dec.nu} block values, got shape {vals.shape}")
        object.__setattr__(self, "values", vals)

    @property
    def trace(self):
        return np.dot(self.dec.multiplicities, self.values)

    def is_trace_free(self, tol: float = TRACE_TOL) -> bool:
        return abs(self.trace) <= tol

    def on_sections(self) -> np.ndarray:
        """Expand to one value per section (the diagonal of the endomorphism)."""
        return self.values[self.dec.block_of]

    def _check(self, other: "WeightVector") -> None:
        if other.dec is not self.dec:
            raise DecompositionMismatch("weight vectors belong to different decompositions")

    def __add__(self, other):
        self._check(other)
        return WeightVector(self.values + other.values, self.dec)

    def __sub__(self, other):
        self._check(other)
        return WeightVector(self.values - other.values, self.dec)

    def __mul__(self, scalar):
        return WeightVector(self.values * scalar, self.dec)

    __rmul__ = __mul__

    def __neg__(self):
        return WeightVector(-self.values, self.dec)


def pairing_m(x: WeightVector, y: WeightVector, m: int | None = None, n: int | None = None):
    """``sum_k n_k x_k conj(y_k) / m^(n+2)``.

    ``m`` and ``n`` default to the level and dimension of the decomposition.
    """
    if x.dec is not y.dec:
        raise DecompositionMismatch("weight vectors belong to different decompositions")
    basis = x.dec.basis
    m = basis.m if m is None else m
    n = basis.polarization.dimension if n is None else n
    mult = np.asarray(x.dec.multiplicities, dtype=float)
    val = np.sum(mult * x.values * np.conj(y.values)) / float(m) ** (n + 2)
    if np.iscomplexobj(val):
        return complex(val)
    return float(val)


def norm_m(x: WeightVector) -> float:
    return float(np.sqrt(abs(pairing_m(x, x))))


def center(values, dec: CharacterDecomposition) -> WeightVector:
    """Subtract the multiplicity-weighted mean so the result is trace-free."""
    v = np.asarray(values, dtype=np.result_type(np.asarray(values).dtype, float))
    mult = np.asarray(dec.multiplicities, dtype=float)
    mean = np.dot(mult, v) / mult.sum()
    return WeightVector(v - mean, dec)


@dataclass(frozen=True, eq=False)
class TorusSubspace:
    """Orthonormal basis (for the m-pairing) of the sub-torus directions."""

    dec: CharacterDecomposition
    basis: tuple[WeightVector, ...]

    @property
    def dim(self) -> int:
        return len(self.basis)


def torus_subspace(dec: CharacterDecomposition, tol: float = 1e-12) -> TorusSubspace:
    """Gram-Schmidt on the centered characters of each generator.

    A generator whose centered character vanishes (the sub-torus acts by a
    scalar on all of V_m) contributes nothing and is dropped.
    """
    out: list[WeightVector] = []
    chars = np.array(dec.characters, dtype=float).reshape(dec.nu, dec.action.rank)
    for a in range(dec.action.rank):
        v = center(chars[:, a], dec)
        # two passes of modified Gram-Schmidt
        for _ in range(2):
            for u in out:
                v = v - u * pairing_m(v, u)
        nv = norm_m(v)
        scale = max(1.0, norm_m(center(chars[:, a], dec)))
        if nv > tol * scale:
            out.append(v * (1.0 / nv))
    return TorusSubspace(dec, tuple(out))


def project_to_t(beta: WeightVector, sub: TorusSubspace) -> tuple[WeightVector, WeightVector]:
    """Split ``beta`` into its sub-torus component and the orthogonal rest."""
    if beta.dec is not sub.dec:
        raise DecompositionMismatch("weight vector and subspace use different decompositions")
    bt = WeightVector(np.zeros_like(beta.values), beta.dec)
    for u in sub.basis:
        bt = bt + u * pairing_m(beta, u)
    return bt, beta - bt

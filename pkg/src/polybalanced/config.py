"""Experiment configuration files.

A config is one JSON object::

    {
      "name": "hirzebruch_f1",
      "polytope": {"vertices": [[0, 0], [2, 0], [1, 1], [0, 1]]},
      "subtorus": [[0, 1]],
      "m_list": [3, 4, 5],
      "solver": {"method": "fixed-point", "tolerance": 1e-10},
      "quadrature": {"scheme": "chart", "nodes_per_axis": 40},
      "samples": {"seed": 7, "count": 100, "grid_per_axis": 20},
      "checks": ["converged", "weight_decay"],
      "output_dir": "runs/hirzebruch_f1"
    }

Lattice data and levels must be integers.  ``solver``, ``quadrature``,
``samples`` and ``output_dir`` are optional.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .integrator import QuadratureSpec
from .solver import SolverSpec
from .toric import PolytopeError, SubtorusAction, ToricPolarization

CHECKS = (
    "converged",
    "mass_identity",
    "beta0_limit",
    "fixed_point",
    "degenerate_consistency",
    "weight_decay",
    "r_m_scaling",
    "corollary_b",
    "bergman_expansion",
    "hamiltonian",
    "futaki_link",
)


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"field {field_name!r}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class SampleSpec:
    seed: int = 0
    count: int = 100
    grid_per_axis: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    vertices: tuple[tuple[int, ...], ...]
    subtorus: tuple[tuple[int, ...], ...]
    m_list: tuple[int, ...]
    solver: SolverSpec = SolverSpec()
    quadrature: QuadratureSpec = QuadratureSpec()
    samples: SampleSpec = SampleSpec()
    checks: tuple[str, ...] = ()
    output_dir: str | None = field(default=None, compare=False)

    def polarization(self) -> ToricPolarization:
        return ToricPolarization(self.vertices)

    def action(self) -> SubtorusAction:
        return SubtorusAction(self.subtorus)

    def canonical(self) -> dict:
        """Plain-data form without the output directory (what the hash covers)."""
        return {
            "name": self.name,
            "polytope": {"vertices": [list(v) for v in self.vertices]},
            "subtorus": [list(g) for g in self.subtorus],
            "m_list": list(self.m_list),
            "solver": asdict(self.solver),
            "quadrature": asdict(self.quadrature),
            "samples": asdict(self.samples),
            "checks": list(self.checks),
        }

    @property
    def hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    return value


def _int_rows(rows, name: str) -> tuple[tuple[int, ...], ...]:
    if not isinstance(rows, list):
        raise ConfigError(name, "expected a list of integer vectors")
    out = []
    for i, row in enumerate(rows):
        if not isinstance(row, list) or not row:
            raise ConfigError(f"{name}[{i}]", "expected a non-empty list of integers")
        out.append(tuple(_int(v, f"{name}[{i}]") for v in row))
    return tuple(out)


def _section(raw: dict, key: str, cls, name: str):
    sub = raw.get(key, {})
    if not isinstance(sub, dict):
        raise ConfigError(name, "expected an object")
    known = cls.__dataclass_fields__
    for k in sub:
        if k not in known:
            raise ConfigError(f"{name}.{k}", "unknown field")
    try:
        return cls(**sub)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from None


def parse_config(raw) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    for key in ("name", "polytope", "m_list"):
        if key not in raw:
            raise ConfigError(key, "missing")
    known = {"name", "polytope", "subtorus", "m_list", "solver", "quadrature", "samples",
             "checks", "output_dir"}
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown field")
    name = raw["name"]
    if not isinstance(name, str) or not name:
        raise ConfigError("name", "expected a non-empty string")
    poly = raw["polytope"]
    if not isinstance(poly, dict) or "vertices" not in poly:
        raise ConfigError("polytope.vertices", "missing")
    vertices = _int_rows(poly["vertices"], "polytope.vertices")
    subtorus = _int_rows(raw.get("subtorus", []), "subtorus")
    m_list = raw["m_list"]
    if not isinstance(m_list, list) or not m_list:
        raise ConfigError("m_list", "expected a non-empty list of integers")
    m_list = tuple(_int(m, "m_list") for m in m_list)
    if m_list[0] < 1 or any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise ConfigError("m_list", "levels must be positive and strictly increasing")
    checks = raw.get("checks", [])
    if not isinstance(checks, list):
        raise ConfigError("checks", "expected a list of names")
    for c in checks:
        if c not in CHECKS:
            raise ConfigError("checks", f"unknown check {c!r}")
    out_dir = raw.get("output_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("output_dir", "expected a string")
    cfg = ExperimentConfig(
        name=name, vertices=vertices, subtorus=subtorus, m_list=m_list,
        solver=_section(raw, "solver", SolverSpec, "solver"),
        quadrature=_section(raw, "quadrature", QuadratureSpec, "quadrature"),
        samples=_section(raw, "samples", SampleSpec, "samples"),
        checks=tuple(checks), output_dir=out_dir,
    )
    if cfg.samples.count < 1:
        raise ConfigError("samples.count", "must be positive")
    if cfg.samples.grid_per_axis < 2:
        raise ConfigError("samples.grid_per_axis", "must be at least 2")
    try:
        pol = cfg.polarization()
    except PolytopeError as exc:
        raise ConfigError("polytope.vertices", str(exc)) from None
    if not pol.is_delzant():
        raise ConfigError("polytope.vertices", "polytope is not Delzant (smooth)")
    try:
        act = cfg.action()
    except ValueError as exc:
        raise ConfigError("subtorus", str(exc)) from None
    if act.rank and len(act.generators[0]) != pol.dimension:
        raise ConfigError("subtorus", "generator dimension differs from the polytope's")
    return cfg


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return parse_config(raw)

"""Polybalanced metrics on polarized toric manifolds."""

__version__ = "0.1.0"

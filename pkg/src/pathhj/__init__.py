"""Numerics for path-dependent Hamilton-Jacobi equations with coinvariant derivatives."""

__version__ = "0.1.0"

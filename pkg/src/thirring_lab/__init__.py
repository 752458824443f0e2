"""Numerical laboratory for the massless Thirring model and its lattice relatives."""

__version__ = "0.1.0"

"""Numerical laboratory for det(D^2 u) = f on exterior domains."""

__version__ = "0.1.0"

"""Stochastic Galerkin methods for eigenproblems with random coefficients."""

__version__ = "0.1.0"

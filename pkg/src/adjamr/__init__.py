"""Adjoint-guided adaptive mesh refinement for linear wave propagation."""

__version__ = "0.1.0"

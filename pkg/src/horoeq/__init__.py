"""Numerical laboratory for perturbed geodesic flows on a compact hyperbolic surface."""

__version__ = "0.1.0"

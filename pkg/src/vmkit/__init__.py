"""Instability of relativistic Vlasov-Maxwell near Penrose-unstable equilibria.

Equilibria and Penrose tests, the dispersion relation and its growing
modes, kinetic solvers (VP and 1D2V VM), the approximate-solution
hierarchy, and the classical/quasineutral limit experiments.
"""
from .kernels import BACKEND, HAVE_NUMBA

__version__ = "0.1.0"

__all__ = ["BACKEND", "HAVE_NUMBA", "__version__"]

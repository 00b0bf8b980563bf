"""Spectral toolkit for the linearized relativistic Boltzmann operator.

Discretizes L = -nu + K in a symmetry-adapted velocity basis, computes the
low-frequency eigenvalue branches and dispersion relations of the Fourier
mode operator L - i k.vhat, and measures the algebraic decay rates of the
linear semigroup.
"""

__version__ = "0.1.0"

from .config import RunConfig, load_config  # noqa: F401

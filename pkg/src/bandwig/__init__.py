"""Numerical laboratory for Gaussian Hermitian random band matrices.

Modules
-------
lattice
    Periodic lattices, the band-covariance kernels J, C, B, G and decay fits.
ensemble
    Reproducible sampling of the band ensemble.
spectral
    Eigenvalues, resolvent entries, density of states and two-point functions.
analytics
    Semicircle law, saddle point, double wells, vertices.
susy
    Dual (supersymmetric) integral representation of the averaged Green's
    function and its Gauss-Hermite evaluation.
grassmann
    Finite Grassmann algebra, Berezin integration and supermatrix identities.
harness
    Config-driven experiment runner and the ``bandwig`` command line.
"""

__version__ = "0.1.0"

from .analytics import saddle_data, saddle_point, semicircle, semicircle_broadened
from .ensemble import EnsembleSpec, sample_H
from .lattice import KernelMatrix, LatticeTorus, build_kernel, build_torus
from .spectral import derivative_check, estimate_dos, estimate_R

__all__ = [
    "__version__",
    "LatticeTorus",
    "KernelMatrix",
    "build_torus",
    "build_kernel",
    "EnsembleSpec",
    "sample_H",
    "estimate_dos",
    "estimate_R",
    "derivative_check",
    "semicircle",
    "semicircle_broadened",
    "saddle_point",
    "saddle_data",
]

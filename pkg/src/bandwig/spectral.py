"""Eigenvalues, resolvents and Monte Carlo spectral observables.

Observables are estimated at finite level broadening ``eps > 0``:

* the averaged density of states ``-(1/pi) Im <G+_00>``, estimated through the
  trace ``|Lambda|^{-1} Tr G+`` (all diagonal sites, by translation
  invariance) or by histogramming eigenvalues;
* the two-point function ``R(x) = <G+_0x G+_x0>``, averaged over base points
  and over all displacements at the same torus distance.

Per-sample work is independent and may run in worker processes; aggregation
always runs over samples in ``stream_id`` order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from ._parallel import ordered_map
from .ensemble import EnsembleSpec, sample_H
from .lattice import fit_exponential

__all__ = [
    "hermitian_eigenvalues",
    "reconstruction_error",
    "Resolvent",
    "resolvent_entries",
    "default_epsilon",
    "lorentzian_dos",
    "SpectralResult",
    "estimate_dos",
    "TwoPointProfile",
    "estimate_R",
    "DerivativeCheck",
    "derivative_check",
]

HERMITIAN_TOL = 1e-12
RESIDUAL_TOL = 1e-10


def _check_hermitian(H: np.ndarray) -> None:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    if np.max(np.abs(H - H.conj().T), initial=0.0) > HERMITIAN_TOL * scale:
        raise ValueError("matrix is not Hermitian")


def hermitian_eigenvalues(H, vectors: bool = False):
    """Ascending eigenvalues of a Hermitian matrix (and eigenvectors if asked)."""
    H = np.asarray(H)
    _check_hermitian(H)
    if vectors:
        w, V = np.linalg.eigh(H)
        return w, V
    return np.linalg.eigvalsh(H)


def reconstruction_error(H, w, V, n_vectors: int = 4, seed: int = 0) -> float:
    """``max ||H v - V diag(w) V^+ v|| / ||v||`` over random probe vectors."""
    rng = np.random.default_rng(seed)
    H = np.asarray(H)
    worst = 0.0
    for _ in range(n_vectors):
        v = rng.standard_normal(H.shape[0]) + 1j * rng.standard_normal(H.shape[0])
        lhs = H @ v
        rhs = V @ (w * (V.conj().T @ v))
        worst = max(worst, float(np.linalg.norm(lhs - rhs) / np.linalg.norm(v)))
    return worst


class Resolvent:
    """LU-factorised ``E + i eps - H`` giving rows and columns of ``G+``."""

    def __init__(self, H, E: float, eps: float):
        if not eps > 0:
            raise ValueError(f"broadening must be positive, got {eps}")
        H = np.asarray(H)
        self.n = H.shape[0]
        self.z = complex(E, eps)
        self.A = self.z * np.eye(self.n) - H
        self._lu = sla.lu_factor(self.A, check_finite=False)

    def _unit(self, idx):
        e = np.zeros((self.n, len(idx)), dtype=complex)
        e[np.asarray(idx), np.arange(len(idx))] = 1.0
        return e

    def columns(self, idx) -> np.ndarray:
        """``G[:, idx]`` as an ``(n, len(idx))`` array."""
        return sla.lu_solve(self._lu, self._unit(idx), check_finite=False)

    def rows(self, idx) -> np.ndarray:
        """``G[idx, :]`` as a ``(len(idx), n)`` array."""
        return sla.lu_solve(self._lu, self._unit(idx), trans=1, check_finite=False).T

    def row_residual(self, idx, rows) -> float:
        target = np.zeros((len(idx), self.n), dtype=complex)
        target[np.arange(len(idx)), np.asarray(idx)] = 1.0
        return float(np.max(np.abs(rows @ self.A - target)))


def resolvent_entries(H, E: float, eps: float, rows: Sequence[int]) -> np.ndarray:
    """Rows ``rows`` of ``(E + i eps - H)^{-1}``.

    Raises ``ValueError`` for ``eps <= 0`` and ``ArithmeticError`` if a row
    fails the ``1e-10`` residual check.
    """
    rows = list(rows)
    res = Resolvent(H, E, eps)
    G = res.rows(rows)
    if res.row_residual(rows, G) > RESIDUAL_TOL:
        raise ArithmeticError("resolvent residual above tolerance")
    return G


def default_epsilon(volume: int) -> float:
    """Five mean bulk level spacings (``~4/|Lambda|``), floored at 0.01."""
    return max(5 * 4.0 / volume, 0.01)


def lorentzian_dos(eigenvalues, energies, eps: float) -> np.ndarray:
    """Empirical eigenvalue measure convolved with a Lorentzian of half-width ``eps``."""
    lam = np.asarray(eigenvalues)[None, :]
    E = np.asarray(energies, dtype=float)[:, None]
    return np.mean(eps / ((E - lam) ** 2 + eps**2), axis=1) / np.pi


def histogram_dos(eigenvalues, energies, bin_width: float) -> np.ndarray:
    """Fraction of eigenvalues in ``[E - w/2, E + w/2)`` divided by ``w``."""
    lam = np.sort(np.asarray(eigenvalues))
    E = np.asarray(energies, dtype=float)
    lo = np.searchsorted(lam, E - bin_width / 2, side="left")
    hi = np.searchsorted(lam, E + bin_width / 2, side="left")
    return (hi - lo) / (lam.size * bin_width)


def _mean_stderr(values: np.ndarray):
    m = values.shape[0]
    mean = values.mean(axis=0)
    if m < 2:
        return mean, np.full(mean.shape, np.nan)
    if np.iscomplexobj(values):
        var = values.real.var(axis=0, ddof=1) + values.imag.var(axis=0, ddof=1)
    else:
        var = values.var(axis=0, ddof=1)
    return mean, np.sqrt(var / m)


@dataclass
class SpectralResult:
    energies: np.ndarray
    dos_mean: np.ndarray
    dos_stderr: np.ndarray
    g00_mean: np.ndarray
    g00_stderr: np.ndarray
    epsilon: float
    sample_count: int
    method: str
    per_sample: np.ndarray | None = field(default=None, repr=False)

    def rows(self):
        for k, E in enumerate(self.energies):
            yield (
                float(E),
                float(self.dos_mean[k]),
                float(self.dos_stderr[k]),
                float(np.imag(self.g00_mean[k])),
                float(self.epsilon),
                int(self.sample_count),
            )


def _dos_one(spec: EnsembleSpec, energies, eps, mode, bin_width, site_average, sid):
    H = sample_H(spec, sid).H
    if mode == "histogram":
        lam = hermitian_eigenvalues(H)
        return histogram_dos(lam, energies, bin_width), np.full(len(energies), np.nan + 0j)
    z = np.asarray(energies, dtype=float)[:, None] + 1j * eps
    if site_average:
        lam = hermitian_eigenvalues(H)
        g = np.mean(1.0 / (z - lam[None, :]), axis=1)
    else:
        lam, V = hermitian_eigenvalues(H, vectors=True)
        weight = np.abs(V[0, :]) ** 2
        g = np.sum(weight[None, :] / (z - lam[None, :]), axis=1)
    return -g.imag / np.pi, g


def estimate_dos(
    spec: EnsembleSpec,
    energies,
    eps: float | None = None,
    mode: str = "resolvent",
    bin_width: float = 0.05,
    site_average: bool = True,
    workers: int = 1,
    keep_samples: bool = False,
) -> SpectralResult:
    """Averaged density of states with Monte Carlo error bars.

    Parameters
    ----------
    spec : EnsembleSpec
    energies : array_like
        Energy grid.
    eps : float, optional
        Broadening for ``mode="resolvent"``; defaults to
        :func:`default_epsilon`.
    mode : {"resolvent", "histogram"}
    bin_width : float
        Histogram bin width.
    site_average : bool
        Average ``-Im G_jj / pi`` over every site ``j`` (default) instead of
        using site 0 only.
    """
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    if energies.size == 0:
        raise ValueError("empty energy grid")
    if spec.sample_count < 2:
        raise ValueError("need at least two samples for error bars")
    if mode not in {"resolvent", "histogram"}:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "resolvent":
        eps = default_epsilon(spec.size) if eps is None else float(eps)
        if not eps > 0:
            raise ValueError(f"broadening must be positive, got {eps}")
    elif not bin_width > 0:
        raise ValueError(f"bin width must be positive, got {bin_width}")
    fn = partial(_dos_one, spec, energies, eps, mode, bin_width, site_average)
    results = ordered_map(fn, range(spec.sample_count), workers)
    dos = np.stack([r[0] for r in results])
    g = np.stack([r[1] for r in results])
    dos_mean, dos_se = _mean_stderr(dos)
    g_mean, g_se = _mean_stderr(g)
    return SpectralResult(
        energies,
        dos_mean,
        dos_se,
        g_mean,
        g_se,
        float(eps) if mode == "resolvent" else float("nan"),
        spec.sample_count,
        "eigendecomposition" if mode == "resolvent" else "histogram",
        dos if keep_samples else None,
    )


@dataclass
class TwoPointProfile:
    radius: np.ndarray
    R_mean: np.ndarray
    R_stderr: np.ndarray
    count: np.ndarray
    g0x_mean: np.ndarray
    g0x_stderr: np.ndarray
    epsilon: float
    energy: float
    sample_count: int
    rate: float | None = None
    amplitude: float | None = None
    fit_residual: float | None = None
    fit_range: tuple[float, float] | None = None
    sum_R: complex | None = None
    sum_R_stderr: float | None = None

    def rows(self):
        for k, r in enumerate(self.radius):
            yield (
                float(r),
                float(self.R_mean[k].real),
                float(self.R_mean[k].imag),
                float(self.R_stderr[k]),
                int(self.count[k]),
            )

    def symmetry_zscores(self) -> np.ndarray:
        """``|<G_0x>| / stderr`` for every radius ``> 0``."""
        sel = self.radius > 0
        return np.abs(self.g0x_mean[sel]) / self.g0x_stderr[sel]


def _base_points(n: int, base_points) -> np.ndarray:
    if base_points is None:
        return np.arange(n)
    if isinstance(base_points, (int, np.integer)):
        k = min(int(base_points), n)
        if k < 1:
            raise ValueError("need at least one base point")
        return np.unique(np.linspace(0, n, k, endpoint=False).astype(int))
    pts = np.asarray(base_points, dtype=int)
    if pts.size == 0 or pts.min() < 0 or pts.max() >= n:
        raise ValueError("base points out of range")
    return pts


def _rx_one(spec: EnsembleSpec, E, eps, base, shell_index, n_shells, sid):
    torus = spec.torus
    n = spec.size
    res = Resolvent(sample_H(spec, sid).H, E, eps)
    rows = res.rows(base)  # G[b, x]
    cols = res.columns(base).T  # G[x, b]
    prod = rows * cols
    disp = torus.difference_index(np.arange(n)[None, :], base[:, None])
    R_disp = np.zeros(n, dtype=complex)
    g_disp = np.zeros(n, dtype=complex)
    np.add.at(R_disp, disp, prod)
    np.add.at(g_disp, disp, rows)
    R_disp /= base.size
    g_disp /= base.size
    R_shell = np.bincount(shell_index, R_disp.real, n_shells) + 1j * np.bincount(
        shell_index, R_disp.imag, n_shells
    )
    g_shell = np.bincount(shell_index, g_disp.real, n_shells) + 1j * np.bincount(
        shell_index, g_disp.imag, n_shells
    )
    return R_shell, g_shell, R_disp.sum()


def estimate_R(
    spec: EnsembleSpec,
    E: float,
    eps: float,
    max_radius: float | None = None,
    base_points=None,
    fit_min: float | None = None,
    min_snr: float = 2.0,
    workers: int = 1,
) -> TwoPointProfile:
    """Radial profile of ``R(x) = <G+_0x G+_x0>`` and of ``<G+_0x>``.

    Averages run over samples, over ``base_points`` (all sites by default, or
    that many evenly spaced sites) and over all displacements with the same
    torus distance.  The exponential fit of ``|R|`` uses radii in
    ``[fit_min, max_radius]`` (``fit_min`` defaults to W) where ``|R|``
    exceeds ``min_snr`` standard errors; it is skipped when fewer than three
    radii qualify.
    """
    if not eps > 0:
        raise ValueError(f"broadening must be positive, got {eps}")
    torus = spec.torus
    half = min(torus.sides) / 2
    if max_radius is None:
        max_radius = half
    if max_radius > half + 1e-9:
        raise ValueError(f"max_radius {max_radius} exceeds half the smallest side ({half})")
    n = spec.size
    base = _base_points(n, base_points)
    radii, shell_index, count = np.unique(torus.radii, return_inverse=True, return_counts=True)
    fn = partial(_rx_one, spec, float(E), float(eps), base, shell_index, radii.size)
    results = ordered_map(fn, range(spec.sample_count), workers)
    R_shell = np.stack([r[0] for r in results]) / count
    g_shell = np.stack([r[1] for r in results]) / count
    sum_R = np.array([r[2] for r in results])
    keep = radii <= max_radius + 1e-9
    R_mean, R_se = _mean_stderr(R_shell[:, keep])
    g_mean, g_se = _mean_stderr(g_shell[:, keep])
    sR_mean, sR_se = _mean_stderr(sum_R)
    profile = TwoPointProfile(
        radii[keep], R_mean, R_se, count[keep], g_mean, g_se, float(eps), float(E),
        spec.sample_count, sum_R=complex(sR_mean), sum_R_stderr=float(sR_se),
    )
    lo = float(spec.kernel_J.bandwidth if fit_min is None else fit_min)
    mag = np.abs(R_mean)
    sig = mag > min_snr * R_se
    try:
        rate, amp, resid, _ = fit_exponential(radii[keep][sig], mag[sig], lo, max_radius)
    except ValueError:
        return profile
    profile.rate, profile.amplitude, profile.fit_residual = rate, amp, resid
    profile.fit_range = (lo, float(max_radius))
    return profile


@dataclass
class DerivativeCheck:
    energies: np.ndarray
    fd_mean: np.ndarray
    fd_stderr: np.ndarray
    sumR_mean: np.ndarray
    sumR_stderr: np.ndarray
    step: float
    epsilon: float

    @property
    def combined_stderr(self) -> np.ndarray:
        return np.hypot(self.fd_stderr, self.sumR_stderr)

    @property
    def difference(self) -> np.ndarray:
        return self.fd_mean - self.sumR_mean

    def agrees(self, nsigma: float = 1.0) -> np.ndarray:
        return np.abs(self.difference) <= nsigma * self.combined_stderr


def _deriv_one(spec: EnsembleSpec, energies, eps, h, sid):
    H = sample_H(spec, sid).H
    lam = hermitian_eigenvalues(H)
    fd = (lorentzian_dos(lam, energies + h, eps) - lorentzian_dos(lam, energies - h, eps)) / (2 * h)
    sums = []
    base = np.arange(spec.size)
    for E in energies:
        res = Resolvent(H, E, eps)
        G = res.columns(base)
        # sum_x G_bx G_xb averaged over every base point b
        sums.append(np.sum(G * G.T) / spec.size)
    return fd, np.imag(np.array(sums)) / np.pi


def derivative_check(
    spec: EnsembleSpec, energies, eps: float, step: float | None = None, workers: int = 1
) -> DerivativeCheck:
    """Compare ``d rho / dE`` (centred differences) with ``(1/pi) Im sum_x R(x)``.

    Both sides are evaluated on the same samples; ``R`` is averaged over all
    base points.
    """
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    if step is None:
        step = eps / 10
    fn = partial(_deriv_one, spec, energies, float(eps), float(step))
    results = ordered_map(fn, range(spec.sample_count), workers)
    fd = np.stack([r[0] for r in results])
    sr = np.stack([r[1] for r in results])
    fd_m, fd_se = _mean_stderr(fd)
    sr_m, sr_se = _mean_stderr(sr)
    return DerivativeCheck(energies, fd_m, fd_se, sr_m, sr_se, float(step), float(eps))

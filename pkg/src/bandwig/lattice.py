"""Periodic lattice geometry and translation-invariant kernels.

The kernels built here are resolvents of the lattice Laplacian,

    K = (-W^2 Delta + mass)^{-1},

on a torus Lambda = Z_{L_1} x ... x Z_{L_d}.  Three masses are used throughout
the package: ``mass = 1`` gives the variance profile J of the band ensemble,
``mass = m_r^2`` the real covariance C and ``mass = 1 - calE^2`` the complex
Hessian covariance B.

The Laplacian is defined through its Fourier symbol ``2 sum_i (1 - cos k_i)``,
``k_i = 2 pi n_i / L_i``.  On a side-2 direction this counts the two bonds
between the two sites separately (symbol values {0, 4}); on a side-1
direction the symbol vanishes identically.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "LatticeTorus",
    "KernelMatrix",
    "RadialProfile",
    "build_torus",
    "laplacian_symbol",
    "symbol_grid",
    "laplacian_matrix",
    "fourier_kernel",
    "build_kernel",
    "decay_profile",
    "export_kernel",
    "export_profile",
    "MAX_VOLUME",
    "MAX_KERNEL_BYTES",
    "DENSE_TRANSFORM_LIMIT",
]

MAX_VOLUME = 1 << 15
MAX_KERNEL_BYTES = 2 * 1024**3
# volumes up to this use the explicit mode sum, above it the FFT
DENSE_TRANSFORM_LIMIT = 4096

_RADIUS_DECIMALS = 9


@dataclass(frozen=True)
class LatticeTorus:
    """Periodic box ``Z_{L_1} x ... x Z_{L_d}``.

    Sites are numbered in lexicographic (C) order of their coordinates, so the
    last coordinate varies fastest.
    """

    d: int
    sides: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "sides", tuple(int(s) for s in self.sides))

    @property
    def volume(self) -> int:
        return math.prod(self.sides)

    @cached_property
    def coords(self) -> np.ndarray:
        """``(volume, d)`` integer coordinates of every site."""
        grid = np.indices(self.sides).reshape(self.d, -1).T
        grid.setflags(write=False)
        return grid

    def coord(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.volume:
            raise IndexError(f"site index {index} outside [0, {self.volume})")
        return tuple(int(c) for c in np.unravel_index(index, self.sides))

    def index(self, coord: Sequence[int]) -> int:
        if len(coord) != self.d:
            raise ValueError(f"expected {self.d} coordinates, got {len(coord)}")
        wrapped = tuple(int(c) % s for c, s in zip(coord, self.sides))
        return int(np.ravel_multi_index(wrapped, self.sides))

    def wrapped_difference(self, i, j) -> np.ndarray:
        """Minimal periodic image of ``x_i - x_j`` (component-wise)."""
        sides = np.asarray(self.sides)
        diff = (self.coords[np.asarray(i)] - self.coords[np.asarray(j)]) % sides
        return np.where(diff > sides // 2, diff - sides, diff)

    def distance(self, i, j):
        """Euclidean norm of the minimally wrapped difference vector."""
        diff = self.wrapped_difference(i, j)
        dist = np.sqrt(np.sum(diff.astype(float) ** 2, axis=-1))
        return float(dist) if np.ndim(dist) == 0 else dist

    @cached_property
    def radii(self) -> np.ndarray:
        """Torus distance from site 0 to every site."""
        r = self.distance(0, np.arange(self.volume))
        r = np.round(r, _RADIUS_DECIMALS)
        r.setflags(write=False)
        return r

    def difference_index(self, i, j) -> np.ndarray:
        """Linear index of the wrapped displacement ``x_i - x_j``.

        Broadcasts over ``i`` and ``j``.  ``K[i, j] == K[0, difference_index(i, j)]``
        for every translation-invariant kernel.
        """
        ci = self.coords[np.asarray(i)]
        cj = self.coords[np.asarray(j)]
        out = np.zeros(np.broadcast_shapes(ci.shape[:-1], cj.shape[:-1]), dtype=np.int64)
        for axis, side in enumerate(self.sides):
            out = out * side + (ci[..., axis] - cj[..., axis]) % side
        return out


def build_torus(d: int, sides: Sequence[int], max_volume: int = MAX_VOLUME) -> LatticeTorus:
    """Validate and construct a :class:`LatticeTorus`."""
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    sides = [int(s) for s in sides]
    if len(sides) != d:
        raise ValueError(f"need {d} side lengths, got {len(sides)}")
    if any(s < 1 for s in sides):
        raise ValueError(f"side lengths must be >= 1, got {sides}")
    volume = math.prod(sides)
    if volume > max_volume:
        raise ValueError(f"volume {volume} exceeds the cap of {max_volume} sites")
    return LatticeTorus(int(d), tuple(sides))


def laplacian_symbol(torus: LatticeTorus, mode: Sequence[int]) -> float:
    """Fourier symbol of ``-Delta`` at integer mode ``(n_1, ..., n_d)``."""
    if len(mode) != torus.d:
        raise ValueError(f"mode must have {torus.d} components")
    total = 0.0
    for n, side in zip(mode, torus.sides):
        if not 0 <= n < side:
            raise ValueError(f"mode index {n} outside [0, {side - 1}]")
        total += 2.0 * (1.0 - math.cos(2.0 * math.pi * n / side))
    return total


def symbol_grid(torus: LatticeTorus) -> np.ndarray:
    """Symbol of ``-Delta`` on the full mode grid, shape ``torus.sides``."""
    out = np.zeros(torus.sides)
    for axis, side in enumerate(torus.sides):
        k = 2.0 * np.pi * np.arange(side) / side
        shape = [1] * torus.d
        shape[axis] = side
        out = out + (2.0 * (1.0 - np.cos(k))).reshape(shape)
    return out


def _neighbour_tables(torus: LatticeTorus) -> list[np.ndarray]:
    coords = torus.coords
    tables = []
    for axis, side in enumerate(torus.sides):
        for step in (1, -1):
            nb = coords.copy()
            nb[:, axis] = (nb[:, axis] + step) % side
            tables.append(np.ravel_multi_index(nb.T, torus.sides))
    return tables


def laplacian_matrix(torus: LatticeTorus) -> np.ndarray:
    """Dense ``-Delta`` assembled site by site from nearest-neighbour bonds.

    Built independently of the Fourier route so that it can serve as a check
    on kernels.  Bonds to the same neighbour through both directions add up,
    which reproduces the symbol convention on side-2 and side-1 directions.
    """
    n = torus.volume
    lap = np.zeros((n, n))
    for nb_index in _neighbour_tables(torus):
        np.add.at(lap, (np.arange(n), nb_index), -1.0)
    lap[np.diag_indices(n)] += 2.0 * torus.d
    return lap


def _dense_inverse_transform(torus: LatticeTorus, coeffs: np.ndarray) -> np.ndarray:
    # explicit mode sum, one axis at a time
    out = coeffs.astype(complex)
    for axis, side in enumerate(torus.sides):
        n = np.arange(side)
        phase = np.exp(2j * np.pi * np.outer(n, n) / side) / side
        out = np.moveaxis(np.tensordot(phase, out, axes=([1], [axis])), 0, axis)
    return out


def fourier_kernel(torus: LatticeTorus, coeffs: np.ndarray, method: str = "auto") -> np.ndarray:
    """Real-space values ``k(x)`` of a kernel from its Fourier coefficients.

    ``coeffs`` has shape ``torus.sides``; the returned array has the same shape
    and holds ``k(x) = |Lambda|^{-1} sum_k e^{i k x} coeffs(k)``.
    """
    coeffs = np.asarray(coeffs)
    if coeffs.shape != torus.sides:
        raise ValueError(f"coefficient grid {coeffs.shape} does not match sides {torus.sides}")
    if method == "auto":
        method = "dense" if torus.volume <= DENSE_TRANSFORM_LIMIT else "fft"
    if method == "dense":
        return _dense_inverse_transform(torus, coeffs)
    if method == "fft":
        return np.fft.ifftn(coeffs.astype(complex))
    raise ValueError(f"unknown transform method {method!r}")


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Dense translation-invariant kernel ``(-W^2 Delta + mass)^{-1}``.

    ``entries`` is read-only.  ``row0`` holds ``K[0, x]`` on the coordinate
    grid and ``coefficients`` the Fourier coefficients.
    """

    torus: LatticeTorus
    entries: np.ndarray
    kind: str
    mass: complex
    bandwidth: int
    row0: np.ndarray = field(repr=False)
    coefficients: np.ndarray = field(repr=False)

    @property
    def W(self) -> int:
        return self.bandwidth

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.entries)

    def operator(self) -> np.ndarray:
        """Dense ``-W^2 Delta + mass`` built from nearest-neighbour bonds."""
        op = self.bandwidth**2 * laplacian_matrix(self.torus).astype(complex)
        op[np.diag_indices(self.torus.volume)] += self.mass
        return op

    def apply_operator(self, matrix: np.ndarray) -> np.ndarray:
        """``(-W^2 Delta + mass) @ matrix`` using nearest-neighbour shifts."""
        torus = self.torus
        out = (2.0 * torus.d * self.bandwidth**2 + self.mass) * matrix
        if self.is_real and np.isrealobj(matrix):
            out = out.real
        for nb in _neighbour_tables(torus):
            out = out - self.bandwidth**2 * matrix[nb]
        return out

    def residual(self) -> float:
        """Max-norm of ``(-W^2 Delta + mass) K - 1``."""
        prod = self.apply_operator(np.asarray(self.entries))
        prod[np.diag_indices(self.torus.volume)] -= 1.0
        return float(np.max(np.abs(prod)))

    def inverse(self) -> np.ndarray:
        op = self.operator()
        return op.real if self.is_real else op


_KIND_FOR_MASS = {1.0: "J"}


def build_kernel(
    torus: LatticeTorus,
    W: int,
    mass: complex,
    kind: str | None = None,
    method: str = "auto",
) -> KernelMatrix:
    """Build ``(-W^2 Delta + mass)^{-1}`` by diagonalising in the Fourier basis.

    Parameters
    ----------
    torus : LatticeTorus
    W : int
        Band width.
    mass : complex
        Must have positive real part.  A real mass gives a real kernel.
    kind : {"J", "C", "B", "custom"}, optional
        Tag stored on the result.  Defaults to "J" for ``mass == 1``,
        "custom" otherwise.
    method : {"auto", "dense", "fft"}
        Mode-sum strategy; "auto" uses the dense sum up to
        ``DENSE_TRANSFORM_LIMIT`` sites.
    """
    if int(W) != W or W < 1:
        raise ValueError(f"band width must be a positive integer, got {W!r}")
    mass = complex(mass)
    if not mass.real > 0:
        raise ValueError(f"mass must have positive real part, got {mass}")
    if kind is None:
        kind = "J" if mass == 1 else "custom"
    if kind not in {"J", "C", "B", "custom"}:
        raise ValueError(f"unknown kernel kind {kind!r}")
    real = mass.imag == 0
    n = torus.volume
    itemsize = 8 if real else 16
    if n * n * itemsize > MAX_KERNEL_BYTES:
        raise MemoryError(f"dense kernel for {n} sites exceeds {MAX_KERNEL_BYTES} bytes")

    coeffs = 1.0 / (W**2 * symbol_grid(torus) + (mass.real if real else mass))
    row0 = fourier_kernel(torus, coeffs, method=method)
    if real:
        row0 = row0.real
    flat = row0.reshape(-1)
    idx = torus.difference_index(np.arange(n)[None, :], np.arange(n)[:, None])
    # entry (i, j) depends on x_j - x_i; the kernel is even so the sign is immaterial
    entries = flat[idx]
    entries.setflags(write=False)
    row0.setflags(write=False)
    coeffs.setflags(write=False)
    return KernelMatrix(torus, entries, kind, mass, int(W), row0, coeffs)


@dataclass
class RadialProfile:
    """Max ``|entry|`` per torus radius together with an exponential fit."""

    radius: np.ndarray
    max_abs: np.ndarray
    count: np.ndarray
    rate: float | None = None
    amplitude: float | None = None
    fit_range: tuple[float, float] | None = None
    fit_residual: float | None = None

    def rows(self):
        return list(zip(self.radius.tolist(), self.max_abs.tolist(), self.count.tolist()))


def radial_groups(values: np.ndarray, torus: LatticeTorus):
    """Group per-displacement ``values`` (ordered like sites) by torus radius."""
    radii, inverse, count = np.unique(torus.radii, return_inverse=True, return_counts=True)
    return radii, inverse, count


def fit_exponential(radius, magnitude, lo, hi, prefactor: bool = False):
    """Least-squares fit of ``log magnitude`` vs radius on ``[lo, hi]``.

    With ``prefactor`` the magnitudes are first multiplied by ``1 + r`` to
    remove a Yukawa-type ``1/(1+r)`` prefactor.  Returns
    ``(rate, amplitude, residual, n_points)``.
    """
    radius = np.asarray(radius, dtype=float)
    magnitude = np.asarray(magnitude, dtype=float)
    sel = (radius >= lo - 1e-9) & (radius <= hi + 1e-9) & (magnitude > 0)
    if np.count_nonzero(sel) < 3:
        raise ValueError(
            f"degenerate fit: {np.count_nonzero(sel)} radii in [{lo}, {hi}], need at least 3"
        )
    r = radius[sel]
    y = np.log(magnitude[sel])
    if prefactor:
        y = y + np.log1p(r)
    slope, intercept = np.polyfit(r, y, 1)
    resid = y - (slope * r + intercept)
    return -float(slope), float(np.exp(intercept)), float(np.sqrt(np.mean(resid**2))), int(r.size)


def decay_profile(
    kernel: KernelMatrix,
    fit_min: float | None = None,
    fit_max: float | None = None,
    prefactor: bool = False,
    exclude_origin: bool = False,
) -> RadialProfile:
    """Radial profile of a kernel and its fitted exponential decay rate.

    The fit runs over radii in ``[W, min(side)/2]`` unless overridden.  Raises
    ``ValueError`` when fewer than three radii fall in the fit window.
    """
    torus = kernel.torus
    values = np.abs(np.asarray(kernel.row0).reshape(-1))
    radii, inverse, count = radial_groups(values, torus)
    max_abs = np.zeros(radii.size)
    np.maximum.at(max_abs, inverse, values)
    if exclude_origin:
        keep = radii > 0
        radii, max_abs, count = radii[keep], max_abs[keep], count[keep]
    lo = float(kernel.bandwidth if fit_min is None else fit_min)
    hi = float(min(torus.sides) / 2 if fit_max is None else fit_max)
    rate, amp, resid, _ = fit_exponential(radii, max_abs, lo, hi, prefactor=prefactor)
    return RadialProfile(radii, max_abs, count, rate, amp, (lo, hi), resid)


def export_kernel(kernel: KernelMatrix, path: str | Path) -> tuple[Path, Path]:
    """Write ``(i, j, re, im)`` rows and a JSON sidecar next to them."""
    path = Path(path)
    n = kernel.torus.volume
    entries = np.asarray(kernel.entries)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "re", "im"])
        for i in range(n):
            for j in range(n):
                v = complex(entries[i, j])
                writer.writerow([i, j, repr(v.real), repr(v.imag)])
    sidecar = path.with_suffix(".json")
    meta = {
        "d": kernel.torus.d,
        "sides": list(kernel.torus.sides),
        "W": kernel.bandwidth,
        "mass_re": kernel.mass.real,
        "mass_im": kernel.mass.imag,
        "kind": kernel.kind,
    }
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path, sidecar


def export_profile(profile: RadialProfile, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["radius", "max_abs", "count"])
        for r, m, c in profile.rows():
            writer.writerow([repr(float(r)), repr(float(m)), int(c)])
    return path


def custom_kernel(
    torus: LatticeTorus, W: int, coeff_fn: Callable[[np.ndarray], np.ndarray], mass: complex = 0j
) -> KernelMatrix:
    """Translation-invariant kernel from an arbitrary Fourier multiplier.

    ``coeff_fn`` maps the ``-Delta`` symbol grid to Fourier coefficients.
    """
    coeffs = np.asarray(coeff_fn(symbol_grid(torus)))
    row0 = fourier_kernel(torus, coeffs)
    if np.isrealobj(coeffs):
        row0 = row0.real
    n = torus.volume
    idx = torus.difference_index(np.arange(n)[None, :], np.arange(n)[:, None])
    entries = row0.reshape(-1)[idx]
    entries.setflags(write=False)
    return KernelMatrix(torus, entries, "custom", complex(mass), int(W), row0, coeffs)

"""Closed-form saddle-point objects of the band-matrix dual integral.

The complex energy

    calE = E/2 - i sqrt(1 - E^2/4)

is the stationary point of ``f1(a) = a^2/2 + ln(E - a)`` that the ``a``
contour passes through; ``-i calE`` plays the same role for
``f2(b) = b^2/2 - ln(E - i b)``.  It satisfies ``calE * conj(calE) = 1`` and
``E - calE = conj(calE)`` for ``|E| < 2``.  Around the saddle the Gaussian
part has the complex mass ``1 - calE^2 = m_r^2 + i m_i^2``.

For ``eps > 0`` the same formulas are used with ``E`` replaced by
``E + i eps``; ``conj(calE)`` is then replaced by ``E + i eps - calE`` which
equals ``1 / calE``.  :func:`saddle_point` returns both.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from .lattice import LatticeTorus, build_kernel, custom_kernel, decay_profile

__all__ = [
    "WINDOW_MAX",
    "DEFAULT_ETA",
    "semicircle",
    "semicircle_stieltjes",
    "semicircle_broadened",
    "saddle_point",
    "SaddleData",
    "saddle_data",
    "check_window",
    "f1",
    "f2",
    "f1_prime",
    "f2_prime",
    "f1_second",
    "f2_second",
    "WellProfiles",
    "well_profiles",
    "vertex_V",
    "vertex_V_closed",
    "exp_vertex_a",
    "exp_vertex_b",
    "vertex_D",
    "vertex_D_integral",
    "vertex_D_observable",
    "GDecayReport",
    "G_decay_check",
]

WINDOW_MAX = 1.8
DEFAULT_ETA = 0.1
QUAD_TOL = 1e-12


def semicircle(E):
    """Wigner semicircle density ``sqrt(1 - E^2/4) / pi`` on ``[-2, 2]``."""
    E = np.asarray(E, dtype=float)
    out = np.sqrt(np.clip(1.0 - E**2 / 4.0, 0.0, None)) / np.pi
    return float(out) if out.ndim == 0 else out


def semicircle_stieltjes(z):
    """``int rho_SC(x) / (z - x) dx`` for ``Im z > 0``."""
    z = np.asarray(z, dtype=complex)
    # the product of two principal roots picks the branch decaying like 1/z
    return (z - np.sqrt(z - 2) * np.sqrt(z + 2)) / 2


def semicircle_broadened(E, eps: float):
    """Semicircle convolved with a Lorentzian of half-width ``eps``."""
    out = -np.imag(semicircle_stieltjes(np.asarray(E, dtype=float) + 1j * eps)) / np.pi
    return float(out) if np.ndim(out) == 0 else out


def saddle_point(E, eps: float = 0.0) -> tuple[complex, complex]:
    """``(calE, calE_tilde)`` at energy ``E + i eps``.

    ``calE_tilde = E + i eps - calE`` is the complex conjugate of ``calE`` when
    ``eps = 0`` and ``|E| < 2``.
    """
    z = complex(E, eps)
    cal = z / 2 - 1j * cmath.sqrt(1 - z * z / 4)
    return cal, z - cal


def check_window(E: float, eta: float = DEFAULT_ETA) -> None:
    """Raise ``ValueError`` unless ``eta < |E| <= 1.8``."""
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if abs(E) > WINDOW_MAX:
        raise ValueError(f"|E| = {abs(E)} violates the upper bound |E| <= {WINDOW_MAX}")
    if abs(E) <= eta:
        raise ValueError(f"|E| = {abs(E)} violates the lower bound |E| > eta = {eta}")


@dataclass(frozen=True)
class SaddleData:
    E: float
    eta: float
    calE: complex
    calE_r: float
    calE_i: float
    rho_sc: float
    m_r2: float
    m_i2: float
    saddle_a: tuple[complex, complex]
    saddle_b: tuple[complex, complex]
    in_window: bool

    @property
    def hessian_mass(self) -> complex:
        return complex(self.m_r2, self.m_i2)

    def to_json(self) -> dict:
        def enc(v):
            if isinstance(v, complex):
                return {"re": v.real, "im": v.imag}
            if isinstance(v, tuple):
                return [enc(x) for x in v]
            return v

        return {k: enc(v) for k, v in asdict(self).items()}


def saddle_data(E: float, eta: float = DEFAULT_ETA, strict: bool = True) -> SaddleData:
    """Saddle-point package at real energy ``E``.

    With ``strict`` (the default) energies outside ``eta < |E| <= 1.8`` are
    rejected; otherwise they are accepted for ``|E| < 2`` and flagged through
    ``in_window``.
    """
    E = float(E)
    in_window = True
    try:
        check_window(E, eta)
    except ValueError:
        if strict:
            raise
        in_window = False
    if abs(E) >= 2:
        raise ValueError(f"|E| = {abs(E)} is outside the bulk (-2, 2)")
    root = math.sqrt(1 - E * E / 4)
    return SaddleData(
        E=E,
        eta=eta,
        calE=complex(E / 2, -root),
        calE_r=E / 2,
        calE_i=root,
        rho_sc=root / math.pi,
        m_r2=2 * (1 - E * E / 4),
        m_i2=E * root,
        saddle_a=(complex(E / 2, root), complex(E / 2, -root)),
        saddle_b=(complex(root, -E / 2), complex(-root, -E / 2)),
        in_window=in_window,
    )


def f1(a, E):
    return a * a / 2 + np.log(E - a)


def f2(b, E):
    return b * b / 2 - np.log(E - 1j * b)


def f1_prime(a, E):
    return a - 1 / (E - a)


def f2_prime(b, E):
    return b + 1j / (E - 1j * b)


def f1_second(a, E):
    return 1 - 1 / (E - a) ** 2


def f2_second(b, E):
    return 1 - 1 / (E - 1j * b) ** 2


@dataclass
class WellProfiles:
    E: float
    a: np.ndarray
    F1: np.ndarray
    b: np.ndarray
    F2: np.ndarray
    in_window: bool
    f1_max_at_zero: bool
    f2_second_max: float

    def rows(self):
        """``(z, F1, F2)`` rows when the two grids coincide."""
        if not np.array_equal(self.a, self.b):
            raise ValueError("a and b grids differ")
        return list(zip(self.a.tolist(), self.F1.tolist(), self.F2.tolist()))


def well_profiles(E: float, a_grid, b_grid=None, eta: float = DEFAULT_ETA) -> WellProfiles:
    """``F1(a) = |exp(-f1)|`` and ``F2(b) = |exp(-f2)|`` around the dominant saddle.

    Both are normalised so that the saddle itself has height 1.  Energies
    outside the window are evaluated but flagged.
    """
    sd = saddle_data(E, eta, strict=False)
    cal = sd.calE
    a = np.asarray(a_grid, dtype=float)
    b = a if b_grid is None else np.asarray(b_grid, dtype=float)
    F1 = _well_a(a, cal)
    F2 = _well_b(b, cal)
    at_zero = int(np.argmax(F1)) == int(np.argmin(np.abs(a)))
    second = float(_well_b(np.array([2 * sd.calE_i]), cal)[0])
    return WellProfiles(E, a, F1, b, F2, sd.in_window, at_zero, second)


def _well_a(a, cal):
    # |exp(-(f1(a + calE) - f1(calE)))|
    return np.exp(-a * cal.real - a**2 / 2) / np.abs(1 - cal * a)


def _well_b(b, cal):
    # |exp(-(f2(b - i calE) - f2(-i calE)))|; Re(i b calE) = b * calE_i
    return np.exp(-(b**2) / 2 - b * cal.imag) * np.abs(1 - 1j * cal * b)


def _quad_complex(fn, a=0.0, b=1.0, points=None):
    # the tolerance is absolute for O(1) integrands and scales with int |fn| when
    # a nearby pole makes the integrand large, where round-off sets the floor
    opts = dict(epsabs=QUAD_TOL, epsrel=10 * QUAD_TOL, limit=200, points=points)
    re, err_re = integrate.quad(lambda t: fn(t).real, a, b, **opts)
    im, err_im = integrate.quad(lambda t: fn(t).imag, a, b, **opts)
    scale = max(1.0, integrate.quad(lambda t: abs(fn(t)), a, b, limit=200, points=points)[0])
    if max(err_re, err_im) > 10 * QUAD_TOL * scale:
        raise ArithmeticError(f"vertex quadrature did not converge (error {max(err_re, err_im):.2e})")
    return complex(re, im)


def vertex_V(z: complex, E: float, branch: str = "a", eps: float = 0.0) -> complex:
    """Cubic remainder of the translated action, by adaptive quadrature.

    ``branch="a"``: ``int_0^1 (1-t)^2 z^3 / (calE~ - t z)^3 dt``;
    ``branch="b"``: ``-int_0^1 (1-t)^2 (iz)^3 / (calE~ - t i z)^3 dt``.
    """
    _, ct = saddle_point(E, eps)
    if branch == "a":
        w, sign = complex(z), 1.0
    elif branch == "b":
        w, sign = 1j * complex(z), -1.0
    else:
        raise ValueError(f"branch must be 'a' or 'b', got {branch!r}")
    if w == 0:
        return 0j
    # closest approach of the denominator to zero along the path
    t_near = (ct / w).real
    points = [t_near] if 0 < t_near < 1 else None
    return sign * _quad_complex(lambda t: (1 - t) ** 2 * w**3 / (ct - t * w) ** 3, points=points)


def _cubic_tail(x):
    # sum_{k>=3} x^k / k = -log(1 - x) - x - x^2/2
    x = np.asarray(x, dtype=complex)
    out = np.empty_like(x)
    small = np.abs(x) < 0.25
    xs = x[small]
    term = xs**3
    acc = np.zeros_like(xs)
    for k in range(3, 60):
        acc += term / k
        term = term * xs
    out[small] = acc
    xl = x[~small]
    out[~small] = -np.log(1 - xl) - xl - xl**2 / 2
    return out


def vertex_V_closed(z, E: float, branch: str = "a", eps: float = 0.0):
    """Vectorised closed form of :func:`vertex_V`."""
    cal, _ = saddle_point(E, eps)
    z = np.asarray(z, dtype=complex)
    if branch == "a":
        out = _cubic_tail(cal * z)
    elif branch == "b":
        out = -_cubic_tail(1j * cal * z)
    else:
        raise ValueError(f"branch must be 'a' or 'b', got {branch!r}")
    return complex(out) if out.ndim == 0 else out


def exp_vertex_a(a, cal: complex):
    """``exp(V(a))`` without logarithms: ``exp(-x - x^2/2) / (1 - x)``, ``x = calE a``."""
    x = cal * np.asarray(a)
    return np.exp(-x - x * x / 2) / (1 - x)


def exp_vertex_b(b, cal: complex):
    """``exp(V(b))``: ``(1 - y) exp(y + y^2/2)``, ``y = i calE b``."""
    y = 1j * cal * np.asarray(b)
    return (1 - y) * np.exp(y + y * y / 2)


def vertex_D(a, b, E: float, eps: float = 0.0):
    """Diagonal determinant vertex ``calE^2 - 1 / ((calE~ - a)(calE~ - i b))``."""
    cal, ct = saddle_point(E, eps)
    a = np.asarray(a)
    b = np.asarray(b)
    out = cal * cal - 1 / ((ct - a) * (ct - 1j * b))
    return complex(out) if np.ndim(out) == 0 else out


def vertex_D_integral(a: float, b: float, E: float, eps: float = 0.0) -> complex:
    """The same vertex written as a ``t``-integral along the segment to the saddle."""
    _, ct = saddle_point(E, eps)
    ib = 1j * b

    def integrand(t):
        return a / ((ct - t * a) ** 2 * (ct - ib * t)) + ib / ((ct - t * a) * (ct - ib * t) ** 2)

    return -_quad_complex(integrand)


def vertex_D_observable(a0, b0, E: float, eps: float = 0.0):
    """Observable contribution ``-1 / ((calE~ - a0)(calE~ - i b0))`` at site 0."""
    _, ct = saddle_point(E, eps)
    out = -1 / ((ct - np.asarray(a0)) * (ct - 1j * np.asarray(b0)))
    return complex(out) if np.ndim(out) == 0 else out


@dataclass
class GDecayReport:
    E: float
    W: int
    rate: float
    bound: float
    diag_deviation: float
    diag_bound: float
    near: float
    far: float

    @property
    def passed(self) -> bool:
        return self.rate >= self.bound and self.diag_deviation <= self.diag_bound and self.far < self.near


def G_decay_check(E: float, W: int, torus: LatticeTorus, eta: float = DEFAULT_ETA) -> GDecayReport:
    """Fit the off-diagonal decay of ``G = (1 + i m_i^2 C)^{-1}``.

    ``G`` is diagonal in Fourier space with symbol
    ``(W^2 p + m_r^2) / (W^2 p + m_r^2 + i m_i^2)``.  The returned report
    compares the fitted rate with ``m_r / (2W)`` and the diagonal deviation
    ``|G_ii - 1|`` with ``10 m_i^2 C_ii``.
    """
    sd = saddle_data(E, eta)
    if min(torus.sides) < 4 * W:
        raise ValueError(f"torus sides {torus.sides} too small for W={W}; need at least {4 * W}")
    C = build_kernel(torus, W, sd.m_r2, kind="C")
    mr2, mi2 = sd.m_r2, sd.m_i2
    G = custom_kernel(torus, W, lambda p: (W**2 * p + mr2) / (W**2 * p + mr2 + 1j * mi2))
    prof = decay_profile(G, exclude_origin=True)
    row = np.abs(np.asarray(G.row0).reshape(-1))
    radii = torus.radii
    near = float(row[np.isclose(radii, np.min(radii[radii >= W]))].max())
    far = float(row[np.isclose(radii, min(torus.sides) / 2)].max())
    diag_dev = float(abs(G.row0.reshape(-1)[0] - 1))
    diag_bound = 10 * mi2 * float(C.row0.reshape(-1)[0])
    return GDecayReport(E, W, float(prof.rate), 0.5 * math.sqrt(mr2) / W, diag_dev, diag_bound, near, far)

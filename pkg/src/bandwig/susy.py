"""Dual (supersymmetric) integral representation of ``<G+_00>``.

After averaging over the ensemble and integrating out the fermionic fields,
``<G+_00>`` becomes an integral over two real fields ``a, b`` on the lattice:

    <G+_00> = (2 pi)^{-|L|} int da db exp[-(a.J^{-1}a + b.J^{-1}b)/2]
              prod_i (E_eps - i b_i) / (E_eps - a_i)
              * 1/(E_eps - a_0) * det[J^{-1} - F(a, b) - F'(a_0, b_0)]

with ``F_ii = 1 / ((E_eps - a_i)(E_eps - i b_i))`` and ``F'`` the same
expression restricted to the observable site.  Dropping the observable
factors gives the integral of ``<1> = 1``; this module carries the
``(2 pi)^{-|L|}`` normalisation explicitly so both can be checked.

Two forms are evaluated by tensor Gauss-Hermite quadrature after whitening
the Gaussian weight:

``raw``
    The integrand above.  The ``a`` contour is moved to ``Im a = -offset``
    (the integrand has no singularity in the lower half plane, its only
    poles sit at ``a_i = E + i eps``), so the quadrature never sees the
    ``eps``-close pole.  Whitening uses the symmetric square root of J.
``shifted``
    The integrand after the translation ``a -> a + calE``,
    ``b -> b - i calE`` through the saddle: Gaussian measure with complex
    covariance ``B = (-W^2 Delta + 1 - calE^2)^{-1}``, the determinant
    ``det[1 + (D + D'_0) B]`` and the vertices ``exp(V'_0 + sum_j V_j)``.
    Whitening uses the real covariance C.

The reported value is always ``I_obs / I_norm``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import roots_hermitenorm

from .analytics import (
    DEFAULT_ETA,
    check_window,
    exp_vertex_a,
    exp_vertex_b,
    saddle_point,
)
from .ensemble import EnsembleSpec, sample_H
from .lattice import KernelMatrix, build_kernel

__all__ = [
    "MAX_SITES",
    "DualIntegrandSpec",
    "QuadratureScheme",
    "QuadratureResult",
    "integrand_raw",
    "integrand_shifted",
    "fermion_factor",
    "quadrature",
    "direct_average",
    "CrosscheckReport",
    "mc_crosscheck",
    "mc_green_function",
    "second_saddle_fraction",
]

MAX_SITES = 3
_CHUNK = 1 << 16


@dataclass(frozen=True)
class DualIntegrandSpec:
    kernel_J: KernelMatrix
    E: float
    eps: float
    form: str = "raw"
    site: int = 0
    eta: float = DEFAULT_ETA

    def __post_init__(self):
        if self.kernel_J.kind != "J":
            raise ValueError("dual representation needs the kind-J kernel")
        if self.form not in {"raw", "shifted"}:
            raise ValueError(f"form must be 'raw' or 'shifted', got {self.form!r}")
        if self.eps < 0:
            raise ValueError(f"broadening must be non-negative, got {self.eps}")
        if self.form == "raw" and not self.eps > 0:
            raise ValueError("the raw form is only defined for eps > 0")
        if self.form == "shifted":
            check_window(self.E, self.eta)
        if not 0 <= self.site < self.kernel_J.torus.volume:
            raise ValueError(f"observable site {self.site} outside the lattice")

    @property
    def size(self) -> int:
        return self.kernel_J.torus.volume

    @property
    def z(self) -> complex:
        return complex(self.E, self.eps)


@dataclass(frozen=True)
class QuadratureScheme:
    """Tensor Gauss-Hermite rule in whitened coordinates.

    ``nodes`` applies to every ``a`` direction and ``b_nodes`` (default:
    ``nodes``) to every ``b`` direction.  Nodes farther than ``radius`` from
    the origin in whitened units are dropped.  ``contour_offset`` is the
    downward shift of the ``a`` contour used by the raw form.
    """

    nodes: int = 32
    b_nodes: int | None = None
    radius: float = 10.0
    tol: float = 1e-6
    max_refinements: int = 1
    contour_offset: float = 1.5
    max_points: int = 50_000_000

    def __post_init__(self):
        if self.nodes < 2 or (self.b_nodes is not None and self.b_nodes < 2):
            raise ValueError("need at least two nodes per dimension")
        if self.radius < 8:
            raise ValueError(f"truncation radius must be at least 8, got {self.radius}")
        if self.max_refinements < 0:
            raise ValueError("max_refinements must be non-negative")
        if self.contour_offset < 0:
            raise ValueError("contour offset must be non-negative")

    @property
    def nb(self) -> int:
        return self.nodes if self.b_nodes is None else self.b_nodes

    def refined(self) -> "QuadratureScheme":
        return QuadratureScheme(
            2 * self.nodes, 2 * self.nb, self.radius, self.tol,
            self.max_refinements, self.contour_offset, self.max_points,
        )


@dataclass
class QuadratureResult:
    value: complex
    norm: complex
    observable: complex
    error_estimate: float
    nodes_used: tuple[int, int]
    points: int
    form: str
    converged: bool

    def to_json(self) -> dict:
        return {
            "value_re": self.value.real,
            "value_im": self.value.imag,
            "norm_check": abs(self.norm - 1),
            "norm_re": self.norm.real,
            "norm_im": self.norm.imag,
            "error_estimate": self.error_estimate,
            "nodes_used": list(self.nodes_used),
            "points": self.points,
            "form": self.form,
            "converged": self.converged,
        }


def _det_small(M: np.ndarray) -> np.ndarray:
    n = M.shape[-1]
    if n == 1:
        return M[..., 0, 0]
    if n == 2:
        return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    if n == 3:
        return (
            M[..., 0, 0] * (M[..., 1, 1] * M[..., 2, 2] - M[..., 1, 2] * M[..., 2, 1])
            - M[..., 0, 1] * (M[..., 1, 0] * M[..., 2, 2] - M[..., 1, 2] * M[..., 2, 0])
            + M[..., 0, 2] * (M[..., 1, 0] * M[..., 2, 1] - M[..., 1, 1] * M[..., 2, 0])
        )
    return np.linalg.det(M)


def _sqrtm_sym(K: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(K)
    if np.any(w <= 0):
        raise ValueError("covariance is not positive definite")
    return (V * np.sqrt(w)) @ V.T


def _as_points(a, b, n):
    a = np.atleast_2d(np.asarray(a))
    b = np.atleast_2d(np.asarray(b))
    if a.shape[-1] != n or b.shape[-1] != n:
        raise ValueError(f"field vectors must have length {n}")
    return a, b


def fermion_factor(J: np.ndarray, a, b, z: complex, site: int | None = 0) -> np.ndarray:
    """``det[J^{-1} - F(a, b) - F'(a_0, b_0)]`` for a batch of field configurations.

    ``site=None`` drops the observable term ``F'``.
    """
    J = np.asarray(J)
    Jinv = np.linalg.inv(J)
    a, b = _as_points(a, b, J.shape[0])
    F = 1.0 / ((z - a) * (z - 1j * b))
    diag = F.copy()
    if site is not None:
        diag[:, site] += F[:, site]
    M = Jinv[None, :, :] - diag[:, :, None] * np.eye(J.shape[0])[None]
    return _det_small(M)


def integrand_raw(a, b, spec: DualIntegrandSpec, observable: bool = True):
    """Raw dual integrand at field values ``a, b`` (without ``(2 pi)^{-|L|}``).

    Accepts single vectors or ``(m, |L|)`` batches; complex ``a`` is allowed
    so the integrand can be evaluated on deformed contours.
    """
    if not spec.eps > 0:
        raise ValueError("the raw form is only defined for eps > 0")
    J = np.asarray(spec.kernel_J.entries)
    n = J.shape[0]
    single = np.ndim(a) == 1
    a, b = _as_points(a, b, n)
    z = spec.z
    if np.any(np.abs(z - a) == 0):
        raise ZeroDivisionError("field value sits on the pole a_i = E + i eps")
    Jinv = np.linalg.inv(J)
    quad = np.einsum("mi,ij,mj->m", a, Jinv, a) + np.einsum("mi,ij,mj->m", b, Jinv, b)
    out = np.exp(-0.5 * quad) * np.prod((z - 1j * b) / (z - a), axis=1)
    if observable:
        out = out / (z - a[:, spec.site]) * fermion_factor(J, a, b, z, spec.site)
    else:
        out = out * fermion_factor(J, a, b, z, None)
    return complex(out[0]) if single else out


class _ShiftedParts:
    def __init__(self, spec: DualIntegrandSpec):
        torus, W = spec.kernel_J.torus, spec.kernel_J.bandwidth
        self.cal, self.ct = saddle_point(spec.E, spec.eps)
        mass = 1 - self.cal**2
        self.m_r2, self.m_i2 = mass.real, mass.imag
        self.B = np.asarray(build_kernel(torus, W, mass, kind="B").entries)
        self.C = np.asarray(build_kernel(torus, W, self.m_r2, kind="C").entries)
        self.Binv = np.linalg.inv(self.B)
        self.detB = np.linalg.det(self.B)

    def body(self, a, b, site):
        """``det[1 + (D + D'_0) B] exp(V'_0 + sum V)`` without the Gaussian factor."""
        cal, ct = self.cal, self.ct
        n = self.B.shape[0]
        Fv = 1.0 / ((ct - a) * (ct - 1j * b))
        D = cal * cal - Fv
        if site is not None:
            D[:, site] -= Fv[:, site]
        M = np.eye(n)[None] + D[:, :, None] * self.B[None]
        vert = np.prod(exp_vertex_a(a, cal) * exp_vertex_b(b, cal), axis=1)
        out = _det_small(M) * vert
        if site is not None:
            out = out / (ct - a[:, site])
        return out


def integrand_shifted(a, b, spec: DualIntegrandSpec, observable: bool = True):
    """Saddle-shifted integrand, including the density of ``d mu_B(a) d mu_B(b)``.

    Each factor ``d mu_B`` is the normalised complex Gaussian density
    ``(2 pi)^{-|L|/2} det(B)^{-1/2} exp(-a.B^{-1}a / 2)``, so the integrand is
    ``(2 pi)^{-|L|} det(B)^{-1} exp[-(a.B^{-1}a + b.B^{-1}b)/2]
    * det[1 + (D + D'_0) B] * exp(V'_0 + sum_j V_j)`` and integrates to
    ``<G+_00>`` directly.  It equals ``(2 pi)^{-|L|}`` times
    :func:`integrand_raw` at ``(a + calE, b - i calE)``.
    """
    if spec.form != "shifted":
        check_window(spec.E, spec.eta)
    parts = _ShiftedParts(spec)
    n = spec.size
    single = np.ndim(a) == 1
    a, b = _as_points(a, b, n)
    quad = np.einsum("mi,ij,mj->m", a, parts.Binv, a) + np.einsum("mi,ij,mj->m", b, parts.Binv, b)
    norm = (2 * np.pi) ** (-n) / parts.detB
    out = norm * np.exp(-0.5 * quad) * parts.body(a, b, spec.site if observable else None)
    return complex(out[0]) if single else out


def _gh_rule(n: int, radius: float):
    x, w = roots_hermitenorm(n)
    w = w / math.sqrt(2 * math.pi)
    keep = np.abs(x) <= radius
    return x[keep], w[keep]


def _tensor_sums(n, na, nb, radius, evaluate, max_points):
    """Sum ``evaluate(X, Y) * weights`` over the tensor grid, in fixed order.

    ``evaluate`` returns a tuple of arrays; the sums are accumulated chunk by
    chunk in flat-index order so repeated runs give identical bits.
    """
    xa, wa = _gh_rule(na, radius)
    xb, wb = _gh_rule(nb, radius)
    shape = (xa.size,) * n + (xb.size,) * n
    total = math.prod(shape)
    if total > max_points:
        raise ValueError(f"tensor grid of {total} points exceeds max_points={max_points}")
    sums = None
    for start in range(0, total, _CHUNK):
        flat = np.arange(start, min(total, start + _CHUNK))
        idx = np.unravel_index(flat, shape)
        X = np.stack([xa[i] for i in idx[:n]], axis=1)
        Y = np.stack([xb[i] for i in idx[n:]], axis=1)
        w = np.prod([wa[i] for i in idx[:n]], axis=0) * np.prod([wb[i] for i in idx[n:]], axis=0)
        parts = [np.sum(w * t) for t in evaluate(X, Y)]
        sums = parts if sums is None else [s + p for s, p in zip(sums, parts)]
    return [complex(s) for s in sums], total


def _raw_sums(spec: DualIntegrandSpec, scheme: QuadratureScheme, na, nb):
    J = np.asarray(spec.kernel_J.entries)
    n = J.shape[0]
    L = _sqrtm_sym(J)
    Jinv = np.linalg.inv(J)
    ones = np.ones(n)
    theta = scheme.contour_offset
    lin = np.linalg.solve(L, ones)
    shift_const = 0.5 * theta**2 * ones @ Jinv @ ones
    z, site = spec.z, spec.site
    eye = np.eye(n)

    def evaluate(X, Y):
        a = X @ L.T - 1j * theta
        b = Y @ L.T
        weight = np.exp(1j * theta * (X @ lin) + shift_const)
        common = weight * np.prod((z - 1j * b) / (z - a), axis=1)
        F = 1.0 / ((z - a) * (z - 1j * b))
        det_norm = _det_small(eye[None] - J[None] * F[:, None, :])
        Fo = F.copy()
        Fo[:, site] *= 2
        det_obs = _det_small(eye[None] - J[None] * Fo[:, None, :])
        return common * det_obs / (z - a[:, site]), common * det_norm

    # (2 pi)^{-n} * (2 pi)^{n} det J from the change of variables, times det J^{-1}
    # from pulling J out of the determinant: the Gaussian expectation is already normalised.
    return _tensor_sums(n, na, nb, scheme.radius, evaluate, scheme.max_points)


def _shifted_sums(spec: DualIntegrandSpec, scheme: QuadratureScheme, na, nb):
    parts = _ShiftedParts(spec)
    n = spec.size
    L = _sqrtm_sym(parts.C)
    # det(C) det(B^{-1}) = det(1 + i m_i^2 C)
    prefactor = np.linalg.det(np.eye(n) + 1j * parts.m_i2 * parts.C)
    site = spec.site

    def evaluate(X, Y):
        a = X @ L.T
        b = Y @ L.T
        phase = np.exp(-0.5j * parts.m_i2 * (np.sum(a * a, axis=1) + np.sum(b * b, axis=1)))
        return (
            prefactor * phase * parts.body(a, b, site),
            prefactor * phase * parts.body(a, b, None),
        )

    return _tensor_sums(n, na, nb, scheme.radius, evaluate, scheme.max_points)


def _evaluate(spec, scheme, na, nb):
    if spec.form == "raw":
        return _raw_sums(spec, scheme, na, nb)
    return _shifted_sums(spec, scheme, na, nb)


def quadrature(spec: DualIntegrandSpec, scheme: QuadratureScheme | None = None, strict: bool = True) -> QuadratureResult:
    """``<G+_00>`` as ``I_obs / I_norm`` with a node-doubling error estimate.

    Refines by doubling the node counts until the change in the ratio drops
    below ``scheme.tol`` or ``scheme.max_refinements`` is exhausted.  With
    ``strict`` a result that never met the tolerance raises
    ``ArithmeticError``.
    """
    scheme = scheme or QuadratureScheme()
    if spec.size > MAX_SITES:
        raise ValueError(f"quadrature limited to {MAX_SITES} sites, got {spec.size}")
    na, nb = scheme.nodes, scheme.nb
    (obs, norm), points = _evaluate(spec, scheme, na, nb)
    value = obs / norm
    err = math.inf
    for _ in range(scheme.max_refinements):
        na, nb = 2 * na, 2 * nb
        (obs, norm), points = _evaluate(spec, scheme, na, nb)
        new = obs / norm
        err = abs(new - value)
        value = new
        if err <= scheme.tol:
            break
    converged = err <= scheme.tol
    if strict and not converged:
        raise ArithmeticError(
            f"quadrature did not reach tol={scheme.tol:g} (last change {err:.3e} at {na}/{nb} nodes)"
        )
    return QuadratureResult(value, norm, obs, float(err), (na, nb), points, spec.form, converged)


def direct_average(E: float, eps: float, variance: float = 1.0) -> complex:
    """``<1 / (E + i eps - h)>`` for ``h ~ N(0, variance)`` by adaptive quadrature."""
    if not eps > 0:
        raise ValueError("broadening must be positive")
    norm = 1 / math.sqrt(2 * math.pi * variance)

    def re(h):
        return norm * math.exp(-h * h / (2 * variance)) * (E - h) / ((E - h) ** 2 + eps**2)

    def im(h):
        return -norm * math.exp(-h * h / (2 * variance)) * eps / ((E - h) ** 2 + eps**2)

    lo, hi = E - 1.0, E + 1.0
    total = 0j
    for fn, unit in ((re, 1), (im, 1j)):
        parts = [
            integrate.quad(fn, -np.inf, lo, epsabs=1e-14, epsrel=1e-13, limit=400)[0],
            integrate.quad(fn, lo, hi, points=[E], epsabs=1e-14, epsrel=1e-13, limit=400)[0],
            integrate.quad(fn, hi, np.inf, epsabs=1e-14, epsrel=1e-13, limit=400)[0],
        ]
        total += unit * math.fsum(parts)
    return total


def mc_green_function(ensemble: EnsembleSpec, E: float, eps: float, site: int = 0):
    """Per-sample ``G+_{site,site}`` for every stream of the ensemble."""
    z = complex(E, eps)
    n = ensemble.size
    out = np.empty(ensemble.sample_count, dtype=complex)
    e = np.zeros(n, dtype=complex)
    e[site] = 1
    for sid in range(ensemble.sample_count):
        H = sample_H(ensemble, sid).H
        if n == 1:
            out[sid] = 1 / (z - H[0, 0])
        else:
            out[sid] = np.linalg.solve(z * np.eye(n) - H, e)[site]
    return out


@dataclass
class CrosscheckReport:
    E: float
    eps: float
    quadrature: complex
    quadrature_error: float
    norm: complex
    mc_mean: complex
    mc_stderr_re: float
    mc_stderr_im: float
    mc_norm: float
    samples: int
    nsigma: float

    @property
    def z_re(self) -> float:
        return abs(self.quadrature.real - self.mc_mean.real) / self.mc_stderr_re

    @property
    def z_im(self) -> float:
        return abs(self.quadrature.imag - self.mc_mean.imag) / self.mc_stderr_im

    @property
    def agree(self) -> bool:
        return self.z_re <= self.nsigma and self.z_im <= self.nsigma

    def to_json(self) -> dict:
        return {
            "E": self.E,
            "epsilon": self.eps,
            "quad_re": self.quadrature.real,
            "quad_im": self.quadrature.imag,
            "quad_error": self.quadrature_error,
            "norm_re": self.norm.real,
            "norm_im": self.norm.imag,
            "mc_re": self.mc_mean.real,
            "mc_im": self.mc_mean.imag,
            "mc_stderr_re": self.mc_stderr_re,
            "mc_stderr_im": self.mc_stderr_im,
            "mc_norm": self.mc_norm,
            "z_re": self.z_re,
            "z_im": self.z_im,
            "samples": self.samples,
            "agree": self.agree,
        }


def mc_crosscheck(
    spec: DualIntegrandSpec,
    ensemble: EnsembleSpec,
    scheme: QuadratureScheme | None = None,
    nsigma: float = 4.0,
    min_samples: int = 10_000,
    quad: QuadratureResult | None = None,
) -> CrosscheckReport:
    """Compare the dual quadrature with a Monte Carlo average over the ensemble."""
    if ensemble.kernel_J is not spec.kernel_J and not np.array_equal(
        np.asarray(ensemble.kernel_J.entries), np.asarray(spec.kernel_J.entries)
    ):
        raise ValueError("quadrature and ensemble use different variance profiles")
    if ensemble.sample_count < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {ensemble.sample_count}")
    if quad is None:
        quad = quadrature(spec, scheme)
    g = mc_green_function(ensemble, spec.E, spec.eps, spec.site)
    m = g.size
    # <1> estimated from the same samples is exactly 1
    return CrosscheckReport(
        spec.E, spec.eps, quad.value, quad.error_estimate, quad.norm, complex(g.mean()),
        float(g.real.std(ddof=1) / math.sqrt(m)), float(g.imag.std(ddof=1) / math.sqrt(m)),
        1.0, m, nsigma,
    )


def second_saddle_fraction(spec: DualIntegrandSpec, scheme: QuadratureScheme | None = None, halfwidth: float | None = None) -> float:
    """Share of ``sum |weight * integrand|`` (norm integrand, shifted form) coming
    from configurations with every ``b_i`` near the second well ``2 calE_i``.
    """
    if spec.form != "shifted":
        raise ValueError("diagnostic is defined on the shifted form")
    scheme = scheme or QuadratureScheme()
    parts = _ShiftedParts(spec)
    cal_i = -parts.cal.imag
    delta = cal_i if halfwidth is None else halfwidth
    L = _sqrtm_sym(parts.C)

    def evaluate(X, Y):
        a = X @ L.T
        b = Y @ L.T
        phase = np.exp(-0.5j * parts.m_i2 * (np.sum(a * a, axis=1) + np.sum(b * b, axis=1)))
        mag = np.abs(phase * parts.body(a, b, None))
        near = np.all(np.abs(b - 2 * cal_i) <= delta, axis=1)
        return mag * near, mag

    (inside, total), _ = _tensor_sums(spec.size, scheme.nodes, scheme.nb, scheme.radius, evaluate, scheme.max_points)
    return float(inside.real / total.real)

"""Finite Grassmann algebra and small supermatrices.

The algebra for ``N`` pairs has generators ``chi_1, chi_1*, chi_2, chi_2*,
...`` in that fixed global order; generator ``k`` is bit ``k`` of a subset
mask, so ``chi_i`` is bit ``2(i-1)`` and ``chi_i*`` is bit ``2(i-1)+1``.
An element stores one complex coefficient per subset (``4**N`` values); the
coefficient of mask ``A`` multiplies the monomial of the generators in
``A`` written in increasing generator order.

Berezin integration follows ``int dchi 1 = 0``, ``int dchi chi = 1/sqrt(2 pi)``
and acts as a left derivative.  A list of generators ``[g1, ..., gm]``
denotes ``int dg1 ... dgm``: the rightmost integral is done first.  With
this convention ``int prod_i dchi_i* dchi_i exp(-chi^+ M chi) = det(M / 2 pi)``.

Conjugation is treated as a formal pairing of generators and is never
applied twice, so the sign of ``(chi*)*`` plays no role here.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "MAX_PAIRS",
    "GrassmannAlgebra",
    "GrassmannElement",
    "berezin_integrate",
    "verify_det_identity",
    "SuperMatrixSmall",
    "sdet_and_identities",
    "lemma_fermion_check",
    "identity_suite",
]

MAX_PAIRS = 4
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _popcount(x: int) -> int:
    return bin(x).count("1")


class GrassmannAlgebra:
    """Multiplication tables for the algebra with ``n_pairs`` generator pairs."""

    def __init__(self, n_pairs: int):
        if not 1 <= n_pairs <= MAX_PAIRS:
            raise ValueError(f"number of generator pairs must be in [1, {MAX_PAIRS}], got {n_pairs}")
        self.n_pairs = n_pairs
        self.n_gen = 2 * n_pairs
        self.dim = 1 << self.n_gen
        left, right, sign = [], [], []
        for A in range(self.dim):
            for B in range(self.dim):
                if A & B:
                    continue
                # reorder (A-monomial)(B-monomial): count generators of A above each of B
                swaps = sum(_popcount(A >> (b + 1)) for b in range(self.n_gen) if B >> b & 1)
                left.append(A)
                right.append(B)
                sign.append(-1.0 if swaps % 2 else 1.0)
        self._left = np.array(left)
        self._right = np.array(right)
        self._target = self._left | self._right
        self._sign = np.array(sign)
        self.degree = np.array([_popcount(A) for A in range(self.dim)])
        # one-hot scatter matrix pair -> product subset
        self._scatter = np.zeros((len(left), self.dim))
        self._scatter[np.arange(len(left)), self._target] = 1.0

    def __repr__(self) -> str:
        return f"GrassmannAlgebra(n_pairs={self.n_pairs})"

    def __eq__(self, other) -> bool:
        return isinstance(other, GrassmannAlgebra) and other.n_pairs == self.n_pairs

    def __hash__(self) -> int:
        return hash(("GrassmannAlgebra", self.n_pairs))

    def product(self, g: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Coefficient-array product, broadcasting over leading axes."""
        terms = self._sign * g[..., self._left] * h[..., self._right]
        return terms @ self._scatter

    def matmul(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Product of matrices with Grassmann entries, shapes ``(p, r, dim) x (r, q, dim)``."""
        terms = self._sign * A[:, :, None, self._left] * B[None, :, :, self._right]
        return terms.sum(axis=1) @ self._scatter

    def generator_index(self, pair: int, conjugate: bool = False) -> int:
        if not 1 <= pair <= self.n_pairs:
            raise ValueError(f"generator pair {pair} outside [1, {self.n_pairs}]")
        return 2 * (pair - 1) + int(conjugate)

    def chi(self, pair: int) -> "GrassmannElement":
        return GrassmannElement.monomial(self, [self.generator_index(pair)])

    def chi_star(self, pair: int) -> "GrassmannElement":
        return GrassmannElement.monomial(self, [self.generator_index(pair, True)])

    def scalar(self, c: complex) -> "GrassmannElement":
        coeffs = np.zeros(self.dim, dtype=complex)
        coeffs[0] = c
        return GrassmannElement(self, coeffs)

    def zero(self) -> "GrassmannElement":
        return self.scalar(0)


@lru_cache(maxsize=None)
def algebra(n_pairs: int) -> GrassmannAlgebra:
    return GrassmannAlgebra(n_pairs)


def _series_exp(alg: GrassmannAlgebra, nil: np.ndarray) -> np.ndarray:
    out = np.zeros_like(nil)
    out[..., 0] = 1.0
    term = out.copy()
    k = 1
    while True:
        term = alg.product(term, nil) / k
        if not np.any(term):
            return out
        out = out + term
        k += 1


def _series_log1p(alg: GrassmannAlgebra, nil: np.ndarray) -> np.ndarray:
    out = np.zeros_like(nil)
    power = nil
    k = 1
    while np.any(power):
        out = out + ((-1) ** (k + 1) / k) * power
        power = alg.product(power, nil)
        k += 1
    return out


def _series_inverse(alg: GrassmannAlgebra, coeffs: np.ndarray) -> np.ndarray:
    s = coeffs[..., 0]
    if np.any(s == 0):
        raise ZeroDivisionError("element with zero scalar part is not invertible")
    x = coeffs / s[..., None]
    x[..., 0] = 0.0
    out = np.zeros_like(coeffs)
    out[..., 0] = 1.0
    term = out.copy()
    while True:
        term = -alg.product(term, x)
        if not np.any(term):
            break
        out = out + term
    return out / s[..., None]


@dataclass(frozen=True, eq=False)
class GrassmannElement:
    algebra: GrassmannAlgebra
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != (self.algebra.dim,):
            raise ValueError(f"expected {self.algebra.dim} coefficients, got shape {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def monomial(cls, alg: GrassmannAlgebra, generators, coefficient: complex = 1.0) -> "GrassmannElement":
        """``coefficient * g_1 g_2 ... g_k`` for generator indices in the given order."""
        out = alg.scalar(coefficient)
        for k in generators:
            if not 0 <= k < alg.n_gen:
                raise ValueError(f"unknown generator {k}")
            c = np.zeros(alg.dim, dtype=complex)
            c[1 << k] = 1.0
            out = out * GrassmannElement(alg, c)
        return out

    @property
    def generator_count(self) -> int:
        return self.algebra.n_gen

    @property
    def scalar_part(self) -> complex:
        return complex(self.coeffs[0])

    def _check(self, other: "GrassmannElement"):
        if other.algebra != self.algebra:
            raise ValueError("elements belong to different algebras")

    def _coerce(self, other):
        if isinstance(other, GrassmannElement):
            self._check(other)
            return other
        if np.isscalar(other):
            return self.algebra.scalar(complex(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return GrassmannElement(self.algebra, self.coeffs + other.coeffs)

    __radd__ = __add__

    def __neg__(self):
        return GrassmannElement(self.algebra, -self.coeffs)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return GrassmannElement(self.algebra, self.coeffs - other.coeffs)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, GrassmannElement):
            self._check(other)
            return GrassmannElement(self.algebra, self.algebra.product(self.coeffs, other.coeffs))
        if np.isscalar(other):
            return GrassmannElement(self.algebra, self.coeffs * complex(other))
        return NotImplemented

    def __rmul__(self, other):
        if np.isscalar(other):
            return GrassmannElement(self.algebra, self.coeffs * complex(other))
        return NotImplemented

    def __truediv__(self, other):
        if np.isscalar(other):
            return GrassmannElement(self.algebra, self.coeffs / complex(other))
        return self * other.inverse()

    def __repr__(self) -> str:
        terms = [f"{c:.6g}*[{A:0{self.algebra.n_gen}b}]" for A, c in enumerate(self.coeffs) if c != 0]
        return "GrassmannElement(" + (" + ".join(terms) or "0") + ")"

    def is_even(self, atol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.coeffs[self.algebra.degree % 2 == 1]) <= atol))

    def is_odd(self, atol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.coeffs[self.algebra.degree % 2 == 0]) <= atol))

    def allclose(self, other, atol: float = 1e-12) -> bool:
        other = self._coerce(other)
        return bool(np.max(np.abs(self.coeffs - other.coeffs)) <= atol)

    def max_abs_diff(self, other) -> float:
        other = self._coerce(other)
        return float(np.max(np.abs(self.coeffs - other.coeffs)))

    def exp(self) -> "GrassmannElement":
        """Terminating exponential series; the scalar part must vanish."""
        if self.coeffs[0] != 0:
            raise ValueError("exp needs zero scalar part; split it off as an ordinary factor")
        return GrassmannElement(self.algebra, _series_exp(self.algebra, self.coeffs))

    def inverse(self) -> "GrassmannElement":
        return GrassmannElement(self.algebra, _series_inverse(self.algebra, self.coeffs))

    def log(self) -> "GrassmannElement":
        """Principal log of the scalar part plus the terminating ``log(1 + x)`` series."""
        s = self.coeffs[0]
        if s == 0:
            raise ZeroDivisionError("log of an element with zero scalar part")
        x = self.coeffs / s
        x[0] = 0.0
        out = _series_log1p(self.algebra, x)
        out[0] = cmath.log(s)
        return GrassmannElement(self.algebra, out)


def berezin_integrate(g: GrassmannElement, generators) -> GrassmannElement:
    """``int dg_1 ... dg_m g`` with the rightmost measure applied first.

    Each ``int dchi_k`` picks the terms containing ``chi_k``, moves ``chi_k``
    to the front (one sign per generator in front of it) and removes it,
    with the ``1/sqrt(2 pi)`` normalisation.
    """
    gens = list(generators)
    if len(set(gens)) != len(gens):
        raise ValueError("generators in a Berezin integral must be distinct")
    alg = g.algebra
    coeffs = g.coeffs.copy()
    for k in reversed(gens):
        if not 0 <= k < alg.n_gen:
            raise ValueError(f"unknown generator {k}")
        bit = 1 << k
        out = np.zeros_like(coeffs)
        for A in range(alg.dim):
            if A & bit and coeffs[A] != 0:
                sign = -1.0 if _popcount(A & (bit - 1)) % 2 else 1.0
                out[A ^ bit] += sign * coeffs[A] * _INV_SQRT_2PI
        coeffs = out
    return GrassmannElement(alg, coeffs)


def full_measure(alg: GrassmannAlgebra, pairs=None) -> list[int]:
    """Generator list for ``prod_i dchi_i* dchi_i`` over the given pairs."""
    pairs = range(1, alg.n_pairs + 1) if pairs is None else pairs
    out = []
    for i in pairs:
        out += [alg.generator_index(i, True), alg.generator_index(i)]
    return out


def fermionic_quadratic_form(alg: GrassmannAlgebra, M: np.ndarray) -> GrassmannElement:
    """``chi^+ M chi = sum_ij chi_i* M_ij chi_j``."""
    n = M.shape[0]
    out = alg.zero()
    for i in range(n):
        for j in range(n):
            if M[i, j] != 0:
                out = out + alg.chi_star(i + 1) * alg.chi(j + 1) * complex(M[i, j])
    return out


def fermionic_gaussian(M: np.ndarray) -> complex:
    """Engine value of ``int prod dchi* dchi exp(-chi^+ M chi)``."""
    M = np.asarray(M, dtype=complex)
    alg = algebra(M.shape[0])
    integrand = (-fermionic_quadratic_form(alg, M)).exp()
    return berezin_integrate(integrand, full_measure(alg)).scalar_part


@dataclass
class DetIdentityReport:
    size: int
    engine: complex
    expected: complex
    rel_error: float
    passed: bool

    def to_json(self) -> dict:
        return {
            "size": self.size,
            "engine_re": self.engine.real,
            "engine_im": self.engine.imag,
            "expected_re": self.expected.real,
            "expected_im": self.expected.imag,
            "rel_error": self.rel_error,
            "passed": self.passed,
        }


def verify_det_identity(M, rtol: float = 1e-12) -> DetIdentityReport:
    """Compare the fermionic Gaussian integral with ``det(M / 2 pi)``."""
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if M.shape[0] > 3:
        raise ValueError("determinant identity check limited to N <= 3")
    engine = fermionic_gaussian(M)
    expected = complex(np.linalg.det(M / (2 * np.pi)))
    scale = max(abs(expected), np.finfo(float).tiny)
    rel = abs(engine - expected) / scale
    return DetIdentityReport(M.shape[0], engine, expected, float(rel), bool(rel <= rtol))


# ---------------------------------------------------------------- supermatrices


def _lift(alg: GrassmannAlgebra, X, shape) -> np.ndarray:
    """Matrix with Grassmann entries as a ``(rows, cols, dim)`` array."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        if X.shape != (*shape, alg.dim):
            raise ValueError(f"block has shape {X.shape[:2]}, expected {shape}")
        return X.astype(complex)
    if isinstance(X, (list, tuple)) and X and isinstance(np.asarray(X, dtype=object).flat[0], GrassmannElement):
        arr = np.asarray(X, dtype=object).reshape(shape)
        out = np.zeros((*shape, alg.dim), dtype=complex)
        for idx in np.ndindex(*shape):
            out[idx] = arr[idx].coeffs
        return out
    X = np.asarray(X, dtype=complex)
    if X.size == 0 and 0 in shape:
        return np.zeros((*shape, alg.dim), dtype=complex)
    X = X.reshape(shape)
    out = np.zeros((*shape, alg.dim), dtype=complex)
    out[..., 0] = X
    return out


def _gmat_inverse(alg: GrassmannAlgebra, A: np.ndarray) -> np.ndarray:
    """Inverse of an even matrix through its invertible scalar part."""
    A0 = A[..., 0]
    n = A0.shape[0]
    A0inv = np.linalg.inv(A0)
    if not np.all(np.isfinite(A0inv)):
        raise ZeroDivisionError("scalar part of the block is singular")
    N = A.copy()
    N[..., 0] = 0.0
    X = -alg.matmul(_lift(alg, A0inv, (n, n)), N)
    out = _lift(alg, np.eye(n), (n, n))
    term = out.copy()
    while True:
        term = alg.matmul(term, X)
        if not np.any(term):
            break
        out = out + term
    return alg.matmul(out, _lift(alg, A0inv, (n, n)))


def _gmat_det(alg: GrassmannAlgebra, A: np.ndarray) -> np.ndarray:
    """Determinant of a matrix with even (mutually commuting) entries.

    ``det(A0 + N) = det A0 * exp(tr log(1 + A0^{-1} N))`` with terminating series.
    """
    A0 = A[..., 0]
    n = A0.shape[0]
    d0 = np.linalg.det(A0)
    if d0 == 0:
        raise ZeroDivisionError("scalar part of the block is singular")
    N = A.copy()
    N[..., 0] = 0.0
    X = alg.matmul(_lift(alg, np.linalg.inv(A0), (n, n)), N)
    trlog = np.zeros(alg.dim, dtype=complex)
    power = X
    k = 1
    while np.any(power):
        trlog = trlog + ((-1) ** (k + 1) / k) * np.trace(power, axis1=0, axis2=1)
        power = alg.matmul(power, X)
        k += 1
    return d0 * _series_exp(alg, trlog)


class SuperMatrixSmall:
    """Supermatrix ``[[a, sigma], [rho, b]]`` over a Grassmann algebra.

    ``a`` (p x p) and ``b`` (q x q) have even entries (ordinary complex
    matrices are promoted to scalar parts); ``sigma`` (p x q) and ``rho``
    (q x p) have odd entries.  Blocks may be given as complex arrays, nested
    lists of :class:`GrassmannElement`, or ``(rows, cols, dim)`` coefficient
    arrays.
    """

    def __init__(self, alg: GrassmannAlgebra, a, b, sigma, rho, check: bool = True):
        self.algebra = alg
        a_arr = np.asarray(a) if not isinstance(a, (list, tuple)) else a
        p = _block_rows(a_arr)
        q = _block_rows(b if not isinstance(b, (list, tuple)) else b)
        self.a = _lift(alg, a, (p, p))
        self.b = _lift(alg, b, (q, q))
        self.sigma = _lift(alg, sigma, (p, q))
        self.rho = _lift(alg, rho, (q, p))
        if check:
            odd = alg.degree % 2 == 1
            if np.any(self.a[..., odd]) or np.any(self.b[..., odd]):
                raise ValueError("a and b blocks must have even entries")
            if np.any(self.sigma[..., ~odd]) or np.any(self.rho[..., ~odd]):
                raise ValueError("sigma and rho blocks must have odd entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.shape[0], self.b.shape[0]

    def _new(self, a, b, sigma, rho) -> "SuperMatrixSmall":
        return SuperMatrixSmall(self.algebra, a, b, sigma, rho, check=False)

    def __matmul__(self, other: "SuperMatrixSmall") -> "SuperMatrixSmall":
        mm = self.algebra.matmul
        return self._new(
            mm(self.a, other.a) + mm(self.sigma, other.rho),
            mm(self.rho, other.sigma) + mm(self.b, other.b),
            mm(self.a, other.sigma) + mm(self.sigma, other.b),
            mm(self.rho, other.a) + mm(self.b, other.rho),
        )

    def scale(self, z: complex) -> "SuperMatrixSmall":
        return self._new(z * self.a, z * self.b, z * self.sigma, z * self.rho)

    def entry_max_diff(self, other: "SuperMatrixSmall") -> float:
        return float(max(np.max(np.abs(x - y), initial=0.0) for x, y in zip(
            (self.a, self.b, self.sigma, self.rho), (other.a, other.b, other.sigma, other.rho))))

    @classmethod
    def identity(cls, alg: GrassmannAlgebra, p: int, q: int) -> "SuperMatrixSmall":
        return cls(alg, np.eye(p), np.eye(q), np.zeros((p, q)), np.zeros((q, p)))

    def str(self) -> GrassmannElement:
        return GrassmannElement(
            self.algebra, np.trace(self.a, axis1=0, axis2=1) - np.trace(self.b, axis1=0, axis2=1)
        )

    def _schur(self):
        mm = self.algebra.matmul
        binv = _gmat_inverse(self.algebra, self.b)
        return self.a - mm(mm(self.sigma, binv), self.rho), binv

    def sdet(self) -> GrassmannElement:
        """``det(a - sigma b^{-1} rho) / det b``."""
        alg = self.algebra
        schur, _ = self._schur()
        num = _gmat_det(alg, schur)
        den = _gmat_det(alg, self.b)
        return GrassmannElement(alg, alg.product(num, _series_inverse(alg, den)))

    def inverse(self) -> "SuperMatrixSmall":
        """Block inverse built from the Schur complement ``a - sigma b^{-1} rho``."""
        alg = self.algebra
        mm = alg.matmul
        schur, binv = self._schur()
        sinv = _gmat_inverse(alg, schur)
        q = self.b.shape[0]
        return self._new(
            sinv,
            mm(binv, _lift(alg, np.eye(q), (q, q)) + mm(mm(self.rho, sinv), mm(self.sigma, binv))),
            -mm(mm(sinv, self.sigma), binv),
            -mm(mm(binv, self.rho), sinv),
        )

    def str_ln(self) -> GrassmannElement:
        """``Str ln M`` expanded around the block-diagonal part ``M_d = diag(a, b)``.

        ``Str ln M = ln det a - ln det b + sum_k (-1)^{k+1} Str(X^k) / k`` with
        ``X = M_d^{-1} (M - M_d)``; the series terminates because ``X`` has
        nilpotent entries.
        """
        alg = self.algebra
        p, q = self.shape
        ainv = _gmat_inverse(alg, self.a)
        binv = _gmat_inverse(alg, self.b)
        mm = alg.matmul
        X = self._new(np.zeros_like(self.a), np.zeros_like(self.b), mm(ainv, self.sigma), mm(binv, self.rho))
        total = (
            GrassmannElement(alg, _gmat_det(alg, self.a)).log()
            - GrassmannElement(alg, _gmat_det(alg, self.b)).log()
        )
        power = X
        k = 1
        while any(np.any(blk) for blk in (power.a, power.b, power.sigma, power.rho)):
            total = total + power.str() * ((-1) ** (k + 1) / k)
            power = power @ X
            k += 1
        return total


def _block_rows(x) -> int:
    if isinstance(x, (list, tuple)):
        return len(x)
    x = np.asarray(x)
    if x.ndim == 0:
        return 1
    return x.shape[0]


def _log_diff(x: GrassmannElement, y: GrassmannElement) -> float:
    """Coefficient-wise distance with the scalar parts compared modulo ``2 pi i``."""
    d = x.coeffs - y.coeffs
    d0 = d[0]
    d0 = complex(d0.real, math.remainder(d0.imag, 2 * math.pi))
    d = d.copy()
    d[0] = d0
    return float(np.max(np.abs(d)))


@dataclass
class SdetReport:
    shape: tuple[int, int]
    sdet: GrassmannElement
    inverse_error: float
    str_ln_error: float
    scale_error: float
    scale: complex
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.inverse_error, self.str_ln_error, self.scale_error) <= self.tol

    def to_json(self) -> dict:
        return {
            "shape": list(self.shape),
            "sdet_scalar_re": self.sdet.scalar_part.real,
            "sdet_scalar_im": self.sdet.scalar_part.imag,
            "inverse_error": self.inverse_error,
            "str_ln_error": self.str_ln_error,
            "scale_error": self.scale_error,
            "passed": self.passed,
        }


def sdet_and_identities(M: SuperMatrixSmall, z: complex = 3j, tol: float = 1e-10) -> SdetReport:
    """Superdeterminant of ``M`` plus three identity checks.

    * ``Sdet(M) Sdet(M^{-1}) = 1`` with the block inverse formula
      (``M M^{-1} = 1`` is folded into the same error);
    * ``Str ln M = ln Sdet M`` (scalar parts compared modulo ``2 pi i``);
    * ``Sdet(z M) = Sdet(M)`` for square-balanced ``M`` (``p = q``).
    """
    if M.algebra.n_pairs > 2:
        raise ValueError("supermatrix checks limited to N <= 2 generator pairs")
    if z == 0:
        raise ValueError("scale factor must be non-zero")
    p, q = M.shape
    s = M.sdet()
    Minv = M.inverse()
    one = M.algebra.scalar(1.0)
    inv_err = max(
        (s * Minv.sdet()).max_abs_diff(one),
        (M @ Minv).entry_max_diff(SuperMatrixSmall.identity(M.algebra, p, q)),
    )
    str_ln_err = _log_diff(M.str_ln(), s.log())
    if p == q:
        scale_err = M.scale(z).sdet().max_abs_diff(s)
    else:
        # Sdet(zM) = z^(p-q) Sdet(M) in general
        scale_err = M.scale(z).sdet().max_abs_diff(s * z ** (p - q))
    return SdetReport((p, q), s, float(inv_err), float(str_ln_err), float(scale_err), z, tol)


def lemma_fermion_check(J, a, b, z: complex, site: int = 0):
    """Integrate the fermionic fields of the dual representation with the engine.

    Builds ``exp(-rho^+ J^{-1} rho) prod_i exp(rho_i* rho_i F_i)
    (1 + rho_0* rho_0 F_0)`` -- the inverse superdeterminants written as
    exponentials and the observable entry of ``(E_eps - R_0)^{-1}`` -- and
    returns ``(2 pi)^{|L|}`` times its Berezin integral together with
    ``det[J^{-1} - F - F']`` evaluated directly.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    n = J.shape[0]
    if n > 3:
        raise ValueError("fermion check limited to three sites")
    a = np.asarray(a, dtype=complex).reshape(n)
    b = np.asarray(b, dtype=complex).reshape(n)
    alg = algebra(n)
    F = 1.0 / ((z - a) * (z - 1j * b))
    Jinv = np.linalg.inv(J)
    exponent = -fermionic_quadratic_form(alg, Jinv)
    for i in range(n):
        exponent = exponent + alg.chi_star(i + 1) * alg.chi(i + 1) * complex(F[i])
    observable = 1 + alg.chi_star(site + 1) * alg.chi(site + 1) * complex(F[site])
    integrand = exponent.exp() * observable
    engine = berezin_integrate(integrand, full_measure(alg)).scalar_part * (2 * np.pi) ** n
    diag = F.copy()
    diag[site] += F[site]
    direct = complex(np.linalg.det(Jinv - np.diag(diag)))
    return engine, direct


def identity_suite(seed: int = 0, matrices_per_size: int = 20) -> dict:
    """Run every algebra check once and return a JSON-ready report."""
    rng = np.random.default_rng(seed)
    report: dict = {"seed": seed}

    # algebra axioms on all generator pairs / triples, N = 3
    alg = algebra(3)
    gens = [GrassmannElement.monomial(alg, [k]) for k in range(alg.n_gen)]
    zero = alg.zero()
    anti = all((g * h + h * g).allclose(zero, 0.0) for g in gens for h in gens)
    assoc = all(((g * h) * k).allclose(g * (h * k), 0.0) for g in gens for h in gens for k in gens)
    report["anticommutation"] = bool(anti)
    report["associativity"] = bool(assoc)

    det_checks = []
    for n in (1, 2, 3):
        for _ in range(matrices_per_size):
            M = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            det_checks.append(verify_det_identity(M))
    report["det_identity_max_rel_error"] = max(r.rel_error for r in det_checks)
    report["det_identity"] = all(r.passed for r in det_checks)

    sdet_reports = []
    for p in (1, 2):
        alg = algebra(p)
        for _ in range(5):
            sdet_reports.append(sdet_and_identities(random_supermatrix(alg, p, p, rng)))
    report["sdet_max_error"] = max(
        max(r.inverse_error, r.str_ln_error, r.scale_error) for r in sdet_reports
    )
    report["sdet_identities"] = all(r.passed for r in sdet_reports)

    fermion = []
    for n in (1, 2):
        J = np.eye(n) if n == 1 else np.array([[0.6, 0.4], [0.4, 0.6]])
        a = rng.normal(size=n)
        b = rng.normal(size=n)
        engine, direct = lemma_fermion_check(J, a, b, complex(1.0, 0.05))
        fermion.append(abs(engine - direct) / abs(direct))
    report["fermion_factor_max_rel_error"] = max(fermion)
    report["fermion_factor"] = max(fermion) <= 1e-12
    report["passed"] = all(
        report[k] for k in ("anticommutation", "associativity", "det_identity", "sdet_identities", "fermion_factor")
    )
    return report


def random_odd(alg: GrassmannAlgebra, rng: np.random.Generator) -> GrassmannElement:
    """Random element with only odd-degree terms."""
    c = rng.normal(size=alg.dim) + 1j * rng.normal(size=alg.dim)
    c[alg.degree % 2 == 0] = 0
    return GrassmannElement(alg, c)


def random_supermatrix(alg: GrassmannAlgebra, p: int, q: int, rng: np.random.Generator) -> SuperMatrixSmall:
    """Random ``p|q`` supermatrix with well-conditioned complex diagonal blocks."""
    a = rng.normal(size=(p, p)) + 1j * rng.normal(size=(p, p)) + 3 * np.eye(p)
    b = rng.normal(size=(q, q)) + 1j * rng.normal(size=(q, q)) + 3 * np.eye(q)
    sigma = [[random_odd(alg, rng) for _ in range(q)] for _ in range(p)]
    rho = [[random_odd(alg, rng) for _ in range(p)] for _ in range(q)]
    return SuperMatrixSmall(alg, a, b, sigma, rho)

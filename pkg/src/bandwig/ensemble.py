"""Gaussian Hermitian band matrices with variance profile J.

Each draw is a Hermitian matrix with independent entries: off-diagonal
``H_ij`` (i < j) complex Gaussian with ``E|H_ij|^2 = J_ij`` (real and
imaginary parts each of variance ``J_ij / 2``), diagonal ``H_ii`` real
Gaussian with variance ``J_ii``.  The order ``i < j`` is the lexicographic
site order of :class:`~bandwig.lattice.LatticeTorus`.

Every sample comes from its own random stream, keyed by ``(base_seed,
stream_id)`` through :class:`numpy.random.SeedSequence` and driven by the
counter-based Philox generator, so samples can be produced in any order or in
parallel and still be reproduced bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .lattice import KernelMatrix

__all__ = [
    "EnsembleSpec",
    "BandMatrixSample",
    "CovarianceEstimate",
    "stream_rng",
    "sample_H",
    "iter_samples",
    "empirical_covariance",
    "log_density",
    "entropy",
]

MAX_SEED = 2**64 - 1


def stream_rng(base_seed: int, stream_id: int) -> np.random.Generator:
    """Independent Philox stream for ``(base_seed, stream_id)``."""
    if not 0 <= base_seed <= MAX_SEED:
        raise ValueError(f"base_seed must fit in 64 bits, got {base_seed}")
    if stream_id < 0:
        raise ValueError(f"stream_id must be non-negative, got {stream_id}")
    seq = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class EnsembleSpec:
    kernel_J: KernelMatrix
    sample_count: int
    base_seed: int = 0

    def __post_init__(self):
        if self.kernel_J.kind != "J":
            raise ValueError(f"ensemble needs a kernel of kind J, got {self.kernel_J.kind!r}")
        if not self.kernel_J.is_real:
            raise ValueError("variance profile must be real")
        if int(self.sample_count) != self.sample_count or self.sample_count < 1:
            raise ValueError(f"sample_count must be a positive integer, got {self.sample_count}")
        if not 0 <= self.base_seed <= MAX_SEED:
            raise ValueError(f"base_seed must fit in 64 bits, got {self.base_seed}")
        if np.any(np.asarray(self.kernel_J.entries) <= 0):
            raise ValueError("variance profile J must be strictly positive")

    @property
    def torus(self):
        return self.kernel_J.torus

    @property
    def size(self) -> int:
        return self.kernel_J.torus.volume


@dataclass(frozen=True, eq=False)
class BandMatrixSample:
    torus: object
    H: np.ndarray = field(repr=False)
    seed: int
    stream_id: int


def _draw(J: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = J.shape[0]
    iu = np.triu_indices(n, 1)
    scale = np.sqrt(J[iu] / 2.0)
    re = rng.standard_normal(scale.size) * scale
    im = rng.standard_normal(scale.size) * scale
    diag = rng.standard_normal(n) * np.sqrt(np.diag(J))
    H = np.zeros((n, n), dtype=complex)
    H[iu] = re + 1j * im
    H = H + H.conj().T
    H[np.diag_indices(n)] = diag
    return H


def sample_H(spec: EnsembleSpec, stream_id: int) -> BandMatrixSample:
    """Draw sample ``stream_id`` of the ensemble."""
    if not 0 <= stream_id < spec.sample_count:
        raise ValueError(f"stream_id {stream_id} outside [0, {spec.sample_count})")
    H = _draw(np.asarray(spec.kernel_J.entries), stream_rng(spec.base_seed, stream_id))
    H.setflags(write=False)
    return BandMatrixSample(spec.torus, H, spec.base_seed, int(stream_id))


def iter_samples(spec: EnsembleSpec, stream_ids: Iterable[int] | None = None):
    if stream_ids is None:
        stream_ids = range(spec.sample_count)
    for sid in stream_ids:
        yield sample_H(spec, sid)


@dataclass
class CovarianceEstimate:
    quad: tuple[int, int, int, int]
    mean: complex
    stderr: float
    expected: float
    consistent: bool

    @property
    def zscore(self) -> float:
        return abs(self.mean - self.expected) / self.stderr if self.stderr > 0 else math.inf


def empirical_covariance(
    samples: Sequence[BandMatrixSample],
    pairs: Sequence[tuple[int, int, int, int]],
    kernel_J: KernelMatrix | None = None,
    nsigma: float = 4.0,
) -> list[CovarianceEstimate]:
    """Sample means of ``H_ij H_kl`` with standard errors.

    The expected value is ``delta_jk delta_il J_ij``; ``consistent`` records
    whether the estimate lies within ``nsigma`` standard errors of it.  When
    ``kernel_J`` is omitted the expected value is taken as zero for matching
    quadruples too (only the vanishing structure is checked).
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty sample set")
    if len(samples) < 100:
        raise ValueError(f"need at least 100 samples, got {len(samples)}")
    stack = np.stack([np.asarray(s.H) for s in samples])
    m = stack.shape[0]
    out = []
    for i, j, k, l in pairs:
        vals = stack[:, i, j] * stack[:, k, l]
        mean = complex(vals.mean())
        stderr = float(np.sqrt(vals.real.var(ddof=1) + vals.imag.var(ddof=1)) / math.sqrt(m))
        expected = 0.0
        if j == k and i == l and kernel_J is not None:
            expected = float(kernel_J.entries[i, j])
        ok = abs(mean - expected) <= nsigma * stderr
        out.append(CovarianceEstimate((i, j, k, l), mean, stderr, expected, bool(ok)))
    return out


def log_density(H, kernel_J: KernelMatrix) -> float:
    """Log of the ensemble density at ``H``.

    The density is taken with respect to Lebesgue measure in the independent
    real coordinates ``(Re H_ij, Im H_ij)_{i<j}`` and ``(H_ii)_i``.
    """
    if isinstance(H, BandMatrixSample):
        H = H.H
    H = np.asarray(H)
    J = np.asarray(kernel_J.entries)
    if H.shape != J.shape:
        raise ValueError(f"matrix shape {H.shape} does not match kernel {J.shape}")
    if np.any(J <= 0):
        raise ValueError("variance profile has a non-positive entry")
    n = J.shape[0]
    iu = np.triu_indices(n, 1)
    off = -np.log(np.pi * J[iu]) - np.abs(H[iu]) ** 2 / J[iu]
    dJ = np.diag(J)
    hd = np.real(np.diag(H))
    diag = -0.5 * np.log(2.0 * np.pi * dJ) - hd**2 / (2.0 * dJ)
    return float(np.sum(off) + np.sum(diag))


def entropy(kernel_J: KernelMatrix) -> float:
    """Differential entropy of the ensemble in the coordinates of :func:`log_density`."""
    J = np.asarray(kernel_J.entries)
    iu = np.triu_indices(J.shape[0], 1)
    return float(np.sum(np.log(np.pi * np.e * J[iu])) + np.sum(0.5 * np.log(2 * np.pi * np.e * np.diag(J))))

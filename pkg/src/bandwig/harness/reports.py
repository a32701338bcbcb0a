"""Summary tables computed from experiment CSV outputs."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..analytics import DEFAULT_ETA, check_window, semicircle, semicircle_broadened
from ..lattice import fit_exponential

__all__ = [
    "csv_bytes",
    "read_csv",
    "DeviationRow",
    "DeviationTable",
    "semicircle_deviation",
    "DecayRow",
    "DecayTable",
    "decay_report",
]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_bytes(header: Sequence[str], rows: Iterable[Sequence]) -> bytes:
    """UTF-8 CSV with a header row, LF line endings and round-trip float text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue().encode("utf-8")


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Numeric columns of a CSV written by :func:`csv_bytes`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    cols = list(zip(*rows)) if rows else [[] for _ in header]
    return {name: np.array([float(x) for x in col]) for name, col in zip(header, cols)}


# ------------------------------------------------------------ semicircle trend


@dataclass
class DeviationRow:
    W: int
    epsilon: float
    sup_deviation: float
    stderr: float
    E_at_sup: float


@dataclass
class DeviationTable:
    rows: list[DeviationRow]
    reference: str
    window: tuple[float, float]
    steps_beyond_error: list[bool] = field(default_factory=list)
    slope: float = math.nan

    @property
    def monotone(self) -> bool:
        """Every step to larger W decreases the deviation by more than the combined error."""
        return bool(self.steps_beyond_error) and all(self.steps_beyond_error)

    def csv(self) -> bytes:
        return csv_bytes(
            ["W", "epsilon", "sup_deviation", "stderr", "E_at_sup"],
            [(r.W, r.epsilon, r.sup_deviation, r.stderr, r.E_at_sup) for r in self.rows],
        )


def semicircle_deviation(
    dos_files: Mapping[int, str | Path | Mapping[str, np.ndarray]],
    window: tuple[float, float] = (0.2, 1.8),
    reference: str = "semicircle",
    eta: float = DEFAULT_ETA,
) -> DeviationTable:
    """``sup_E |rho_hat(E) - rho_ref(E)|`` over ``window`` for each W.

    Parameters
    ----------
    dos_files : mapping
        W -> DOS CSV path (columns ``E, dos_mean, dos_stderr, ..., epsilon``),
        or an already-parsed column mapping.
    reference : {"semicircle", "broadened"}
        Compare with the semicircle itself or with the semicircle smoothed by
        the same Lorentzian broadening as the estimate.

    The standard error of each supremum is the standard error of the DOS at
    the maximising energy.  The slope is the least-squares slope of
    ``log(deviation)`` against ``log(W)``.
    """
    if len(set(dos_files)) < 2:
        raise ValueError("need at least two distinct W values")
    if reference not in {"semicircle", "broadened"}:
        raise ValueError(f"unknown reference {reference!r}")
    lo, hi = window
    for x in (lo, hi):
        check_window(x, eta)
    rows = []
    for W in sorted(dos_files):
        src = dos_files[W]
        data = src if isinstance(src, Mapping) else read_csv(src)
        E = data["E"]
        if E.min() > lo + 1e-12 or E.max() < hi - 1e-12:
            raise ValueError(f"window [{lo}, {hi}] outside the data range [{E.min()}, {E.max()}] for W={W}")
        sel = (E >= lo - 1e-12) & (E <= hi + 1e-12)
        eps = float(data["epsilon"][0]) if "epsilon" in data else 0.0
        if reference == "broadened" and eps > 0:
            ref = semicircle_broadened(E[sel], eps)
        else:
            ref = semicircle(E[sel])
        dev = np.abs(data["dos_mean"][sel] - ref)
        k = int(np.argmax(dev))
        rows.append(DeviationRow(int(W), eps, float(dev[k]), float(data["dos_stderr"][sel][k]), float(E[sel][k])))
    steps = [
        (a.sup_deviation - b.sup_deviation) > math.hypot(a.stderr, b.stderr)
        for a, b in zip(rows, rows[1:])
    ]
    devs = np.array([r.sup_deviation for r in rows])
    slope = math.nan
    if np.all(devs > 0):
        slope = float(np.polyfit(np.log([r.W for r in rows]), np.log(devs), 1)[0])
    return DeviationTable(rows, reference, (lo, hi), steps, slope)


# ------------------------------------------------------------ decay of R(x)


@dataclass
class DecayRow:
    W: int
    c: float
    K: float
    fit_residual: float
    n_fit: int
    fit_lo: float
    fit_hi: float

    @property
    def rate(self) -> float:
        return self.c / self.W


@dataclass
class DecayTable:
    rows: list[DecayRow]

    @property
    def c_ratio(self) -> float:
        cs = [r.c for r in self.rows]
        return max(cs) / min(cs)

    @property
    def K_ratio(self) -> float:
        Ks = [r.K for r in self.rows]
        return max(Ks) / min(Ks)

    @property
    def rates_positive(self) -> bool:
        return all(r.c > 0 for r in self.rows)

    @property
    def rate_stable(self) -> bool:
        """``rate * W`` agrees across W within a factor 2."""
        return self.rates_positive and self.c_ratio <= 2.0

    @property
    def amplitude_consistent(self) -> bool:
        """Amplitudes scale like ``W^-3`` within a factor 4."""
        return self.K_ratio <= 4.0

    def csv(self) -> bytes:
        return csv_bytes(
            ["W", "c", "K", "fit_residual", "n_fit", "fit_lo", "fit_hi"],
            [(r.W, r.c, r.K, r.fit_residual, r.n_fit, r.fit_lo, r.fit_hi) for r in self.rows],
        )


def decay_report(
    profiles: Mapping[int, str | Path | Mapping[str, np.ndarray]],
    fit_min: Mapping[int, float] | float | None = None,
    fit_max: Mapping[int, float] | float | None = None,
    min_snr: float = 2.0,
    min_points: int = 4,
) -> DecayTable:
    """Fit ``|R(x)| = K W^-3 exp(-c |x| / W)`` for every W.

    Parameters
    ----------
    profiles : mapping
        W -> R-profile CSV (columns ``radius, reR_mean, imR_mean, stderr,
        count``) or the parsed columns.
    fit_min, fit_max : float or mapping, optional
        Fit window; defaults to ``[W, largest radius]``.
    min_snr : float
        Radii where ``|R|`` is below ``min_snr`` standard errors are skipped.
    """
    if len(set(profiles)) < 2:
        raise ValueError("need at least two distinct W values")

    def pick(opt, W, default):
        if opt is None:
            return default
        if isinstance(opt, Mapping):
            return float(opt.get(W, default))
        return float(opt)

    rows = []
    for W in sorted(profiles):
        src = profiles[W]
        data = src if isinstance(src, Mapping) else read_csv(src)
        r = data["radius"]
        mag = np.hypot(data["reR_mean"], data["imR_mean"])
        se = data["stderr"]
        lo = pick(fit_min, W, float(W))
        hi = pick(fit_max, W, float(r.max()))
        keep = (r >= lo - 1e-9) & (r <= hi + 1e-9) & (mag > min_snr * se) & (mag > 0)
        if keep.sum() < min_points:
            raise ValueError(f"insufficient radii for W={W}: {int(keep.sum())} usable, need {min_points}")
        rate, amp, resid, n = fit_exponential(r[keep], mag[keep], lo, hi)
        rows.append(DecayRow(int(W), float(rate * W), float(amp * W**3), float(resid), int(n), lo, hi))
    return DecayTable(rows)

"""Acceptance criteria 1-10.

Each test prints one ``criterion N: PASS|FAIL`` line (collected again in the
pytest terminal summary) and then asserts the criterion at its stated
tolerance.  Harness-driven criteria run the shipped configs under
``configs/`` into temporary directories; criterion 10 runs every one of
them a second time and compares the output bytes.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from bandwig.analytics import (
    f1_prime,
    f1_second,
    f2_prime,
    f2_second,
    saddle_data,
    semicircle,
    well_profiles,
)
from bandwig.ensemble import EnsembleSpec
from bandwig.grassmann import algebra, random_supermatrix, sdet_and_identities, verify_det_identity
from bandwig.harness.config import load_config
from bandwig.harness.runner import run
from bandwig.lattice import build_kernel, build_torus
from bandwig.spectral import derivative_check

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
HARNESS_CONFIGS = [
    "dos_sweep", "rx_decay", "susy_check", "susy_shift", "grassmann_check", "kernel_audit", "saddle_table",
]


class _Runs:
    """Run each shipped config at most once per session (plus one repeat)."""

    def __init__(self, root: Path):
        self.root = root
        self.cache: dict[tuple[str, str], tuple[object, float]] = {}

    def get(self, name: str, tag: str = "first"):
        key = (name, tag)
        if key not in self.cache:
            cfg = load_config(CONFIGS / f"{name}.yaml", {"out": str(self.root / tag / name)})
            t0 = time.perf_counter()
            result = run(cfg)
            self.cache[key] = (result, time.perf_counter() - t0)
        return self.cache[key]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    return _Runs(tmp_path_factory.mktemp("acceptance"))


def _task_records(result, prefix):
    return [json.loads((result.out_dir / name).read_text()) for name in sorted(result.hashes) if name.startswith(prefix) and name.endswith(".json")]


# ------------------------------------------------------------------ 1


def test_criterion_01_kernel_exactness(verdict):
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    worst_res, worst_row, configs = 0.0, 0.0, []
    for _ in range(10):
        d = int(rng.integers(1, 4))
        sides = [int(s) for s in rng.integers(1, 17, size=d)]
        W = int(rng.integers(1, 5))
        mass = float(rng.choice([1.0, saddle_data(1.0).m_r2]))
        K = build_kernel(build_torus(d, sides), W, mass)
        worst_res = max(worst_res, K.residual())
        if mass == 1.0:
            worst_row = max(worst_row, float(np.max(np.abs(np.asarray(K.entries).sum(axis=1) - 1))))
        configs.append((d, tuple(sides), W, mass))
    elapsed = time.perf_counter() - t0
    ok = worst_res <= 1e-10 and worst_row <= 1e-12 and elapsed < 60
    verdict(1, "kernel exactness", ok, f"max residual {worst_res:.2e}, max J row-sum error {worst_row:.2e}, {elapsed:.1f}s")
    assert ok, configs


# ------------------------------------------------------------------ 2, 3, 4


def test_criterion_02_dual_identity(runs, verdict):
    result, elapsed = runs.get("susy_check")
    recs = _task_records(result, "susy_")
    one = [r for r in recs if r["sites"] == 1]
    two = [r for r in recs if r["sites"] == 2]
    oracle = max(r["oracle_error"] for r in one)
    mc_z = max(max(r["mc"]["z_re"], r["mc"]["z_im"]) for r in recs)
    ok = (
        sorted(r["E"] for r in one) == [0.5, 1.0, 1.5]
        and sorted(r["E"] for r in two) == [0.5, 1.0, 1.5]
        and all(r["epsilon"] == 0.05 and r["mc"]["samples"] >= 100_000 for r in recs)
        and oracle <= 1e-6
        and all(r["mc"]["agree"] for r in recs)
        and all(r["checks"]["converged"] for r in recs)
        and elapsed < 300
    )
    verdict(2, "dual integral vs oracle and Monte Carlo", ok, f"max oracle error {oracle:.2e}, max MC z {mc_z:.2f}, {elapsed:.0f}s")
    assert ok


def test_criterion_03_normalisation(runs, verdict):
    result, elapsed = runs.get("susy_check")
    recs = _task_records(result, "susy_")
    worst = max(r["norm_check"] for r in recs)
    sizes = sorted({r["sites"] for r in recs})
    ok = worst <= 1e-4 and sizes == [1, 2]
    verdict(3, "normalisation <1> = 1", ok, f"max |I_norm - 1| {worst:.2e} over |L| in {sizes}")
    assert ok


def test_criterion_04_contour_shift(runs, verdict):
    result, elapsed = runs.get("susy_shift")
    recs = _task_records(result, "susy_")
    worst = max(r["raw_vs_shifted"] for r in recs)
    ok = (
        sorted(r["E"] for r in recs) == [0.5, 1.0, 1.5]
        and all(r["sites"] == 1 and r["epsilon"] == 0.05 for r in recs)
        and worst <= 1e-6
        and elapsed < 120
    )
    verdict(4, "raw vs saddle-shifted quadrature", ok, f"max difference {worst:.2e}, {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 5


def test_criterion_05_grassmann_suite(runs, verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240605)
    det_err = 0.0
    for n in (1, 2, 3):
        for _ in range(20):
            M = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            det_err = max(det_err, verify_det_identity(M).rel_error)
    sdet_err = 0.0
    for p in (1, 2):
        alg = algebra(p)
        for _ in range(10):
            rep = sdet_and_identities(random_supermatrix(alg, p, p, rng))
            sdet_err = max(sdet_err, rep.inverse_error, rep.str_ln_error, rep.scale_error)
    harness, _ = runs.get("grassmann_check")
    elapsed = time.perf_counter() - t0
    ok = det_err <= 1e-12 and sdet_err <= 1e-10 and harness.passed and elapsed < 60
    verdict(5, "Grassmann/superdeterminant identities", ok, f"det rel error {det_err:.2e}, sdet error {sdet_err:.2e}, {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 6


def test_criterion_06_saddle_analytics(runs, verdict):
    t0 = time.perf_counter()
    grid = np.linspace(0.11, 1.8, 100)
    worst_saddle, worst_well = 0.0, 0.0
    for E in grid:
        sd = saddle_data(E)
        cal = sd.calE
        worst_saddle = max(
            worst_saddle,
            abs(cal * cal.conjugate() - 1),
            abs((E - cal) - cal.conjugate()),
            abs(f1_prime(cal, E)),
            abs(f2_prime(-1j * cal, E)),
            abs(f1_second(cal, E) - (1 - cal**2)),
            abs(f2_second(-1j * cal, E) - (1 - cal**2)),
        )
        heights = well_profiles(E, [0.0], [0.0, 2 * sd.calE_i]).F2
        worst_well = max(worst_well, float(np.max(np.abs(heights - 1))))
    rho0 = abs(semicircle(0.0) - 1 / math.pi)
    total = abs(integrate.quad(semicircle, -2, 2, epsabs=1e-14)[0] - 1)
    harness, _ = runs.get("saddle_table")
    elapsed = time.perf_counter() - t0
    ok = worst_saddle <= 1e-14 and worst_well <= 1e-12 and rho0 <= 1e-15 and total <= 1e-12 and harness.passed and elapsed < 60
    verdict(
        6, "saddle analytics on a 100-point grid", ok,
        f"saddle identities {worst_saddle:.1e}, well heights {worst_well:.1e}, |int rho - 1| {total:.1e}",
    )
    assert ok


# ------------------------------------------------------------------ 7


def test_criterion_07_semicircle_trend(runs, verdict):
    result, elapsed = runs.get("dos_sweep")
    cfg = load_config(CONFIGS / "dos_sweep.yaml")
    table = result.report["tables"][0]
    summary = (result.out_dir / "semicircle_summary_0.csv").read_text().splitlines()
    ok = (
        cfg.d == 3 and cfg.W == [2, 3, 4] and cfg.sides_factor == 2 and cfg.samples >= 100
        and table["monotone_beyond_error"] and table["slope"] <= -1 and elapsed < 1200
    )
    devs = ", ".join(line.split(",")[2][:7] for line in summary[1:])
    verdict(7, "semicircle deviation decreasing in W", ok, f"sup deviations {devs}, log-log slope {table['slope']:.2f}, {elapsed:.0f}s")
    assert ok


# ------------------------------------------------------------------ 8


def test_criterion_08_two_point_decay(runs, verdict):
    result, elapsed = runs.get("rx_decay")
    rep = result.report
    zmax = max(rep["symmetry_max_z"].values())
    ok = rep["rates_positive"] and rep["c_ratio"] <= 2.0 and zmax <= 4.0 and elapsed < 1200
    verdict(8, "R(x) decay and <G_0x> = 0", ok, f"rate*W ratio {rep['c_ratio']:.3f}, max |<G_0x>|/se {zmax:.2f}, {elapsed:.0f}s")
    assert ok


# ------------------------------------------------------------------ 9


def test_criterion_09_derivative_identity(verdict):
    t0 = time.perf_counter()
    spec = EnsembleSpec(build_kernel(build_torus(3, [6, 6, 6]), 3, 1.0), 100, 20240609)
    chk = derivative_check(spec, [-1.0, 0.5, 1.2], eps=0.1)
    elapsed = time.perf_counter() - t0
    agree = chk.agrees(1.0)
    ok = bool(np.all(agree)) and elapsed < 600
    worst = float(np.max(np.abs(chk.difference) / chk.combined_stderr))
    verdict(9, "d rho/dE vs (1/pi) Im sum_x R", ok, f"max |difference| / combined error {worst:.2e}, {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 10


def test_criterion_10_determinism(runs, verdict):
    mismatched = []
    for name in HARNESS_CONFIGS:
        first, _ = runs.get(name)
        second, _ = runs.get(name, "repeat")
        if first.hashes != second.hashes:
            mismatched.append(name)
            continue
        for fname in first.hashes:
            if (first.out_dir / fname).read_bytes() != (second.out_dir / fname).read_bytes():
                mismatched.append(f"{name}/{fname}")
    ok = not mismatched
    verdict(10, "byte-identical repeat runs", ok, f"{len(HARNESS_CONFIGS)} configs repeated, mismatches: {mismatched or 'none'}")
    assert ok

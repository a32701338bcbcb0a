import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from bandwig.analytics import semicircle
from bandwig.harness import cli, runner
from bandwig.harness.config import ConfigError, config_from_mapping, load_config, load_schema
from bandwig.harness.reports import csv_bytes, decay_report, read_csv, semicircle_deviation
from bandwig.harness.runner import TaskOutput, derive_seed, run

SMALL_DOS = {
    "experiment": "dos-sweep",
    "d": 1,
    "W": [2, 3],
    "sides_factor": 2,
    "E_range": [0.2, 1.8, 9],
    "eps": [0.2],
    "samples": 5,
    "base_seed": 42,
}


def _write_cfg(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def _cfg(tmp_path, data, out="out"):
    return config_from_mapping(data, {"out": str(tmp_path / out)})


def _file_bytes(out: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file() and p.name != "manifest.json"}


# ------------------------------------------------------------------ configuration


def test_schema_loads_and_lists_experiments():
    schema = load_schema()
    assert schema["additionalProperties"] is False
    assert "susy-check" in schema["properties"]["experiment"]["enum"]


@pytest.mark.parametrize(
    "data, field",
    [
        ({"experiment": "nonsense"}, "experiment"),
        ({"experiment": "dos-sweep", "colour": 1}, "colour"),
        ({"experiment": "dos-sweep", "W": [0]}, "W"),
        ({**SMALL_DOS, "eps": [0.0]}, "eps"),
        ({**SMALL_DOS, "window": [0.05, 1.0]}, "window"),
        ({**SMALL_DOS, "multi_cube": True, "sides": [5]}, "sides"),
        ({"experiment": "rx-decay", "E": [1.0, 1.5], "eps": [0.1]}, "E"),
        ({"experiment": "rx-decay", "E": [1.0]}, "eps"),
        ({"experiment": "susy-check", "d": 1, "sides": [4], "eps": [0.05]}, "sides"),
        ({"experiment": "susy-check", "d": 1, "sides": [1], "eps": [0.05], "form": "shifted", "E": [0.05]}, "E"),
        ({"experiment": "susy-check", "d": 1, "sides": [1], "eps": [0.05], "quad_radius": 5}, "quad_radius"),
        ({"experiment": "susy-check", "d": 1, "sides": [1], "eps": [0.05], "mc_samples": 50}, "mc_samples"),
        ({"experiment": "saddle-table", "E": [1.9]}, "E"),
        ({"experiment": "kernel-audit", "d": 3, "sides": [64, 64, 64]}, "sides"),
    ],
)
def test_config_errors_name_the_field(data, field):
    with pytest.raises(ConfigError) as info:
        config_from_mapping(data)
    assert info.value.field.split(".")[0] == field


def test_config_hash_ignores_location(tmp_path):
    a = config_from_mapping(SMALL_DOS, {"out": "x", "workers": 1})
    b = config_from_mapping(SMALL_DOS, {"out": "y", "workers": 3})
    assert a.config_hash() == b.config_hash()
    c = config_from_mapping(SMALL_DOS, {"base_seed": 43})
    assert c.config_hash() != a.config_hash()


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_shipped_configs_validate():
    for path in sorted((Path(__file__).parents[1] / "configs").glob("*.yaml")):
        cfg = load_config(path)
        assert cfg.experiment in path.stem.replace("_", "-") or cfg.experiment == "susy-check"


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(1, 0) == derive_seed(1, 0)
    assert len({derive_seed(1, k) for k in range(50)}) == 50
    assert derive_seed(1, 0) != derive_seed(2, 0)


# ------------------------------------------------------------------ report fitters


def _dos_columns(E, dos, se=1e-6, eps=0.0):
    n = len(E)
    return {"E": np.asarray(E), "dos_mean": np.asarray(dos), "dos_stderr": np.full(n, se), "epsilon": np.full(n, eps)}


def test_semicircle_deviation_exact_input():
    E = np.linspace(0.2, 1.8, 17)
    table = semicircle_deviation({2: _dos_columns(E, semicircle(E)), 4: _dos_columns(E, semicircle(E))})
    assert [r.sup_deviation for r in table.rows] == [0.0, 0.0]
    assert math.isnan(table.slope)
    assert not table.monotone


def test_semicircle_deviation_slope_fixture():
    E = np.linspace(0.2, 1.8, 17)
    table = semicircle_deviation({2: _dos_columns(E, semicircle(E) + 0.04), 4: _dos_columns(E, semicircle(E) + 0.01)})
    assert table.slope == pytest.approx(-2.0, abs=1e-12)
    assert table.monotone
    assert table.csv().startswith(b"W,epsilon,sup_deviation,stderr,E_at_sup\n")


def test_semicircle_deviation_errors():
    E = np.linspace(0.5, 1.0, 5)
    with pytest.raises(ValueError):
        semicircle_deviation({2: _dos_columns(E, semicircle(E))})
    with pytest.raises(ValueError):
        semicircle_deviation({2: _dos_columns(E, semicircle(E)), 3: _dos_columns(E, semicircle(E))})
    full = np.linspace(0.2, 1.8, 5)
    with pytest.raises(ValueError):
        semicircle_deviation({2: _dos_columns(full, semicircle(full)), 3: _dos_columns(full, semicircle(full))}, reference="x")


def _profile(W, amp, rate, rmax=8):
    r = np.arange(0, rmax + 1, dtype=float)
    R = amp * np.exp(-rate * r)
    return {"radius": r, "reR_mean": R, "imR_mean": np.zeros_like(r), "stderr": R * 1e-3, "count": np.ones_like(r)}


def test_decay_report_unit_rate_fixture():
    table = decay_report({1: _profile(1, 1.0, 1.0), 2: _profile(2, 1.0 / 8, 0.5)})
    assert table.rows[0].c == pytest.approx(1.0, abs=1e-10)
    assert table.rows[1].c == pytest.approx(1.0, abs=1e-10)
    # amplitude ratio 8 between W=1 and W=2 is exactly W^-3
    assert table.K_ratio == pytest.approx(1.0, abs=1e-10)
    assert table.rate_stable and table.amplitude_consistent


def test_decay_report_flags_inconsistent_scaling():
    table = decay_report({1: _profile(1, 1.0, 1.0), 2: _profile(2, 1.0, 0.1)})
    assert not table.rate_stable
    assert not table.amplitude_consistent


def test_decay_report_needs_radii():
    with pytest.raises(ValueError, match="insufficient radii"):
        decay_report({1: _profile(1, 1.0, 1.0, rmax=3), 2: _profile(2, 1.0, 1.0, rmax=3)}, fit_min=2.0)


def test_csv_round_trip(tmp_path):
    data = csv_bytes(["a", "b", "ok"], [(1, 0.1, True), (2, -3e-20, False)])
    assert data == b"a,b,ok\n1,0.1,true\n2,-3e-20,false\n"
    path = tmp_path / "x.csv"
    path.write_bytes(csv_bytes(["a", "b"], [(1, 0.5), (2, 1.5)]))
    cols = read_csv(path)
    np.testing.assert_array_equal(cols["b"], [0.5, 1.5])


# ------------------------------------------------------------------ runs


def test_dos_sweep_outputs(tmp_path):
    res = run(_cfg(tmp_path, SMALL_DOS))
    files = sorted(p.name for p in res.out_dir.iterdir() if p.is_file())
    assert "dos_W2_eps0.2.csv" in files and "dos_W3_eps0.2.csv" in files
    assert "semicircle_summary_0.csv" in files and "manifest.json" in files and "report.json" in files
    manifest = json.loads((res.out_dir / "manifest.json").read_text())
    assert manifest["config"]["base_seed"] == 42
    assert [t["task_id"] for t in manifest["tasks"]] == ["dos_W2", "dos_W3"]
    assert set(manifest["outputs"]) == set(files) - {"manifest.json"}
    summary = read_csv(res.out_dir / "semicircle_summary_0.csv")
    np.testing.assert_array_equal(summary["W"], [2, 3])


def test_identical_config_gives_identical_bytes(tmp_path):
    a = run(_cfg(tmp_path, SMALL_DOS, "a"))
    b = run(_cfg(tmp_path, {**SMALL_DOS, "workers": 2}, "b"))
    assert a.hashes == b.hashes
    assert _file_bytes(a.out_dir) == _file_bytes(b.out_dir)


def test_different_seed_changes_outputs(tmp_path):
    a = run(_cfg(tmp_path, SMALL_DOS, "a"))
    b = run(_cfg(tmp_path, {**SMALL_DOS, "base_seed": 43}, "b"))
    assert a.hashes["dos_W2_eps0.2.csv"] != b.hashes["dos_W2_eps0.2.csv"]


def test_crash_and_resume(tmp_path, monkeypatch):
    reference = run(_cfg(tmp_path, SMALL_DOS, "ref"))
    build, finish = runner.EXPERIMENT_TABLE["dos-sweep"]
    executed = []

    def failing_build(cfg):
        tasks = build(cfg)
        for t in tasks:
            inner = t.fn

            def fn(inner=inner, tid=t.task_id):
                executed.append(tid)
                if tid == "dos_W3":
                    raise RuntimeError("injected failure")
                return inner()

            t.fn = fn
        return tasks

    monkeypatch.setitem(runner.EXPERIMENT_TABLE, "dos-sweep", (failing_build, finish))
    cfg_path = _write_cfg(tmp_path, SMALL_DOS)
    out = tmp_path / "crash"
    assert cli.main(["dos-sweep", "--config", str(cfg_path), "--out", str(out)]) == 3
    assert executed == ["dos_W2", "dos_W3"]
    assert (out / ".checkpoint" / "dos_W2.json").exists()
    assert not (out / "manifest.json").exists()

    def counting_build(cfg):
        tasks = build(cfg)
        for t in tasks:
            inner = t.fn
            t.fn = lambda inner=inner, tid=t.task_id: executed.append(tid) or inner()
        return tasks

    executed.clear()
    monkeypatch.setitem(runner.EXPERIMENT_TABLE, "dos-sweep", (counting_build, finish))
    assert cli.main(["dos-sweep", "--config", str(cfg_path), "--out", str(out)]) in (0, 1)
    assert executed == ["dos_W3"]
    resumed = json.loads((out / "manifest.json").read_text())
    assert resumed["outputs"] == reference.hashes


def test_tampered_output_is_recomputed(tmp_path):
    cfg = _cfg(tmp_path, SMALL_DOS)
    first = run(cfg)
    (first.out_dir / "dos_W2_eps0.2.csv").write_text("garbage\n")
    second = run(cfg)
    assert second.hashes == first.hashes


def test_output_dir_of_other_config_is_refused(tmp_path):
    run(_cfg(tmp_path, SMALL_DOS))
    with pytest.raises(ConfigError):
        run(_cfg(tmp_path, {**SMALL_DOS, "base_seed": 1}))
    run(_cfg(tmp_path, {**SMALL_DOS, "base_seed": 1}), fresh=True)


def test_saddle_table_and_kernel_audit_runs(tmp_path):
    saddle = run(_cfg(tmp_path, {"experiment": "saddle-table", "E_range": [0.11, 1.8, 12]}, "s"))
    assert saddle.passed
    assert len(read_csv(saddle.out_dir / "saddle_table.csv")["E"]) == 12
    audit = run(
        _cfg(tmp_path, {"experiment": "kernel-audit", "d": 2, "W": [1, 2], "sides": [[4, 4], [8, 8]], "masses": [1.0, 1.5]}, "k")
    )
    assert audit.passed


def test_susy_check_run(tmp_path):
    data = {
        "experiment": "susy-check",
        "d": 1,
        "W": [1],
        "sides": [1],
        "E": [0.5],
        "eps": [0.1],
        "nodes": 256,
        "quad_tol": 1e-6,
        "mc_samples": 10_000,
        "form": "both",
    }
    res = run(_cfg(tmp_path, data))
    assert res.passed, res.report
    assert res.report["failed_checks"] == {}
    assert (res.out_dir / "susy_summary.csv").exists()


def test_susy_check_reports_unconverged_quadrature(tmp_path):
    data = {"experiment": "susy-check", "d": 1, "W": [1], "sides": [1], "E": [0.5], "eps": [0.1],
            "form": "shifted", "nodes": 8, "quad_tol": 1e-10, "max_refinements": 0}
    res = run(_cfg(tmp_path, data))
    assert not res.passed
    assert "converged" in res.report["failed_checks"]["susy_L1_W1_E0.5_eps0.1"]


# ------------------------------------------------------------------ command line


def test_cli_grassmann_check_exit_zero(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, {"experiment": "grassmann-check", "base_seed": 7})
    assert cli.main(["grassmann-check", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    report = json.loads((tmp_path / "g" / "grassmann_report.json").read_text())
    assert report["passed"]
    assert json.loads(capsys.readouterr().out)["passed"] is True


def test_cli_reports_failed_checks(tmp_path, monkeypatch):
    build, _ = runner.EXPERIMENT_TABLE["grassmann-check"]
    monkeypatch.setitem(
        runner.EXPERIMENT_TABLE, "grassmann-check", (build, lambda cfg, out, s: TaskOutput({}, {"passed": False}))
    )
    cfg = _write_cfg(tmp_path, {"experiment": "grassmann-check"})
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 1


def test_cli_config_errors(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    cfg = _write_cfg(tmp_path, {"experiment": "grassmann-check"})
    assert cli.main(["dos-sweep", "--config", str(cfg)]) == 2
    assert "experiment" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(cfg), "--seed", "-1"]) == 2


def test_cli_runtime_failure_prints_replay(tmp_path, monkeypatch, capsys):
    def broken(cfg):
        return [runner.Task("only", 123, 1, lambda: 1 / 0)]

    monkeypatch.setitem(runner.EXPERIMENT_TABLE, "grassmann-check", (broken, None))
    cfg = _write_cfg(tmp_path, {"experiment": "grassmann-check"})
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 3
    assert "replay: task_id=only seed=123" in capsys.readouterr().err


def test_cli_saddle_and_schema(capsys):
    assert cli.main(["saddle", "--E", "1.0"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["m_r2"] == pytest.approx(1.5)
    assert cli.main(["saddle", "--E", "0.05"]) == 2
    capsys.readouterr()
    assert cli.main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out)["type"] == "object"

"""Run configuration: loading, schema validation and precondition checks."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import numpy as np
import yaml

from ..analytics import DEFAULT_ETA, check_window
from ..lattice import MAX_VOLUME
from ..susy import MAX_SITES

log = logging.getLogger(__name__)

EXPERIMENTS = ("dos-sweep", "rx-decay", "susy-check", "grassmann-check", "kernel-audit", "saddle-table")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


def load_schema() -> dict:
    return json.loads(resources.files("bandwig.harness").joinpath("schema.json").read_text())


@dataclass
class RunConfig:
    experiment: str
    d: int = 3
    W: list[int] = field(default_factory=lambda: [2])
    sides: list | None = None
    sides_factor: int = 2
    multi_cube: bool = False
    E: list[float] = field(default_factory=lambda: [0.5, 1.0, 1.5])
    E_range: list | None = None
    eps: list[float] | None = None
    eps_check: bool = False
    samples: int | list[int] = 100
    base_seed: int = 0
    out: str = "runs/out"
    workers: int = 1
    dos_mode: str = "resolvent"
    bin_width: float = 0.05
    window: list[float] = field(default_factory=lambda: [0.2, 1.8])
    base_points: int | None = None
    max_radius: float | None = None
    fit_min: float | None = None
    min_snr: float = 2.0
    masses: list[float] = field(default_factory=lambda: [1.0])
    export_entries: bool = False
    form: str = "raw"
    nodes: int = 32
    b_nodes: int | None = None
    quad_radius: float = 10.0
    quad_tol: float = 1e-6
    max_refinements: int = 1
    contour_offset: float = 1.5
    mc_samples: int = 0
    eta: float = DEFAULT_ETA
    nsigma: float = 4.0
    checks: bool = True

    # ------------------------------------------------------------ derived views

    @property
    def energies(self) -> np.ndarray:
        if self.E_range is not None:
            start, stop, num = self.E_range
            return np.linspace(float(start), float(stop), int(num))
        return np.asarray(self.E, dtype=float)

    def geometries(self) -> list[tuple[int, tuple[int, ...]]]:
        """``(W, sides)`` pairs to run, in sweep order."""
        if self.sides is None:
            return [(W, (self.sides_factor * W,) * self.d) for W in self.W]
        if self.sides and isinstance(self.sides[0], list):
            if len(self.W) == 1:
                return [(self.W[0], tuple(s)) for s in self.sides]
            if len(self.W) != len(self.sides):
                raise ConfigError("sides", "need one geometry per W or a single W")
            return [(W, tuple(s)) for W, s in zip(self.W, self.sides)]
        return [(W, tuple(self.sides)) for W in self.W]

    def sample_count(self, index: int) -> int:
        if isinstance(self.samples, list):
            return int(self.samples[index])
        return int(self.samples)

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        """Config echo without run-location keys, used for hashing."""
        data = self.to_dict()
        data.pop("out")
        data.pop("workers")
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _validate_schema(data: Mapping[str, Any]) -> None:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(dict(data)), key=lambda e: list(e.path))
    if errors:
        err = errors[0]
        name = ".".join(str(p) for p in err.path) or (
            err.message.split("'")[1] if "'" in err.message else "<root>"
        )
        raise ConfigError(name, err.message)


def validate(cfg: RunConfig) -> RunConfig:
    """Re-check the preconditions of every module the experiment touches."""
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {cfg.experiment!r}")
    if cfg.experiment == "grassmann-check":
        return cfg
    energies = cfg.energies
    if cfg.experiment in {"dos-sweep", "rx-decay", "kernel-audit", "susy-check"}:
        geos = cfg.geometries()
        if isinstance(cfg.samples, list) and len(cfg.samples) != len(geos):
            raise ConfigError("samples", f"got {len(cfg.samples)} counts for {len(geos)} geometries")
        for W, sides in geos:
            if len(sides) != cfg.d:
                raise ConfigError("sides", f"{list(sides)} does not have d={cfg.d} entries")
            volume = int(np.prod(sides))
            if volume > MAX_VOLUME:
                raise ConfigError("sides", f"volume {volume} exceeds the limit {MAX_VOLUME}")
            if any(s % W for s in sides):
                if cfg.multi_cube:
                    raise ConfigError("sides", f"W={W} does not divide sides {list(sides)} (multi_cube is set)")
                log.warning("sides %s are not multiples of W=%d", list(sides), W)
    if cfg.eps is not None and cfg.experiment in {"dos-sweep", "rx-decay"}:
        if any(e <= 0 for e in cfg.eps):
            raise ConfigError("eps", "broadening must be positive for resolvent estimates")
    if cfg.experiment == "dos-sweep":
        lo, hi = cfg.window
        if not lo < hi:
            raise ConfigError("window", "need lo < hi")
        for x in (lo, hi):
            try:
                check_window(x, cfg.eta)
            except ValueError as exc:
                raise ConfigError("window", str(exc)) from None
        if cfg.dos_mode == "histogram" and cfg.eps_check:
            raise ConfigError("eps_check", "broadening sensitivity needs dos_mode=resolvent")
    if cfg.experiment == "rx-decay":
        if cfg.eps is None:
            raise ConfigError("eps", "rx-decay needs an explicit broadening")
        if len(energies) != 1 or len(cfg.eps) != 1:
            raise ConfigError("E", "rx-decay takes one energy and one broadening")
        for W, sides in cfg.geometries():
            if cfg.max_radius is not None and cfg.max_radius > min(sides) / 2:
                raise ConfigError("max_radius", f"exceeds half the smallest side for W={W}")
    if cfg.experiment == "susy-check":
        if cfg.eps is None:
            raise ConfigError("eps", "susy-check needs explicit broadenings")
        for W, sides in cfg.geometries():
            if int(np.prod(sides)) > MAX_SITES:
                raise ConfigError("sides", f"quadrature is limited to {MAX_SITES} sites")
        if cfg.form in {"raw", "both"} and any(e <= 0 for e in cfg.eps):
            raise ConfigError("eps", "the raw form needs eps > 0")
        if cfg.form in {"shifted", "both"}:
            for E in energies:
                try:
                    check_window(E, cfg.eta)
                except ValueError as exc:
                    raise ConfigError("E", str(exc)) from None
        if 0 < cfg.mc_samples < 100:
            raise ConfigError("mc_samples", "use 0 (off) or at least 100 samples")
    if cfg.experiment == "saddle-table":
        for E in energies:
            try:
                check_window(E, cfg.eta)
            except ValueError as exc:
                raise ConfigError("E", str(exc)) from None
    return cfg


def config_from_mapping(data: Mapping[str, Any], overrides: Mapping[str, Any] | None = None) -> RunConfig:
    data = dict(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    _validate_schema(data)
    known = {f.name for f in fields(RunConfig)}
    return validate(RunConfig(**{k: v for k, v in data.items() if k in known}))


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a key-value mapping")
    return config_from_mapping(data, overrides)

"""Scenario configuration: YAML schema, validation and built-in scenarios."""

from __future__ import annotations

import copy
import math
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from activeloc.errors import ConfigurationError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Rates(_Strict):
    vio: float = Field(30.0, gt=0)
    detector: float = Field(15.0, gt=0)
    planner: float = Field(10.0, gt=0)
    log: float = Field(10.0, gt=0)


class DroneSpec(_Strict):
    waypoints: list[tuple[float, float, float]] = Field(min_length=1)
    speed: float = Field(1.0, gt=0)


class Formation(_Strict):
    kind: Literal["line", "grid"] = "line"
    spacing: float = Field(2.0, gt=0)
    length: float = Field(92.0, gt=0)
    altitude: float = 1.0
    speed: float = Field(0.76, gt=0)
    columns: int = Field(10, ge=1)


class PlannerSection(_Strict):
    enabled: bool = True
    trace_threshold: float = Field(0.001, gt=0)
    confidence: float = Field(0.95, gt=0, lt=1)
    fov_half_angle: float = Field(math.radians(40.0), gt=0, lt=math.pi / 2)  # margin inside the camera cone
    max_range: float = Field(3.0, gt=0)
    turn_rate: float = Field(1.0, gt=0)
    a_max: float = Field(4.0, gt=0)
    min_retrigger_interval: float = Field(2.0, ge=0)
    max_pairs_per_cycle: int = Field(3, ge=1)


class CameraSection(_Strict):
    h_fov_half: float = Field(math.radians(43.5), gt=0, lt=math.pi)
    v_fov_half: float = Field(math.radians(29.0), gt=0, lt=math.pi / 2)
    max_range: float = Field(3.0, gt=0)


class EstimatorSection(_Strict):
    max_age: int = Field(10, ge=0)
    joseph: bool = False


class LinkSection(_Strict):
    latency: Union[float, tuple[float, float]] = 0.005
    drop_prob: float = Field(0.0, ge=0, le=1)

    @field_validator("latency")
    @classmethod
    def _lat(cls, v):
        lo, hi = (v, v) if isinstance(v, (int, float)) else v
        if lo < 0 or hi < lo:
            raise ValueError("latency must be >= 0 and [lo, hi] ordered")
        return v


class GridSection(_Strict):
    origin: tuple[float, float] = (0.0, 0.0)
    resolution: float = Field(0.1, gt=0)
    size: tuple[float, float]
    obstacles: list[tuple[float, float, float, float]] = []
    outside_occupied: bool = False

    @field_validator("size")
    @classmethod
    def _size(cls, v):
        if v[0] <= 0 or v[1] <= 0:
            raise ValueError("grid size must be positive")
        return v


class SimSection(_Strict):
    gate: float = Field(1.0, gt=0)
    dwell: float = Field(0.5, ge=0)


class ScenarioConfig(_Strict):
    name: str = "custom"
    seed: int = Field(0, ge=0)
    duration: float = Field(120.0, gt=0)
    dt: float = Field(1.0 / 30.0, gt=0)
    n_drones: Optional[int] = Field(None, ge=2)
    sigma_v: float = Field(0.001, ge=0)
    sigma_d: float = Field(0.02, ge=0)
    formation: Optional[Formation] = None
    drones: Optional[list[DroneSpec]] = None
    rates: Rates = Rates()
    planner: PlannerSection = PlannerSection()
    camera: CameraSection = CameraSection()
    estimator: EstimatorSection = EstimatorSection()
    link: LinkSection = LinkSection()
    grid: Optional[GridSection] = None
    known_region: Optional[tuple[float, float, float, float]] = None
    sim: SimSection = SimSection()

    @model_validator(mode="after")
    def _check(self):
        if (self.formation is None) == (self.drones is None):
            raise ValueError("exactly one of 'formation' or 'drones' must be given")
        if self.drones is not None:
            if self.n_drones is None:
                self.n_drones = len(self.drones)
            elif self.n_drones != len(self.drones):
                raise ValueError(f"n_drones={self.n_drones} but {len(self.drones)} drones listed")
        elif self.n_drones is None:
            raise ValueError("n_drones is required with a formation")
        if self.n_drones < 2:
            raise ValueError("need at least two drones")
        for key in ("vio", "detector", "planner", "log"):
            steps = 1.0 / (getattr(self.rates, key) * self.dt)
            if steps < 1 - 1e-9 or abs(steps - round(steps)) > 1e-6:
                raise ValueError(f"rates.{key} must divide 1/dt into whole steps")
        for key in ("detector", "planner"):
            ratio = self.rates.vio / getattr(self.rates, key)
            if abs(ratio - round(ratio)) > 1e-6:
                raise ValueError(f"rates.{key} must divide rates.vio")
        if self.known_region is not None:
            x0, y0, x1, y1 = self.known_region
            if x1 <= x0 or y1 <= y0:
                raise ValueError("known_region must be [xmin, ymin, xmax, ymax]")
        return self

    def steps_per(self, key: str) -> int:
        return int(round(1.0 / (getattr(self.rates, key) * self.dt)))


def _format_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("scenario file must hold a mapping at top level")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(_format_error(exc)) from None


def load(path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return from_dict(data or {})


def dump(cfg: ScenarioConfig) -> str:
    """Effective, defaults-resolved config as YAML."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def with_overrides(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    """Copy with dotted-key overrides, e.g. ``{"planner.enabled": False}``."""
    data = copy.deepcopy(cfg.model_dump(mode="json"))
    for key, value in changes.items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if node.get(p) is None:
                node[p] = {}
            node = node[p]
        node[parts[-1]] = value
    return from_dict(data)


# built-in scenarios ----------------------------------------------------------

NOISE_GRID = {
    "sigma_v": [0.00025, 0.0005, 0.001, 0.002, 0.004],
    "sigma_d": [0.005, 0.01, 0.02, 0.04, 0.08],
}


def _line4(**extra) -> dict:
    d = {
        "name": "line4",
        "n_drones": 4,
        "formation": {"kind": "line", "spacing": 2.0, "length": 92.0, "speed": 0.76},
        "duration": 120.0,
    }
    d.update(extra)
    return d


def _scale(n: int) -> dict:
    return {
        "name": f"scale{n}",
        "n_drones": n,
        "duration": 10.0,
        "formation": {"kind": "grid", "spacing": 2.0, "length": 20.0, "speed": 0.76, "columns": 10},
    }


BUILTINS: dict[str, dict] = {
    "line4": _line4(),
    "baseline-off": _line4(name="baseline-off", planner={"enabled": False}),
    "noise-grid": _line4(name="noise-grid"),
    "occluded-pair": {
        "name": "occluded-pair",
        "n_drones": 3,
        "duration": 40.0,
        "formation": {"kind": "line", "spacing": 2.0, "length": 30.0, "speed": 0.76},
        "grid": {"origin": [-5.0, -5.0], "resolution": 0.1, "size": [45.0, 15.0],
                 "obstacles": [[-5.0, 0.9, 40.0, 1.1]]},
    },
    "short-horizon": {
        "name": "short-horizon",
        "n_drones": 2,
        "duration": 20.0,
        "formation": {"kind": "line", "spacing": 2.0, "length": 30.0, "speed": 1.0},
        "known_region": [-5.0, -5.0, 1.0, 10.0],
    },
    **{f"scale{n}": _scale(n) for n in (10, 25, 50, 100)},
}

BUILTIN_SWEEPS = {"noise-grid": NOISE_GRID}


def builtin(name: str) -> ScenarioConfig:
    if name not in BUILTINS:
        raise ConfigurationError(f"unknown built-in scenario '{name}' (choose from {sorted(BUILTINS)})")
    return from_dict(copy.deepcopy(BUILTINS[name]))


def resolve(spec: str) -> ScenarioConfig:
    """A built-in name or a path to a YAML scenario file."""
    if spec in BUILTINS:
        return builtin(spec)
    p = Path(spec)
    if not p.exists():
        raise ConfigurationError(f"no built-in scenario or file named '{spec}'")
    return load(p)

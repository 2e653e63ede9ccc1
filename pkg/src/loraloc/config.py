"""Run configuration: strict JSON schema and named presets.

A config file is a JSON object with the sections ``mission``, ``world``,
``models`` and ``estimator`` plus ``seed``, ``trials`` and ``workers``.
Every section is optional and falls back to the defaults of the matching
dataclass; unknown keys anywhere are rejected with their dotted path.
``preset`` names a shipped preset that the rest of the file overrides.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError
from .geo import GeoPoint, LocalPoint
from .multilat import EstimatorOptions
from .planner import MissionConfig, Mode, RadiusStep
from .propagation import (
    DEFAULT_ANTENNA,
    URBAN_ESP,
    AntennaModel,
    NoiseModel,
    PathLossForm,
    PathLossModel,
    fit_path_loss,
    synth_characterization,
)
from .simkit import Models, WorldConfig


@dataclass(frozen=True)
class RunConfig:
    mission: MissionConfig = field(default_factory=MissionConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    models: Models = field(default_factory=Models)
    estimator: EstimatorOptions = field(default_factory=EstimatorOptions)
    seed: int = 0
    trials: int = 200
    workers: int = 1
    name: str = field(default="custom", compare=False)


# -- field readers ------------------------------------------------------


def _expect(obj, kind, path: str, what: str):
    if not isinstance(obj, kind) or (kind is not bool and isinstance(obj, bool)):
        raise ConfigError(path, f"expected {what}, got {obj!r}")
    return obj


def _num(v, path: str) -> float:
    _expect(v, (int, float), path, "a number")
    if not math.isfinite(v):
        raise ConfigError(path, f"expected a finite number, got {v!r}")
    return float(v)


def _int(v, path: str) -> int:
    return _expect(v, int, path, "an integer")


def _opt_num(v, path: str) -> float | None:
    return None if v is None else _num(v, path)


def _check_keys(obj, allowed, path: str) -> dict:
    _expect(obj, dict, path or "<root>", "an object")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        where = f"{path}.{extra[0]}" if path else extra[0]
        raise ConfigError(where, "unknown key")
    return obj


def _local(v, path: str) -> LocalPoint:
    obj = _check_keys(v, ("east_m", "north_m", "up_m"), path)
    try:
        return LocalPoint(
            _num(obj.get("east_m", 0.0), f"{path}.east_m"),
            _num(obj.get("north_m", 0.0), f"{path}.north_m"),
            _num(obj.get("up_m", 0.0), f"{path}.up_m"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _geo(v, path: str) -> GeoPoint:
    obj = _check_keys(v, ("lat", "lon", "alt"), path)
    for k in ("lat", "lon"):
        if k not in obj:
            raise ConfigError(f"{path}.{k}", "missing key")
    try:
        return GeoPoint(
            _num(obj["lat"], f"{path}.lat"), _num(obj["lon"], f"{path}.lon"), _num(obj.get("alt", 0.0), f"{path}.alt")
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _build(cls, kwargs: dict, path: str):
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


# -- sections -----------------------------------------------------------

_MISSION_NUM = ("speed", "hover_time_per_measurement", "hover_margin", "initial_uncertainty", "altitude", "angular_span")
_MISSION_INT = ("n_drones", "measurements_per_point", "n_waypoints")


def _schedule(v, path: str) -> tuple[RadiusStep, ...]:
    _expect(v, list, path, "a list")
    out = []
    for i, step in enumerate(v):
        p = f"{path}[{i}]"
        if isinstance(step, (int, float)) and not isinstance(step, bool):
            out.append(RadiusStep(_num(step, p)))
            continue
        obj = _check_keys(step, ("center_circle_radius", "orbit_radius"), p)
        if "center_circle_radius" not in obj:
            raise ConfigError(f"{p}.center_circle_radius", "missing key")
        out.append(
            RadiusStep(
                _num(obj["center_circle_radius"], f"{p}.center_circle_radius"),
                _opt_num(obj.get("orbit_radius"), f"{p}.orbit_radius"),
            )
        )
    return tuple(out)


def _mission(obj, path: str = "mission") -> MissionConfig:
    allowed = ("mode", "radius_schedule", "estimate_window") + _MISSION_NUM + _MISSION_INT
    obj = _check_keys(obj, allowed, path)
    kw: dict[str, Any] = {}
    for k, v in obj.items():
        p = f"{path}.{k}"
        if k == "mode":
            if v not in {m.value for m in Mode}:
                raise ConfigError(p, f"expected 'discrete' or 'continuous', got {v!r}")
            kw[k] = Mode(v)
        elif k == "radius_schedule":
            kw[k] = _schedule(v, p)
        elif k == "estimate_window":
            kw[k] = _expect(v, str, p, "a string")
        elif k in _MISSION_INT:
            kw[k] = _int(v, p)
        elif k == "speed":
            kw[k] = _opt_num(v, p)
        else:
            kw[k] = _num(v, p)
    return _build(MissionConfig, kw, path)


def _gateways(v, path: str) -> tuple:
    _expect(v, list, path, "a list")
    out = []
    for i, gw in enumerate(v):
        p = f"{path}[{i}]"
        obj = _check_keys(gw, ("id", "east_m", "north_m", "up_m"), p)
        if "id" not in obj:
            raise ConfigError(f"{p}.id", "missing key")
        gid = _expect(obj["id"], str, f"{p}.id", "a string")
        out.append((gid, _local({k: obj[k] for k in obj if k != "id"}, p)))
    ids = [g for g, _ in out]
    if len(set(ids)) != len(ids):
        raise ConfigError(path, "gateway ids must be unique")
    return tuple(out)


_WORLD_NUM = ("period", "loss_prob", "noise_sigma", "network_warmup", "dt", "max_time", "noise_floor")


def _world(obj, path: str = "world") -> WorldConfig:
    allowed = _WORLD_NUM + ("beacon", "fixed_gateways", "initial_estimate", "initial_position", "launch", "origin")
    obj = _check_keys(obj, allowed, path)
    kw: dict[str, Any] = {}
    for k, v in obj.items():
        p = f"{path}.{k}"
        if k in _WORLD_NUM:
            kw[k] = _num(v, p)
        elif k in ("beacon", "initial_position", "launch"):
            kw[k] = None if v is None else _local(v, p)
        elif k == "fixed_gateways":
            kw[k] = _gateways(v, p)
        elif k == "origin":
            kw[k] = None if v is None else _geo(v, p)
        else:
            kw[k] = _expect(v, str, p, "a string")
    return _build(WorldConfig, kw, path)


def _path_loss(v, path: str) -> PathLossModel:
    if isinstance(v, str):
        if v == "urban-esp":
            return URBAN_ESP
        raise ConfigError(path, f"unknown named model {v!r}")
    allowed = ("a", "b", "form", "linear_slope", "linear_intercept", "min_distance")
    obj = _check_keys(v, allowed, path)
    kw: dict[str, Any] = {}
    for k, val in obj.items():
        p = f"{path}.{k}"
        if k == "form":
            if val not in {f.value for f in PathLossForm}:
                raise ConfigError(p, f"expected 'exponential' or 'linear', got {val!r}")
            kw[k] = PathLossForm(val)
        else:
            kw[k] = _opt_num(val, p)
    return _build(PathLossModel, kw, path)


def _antenna(v, path: str) -> AntennaModel:
    if isinstance(v, str):
        if v == "flat":
            return AntennaModel.flat()
        if v == "measured":
            return DEFAULT_ANTENNA
        raise ConfigError(path, f"unknown named antenna {v!r}")
    obj = _check_keys(v, ("a_ang", "b_ang", "theta_valid_max"), path)
    kw = {k: _num(val, f"{path}.{k}") for k, val in obj.items()}
    return _build(AntennaModel, kw, path)


def _models(obj, path: str = "models") -> Models:
    keys = ("world_path_loss", "estimator_path_loss", "world_antenna", "estimator_antenna")
    obj = _check_keys(obj, keys, path)
    kw: dict[str, Any] = {}
    for k, v in obj.items():
        p = f"{path}.{k}"
        kw[k] = _path_loss(v, p) if k.endswith("path_loss") else _antenna(v, p)
    return Models(**kw)


def _estimator(obj, path: str = "estimator") -> EstimatorOptions:
    allowed = ("tol_m", "max_iter", "grid_cells", "n_starts", "keep_low_confidence", "weights", "bbox")
    obj = _check_keys(obj, allowed, path)
    kw: dict[str, Any] = {}
    for k, v in obj.items():
        p = f"{path}.{k}"
        if k in ("max_iter", "grid_cells", "n_starts"):
            kw[k] = _int(v, p)
        elif k == "keep_low_confidence":
            kw[k] = _expect(v, bool, p, "a boolean")
        elif k == "weights":
            _expect(v, dict, p, "an object")
            kw[k] = {str(g): _num(w, f"{p}.{g}") for g, w in v.items()}
        elif k == "bbox":
            if v is not None:
                _expect(v, list, p, "a list of 4 numbers")
                if len(v) != 4:
                    raise ConfigError(p, "expected a list of 4 numbers")
                v = tuple(_num(x, f"{p}[{i}]") for i, x in enumerate(v))
            kw[k] = v
        else:
            kw[k] = _num(v, p)
    return _build(EstimatorOptions, kw, path)


def _deep_merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_config(obj: Mapping) -> RunConfig:
    """Validate a config mapping (already JSON-decoded) into a RunConfig."""
    obj = _check_keys(obj, ("preset", "mission", "world", "models", "estimator", "seed", "trials", "workers"), "")
    name = "custom"
    if "preset" in obj:
        name = _expect(obj["preset"], str, "preset", "a string")
        if name not in PRESETS:
            raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        rest = {k: v for k, v in obj.items() if k != "preset"}
        obj = _deep_merge(preset_dict(name), rest)
    mission = _mission(obj.get("mission", {}))
    world = _world(obj.get("world", {}))
    models = _models(obj.get("models", {}))
    est = _estimator(obj.get("estimator", {}))
    # the estimator solves in the beacon's horizontal plane
    est = replace(est, beacon_alt=world.beacon.up)
    seed = _int(obj.get("seed", 0), "seed")
    trials = _int(obj.get("trials", 200), "trials")
    if trials < 1:
        raise ConfigError("trials", "must be >= 1")
    workers = _int(obj.get("workers", 1), "workers")
    if workers < 1:
        raise ConfigError("workers", "must be >= 1")
    return RunConfig(mission, world, models, est, seed, trials, workers, name)


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(obj)


# -- serialization (config echo) -----------------------------------------


def _local_out(p: LocalPoint) -> dict:
    return {"east_m": p.east, "north_m": p.north, "up_m": p.up}


def config_to_dict(cfg: RunConfig) -> dict:
    """Plain-JSON form of a RunConfig; ``parse_config`` reads it back."""
    m, w, mo, e = cfg.mission, cfg.world, cfg.models, cfg.estimator

    def plm(x: PathLossModel) -> dict:
        d = {"a": x.a, "b": x.b, "form": x.form.value, "min_distance": x.min_distance}
        if x.form is PathLossForm.LINEAR:
            d.update(linear_slope=x.linear_slope, linear_intercept=x.linear_intercept)
        return d

    def ant(x: AntennaModel) -> dict:
        return {"a_ang": x.a_ang, "b_ang": x.b_ang, "theta_valid_max": x.theta_valid_max}

    return {
        "mission": {
            "mode": m.mode.value,
            "n_drones": m.n_drones,
            "radius_schedule": [
                {"center_circle_radius": s.center_circle_radius, "orbit_radius": s.orbit_radius}
                for s in m.radius_schedule
            ],
            "measurements_per_point": m.measurements_per_point,
            "speed": m.speed,
            "hover_time_per_measurement": m.hover_time_per_measurement,
            "hover_margin": m.hover_margin,
            "initial_uncertainty": m.initial_uncertainty,
            "altitude": m.altitude,
            "angular_span": m.angular_span,
            "n_waypoints": m.n_waypoints,
            "estimate_window": m.estimate_window,
        },
        "world": {
            "beacon": _local_out(w.beacon),
            "period": w.period,
            "loss_prob": w.loss_prob,
            "noise_sigma": w.noise_sigma,
            "fixed_gateways": [{"id": g, **_local_out(p)} for g, p in w.fixed_gateways],
            "initial_estimate": w.initial_estimate,
            "initial_position": None if w.initial_position is None else _local_out(w.initial_position),
            "network_warmup": w.network_warmup,
            "launch": None if w.launch is None else _local_out(w.launch),
            "dt": w.dt,
            "max_time": w.max_time,
            "noise_floor": w.noise_floor,
            "origin": None if w.origin is None else {"lat": w.origin.lat, "lon": w.origin.lon, "alt": w.origin.alt},
        },
        "models": {
            "world_path_loss": plm(mo.world_path_loss),
            "estimator_path_loss": plm(mo.estimator_path_loss),
            "world_antenna": ant(mo.world_antenna),
            "estimator_antenna": ant(mo.estimator_antenna),
        },
        "estimator": {
            "tol_m": e.tol_m,
            "max_iter": e.max_iter,
            "grid_cells": e.grid_cells,
            "n_starts": e.n_starts,
            "keep_low_confidence": e.keep_low_confidence,
            "weights": dict(e.weights),
            "bbox": None if e.bbox is None else list(e.bbox),
        },
        "seed": cfg.seed,
        "trials": cfg.trials,
        "workers": cfg.workers,
    }


# -- presets ------------------------------------------------------------

# Simulated missions use an isotropic receive antenna; see README.
_FLAT = {"world_antenna": "flat", "estimator_antenna": "flat"}

# "Open field" environment for the model-mismatch study: slower attenuation
# than the urban characterization model.
OPEN_FIELD = PathLossModel(a=0.35, b=-0.08)
MISMATCH_FIT_SEED = 20240611
_FIT_DISTANCES = tuple(float(d) for d in range(10, 151, 10))


@lru_cache(maxsize=None)
def mismatch_models() -> tuple[PathLossModel, PathLossModel]:
    """Estimator models fitted on synthetic campaigns: (urban fit, open-field refit).

    Both campaigns use the characterization geometry (10-150 m, 10 samples per
    distance, 2.5 dB shadowing) from one fixed seed, so the fits are stable.
    """
    rng = np.random.default_rng(MISMATCH_FIT_SEED)
    flat = AntennaModel.flat()
    urban = synth_characterization(URBAN_ESP, NoiseModel(2.5), rng, _FIT_DISTANCES, 10, flat)
    field_ = synth_characterization(OPEN_FIELD, NoiseModel(2.5), rng, _FIT_DISTANCES, 10, flat)
    return fit_path_loss(urban, ant=flat), fit_path_loss(field_, ant=flat)


def _plm_dict(x: PathLossModel) -> dict:
    return {"a": x.a, "b": x.b}


def _discrete(n_drones: int, radii, m: int = 2) -> dict:
    return {
        "mission": {
            "mode": "discrete",
            "n_drones": n_drones,
            "radius_schedule": list(radii),
            "measurements_per_point": m,
            "hover_time_per_measurement": 20.0,
        },
        "models": dict(_FLAT),
    }


_TRADEOFF_RADII = (150.0, 75.0, 37.5)


def _preset_table() -> dict[str, dict]:
    p: dict[str, dict] = {
        "discrete-1drone": _discrete(1, (150.0, 75.0)),
        "continuous-1drone": {
            "mission": {"mode": "continuous", "n_drones": 1, "radius_schedule": [120.0, 60.0]},
            "models": dict(_FLAT),
        },
        "discrete-3drone": _discrete(3, (150.0, 75.0)),
        "continuous-3drone": {
            "mission": {
                "mode": "continuous",
                "n_drones": 3,
                "radius_schedule": [
                    {"center_circle_radius": 80.0, "orbit_radius": 70.0},
                    {"center_circle_radius": 50.0, "orbit_radius": 30.0},
                ],
            },
            "models": dict(_FLAT),
        },
    }
    for it, m in TRADEOFF_CELLS:
        p[f"tradeoff-i{it}-m{m}"] = _discrete(3, _TRADEOFF_RADII[:it], m)
    # Drone receivers only: the fixed gateways sit kilometres away, far outside
    # the 10-150 m range either model was fitted on.
    for name in ("mismatch-urban-model", "mismatch-refit"):
        p[name] = {
            **_discrete(1, (150.0, 75.0)),
            "world": {"fixed_gateways": []},
        }
        p[name]["models"]["world_path_loss"] = _plm_dict(OPEN_FIELD)
    return p


TRADEOFF_CELLS = ((2, 2), (2, 4), (3, 2), (3, 4))
PRESETS = _preset_table()
GRIDS = {
    "tradeoff": tuple(f"tradeoff-i{i}-m{m}" for i, m in TRADEOFF_CELLS),
    "mismatch": ("mismatch-urban-model", "mismatch-refit"),
}


def preset_dict(name: str) -> dict:
    d = copy.deepcopy(PRESETS[name])
    if name.startswith("mismatch-"):
        urban, refit = mismatch_models()
        est = urban if name == "mismatch-urban-model" else refit
        d["models"]["estimator_path_loss"] = _plm_dict(est)
    return d


def preset(name: str, **overrides) -> RunConfig:
    """RunConfig for a named preset, with optional top-level section overrides."""
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return parse_config({"preset": name, **overrides})


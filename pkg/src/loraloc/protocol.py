"""Newline-delimited JSON messages exchanged between gateways, drones and
the coordinator.

Every line is one JSON object with a ``type`` field. Positions are encoded
either geodetically as ``{"lat", "lon", "alt"}`` or in the local frame as
``{"east_m", "north_m", "up_m"}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterator, Union

from .errors import ParseError
from .geo import GeoPoint, LocalPoint
from .planner import DroneTask, Mode, OrbitSpec

Position = Union[GeoPoint, LocalPoint]

DRONE_STATUSES = ("waypoint_reached", "measurement_complete", "orbit_complete")


@dataclass(frozen=True)
class UplinkReport:
    msg_id: int
    gateway_id: str
    gateway_pos: Position
    timestamp: float
    rssi: float
    snr: float


@dataclass(frozen=True)
class WaypointCommand:
    drone_id: str
    mode: Mode
    iteration: int
    waypoints: tuple[LocalPoint, ...] = ()
    orbit: OrbitSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        if not self.waypoints and self.orbit is None:
            raise ValueError("waypoint command needs waypoints or an orbit")

    @classmethod
    def from_task(cls, task: DroneTask, mode: Mode, iteration: int) -> WaypointCommand:
        return cls(task.drone_id, mode, iteration, task.waypoints, task.orbit)


@dataclass(frozen=True)
class DroneStatus:
    drone_id: str
    status: str
    iteration: int
    position: Position
    timestamp: float
    waypoint_index: int | None = None

    def __post_init__(self):
        if self.status not in DRONE_STATUSES:
            raise ValueError(f"unknown drone status {self.status!r}")


@dataclass(frozen=True)
class EstimateMessage:
    iteration: int
    position: Position
    rms_residual: float
    n_points: int
    converged: bool
    timestamp: float


@dataclass(frozen=True)
class DoneMessage:
    position: Position
    rms_residual: float
    n_points: int
    iterations: int
    flight_time: float


Message = Union[UplinkReport, WaypointCommand, DroneStatus, EstimateMessage, DoneMessage]

_TYPE_OF = {
    UplinkReport: "uplink",
    WaypointCommand: "waypoint_cmd",
    DroneStatus: "drone_status",
    EstimateMessage: "estimate",
    DoneMessage: "done",
}


def _pos_out(p: Position) -> dict:
    if isinstance(p, GeoPoint):
        return {"lat": p.lat, "lon": p.lon, "alt": p.alt}
    return {"east_m": p.east, "north_m": p.north, "up_m": p.up}


def _orbit_out(o: OrbitSpec) -> dict:
    return {
        "center": _pos_out(o.center),
        "radius_m": o.radius,
        "entry_bearing_deg": o.entry_bearing,
        "direction": o.direction,
        "angular_span_deg": o.angular_span,
    }


def to_dict(msg: Message) -> dict:
    t = _TYPE_OF.get(type(msg))
    if t is None:
        raise TypeError(f"not a wire message: {type(msg).__name__}")
    if isinstance(msg, UplinkReport):
        body = {
            "msg_id": msg.msg_id,
            "gateway_id": msg.gateway_id,
            "gateway_pos": _pos_out(msg.gateway_pos),
            "timestamp": msg.timestamp,
            "rssi": msg.rssi,
            "snr": msg.snr,
        }
    elif isinstance(msg, WaypointCommand):
        body = {
            "drone_id": msg.drone_id,
            "mode": msg.mode.value,
            "iteration": msg.iteration,
            "waypoints": [_pos_out(w) for w in msg.waypoints],
            "orbit": None if msg.orbit is None else _orbit_out(msg.orbit),
        }
    elif isinstance(msg, DroneStatus):
        body = {
            "drone_id": msg.drone_id,
            "status": msg.status,
            "iteration": msg.iteration,
            "waypoint_index": msg.waypoint_index,
            "position": _pos_out(msg.position),
            "timestamp": msg.timestamp,
        }
    elif isinstance(msg, EstimateMessage):
        body = {
            "iteration": msg.iteration,
            "position": _pos_out(msg.position),
            "rms_residual": msg.rms_residual,
            "n_points": msg.n_points,
            "converged": msg.converged,
            "timestamp": msg.timestamp,
        }
    else:
        body = {
            "position": _pos_out(msg.position),
            "rms_residual": msg.rms_residual,
            "n_points": msg.n_points,
            "iterations": msg.iterations,
            "flight_time": msg.flight_time,
        }
    return {"type": t, **body}


def serialize(msg: Message) -> str:
    """One JSON object, no trailing newline."""
    return json.dumps(to_dict(msg), allow_nan=False, separators=(",", ":"))


class _Reader:
    """Field access with line/field diagnostics."""

    def __init__(self, obj: dict, line: int | None, prefix: str = ""):
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object", line, prefix.rstrip(".") or None)
        self.obj = obj
        self.line = line
        self.prefix = prefix

    def _raw(self, key: str, optional: bool = False):
        if key not in self.obj:
            if optional:
                return None
            raise ParseError("missing field", self.line, self.prefix + key)
        return self.obj[key]

    def num(self, key: str) -> float:
        v = self._raw(key)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ParseError(f"expected a finite number, got {v!r}", self.line, self.prefix + key)
        return float(v)

    def opt_num(self, key: str) -> float | None:
        v = self._raw(key, optional=True)
        return None if v is None else self.num(key)

    def int(self, key: str, optional: bool = False) -> int | None:
        v = self._raw(key, optional)
        if v is None and optional:
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            raise ParseError(f"expected an integer, got {v!r}", self.line, self.prefix + key)
        return v

    def str(self, key: str) -> str:
        v = self._raw(key)
        if not isinstance(v, str):
            raise ParseError(f"expected a string, got {v!r}", self.line, self.prefix + key)
        return v

    def bool(self, key: str) -> bool:
        v = self._raw(key)
        if not isinstance(v, bool):
            raise ParseError(f"expected a boolean, got {v!r}", self.line, self.prefix + key)
        return v

    def sub(self, key: str) -> _Reader:
        return _Reader(self._raw(key), self.line, f"{self.prefix}{key}.")

    def pos(self, key: str) -> Position:
        r = self.sub(key)
        keys = set(r.obj)
        try:
            if keys == {"lat", "lon", "alt"}:
                return GeoPoint(r.num("lat"), r.num("lon"), r.num("alt"))
            if keys == {"east_m", "north_m", "up_m"}:
                return LocalPoint(r.num("east_m"), r.num("north_m"), r.num("up_m"))
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc), self.line, self.prefix + key) from None
        raise ParseError(
            f"position needs lat/lon/alt or east_m/north_m/up_m, got {sorted(keys)}",
            self.line,
            self.prefix + key,
        )

    def local(self, key: str) -> LocalPoint:
        p = self.pos(key)
        if not isinstance(p, LocalPoint):
            raise ParseError("expected a local-frame position", self.line, self.prefix + key)
        return p


def from_dict(obj: dict, line: int | None = None) -> Message:
    r = _Reader(obj, line)
    t = r.str("type")
    try:
        if t == "uplink":
            return UplinkReport(
                msg_id=r.int("msg_id"),
                gateway_id=r.str("gateway_id"),
                gateway_pos=r.pos("gateway_pos"),
                timestamp=r.num("timestamp"),
                rssi=r.num("rssi"),
                snr=r.num("snr"),
            )
        if t == "waypoint_cmd":
            raw_wps = r._raw("waypoints")
            if not isinstance(raw_wps, list):
                raise ParseError("expected a list", line, "waypoints")
            wps = tuple(
                _Reader({"p": w}, line, f"waypoints[{i}].").local("p") for i, w in enumerate(raw_wps)
            )
            orbit = None
            if r._raw("orbit", optional=True) is not None:
                o = r.sub("orbit")
                direction = o.int("direction")
                if direction not in (1, -1):
                    raise ParseError("direction must be 1 or -1", line, "orbit.direction")
                orbit = OrbitSpec(
                    center=o.local("center"),
                    radius=o.num("radius_m"),
                    entry_bearing=o.opt_num("entry_bearing_deg"),
                    direction=direction,
                    angular_span=o.num("angular_span_deg"),
                )
            mode = r.str("mode")
            if mode not in {m.value for m in Mode}:
                raise ParseError(f"unknown mode {mode!r}", line, "mode")
            return WaypointCommand(r.str("drone_id"), Mode(mode), r.int("iteration"), wps, orbit)
        if t == "drone_status":
            status = r.str("status")
            if status not in DRONE_STATUSES:
                raise ParseError(f"unknown status {status!r}", line, "status")
            return DroneStatus(
                drone_id=r.str("drone_id"),
                status=status,
                iteration=r.int("iteration"),
                position=r.pos("position"),
                timestamp=r.num("timestamp"),
                waypoint_index=r.int("waypoint_index", optional=True),
            )
        if t == "estimate":
            return EstimateMessage(
                iteration=r.int("iteration"),
                position=r.pos("position"),
                rms_residual=r.num("rms_residual"),
                n_points=r.int("n_points"),
                converged=r.bool("converged"),
                timestamp=r.num("timestamp"),
            )
        if t == "done":
            return DoneMessage(
                position=r.pos("position"),
                rms_residual=r.num("rms_residual"),
                n_points=r.int("n_points"),
                iterations=r.int("iterations"),
                flight_time=r.num("flight_time"),
            )
    except ParseError:
        raise
    except ValueError as exc:
        raise ParseError(str(exc), line) from None
    raise ParseError(f"unknown message type {t!r}", line, "type")


def parse(line: str, line_no: int | None = None) -> Message:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg} at column {exc.colno}", line_no) from None
    return from_dict(obj, line_no)


def write_message(stream: IO[str], msg: Message) -> None:
    stream.write(serialize(msg) + "\n")


def read_messages(stream: IO[str]) -> Iterator[Message]:
    """Parse messages from a text stream, skipping blank lines."""
    for n, line in enumerate(stream, start=1):
        if line.strip():
            yield parse(line, n)

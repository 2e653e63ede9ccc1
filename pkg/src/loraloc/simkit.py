"""Deterministic fixed-timestep world simulator.

Point-mass drones fly straight lines to waypoints or orbit at constant
speed. The beacon emits every ``period`` seconds; each listening receiver
independently loses the message with probability ``loss_prob`` and
otherwise reports RSSI/SNR generated through the propagation model. All
randomness comes from one seeded ``numpy.random.Generator`` so a
(config, seed) pair fixes the whole run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .coordinator import Coordinator
from .errors import LocalizationError, MissionFailure
from .geo import GeoPoint, LocalPoint, from_local
from .multilat import Datapoint, EstimatorOptions, PositionEstimate
from .planner import MissionConfig, Mode
from .propagation import (
    DEFAULT_ANTENNA,
    URBAN_ESP,
    AntennaModel,
    NoiseModel,
    PathLossModel,
    elevation_deg,
    rssi_from_esp_snr,
    sample_esp,
)
from .protocol import DoneMessage, DroneStatus, EstimateMessage, UplinkReport, WaypointCommand

_EPS = 1e-9

IDLE, TRANSIT, HOVER, APPROACH, ORBIT = range(5)

DEFAULT_GATEWAYS = (
    ("gw-north", LocalPoint(0.0, 1000.0, 30.0)),
    ("gw-southeast", LocalPoint(2000.0 * math.sin(math.radians(120)), 2000.0 * math.cos(math.radians(120)), 30.0)),
    ("gw-southwest", LocalPoint(3000.0 * math.sin(math.radians(240)), 3000.0 * math.cos(math.radians(240)), 30.0)),
)


@dataclass
class Beacon:
    """Periodic emitter; the k-th message goes out at ``phase + k * period``."""

    true_position: LocalPoint
    period: float = 4.0
    phase: float = 0.0
    emitted: int = 0
    next_emit: float = field(init=False)

    def __post_init__(self):
        self.next_emit = self.phase + self.emitted * self.period


@dataclass
class FixedGateway:
    id: str
    position: LocalPoint


class Drone:
    """Kinematic point mass executing one waypoint command at a time."""

    def __init__(self, drone_id: str, position: LocalPoint, speed: float, listen_always: bool):
        self.id = drone_id
        self.x, self.y, self.z = position.east, position.north, position.up
        self.speed = speed
        self.listen_always = listen_always
        self.state = IDLE
        self.iteration = 0
        self.waypoints: list[tuple[float, float, float]] = []
        self.wp_index = 0
        self.hover_time = 0.0
        self.hover_until = 0.0
        self.target = (self.x, self.y, self.z)
        self.orbit = None
        self.orbit_bearing = 0.0
        self.orbit_done = 0.0
        self.orbit_span = 0.0

    @property
    def position(self) -> LocalPoint:
        return LocalPoint(self.x, self.y, self.z)

    @property
    def listening(self) -> bool:
        return self.listen_always or self.state == HOVER

    def command(self, cmd: WaypointCommand, hover_time: float) -> None:
        self.iteration = cmd.iteration
        self.hover_time = hover_time
        if cmd.orbit is None:
            self.orbit = None
            self.waypoints = [w.as_tuple() for w in cmd.waypoints]
            self.wp_index = 0
            self.target = self.waypoints[0]
            self.state = TRANSIT
            return
        o = cmd.orbit
        self.orbit = o
        if o.entry_bearing is not None:
            b = o.entry_bearing
        elif math.hypot(self.x - o.center.east, self.y - o.center.north) < _EPS:
            b = 0.0
        else:
            b = math.degrees(math.atan2(self.x - o.center.east, self.y - o.center.north)) % 360.0
        self.orbit_bearing = math.radians(b)
        self.orbit_done = 0.0
        self.orbit_span = math.radians(o.angular_span)
        entry = o.point_at(b)
        self.target = entry.as_tuple()
        self.state = APPROACH

    def _status(self, status: str, t: float, index: int | None) -> DroneStatus:
        return DroneStatus(self.id, status, self.iteration, self.position, t, index)

    def advance(self, dt: float, t1: float, emit: Callable) -> None:
        st = self.state
        if st == TRANSIT or st == APPROACH:
            tx, ty, tz = self.target
            dx, dy, dz = tx - self.x, ty - self.y, tz - self.z
            dist = math.sqrt(dx * dx + dy * dy + dz * dz)
            reach = self.speed * dt
            if dist <= reach:
                self.x, self.y, self.z = tx, ty, tz
                if st == TRANSIT:
                    self.state = HOVER
                    self.hover_until = t1 + self.hover_time
                    emit(self._status("waypoint_reached", t1, self.wp_index))
                else:
                    self.state = ORBIT
            else:
                f = reach / dist
                self.x += dx * f
                self.y += dy * f
                self.z += dz * f
        elif st == HOVER:
            if t1 >= self.hover_until - _EPS:
                emit(self._status("measurement_complete", t1, self.wp_index))
                self.wp_index += 1
                if self.wp_index < len(self.waypoints):
                    self.target = self.waypoints[self.wp_index]
                    self.state = TRANSIT
                else:
                    self.state = IDLE
        elif st == ORBIT:
            o = self.orbit
            dtheta = self.speed * dt / o.radius
            remaining = self.orbit_span - self.orbit_done
            finished = dtheta >= remaining - 1e-12
            if finished:
                dtheta = remaining
            self.orbit_done += dtheta
            self.orbit_bearing += o.direction * dtheta
            self.x = o.center.east + o.radius * math.sin(self.orbit_bearing)
            self.y = o.center.north + o.radius * math.cos(self.orbit_bearing)
            self.z = o.center.up
            if finished:
                self.state = IDLE
                emit(self._status("orbit_complete", t1, None))


@dataclass
class World:
    beacon: Beacon
    drones: list[Drone]
    fixed_gateways: list[FixedGateway]
    rng: np.random.Generator
    loss_prob: float = 1.0 / 3.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    plm: PathLossModel = URBAN_ESP
    ant: AntennaModel = DEFAULT_ANTENNA
    dt: float = 0.1
    noise_floor: float = -117.0
    snr_max: float = 10.0
    clock: float = 0.0
    record: bool = False
    log: list = field(default_factory=list)
    trajectory: dict = field(default_factory=dict)
    datapoints: list = field(default_factory=list)
    outbox: list = field(default_factory=list)
    _steps: int = 0

    def drain(self) -> list:
        out, self.outbox = self.outbox, []
        return out

    def receivers(self):
        for gw in self.fixed_gateways:
            yield gw.id, gw.position
        for d in self.drones:
            if d.listening:
                yield d.id, d.position


def _receive(world: World, t: float, msg_id: int) -> None:
    beacon = world.beacon.true_position
    rng = world.rng
    for rid, pos in world.receivers():
        if rng.random() < world.loss_prob:
            if world.record:
                world.log.append({"t": t, "event": "loss", "msg_id": msg_id, "receiver": rid})
            continue
        dist = beacon.distance(pos)
        theta = elevation_deg(beacon, pos)
        esp = sample_esp(dist, theta, world.plm, world.ant, world.noise, rng)
        low = theta > world.ant.theta_valid_max
        world.datapoints.append(Datapoint(pos, esp, theta, rid, msg_id, low))
        snr = min(max(esp - world.noise_floor, -20.0), world.snr_max)
        rssi = rssi_from_esp_snr(esp, snr)
        world.outbox.append(UplinkReport(msg_id, rid, pos, t, rssi, snr))
        if world.record:
            world.log.append(
                {"t": t, "event": "reception", "msg_id": msg_id, "receiver": rid, "esp": esp,
                 "rssi": rssi, "snr": snr}
            )


def step(world: World, dt: float | None = None) -> World:
    """Advance the world by ``dt`` seconds (default ``world.dt``).

    Drones move first; beacon emissions falling in the step are then
    received at the drones' end-of-step positions.
    """
    dt = world.dt if dt is None else dt
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    world._steps += 1
    # rounding keeps the clock on the dt lattice instead of accumulating drift
    t1 = round(world.clock + dt, 9)
    emit = world.outbox.append
    for d in world.drones:
        x0, y0, z0 = d.x, d.y, d.z
        d.advance(dt, t1, emit)
        moved = math.sqrt((d.x - x0) ** 2 + (d.y - y0) ** 2 + (d.z - z0) ** 2)
        if moved > d.speed * dt + 1e-6:
            raise RuntimeError(f"drone {d.id} moved {moved:.3f} m in one {dt} s step")
    if world.record:
        for m in world.outbox:
            if isinstance(m, DroneStatus):
                world.log.append(
                    {"t": m.timestamp, "event": m.status, "drone": m.drone_id,
                     "iteration": m.iteration, "waypoint_index": m.waypoint_index}
                )
    world.clock = t1
    b = world.beacon
    while b.next_emit <= t1 + _EPS:
        t_emit = b.next_emit
        if world.record:
            world.log.append({"t": t_emit, "event": "emission", "msg_id": b.emitted})
        _receive(world, t_emit, b.emitted)
        b.emitted += 1
        b.next_emit = b.phase + b.emitted * b.period
    if world.record and world._steps % max(1, round(1.0 / dt)) == 0:
        for d in world.drones:
            world.trajectory.setdefault(d.id, []).append((t1, d.x, d.y, d.z))
    return world


# -- mission runner -----------------------------------------------------


@dataclass(frozen=True)
class Models:
    world_path_loss: PathLossModel = URBAN_ESP
    estimator_path_loss: PathLossModel = URBAN_ESP
    world_antenna: AntennaModel = DEFAULT_ANTENNA
    estimator_antenna: AntennaModel = DEFAULT_ANTENNA


@dataclass(frozen=True)
class WorldConfig:
    beacon: LocalPoint = LocalPoint(0.0, 0.0, 0.0)
    period: float = 4.0
    loss_prob: float = 1.0 / 3.0
    noise_sigma: float = 2.5
    fixed_gateways: tuple = DEFAULT_GATEWAYS
    initial_estimate: str = "injected"  # injected | explicit | network
    initial_position: LocalPoint | None = None
    network_warmup: float = 120.0
    launch: LocalPoint | None = None
    dt: float = 0.1
    max_time: float = 7200.0
    noise_floor: float = -117.0
    origin: GeoPoint | None = None

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be in [0, 1]")
        if not self.period > 0 or not self.dt > 0:
            raise ValueError("period and dt must be positive")
        if self.initial_estimate not in ("injected", "explicit", "network"):
            raise ValueError(f"unknown initial_estimate mode {self.initial_estimate!r}")
        if self.initial_estimate == "explicit" and self.initial_position is None:
            raise ValueError("explicit initial estimate needs initial_position")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class MissionResult:
    final_estimate: PositionEstimate
    error: float
    flight_time: float
    n_datapoints: int
    trace: list
    truth: LocalPoint
    initial_estimate: LocalPoint
    events: list | None = None
    trajectory: dict | None = None
    messages: list | None = None

    def summary(self) -> dict:
        return {
            "error_m": self.error,
            "flight_time_s": self.flight_time,
            "n_datapoints": self.n_datapoints,
            "final_estimate": self.final_estimate.to_dict(),
            "truth": {"east_m": self.truth.east, "north_m": self.truth.north, "up_m": self.truth.up},
            "initial_estimate": {
                "east_m": self.initial_estimate.east,
                "north_m": self.initial_estimate.north,
            },
            "iterations": self.trace,
        }


def build_world(mission: MissionConfig, wc: WorldConfig, models: Models, seed: int) -> World:
    rng = np.random.default_rng(seed)
    listen_always = mission.mode is Mode.CONTINUOUS
    drones = [
        Drone(f"drone{i}", LocalPoint(0.0, 0.0, mission.altitude), mission.drone_speed, listen_always)
        for i in range(mission.n_drones)
    ]
    return World(
        beacon=Beacon(wc.beacon, wc.period),
        drones=drones,
        fixed_gateways=[FixedGateway(gid, pos) for gid, pos in wc.fixed_gateways],
        rng=rng,
        loss_prob=wc.loss_prob,
        noise=NoiseModel(wc.noise_sigma),
        plm=models.world_path_loss,
        ant=models.world_antenna,
        dt=wc.dt,
        noise_floor=wc.noise_floor,
    )


def draw_disc_offset(rng: np.random.Generator, radius: float) -> tuple[float, float]:
    """Uniform point in a disc of the given radius."""
    r = radius * math.sqrt(rng.random())
    a = 2.0 * math.pi * rng.random()
    return r * math.cos(a), r * math.sin(a)


def _initial_estimate(world: World, coord: Coordinator, mission: MissionConfig, wc: WorldConfig) -> LocalPoint:
    truth = wc.beacon
    if wc.initial_estimate == "explicit":
        p = wc.initial_position
        return LocalPoint(p.east, p.north, truth.up)
    if wc.initial_estimate == "injected":
        de, dn = draw_disc_offset(world.rng, mission.initial_uncertainty)
        return LocalPoint(truth.east + de, truth.north + dn, truth.up)
    # network: multilaterate on the fixed gateways alone before launch
    while world.clock < wc.network_warmup - _EPS:
        step(world)
        for m in world.drain():
            coord.handle(m)
    est = coord.request_estimate()
    return est.position


def run_mission(
    mission: MissionConfig,
    world_cfg: WorldConfig | None = None,
    models: Models | None = None,
    seed: int = 0,
    est_opts: EstimatorOptions | None = None,
    record: bool = False,
) -> MissionResult:
    """Fly one full search mission and return its outcome."""
    wc = world_cfg or WorldConfig()
    models = models or Models()
    est_opts = est_opts or EstimatorOptions(beacon_alt=wc.beacon.up)
    world = build_world(mission, wc, models, seed)
    world.record = record
    coord = Coordinator(
        mission, models.estimator_path_loss, models.estimator_antenna, est_opts, wc.origin,
        [d.id for d in world.drones],
    )
    messages: list | None = [] if record else None
    try:
        init = _initial_estimate(world, coord, mission, wc)
    except LocalizationError as exc:
        raise MissionFailure(f"network estimate failed: {exc}", {"seed": seed}) from exc

    launch = wc.launch or LocalPoint(init.east, init.north, mission.altitude)
    for d in world.drones:
        d.x, d.y, d.z = launch.east, launch.north, launch.up
    t0 = world.clock
    trace: list[dict] = []
    centers = [init]

    def apply(cmds) -> None:
        by_id = {d.id: d for d in world.drones}
        for c in cmds:
            if isinstance(c, WaypointCommand):
                by_id[c.drone_id].command(c, mission.hover_time)
                if record:
                    world.log.append({"t": world.clock, "event": "waypoint_cmd", "drone": c.drone_id,
                                      "iteration": c.iteration})

    first = coord.start(init, [d.position for d in world.drones], t=t0)
    if messages is not None:
        messages.extend(first)
    apply(first)

    done: DoneMessage | None = None
    while done is None:
        if world.clock - t0 > wc.max_time:
            raise MissionFailure(
                "mission exceeded max_time",
                {"seed": seed, "phase": coord.state.phase.value, "iteration": coord.state.iteration},
            )
        step(world)
        for msg in world.drain():
            if messages is not None:
                messages.append(msg)
            try:
                replies = coord.handle(msg)
            except LocalizationError as exc:
                raise MissionFailure(
                    f"estimation failed: {exc}",
                    {
                        "seed": seed,
                        "iteration": coord.state.iteration,
                        "n_datapoints": len(coord.store),
                        "time": world.clock - t0,
                    },
                ) from exc
            if messages is not None:
                messages.extend(replies)
            for r in replies:
                if isinstance(r, EstimateMessage):
                    c = centers[-1]
                    trace.append(
                        {
                            "iteration": r.iteration,
                            "center": [c.east, c.north],
                            "radius_m": mission.radius_schedule[r.iteration].center_circle_radius,
                            "estimate": [r.position.east, r.position.north],
                            "error_m": r.position.horizontal_distance(wc.beacon),
                            "time_s": r.timestamp - t0,
                            "n_points": r.n_points,
                        }
                    )
                    centers.append(r.position)
                    if record:
                        world.log.append({"t": r.timestamp, "event": "estimate", "iteration": r.iteration,
                                          "east_m": r.position.east, "north_m": r.position.north})
                elif isinstance(r, DoneMessage):
                    done = r
            apply(replies)
            if done is not None:
                break

    final = coord.final
    return MissionResult(
        final_estimate=final,
        error=final.position.horizontal_distance(wc.beacon),
        flight_time=world.clock - t0,
        n_datapoints=len(coord.store),
        trace=trace,
        truth=wc.beacon,
        initial_estimate=init,
        events=world.log if record else None,
        trajectory=world.trajectory if record else None,
        messages=messages,
    )


# -- exports ------------------------------------------------------------


def write_events_ndjson(path: str | Path, events: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for e in events:
            fh.write(json.dumps(e, separators=(",", ":")) + "\n")


def trajectory_geojson(result: MissionResult, origin: GeoPoint) -> dict:
    """FeatureCollection: one LineString per drone plus truth/estimate points."""

    def lonlat(e: float, n: float, u: float = 0.0) -> list[float]:
        g = from_local(LocalPoint(e, n, u), origin)
        return [g.lon, g.lat, g.alt]

    features = []
    for drone_id, pts in sorted((result.trajectory or {}).items()):
        features.append(
            {
                "type": "Feature",
                "properties": {"kind": "trajectory", "drone": drone_id},
                "geometry": {"type": "LineString", "coordinates": [lonlat(x, y, z) for _, x, y, z in pts]},
            }
        )
    t = result.truth
    features.append(
        {
            "type": "Feature",
            "properties": {"kind": "truth"},
            "geometry": {"type": "Point", "coordinates": lonlat(t.east, t.north, t.up)},
        }
    )
    i0 = result.initial_estimate
    features.append(
        {
            "type": "Feature",
            "properties": {"kind": "network_estimate"},
            "geometry": {"type": "Point", "coordinates": lonlat(i0.east, i0.north)},
        }
    )
    for row in result.trace:
        features.append(
            {
                "type": "Feature",
                "properties": {"kind": "estimate", "iteration": row["iteration"], "error_m": row["error_m"]},
                "geometry": {"type": "Point", "coordinates": lonlat(*row["estimate"])},
            }
        )
    return {"type": "FeatureCollection", "features": features}

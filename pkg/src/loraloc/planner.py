"""Greedy shrinking-circle search planner.

Each iteration places measuring positions on a circle around the latest
estimate; the circle shrinks from one iteration to the next. Bearings are
compass bearings in degrees (0 = north, clockwise).
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from .errors import StateMachineError
from .geo import LocalPoint
from .multilat import Datapoint, PositionEstimate


class Mode(str, enum.Enum):
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


class Phase(str, enum.Enum):
    IDLE = "idle"
    PLANNING = "planning"
    NAVIGATING = "navigating"
    MEASURING = "measuring"
    ESTIMATING = "estimating"
    DONE = "done"


_TRANSITIONS = {
    Phase.IDLE: {Phase.PLANNING},
    Phase.PLANNING: {Phase.NAVIGATING},
    Phase.NAVIGATING: {Phase.MEASURING},
    Phase.MEASURING: {Phase.ESTIMATING},
    Phase.ESTIMATING: {Phase.PLANNING, Phase.DONE},
    Phase.DONE: set(),
}

DEFAULT_SPEED = {Mode.DISCRETE: 5.0, Mode.CONTINUOUS: 3.0}


@dataclass(frozen=True)
class RadiusStep:
    center_circle_radius: float
    orbit_radius: float | None = None


def default_schedule(
    n_iterations: int, initial_uncertainty: float = 300.0, decay: float = 0.5
) -> tuple[RadiusStep, ...]:
    r0 = initial_uncertainty / 2.0
    return tuple(RadiusStep(r0 * decay**k) for k in range(n_iterations))


@dataclass(frozen=True)
class MissionConfig:
    mode: Mode = Mode.DISCRETE
    n_drones: int = 1
    radius_schedule: tuple[RadiusStep, ...] = field(default_factory=lambda: default_schedule(2))
    measurements_per_point: int = 2
    speed: float | None = None
    hover_time_per_measurement: float = 4.0
    hover_margin: float = 2.0
    initial_uncertainty: float = 300.0
    altitude: float = 10.0
    angular_span: float = 360.0
    n_waypoints: int = 3
    estimate_window: str = "cumulative"

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(
            self,
            "radius_schedule",
            tuple(s if isinstance(s, RadiusStep) else RadiusStep(*s) for s in self.radius_schedule),
        )
        if self.n_drones not in (1, 3):
            raise ValueError(f"n_drones must be 1 or 3, got {self.n_drones}")
        if not self.radius_schedule:
            raise ValueError("radius_schedule must have at least one entry")
        radii = [s.center_circle_radius for s in self.radius_schedule]
        if any(not r > 0 for r in radii):
            raise ValueError("all center-circle radii must be positive")
        if any(b >= a for a, b in zip(radii, radii[1:])):
            raise ValueError(f"center-circle radii must strictly decrease, got {radii}")
        if any(s.orbit_radius is not None and not s.orbit_radius > 0 for s in self.radius_schedule):
            raise ValueError("orbit radii must be positive")
        if self.measurements_per_point < 1:
            raise ValueError("measurements_per_point must be >= 1")
        if self.speed is not None and not self.speed > 0:
            raise ValueError("speed must be positive")
        if self.hover_time_per_measurement < 0 or self.hover_margin < 0:
            raise ValueError("hover times must be non-negative")
        if self.n_waypoints < 3:
            raise ValueError("n_waypoints must be >= 3")
        if self.n_drones == 3 and self.n_waypoints != 3:
            raise ValueError("three drones need exactly three measuring positions")
        if not 0 < self.angular_span <= 360.0 * 10:
            raise ValueError("angular_span must be positive")
        if self.estimate_window not in ("cumulative", "iteration"):
            raise ValueError("estimate_window must be 'cumulative' or 'iteration'")

    @property
    def n_iterations(self) -> int:
        return len(self.radius_schedule)

    @property
    def drone_speed(self) -> float:
        return self.speed if self.speed is not None else DEFAULT_SPEED[self.mode]

    @property
    def hover_time(self) -> float:
        return self.measurements_per_point * self.hover_time_per_measurement + self.hover_margin

    def orbit_radius(self, iteration: int) -> float:
        step = self.radius_schedule[iteration]
        return step.orbit_radius if step.orbit_radius is not None else step.center_circle_radius


@dataclass(frozen=True)
class OrbitSpec:
    center: LocalPoint
    radius: float
    entry_bearing: float | None = None  # resolved at execution: nearest point to the approach
    direction: int = 1  # +1 clockwise, -1 counter-clockwise
    angular_span: float = 360.0

    @property
    def path_length(self) -> float:
        return math.radians(self.angular_span) * self.radius

    def point_at(self, bearing_deg: float) -> LocalPoint:
        b = math.radians(bearing_deg)
        return LocalPoint(
            self.center.east + self.radius * math.sin(b),
            self.center.north + self.radius * math.cos(b),
            self.center.up,
        )


@dataclass(frozen=True)
class DroneTask:
    """What one drone must do in one iteration: a waypoint tour or an orbit."""

    drone_id: str
    waypoints: tuple[LocalPoint, ...] = ()
    orbit: OrbitSpec | None = None

    @property
    def n_targets(self) -> int:
        return len(self.waypoints) if self.orbit is None else 1


@dataclass(frozen=True)
class MissionState:
    phase: Phase = Phase.IDLE
    iteration: int = 0
    current_estimate: LocalPoint | None = None
    pending_waypoints: tuple[DroneTask, ...] = ()
    collected: tuple[Datapoint, ...] = ()
    estimates: tuple[PositionEstimate, ...] = ()


def transition(state: MissionState, phase: Phase) -> MissionState:
    """Move the FSM to ``phase``; illegal moves raise StateMachineError."""
    phase = Phase(phase)
    if phase not in _TRANSITIONS[state.phase]:
        raise StateMachineError(f"illegal transition {state.phase.value} -> {phase.value}")
    return replace(state, phase=phase)


def bearing(origin: LocalPoint, p: LocalPoint) -> float:
    de, dn = p.east - origin.east, p.north - origin.north
    if math.hypot(de, dn) < 1e-9:
        return 0.0
    return math.degrees(math.atan2(de, dn)) % 360.0


def plan_discrete_waypoints(
    center: LocalPoint,
    radius: float,
    n_points: int = 3,
    phase_deg: float = 0.0,
    altitude: float = 10.0,
) -> list[LocalPoint]:
    """``n_points`` evenly spaced waypoints on a circle, the first at ``phase_deg``."""
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if n_points < 3:
        raise ValueError(f"need at least 3 waypoints, got {n_points}")
    out = []
    for k in range(n_points):
        b = math.radians(phase_deg + 360.0 * k / n_points)
        out.append(
            LocalPoint(center.east + radius * math.sin(b), center.north + radius * math.cos(b), altitude)
        )
    return out


def plan_orbit(
    measuring_position: LocalPoint,
    orbit_radius: float,
    angular_span: float = 360.0,
    altitude: float = 10.0,
    direction: int = 1,
) -> OrbitSpec:
    if not orbit_radius > 0:
        raise ValueError(f"orbit radius must be positive, got {orbit_radius}")
    center = LocalPoint(measuring_position.east, measuring_position.north, altitude)
    return OrbitSpec(center, orbit_radius, None, direction, angular_span)


def assign_drones(
    waypoints: Sequence[LocalPoint], drone_positions: Sequence[LocalPoint]
) -> tuple[int, ...]:
    """Waypoint index for each drone, minimizing total straight-line travel.

    Exhaustive over permutations in lexicographic order with a strict
    comparison, so ties go to the assignment that favors lower drone indices.
    """
    if len(waypoints) != len(drone_positions):
        raise ValueError(
            f"{len(waypoints)} waypoints cannot be assigned to {len(drone_positions)} drones"
        )
    n = len(waypoints)
    cost = [[d.distance(w) for w in waypoints] for d in drone_positions]
    best, best_cost = None, math.inf
    for perm in itertools.permutations(range(n)):
        c = sum(cost[i][perm[i]] for i in range(n))
        if c < best_cost - 1e-9:
            best, best_cost = perm, c
    return tuple(best)


def plan_iteration(
    cfg: MissionConfig,
    iteration: int,
    center: LocalPoint,
    drone_ids: Sequence[str],
    drone_positions: Sequence[LocalPoint] | None = None,
) -> tuple[DroneTask, ...]:
    if len(drone_ids) != cfg.n_drones:
        raise ValueError(f"config expects {cfg.n_drones} drones, got {len(drone_ids)}")
    positions = list(drone_positions) if drone_positions else [center] * cfg.n_drones
    step = cfg.radius_schedule[iteration]
    phase = bearing(center, positions[0])

    if cfg.mode is Mode.CONTINUOUS and cfg.n_drones == 1:
        orbit = plan_orbit(center, cfg.orbit_radius(iteration), cfg.angular_span, cfg.altitude)
        return (DroneTask(drone_ids[0], orbit=orbit),)

    points = plan_discrete_waypoints(
        center, step.center_circle_radius, cfg.n_waypoints, phase, cfg.altitude
    )
    if cfg.n_drones == 1:
        return (DroneTask(drone_ids[0], waypoints=tuple(points)),)

    assignment = assign_drones(points, positions)
    if cfg.mode is Mode.DISCRETE:
        return tuple(
            DroneTask(drone_ids[i], waypoints=(points[assignment[i]],)) for i in range(cfg.n_drones)
        )
    return tuple(
        DroneTask(
            drone_ids[i],
            orbit=plan_orbit(
                points[assignment[i]], cfg.orbit_radius(iteration), cfg.angular_span, cfg.altitude
            ),
        )
        for i in range(cfg.n_drones)
    )


def start_mission(
    cfg: MissionConfig,
    initial_estimate: LocalPoint,
    drone_ids: Sequence[str],
    drone_positions: Sequence[LocalPoint] | None = None,
) -> MissionState:
    """Idle -> Planning -> Navigating on the first circle around the network estimate."""
    state = transition(MissionState(current_estimate=initial_estimate), Phase.PLANNING)
    tasks = plan_iteration(cfg, 0, initial_estimate, drone_ids, drone_positions)
    return replace(transition(state, Phase.NAVIGATING), pending_waypoints=tasks)


def next_iteration(
    state: MissionState,
    estimate: PositionEstimate,
    cfg: MissionConfig,
    drone_positions: Sequence[LocalPoint] | None = None,
) -> MissionState:
    if state.phase is not Phase.ESTIMATING:
        raise StateMachineError(f"next_iteration called in phase {state.phase.value}")
    history = state.estimates + (estimate,)
    if state.iteration + 1 >= cfg.n_iterations:
        done = transition(state, Phase.DONE)
        return replace(done, current_estimate=estimate.position, pending_waypoints=(), estimates=history)
    it = state.iteration + 1
    planning = replace(
        transition(state, Phase.PLANNING),
        iteration=it,
        current_estimate=estimate.position,
        estimates=history,
    )
    drone_ids = [t.drone_id for t in state.pending_waypoints] or [
        f"drone{i}" for i in range(cfg.n_drones)
    ]
    tasks = plan_iteration(cfg, it, estimate.position, drone_ids, drone_positions)
    return replace(transition(planning, Phase.NAVIGATING), pending_waypoints=tasks)

"""Server-side coordinator.

Ingests gateway uplink reports into an idempotent datapoint store, drives
the planner state machine from drone status events and emits waypoint
commands, estimates and the final result. All inputs go through
:meth:`Coordinator.handle`, so the same object serves an in-process
simulator or an ndjson byte stream (:func:`serve`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Sequence

from .errors import InsufficientDataError, StateMachineError
from .geo import GeoPoint, LocalPoint, to_local
from .multilat import Datapoint, EstimatorOptions, PositionEstimate, estimate_position
from .planner import (
    MissionConfig,
    MissionState,
    Phase,
    next_iteration,
    start_mission,
    transition,
)
from .propagation import (
    DEFAULT_ANTENNA,
    URBAN_ESP,
    AntennaModel,
    PathLossModel,
    elevation_deg,
    esp_from_rssi_snr,
)
from .protocol import (
    DoneMessage,
    DroneStatus,
    EstimateMessage,
    Message,
    UplinkReport,
    WaypointCommand,
    read_messages,
    write_message,
)

log = logging.getLogger(__name__)

STORED = "stored"
DUPLICATE = "duplicate"


@dataclass
class StoredPoint:
    datapoint: Datapoint
    iteration: int
    timestamp: float


@dataclass
class DatapointStore:
    """Append-only datapoints keyed by (msg_id, gateway_id)."""

    _by_key: dict = field(default_factory=dict)
    _order: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self._order)

    def __contains__(self, key) -> bool:
        return key in self._by_key

    def add(self, key, sp: StoredPoint) -> bool:
        if key in self._by_key:
            return False
        if self._order and sp.iteration < self._order[-1].iteration:
            raise ValueError("iteration tags must be non-decreasing")
        self._by_key[key] = sp
        self._order.append(sp)
        return True

    def select(
        self,
        iteration: int | None = None,
        up_to_iteration: int | None = None,
        window: tuple[float, float] | None = None,
    ) -> list[Datapoint]:
        out = []
        for sp in self._order:
            if iteration is not None and sp.iteration != iteration:
                continue
            if up_to_iteration is not None and sp.iteration > up_to_iteration:
                continue
            if window is not None and not window[0] <= sp.timestamp <= window[1]:
                continue
            out.append(sp.datapoint)
        return out

    def snapshot(self) -> list[StoredPoint]:
        return list(self._order)


class Coordinator:
    def __init__(
        self,
        cfg: MissionConfig,
        plm: PathLossModel = URBAN_ESP,
        ant: AntennaModel = DEFAULT_ANTENNA,
        est_opts: EstimatorOptions | None = None,
        origin: GeoPoint | None = None,
        drone_ids: Sequence[str] | None = None,
        journal: IO[str] | None = None,
    ):
        self.cfg = cfg
        self.plm = plm
        self.ant = ant
        self.est_opts = est_opts or EstimatorOptions()
        self.origin = origin
        self.drone_ids = list(drone_ids or [f"drone{i}" for i in range(cfg.n_drones)])
        self.journal = journal
        self.store = DatapointStore()
        self.state = MissionState()
        self.commands: list[WaypointCommand] = []
        self.final: PositionEstimate | None = None
        self.start_time = 0.0
        self.clock = 0.0
        self._outstanding: set = set()
        self._drone_pos: dict[str, LocalPoint] = {}

    # -- ingestion -------------------------------------------------------

    def _local(self, p) -> LocalPoint:
        if isinstance(p, LocalPoint):
            return p
        if self.origin is None:
            raise ValueError("geodetic position received but no origin is configured")
        return to_local(p, self.origin)

    def ingest(self, r: UplinkReport) -> str:
        key = (r.msg_id, r.gateway_id)
        if key in self.store:
            return DUPLICATE
        pos = self._local(r.gateway_pos)
        esp = esp_from_rssi_snr(r.rssi, r.snr)
        low = False
        center = self.state.current_estimate
        if center is not None:
            beacon = LocalPoint(center.east, center.north, self.est_opts.beacon_alt)
            low = elevation_deg(beacon, pos) > self.ant.theta_valid_max
        dp = Datapoint(pos, esp, None, r.gateway_id, r.msg_id, low)
        self.store.add(key, StoredPoint(dp, self.state.iteration, r.timestamp))
        self.clock = max(self.clock, r.timestamp)
        if self.journal is not None:
            write_message(self.journal, r)
        return STORED

    # -- estimation ------------------------------------------------------

    def _bbox(self) -> tuple[float, float, float, float] | None:
        c = self.state.current_estimate
        if c is None:
            return None
        step = self.cfg.radius_schedule[min(self.state.iteration, self.cfg.n_iterations - 1)]
        half = self.cfg.initial_uncertainty + step.center_circle_radius
        return (c.east - half, c.north - half, c.east + half, c.north + half)

    def request_estimate(
        self,
        iteration: int | None = None,
        window: tuple[float, float] | None = None,
        cumulative: bool = False,
    ) -> PositionEstimate:
        """Multilaterate over a snapshot of the store.

        ``iteration`` selects one iteration's datapoints, or with
        ``cumulative`` everything up to and including it; ``window`` filters
        on reception time instead.
        """
        if cumulative:
            points = self.store.select(up_to_iteration=iteration, window=window)
        else:
            points = self.store.select(iteration=iteration, window=window)
        if not points:
            raise InsufficientDataError("no datapoints in the requested window")
        opts = self.est_opts
        if opts.bbox is None and self._bbox() is not None:
            opts = replace(opts, bbox=self._bbox())
        return estimate_position(points, self.plm, self.ant, opts)

    # -- mission control -------------------------------------------------

    def start(
        self,
        initial_estimate: LocalPoint,
        drone_positions: Sequence[LocalPoint] | None = None,
        t: float = 0.0,
    ) -> list[WaypointCommand]:
        if self.state.phase is not Phase.IDLE:
            raise StateMachineError("mission already started")
        self.start_time = t
        self.clock = t
        if drone_positions:
            self._drone_pos = dict(zip(self.drone_ids, drone_positions))
        self.state = start_mission(self.cfg, initial_estimate, self.drone_ids, drone_positions)
        return self._dispatch()

    def _dispatch(self) -> list[WaypointCommand]:
        cmds = [
            WaypointCommand.from_task(task, self.cfg.mode, self.state.iteration)
            for task in self.state.pending_waypoints
        ]
        self._outstanding = set()
        for task in self.state.pending_waypoints:
            if task.orbit is not None:
                self._outstanding.add((task.drone_id, None))
            else:
                self._outstanding.update((task.drone_id, k) for k in range(len(task.waypoints)))
        self.commands.extend(cmds)
        return cmds

    def on_status(self, s: DroneStatus) -> list[Message]:
        if self.state.phase in (Phase.IDLE, Phase.DONE):
            raise StateMachineError(f"drone status received in phase {self.state.phase.value}")
        if s.iteration != self.state.iteration:
            log.debug("stale status from %s for iteration %d", s.drone_id, s.iteration)
            return []
        self.clock = max(self.clock, s.timestamp)
        self._drone_pos[s.drone_id] = self._local(s.position)
        if self.state.phase is Phase.NAVIGATING:
            self.state = transition(self.state, Phase.MEASURING)
        if s.status == "waypoint_reached":
            return []
        key = (s.drone_id, None if s.status == "orbit_complete" else s.waypoint_index)
        self._outstanding.discard(key)
        return self.advance()

    def advance(self) -> list[Message]:
        """Close the iteration once every expected completion has arrived."""
        if self.state.phase is not Phase.MEASURING or self._outstanding:
            return []
        self.state = transition(self.state, Phase.ESTIMATING)
        it = self.state.iteration
        if self.cfg.estimate_window == "cumulative":
            est = self.request_estimate(iteration=it, cumulative=True)
        else:
            est = self.request_estimate(iteration=it)
        out: list[Message] = [
            EstimateMessage(it, est.position, est.rms_residual, est.n_points, est.converged, self.clock)
        ]
        positions = [self._drone_pos.get(d) for d in self.drone_ids]
        positions = positions if all(p is not None for p in positions) else None
        self.state = next_iteration(self.state, est, self.cfg, positions)
        if self.state.phase is Phase.DONE:
            self.final = est
            out.append(
                DoneMessage(
                    est.position,
                    est.rms_residual,
                    est.n_points,
                    self.cfg.n_iterations,
                    self.clock - self.start_time,
                )
            )
            return out
        out.extend(self._dispatch())
        return out

    def handle(self, msg: Message) -> list[Message]:
        """Single entry point for every inbound message."""
        if isinstance(msg, UplinkReport):
            self.ingest(msg)
            return []
        if isinstance(msg, DroneStatus):
            return self.on_status(msg)
        raise TypeError(f"coordinator does not accept {type(msg).__name__} messages")

    @property
    def done(self) -> bool:
        return self.state.phase is Phase.DONE


def replay(coordinator: Coordinator, messages: Iterable[Message]) -> list[Message]:
    out = []
    for m in messages:
        out.extend(coordinator.handle(m))
    return out


def serve(
    coordinator: Coordinator,
    inbound: IO[str],
    outbound: IO[str],
    initial_estimate: LocalPoint | None = None,
    drone_positions: Sequence[LocalPoint] | None = None,
) -> None:
    """Run the coordinator over an ndjson stream until Done or end of input."""
    if initial_estimate is not None:
        for cmd in coordinator.start(initial_estimate, drone_positions):
            write_message(outbound, cmd)
        outbound.flush()
    for msg in read_messages(inbound):
        for reply in coordinator.handle(msg):
            write_message(outbound, reply)
        outbound.flush()
        if coordinator.done:
            break


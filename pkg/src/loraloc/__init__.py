"""Drone-aided localization of LoRa nodes.

Propagation models for gateway metadata, multilateration, a shrinking-circle
search planner, a coordinator speaking ndjson, and a deterministic simulator.
"""

from .errors import (
    ConfigError,
    DegenerateGeometryError,
    InsufficientDataError,
    LocalizationError,
    MissionFailure,
    ModelDomainError,
    ParseError,
    StateMachineError,
)
from .geo import GeoPoint, LocalPoint, from_local, to_local
from .multilat import Datapoint, EstimatorOptions, PositionEstimate, estimate_position
from .planner import MissionConfig, Mode, RadiusStep
from .propagation import (
    URBAN_ESP,
    URBAN_RSSI,
    AntennaModel,
    NoiseModel,
    PathLossModel,
    distance_from_esp,
    esp_from_rssi_snr,
    expected_esp,
)
from .simkit import MissionResult, Models, WorldConfig, run_mission

__all__ = [
    "ConfigError",
    "DegenerateGeometryError",
    "InsufficientDataError",
    "LocalizationError",
    "MissionFailure",
    "ModelDomainError",
    "ParseError",
    "StateMachineError",
    "GeoPoint",
    "LocalPoint",
    "from_local",
    "to_local",
    "Datapoint",
    "EstimatorOptions",
    "PositionEstimate",
    "estimate_position",
    "MissionConfig",
    "Mode",
    "RadiusStep",
    "URBAN_ESP",
    "URBAN_RSSI",
    "AntennaModel",
    "NoiseModel",
    "PathLossModel",
    "distance_from_esp",
    "esp_from_rssi_snr",
    "expected_esp",
    "MissionResult",
    "Models",
    "WorldConfig",
    "run_mission",
]

__version__ = "0.1.0"

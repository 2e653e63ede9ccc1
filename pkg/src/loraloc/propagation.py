"""Propagation model: ESP from gateway metadata, antenna gain, path loss.

The path-loss model is used in its inverse form

    distance = a * exp(b * (esp - gain(theta)))

with ``b < 0``, so that ``expected_esp`` is ``ln(distance / a) / b + gain``.
Shadowing is Gaussian in dB.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ModelDomainError, ParseError
from .geo import LocalPoint

ESP_DOMAIN = (-150.0, 0.0)


def _check_finite(**values: float) -> None:
    for name, v in values.items():
        if v is None or not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


def esp_from_rssi_snr(rssi: float, snr: float) -> float:
    """Estimated signal power: RSSI with the thermal-noise share removed."""
    _check_finite(rssi=rssi, snr=snr)
    return rssi - 10.0 * math.log10(1.0 + 10.0 ** (-snr / 10.0))


def rssi_from_esp_snr(esp: float, snr: float) -> float:
    """Inverse of :func:`esp_from_rssi_snr` for a known SNR."""
    _check_finite(esp=esp, snr=snr)
    return esp + 10.0 * math.log10(1.0 + 10.0 ** (-snr / 10.0))


@dataclass(frozen=True)
class RadioSample:
    rssi: float
    snr: float
    distance: float | None = None
    theta: float | None = None
    timestamp: float = 0.0

    def __post_init__(self):
        _check_finite(rssi=self.rssi, snr=self.snr)
        if not ESP_DOMAIN[0] <= self.rssi <= ESP_DOMAIN[1]:
            raise ValueError(f"rssi {self.rssi} outside accepted range {ESP_DOMAIN}")

    @property
    def esp(self) -> float:
        return esp_from_rssi_snr(self.rssi, self.snr)


class PathLossForm(str, enum.Enum):
    EXPONENTIAL = "exponential"
    LINEAR = "linear"


@dataclass(frozen=True)
class PathLossModel:
    a: float = 0.1973
    b: float = -0.0902
    form: PathLossForm = PathLossForm.EXPONENTIAL
    linear_slope: float | None = None
    linear_intercept: float | None = None
    min_distance: float = 0.1
    rms_residual: float | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "form", PathLossForm(self.form))
        if self.form is PathLossForm.EXPONENTIAL:
            if not (self.a > 0 and math.isfinite(self.a)):
                raise ValueError(f"path-loss scale a must be positive, got {self.a}")
            if not (self.b < 0 and math.isfinite(self.b)):
                raise ValueError(f"path-loss rate b must be negative, got {self.b}")
        else:
            if self.linear_slope is None or self.linear_intercept is None:
                raise ValueError("linear form needs linear_slope and linear_intercept")
            if not self.linear_slope < 0:
                raise ValueError("linear_slope must be negative (distance falls as ESP rises)")
        if not self.min_distance > 0:
            raise ValueError("min_distance must be positive")

    def to_dict(self) -> dict:
        d = {"form": self.form.value, "a": self.a, "b": self.b, "min_distance": self.min_distance}
        if self.form is PathLossForm.LINEAR:
            d["linear_slope"] = self.linear_slope
            d["linear_intercept"] = self.linear_intercept
        if self.rms_residual is not None:
            d["rms_residual"] = self.rms_residual
        return d


# Fitted on gain-compensated characterization data
URBAN_ESP = PathLossModel(a=0.1973, b=-0.0902)
URBAN_RSSI = PathLossModel(a=0.2189, b=-0.0894)


@dataclass(frozen=True)
class AntennaModel:
    """Combined Tx+Rx gain, linear in elevation angle (degrees)."""

    a_ang: float = 0.5667
    b_ang: float = 1.38
    theta_valid_max: float = 60.0

    @classmethod
    def flat(cls) -> AntennaModel:
        """Elevation-independent 0 dB gain."""
        return cls(a_ang=0.0, b_ang=0.0)

    def to_dict(self) -> dict:
        return {"a_ang": self.a_ang, "b_ang": self.b_ang, "theta_valid_max": self.theta_valid_max}


DEFAULT_ANTENNA = AntennaModel()


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 2.5

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError(f"noise sigma must be >= 0, got {self.sigma}")


SIMULATION_NOISE = NoiseModel(2.5)
MEASURED_NOISE = NoiseModel(2.0)


def antenna_gain(theta: float, m: AntennaModel = DEFAULT_ANTENNA) -> float:
    """Overall antenna gain in dB at elevation ``theta`` degrees.

    Beyond ``theta_valid_max`` the linear fit is extrapolated; use
    :func:`gain_low_confidence` to flag such values.
    """
    if not math.isfinite(theta) or theta < 0:
        raise ValueError(f"elevation angle must be finite and >= 0, got {theta!r}")
    return -(m.a_ang * theta + m.b_ang)


def gain_low_confidence(theta: float, m: AntennaModel = DEFAULT_ANTENNA) -> bool:
    return theta > m.theta_valid_max


def elevation_deg(beacon: LocalPoint, receiver: LocalPoint) -> float:
    """Elevation of the receiver seen from the beacon's horizontal plane."""
    return math.degrees(
        math.atan2(abs(receiver.up - beacon.up), beacon.horizontal_distance(receiver))
    )


def expected_esp(
    distance: float,
    theta: float,
    plm: PathLossModel = URBAN_ESP,
    ant: AntennaModel = DEFAULT_ANTENNA,
) -> float:
    """Noiseless ESP (dBm) at ``distance`` meters and elevation ``theta``."""
    if not (distance > 0 and math.isfinite(distance)):
        raise ModelDomainError(f"distance must be positive and finite, got {distance!r}")
    if plm.form is PathLossForm.EXPONENTIAL:
        esp_c = math.log(distance / plm.a) / plm.b
    else:
        esp_c = (distance - plm.linear_intercept) / plm.linear_slope
    return esp_c + antenna_gain(theta, ant)


def distance_from_esp(
    esp: float,
    theta: float,
    plm: PathLossModel = URBAN_ESP,
    ant: AntennaModel = DEFAULT_ANTENNA,
) -> float:
    """Distance (m) implied by a gain-compensated ESP reading."""
    _check_finite(esp=esp)
    esp_c = esp - antenna_gain(theta, ant)
    if plm.form is PathLossForm.EXPONENTIAL:
        x = plm.b * esp_c
        d = plm.a * math.exp(x) if x < 700 else math.inf
    else:
        d = max(plm.linear_slope * esp_c + plm.linear_intercept, plm.min_distance)
    if not (d > 0 and math.isfinite(d)):
        raise ModelDomainError(f"ESP {esp} maps to invalid distance {d!r}")
    return d


def sample_esp(
    distance: float,
    theta: float,
    plm: PathLossModel,
    ant: AntennaModel,
    noise: NoiseModel,
    rng: np.random.Generator,
) -> float:
    """One noisy ESP reading; consumes exactly one normal draw from ``rng``."""
    mean = expected_esp(distance, theta, plm, ant)
    return mean + noise.sigma * rng.standard_normal()


def _compensated(samples: Sequence[RadioSample], ant: AntennaModel) -> np.ndarray:
    return np.array(
        [s.esp - (antenna_gain(s.theta, ant) if s.theta is not None else 0.0) for s in samples]
    )


def fit_path_loss(
    samples: Sequence[RadioSample],
    form: PathLossForm | str = PathLossForm.EXPONENTIAL,
    ant: AntennaModel = DEFAULT_ANTENNA,
) -> PathLossModel:
    """Least-squares path-loss fit on samples with known distance.

    Shadowing noise lives on the ESP axis, so ESP is regressed on ln(distance)
    (or on distance for the linear form) and the line is then inverted into
    the model's distance-from-ESP parameters. Regressing the other way would
    put the noise in the regressor and bias the slope toward zero.
    ``rms_residual`` on the result is in meters.
    """
    form = PathLossForm(form)
    samples = [s for s in samples]
    if any(s.distance is None or not s.distance > 0 for s in samples):
        raise ValueError("every fitting sample needs a positive known distance")
    if len(samples) < 2:
        raise ValueError(f"need at least 2 samples to fit, got {len(samples)}")
    esp = _compensated(samples, ant)
    dist = np.array([s.distance for s in samples])
    if np.ptp(esp) == 0 or np.unique(dist).size < 2:
        raise ValueError("degenerate fitting data: ESP or distance does not vary")

    if form is PathLossForm.EXPONENTIAL:
        # esp = ln(d / a) / b = c1 * ln(d) + c0
        c1, c0 = np.polyfit(np.log(dist), esp, 1)
        if not c1 < 0:
            raise ValueError(f"fitted ESP slope {c1:.4g} per ln(m) is not negative; data do not decay")
        b = 1.0 / c1
        a = math.exp(-c0 * b)
        pred = a * np.exp(b * esp)
        rms = float(np.sqrt(np.mean((pred - dist) ** 2)))
        return PathLossModel(a=a, b=float(b), rms_residual=rms)

    # esp = (d - intercept) / slope = k1 * d + k0
    k1, k0 = np.polyfit(dist, esp, 1)
    if not k1 < 0:
        raise ValueError(f"fitted ESP slope {k1:.4g} per m is not negative; data do not decay")
    slope = 1.0 / k1
    intercept = -k0 * slope
    pred = slope * esp + intercept
    rms = float(np.sqrt(np.mean((pred - dist) ** 2)))
    return PathLossModel(
        form=PathLossForm.LINEAR,
        linear_slope=float(slope),
        linear_intercept=float(intercept),
        rms_residual=rms,
    )


def group_by_geometry(samples: Iterable[RadioSample]) -> list[list[RadioSample]]:
    groups: dict[tuple, list[RadioSample]] = defaultdict(list)
    for s in samples:
        groups[(s.distance, s.theta)].append(s)
    return list(groups.values())


def fit_noise(groups: Sequence[Sequence[RadioSample]] | Mapping) -> NoiseModel:
    """Pooled standard deviation of ESP about each group's mean."""
    if isinstance(groups, Mapping):
        groups = list(groups.values())
    n_total = sum(len(g) for g in groups)
    if n_total < 2:
        raise ValueError(f"need at least 2 samples to estimate noise, got {n_total}")
    dof = n_total - sum(1 for g in groups if len(g) > 0)
    if dof < 1:
        raise ValueError("every group has a single sample; no spread to estimate")
    ss = 0.0
    for g in groups:
        if not g:
            continue
        esp = np.array([s.esp for s in g])
        ss += float(np.sum((esp - esp.mean()) ** 2))
    return NoiseModel(math.sqrt(ss / dof))


CHARACTERIZATION_FIELDS = ("distance_m", "theta_deg", "rssi_dbm", "snr_db")


def read_characterization_csv(path: str | Path) -> list[RadioSample]:
    """Load ``distance_m,theta_deg,rssi_dbm,snr_db`` rows (header required)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CHARACTERIZATION_FIELDS:
            raise ParseError(
                f"expected header {','.join(CHARACTERIZATION_FIELDS)}, got {reader.fieldnames}",
                line=1,
            )
        for row in reader:
            line = reader.line_num
            values = {}
            for name in CHARACTERIZATION_FIELDS:
                raw = row.get(name)
                if raw is None or raw.strip() == "":
                    if name == "theta_deg":
                        values[name] = None
                        continue
                    raise ParseError("missing value", line=line, field=name)
                try:
                    values[name] = float(raw)
                except ValueError:
                    raise ParseError(f"not a number: {raw!r}", line=line, field=name) from None
            try:
                out.append(
                    RadioSample(
                        rssi=values["rssi_dbm"],
                        snr=values["snr_db"],
                        distance=values["distance_m"],
                        theta=values["theta_deg"],
                    )
                )
            except ValueError as exc:
                raise ParseError(str(exc), line=line) from None
    return out


def write_characterization_csv(path: str | Path, samples: Iterable[RadioSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHARACTERIZATION_FIELDS)
        for s in samples:
            w.writerow(
                [repr(s.distance), "" if s.theta is None else repr(s.theta), repr(s.rssi), repr(s.snr)]
            )


def synth_characterization(
    plm: PathLossModel,
    noise: NoiseModel,
    rng: np.random.Generator,
    distances: Sequence[float],
    per_distance: int = 1,
    ant: AntennaModel = DEFAULT_ANTENNA,
    tx_height: float = 10.0,
    snr: float = 8.0,
) -> list[RadioSample]:
    """Synthetic characterization campaign: transmitter raised ``tx_height``
    above a ground receiver at each horizontal distance."""
    out = []
    for d in distances:
        theta = math.degrees(math.atan2(tx_height, d))
        slant = math.hypot(d, tx_height)
        for _ in range(per_distance):
            esp = sample_esp(slant, theta, plm, ant, noise, rng)
            out.append(
                RadioSample(rssi=rssi_from_esp_snr(esp, snr), snr=snr, distance=slant, theta=theta)
            )
    return out


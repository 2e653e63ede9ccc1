"""Shared synthetic-data builders for the test suite."""

import math

import numpy as np
import pytest

from loraloc.geo import LocalPoint
from loraloc.multilat import Datapoint
from loraloc.propagation import DEFAULT_ANTENNA, URBAN_ESP, elevation_deg, expected_esp

# acceptance report lines collected for the terminal summary
ACCEPTANCE_KEY = pytest.StashKey[list]()


def datapoints(truth, receivers, sigma=0.0, rng=None, plm=URBAN_ESP, ant=DEFAULT_ANTENNA, per_receiver=1):
    out = []
    k = 0
    for i, r in enumerate(receivers):
        for _ in range(per_receiver):
            esp = expected_esp(truth.distance(r), elevation_deg(truth, r), plm, ant)
            if sigma:
                esp += sigma * rng.standard_normal()
            out.append(Datapoint(r, esp, None, f"rx{i}", k))
            k += 1
    return out


def ring(center, radius, n, alt=10.0, phase=0.0):
    return [
        LocalPoint(
            center.east + radius * math.sin(phase + 2 * math.pi * k / n),
            center.north + radius * math.cos(phase + 2 * math.pi * k / n),
            alt,
        )
        for k in range(n)
    ]


def random_geometry(rng, n_rx=None, alt=10.0):
    """Receivers scattered over a few hundred meters, truth inside their hull."""
    n_rx = n_rx or int(rng.integers(3, 9))
    while True:
        rx = rng.uniform(-300, 300, size=(n_rx, 2))
        w = rng.dirichlet(np.ones(n_rx))
        t = w @ rx
        area = _hull_area(rx)
        if area > 2000.0 and np.min(np.hypot(*(rx - t).T)) > 1.0:
            break
    receivers = [LocalPoint(float(x), float(y), alt) for x, y in rx]
    return LocalPoint(float(t[0]), float(t[1]), 0.0), receivers


def _hull_area(pts):
    from scipy.spatial import ConvexHull

    return ConvexHull(pts).volume

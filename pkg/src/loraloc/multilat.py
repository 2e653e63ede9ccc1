"""Beacon position from (receiver position, ESP) datapoints.

Least squares on ESP residuals in dB, over the beacon's horizontal position
with its altitude held fixed. A coarse grid search seeds a damped
Gauss-Newton (Levenberg-Marquardt style) refinement.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateGeometryError, InsufficientDataError, ModelDomainError, ParseError
from .geo import LocalPoint
from .propagation import (
    DEFAULT_ANTENNA,
    URBAN_ESP,
    AntennaModel,
    PathLossForm,
    PathLossModel,
    distance_from_esp,
    elevation_deg,
    expected_esp,
)

_RAD2DEG = 180.0 / math.pi
_SCREEN_ITERS = 4


@dataclass(frozen=True)
class Datapoint:
    receiver_pos: LocalPoint
    esp: float
    theta: float | None = None
    source_id: str = ""
    msg_id: int = 0
    low_confidence: bool = False

    def __post_init__(self):
        if not math.isfinite(self.esp):
            raise ValueError(f"datapoint ESP must be finite, got {self.esp!r}")


@dataclass(frozen=True)
class PositionEstimate:
    position: LocalPoint
    rms_residual: float
    n_points: int
    iterations: int
    converged: bool
    loss: float = 0.0

    def to_dict(self) -> dict:
        return {
            "position": {
                "east_m": self.position.east,
                "north_m": self.position.north,
                "up_m": self.position.up,
            },
            "rms_residual": self.rms_residual,
            "n_points": self.n_points,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class EstimatorOptions:
    tol_m: float = 0.01
    max_iter: int = 100
    grid_cells: int = 25
    bbox: tuple[float, float, float, float] | None = None  # east_min, north_min, east_max, north_max
    beacon_alt: float = 0.0
    keep_low_confidence: bool = False
    weights: Mapping[str, float] = field(default_factory=dict)
    n_starts: int = 4


def residual(
    candidate: LocalPoint,
    d: Datapoint,
    plm: PathLossModel = URBAN_ESP,
    ant: AntennaModel = DEFAULT_ANTENNA,
) -> float:
    """Measured minus modeled ESP (dB) if the beacon sat at ``candidate``."""
    dist = candidate.distance(d.receiver_pos)
    if dist == 0:
        raise ModelDomainError("candidate coincides with the receiver")
    return d.esp - expected_esp(dist, elevation_deg(candidate, d.receiver_pos), plm, ant)


class _Problem:
    """Datapoints packed into arrays for vectorised model evaluation."""

    def __init__(self, points: Sequence[Datapoint], plm, ant, beacon_alt, weights):
        self.rx = np.array([[p.receiver_pos.east, p.receiver_pos.north] for p in points], float)
        self.h = np.abs(np.array([p.receiver_pos.up for p in points], float) - beacon_alt)
        self.esp = np.array([p.esp for p in points], float)
        self.w = np.array([float(weights.get(p.source_id, 1.0)) for p in points])
        self.plm = plm
        self.ant = ant

    def model(self, rho: np.ndarray, h: np.ndarray | None = None) -> np.ndarray:
        h = self.h if h is None else h
        d = np.sqrt(rho * rho + h * h)
        theta = np.arctan2(h, rho) * _RAD2DEG
        if self.plm.form is PathLossForm.EXPONENTIAL:
            esp_c = np.log(d / self.plm.a) / self.plm.b
        else:
            esp_c = (d - self.plm.linear_intercept) / self.plm.linear_slope
        return esp_c - (self.ant.a_ang * theta + self.ant.b_ang)

    def loss_grid(self, xy: np.ndarray) -> np.ndarray:
        """Weighted sum of squared residuals for each row of ``xy`` (M, 2)."""
        diff = xy[:, None, :] - self.rx[None, :, :]
        rho = np.hypot(diff[..., 0], diff[..., 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.esp - self.model(rho)
        loss = np.sum(self.w * r * r, axis=1)
        return np.where(np.isfinite(loss), loss, np.inf)

    def residuals_jacobian(self, p: np.ndarray, curvature: bool = False):
        """Residuals and their Jacobian at ``p``; with ``curvature`` also the
        second-order Hessian term sum(w * r * hess(r)) as a 2x2 array."""
        diff = p[None, :] - self.rx
        rho = np.maximum(np.hypot(diff[:, 0], diff[:, 1]), 1e-9)
        h2 = self.h * self.h
        d2 = rho * rho + h2
        r = self.esp - self.model(rho)
        if self.plm.form is PathLossForm.EXPONENTIAL:
            dpath = rho / (self.plm.b * d2)
            ddpath = (h2 - rho * rho) / (self.plm.b * d2 * d2)
        else:
            d = np.sqrt(d2)
            dpath = rho / (self.plm.linear_slope * d)
            ddpath = h2 / (self.plm.linear_slope * d2 * d)
        k = self.ant.a_ang * _RAD2DEG * self.h
        dmodel = dpath + k / d2
        u = diff / rho[:, None]
        jac = -dmodel[:, None] * u
        if not curvature:
            return r, jac
        ddmodel = ddpath - 2.0 * k * rho / (d2 * d2)
        # hess(r) = -m''(rho) u u^T - m'(rho) / rho (I - u u^T)
        c = self.w * r
        q = c * (dmodel / rho - ddmodel)
        iso = float(np.dot(c, dmodel / rho))
        ux, uy = u[:, 0], u[:, 1]
        qx = q * ux
        cxy = float(np.dot(qx, uy))
        curv = np.array([[float(np.dot(qx, ux)) - iso, cxy], [cxy, float(np.dot(q * uy, uy)) - iso]])
        return r, jac, curv

    def loss(self, p: np.ndarray) -> float:
        r, _ = self.residuals_jacobian(p)
        return float(np.sum(self.w * r * r))


def _usable(points: Iterable[Datapoint], keep_low_confidence: bool) -> list[Datapoint]:
    return [p for p in points if keep_low_confidence or not p.low_confidence]


def _check_geometry(rx: np.ndarray) -> None:
    centered = rx - rx.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s.size < 2 or s[1] <= 1e-6 * max(s[0], 1.0):
        raise DegenerateGeometryError(
            "receiver positions are collinear or coincident; 2-D fix is undetermined"
        )


def default_bbox(points: Sequence[Datapoint], plm, ant) -> tuple[float, float, float, float]:
    """Receiver bounding box padded by the median implied range."""
    e = [p.receiver_pos.east for p in points]
    n = [p.receiver_pos.north for p in points]
    ranges = []
    for p in points:
        try:
            ranges.append(distance_from_esp(p.esp, 0.0, plm, ant))
        except ModelDomainError:
            pass
    pad = float(np.clip(np.median(ranges), 10.0, 5000.0)) if ranges else 100.0
    return (min(e) - pad, min(n) - pad, max(e) + pad, max(n) + pad)


def _grid(bbox, cells: int) -> np.ndarray:
    e0, n0, e1, n1 = bbox
    if not (e1 > e0 and n1 > n0):
        raise ValueError(f"degenerate bounding box {bbox}")
    ce = e0 + (np.arange(cells) + 0.5) * (e1 - e0) / cells
    cn = n0 + (np.arange(cells) + 0.5) * (n1 - n0) / cells
    ge, gn = np.meshgrid(ce, cn, indexing="xy")
    return np.column_stack([ge.ravel(), gn.ravel()])


def grid_init(
    points: Sequence[Datapoint],
    bbox: tuple[float, float, float, float],
    plm: PathLossModel = URBAN_ESP,
    ant: AntennaModel = DEFAULT_ANTENNA,
    cells: int = 25,
    beacon_alt: float = 0.0,
    weights: Mapping[str, float] | None = None,
) -> LocalPoint:
    """Center of the grid cell with the smallest squared-residual loss."""
    if not points:
        raise InsufficientDataError("grid_init needs at least one datapoint")
    prob = _Problem(points, plm, ant, beacon_alt, weights or {})
    xy = _grid(bbox, cells)
    k = int(np.argmin(prob.loss_grid(xy)))
    return LocalPoint(float(xy[k, 0]), float(xy[k, 1]), beacon_alt)


def _seeds(grid_loss: np.ndarray, xy: np.ndarray, cells: int, n: int) -> list[np.ndarray]:
    """Grid cells that are local minima of the loss, best first."""
    g = grid_loss.reshape(cells, cells)
    padded = np.pad(g, 1, constant_values=np.inf)
    is_min = np.ones_like(g, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                shifted = padded[1 + di : 1 + di + cells, 1 + dj : 1 + dj + cells]
                is_min &= g <= shifted
    idx = np.flatnonzero(is_min.ravel() & np.isfinite(grid_loss))
    idx = idx[np.argsort(grid_loss[idx], kind="stable")][: max(n, 1)]
    if idx.size == 0:
        idx = np.array([int(np.argmin(grid_loss))])
    return [xy[i] for i in idx]


_RANGE_GRID = np.geomspace(0.5, 20000.0, 400)
_MAX_RANGE_RECEIVERS = 8


def _ranges(prob: _Problem, esp: float, h: float) -> np.ndarray:
    """Horizontal ranges at which the model predicts ``esp``.

    The elevation-dependent gain can make the curve non-monotone, so there
    may be two roots; with none, the range of the closest prediction is used.
    """
    f = prob.model(_RANGE_GRID, np.full(_RANGE_GRID.shape, h)) - esp
    ok = np.isfinite(f)
    idx = np.flatnonzero(ok[:-1] & ok[1:] & (np.sign(f[:-1]) != np.sign(f[1:])))
    if idx.size == 0:
        return _RANGE_GRID[[int(np.nanargmin(np.where(ok, np.abs(f), np.nan)))]]
    x0, x1 = _RANGE_GRID[idx], _RANGE_GRID[idx + 1]
    return x0 + (x1 - x0) * f[idx] / (f[idx] - f[idx + 1])


def _range_seeds(prob: _Problem, n: int) -> list[np.ndarray]:
    """Pairwise intersections of the range circles implied by each receiver's
    mean ESP, best first.

    On clean data one intersection sits on the beacon, which a coarse grid can
    miss when the loss basin is narrow (beacon close to a receiver).
    """
    key = np.column_stack([prob.rx, prob.h])
    rx, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    mean_esp = np.bincount(inv, prob.esp) / np.bincount(inv)
    keep = np.argsort(-mean_esp, kind="stable")[:_MAX_RANGE_RECEIVERS]
    rx, mean_esp = rx[keep], mean_esp[keep]
    ranges = [_ranges(prob, e, h) for e, h in zip(mean_esp, rx[:, 2])]
    cand = []
    for i in range(len(rx)):
        for j in range(i + 1, len(rx)):
            c = rx[j, :2] - rx[i, :2]
            d = math.hypot(c[0], c[1])
            if d == 0:
                continue
            u = c / d
            v = np.array([-u[1], u[0]])
            for ri in ranges[i]:
                for rj in ranges[j]:
                    along = (d * d + ri * ri - rj * rj) / (2 * d)
                    across2 = ri * ri - along * along
                    base = rx[i, :2] + along * u
                    if across2 > 0:
                        off = math.sqrt(across2) * v
                        cand += [base + off, base - off]
                    else:
                        # circles miss each other: closest point between them
                        cand.append(base)
    if not cand:
        return []
    cand = np.array(cand)
    loss = prob.loss_grid(cand)
    out: list[np.ndarray] = []
    for k in np.argsort(loss, kind="stable"):
        if len(out) >= max(n, 1) or not np.isfinite(loss[k]):
            break
        # intersections of several pairs often coincide
        if all(math.hypot(*(cand[k] - q)) > 1.0 for q in out):
            out.append(cand[k])
    return out


def _refine(prob: _Problem, p0: np.ndarray, tol_m: float, max_iter: int):
    """Damped Newton descent on the squared-residual loss.

    The full Hessian is used where it is positive definite: noisy data make
    the residuals large, and the Gauss-Newton approximation then only
    converges linearly along the flat valleys of the loss. Elsewhere the
    Gauss-Newton matrix keeps the step a descent direction.
    """
    p = p0.copy()
    w = prob.w
    r, jac, curv = prob.residuals_jacobian(p, curvature=True)
    loss = float(np.dot(w * r, r))
    lam = 1e-3
    last_step = math.inf
    it = 0
    while it < max_iter:
        it += 1
        jx, jy = jac[:, 0], jac[:, 1]
        wjx, wjy = w * jx, w * jy
        axx = float(np.dot(wjx, jx))
        axy = float(np.dot(wjx, jy))
        ayy = float(np.dot(wjy, jy))
        gx = float(np.dot(wjx, r))
        gy = float(np.dot(wjy, r))
        fxx, fxy, fyy = axx + curv[0, 0], axy + curv[0, 1], ayy + curv[1, 1]
        if fxx > 0 and fxx * fyy - fxy * fxy > 0:
            axx, axy, ayy = fxx, fxy, fyy
        dxx = axx * (1.0 + lam) + 1e-12
        dyy = ayy * (1.0 + lam) + 1e-12
        det = dxx * dyy - axy * axy
        if not det > 0:
            lam *= 10.0
            if lam > 1e12:
                break
            continue
        step = np.array([-(dyy * gx - axy * gy) / det, -(dxx * gy - axy * gx) / det])
        p_new = p + step
        r_new, jac_new, curv_new = prob.residuals_jacobian(p_new, curvature=True)
        loss_new = float(np.dot(w * r_new, r_new))
        step_norm = math.hypot(step[0], step[1])
        if loss_new <= loss:
            p, r, jac, curv, loss = p_new, r_new, jac_new, curv_new, loss_new
            last_step = step_norm
            lam = max(lam * 0.1, 1e-12)
            # keep polishing past tol_m: convergence is quadratic near the minimum
            if step_norm < 1e-11 * (1.0 + math.hypot(p[0], p[1])):
                break
        else:
            lam *= 10.0
            if step_norm < 1e-12 or lam > 1e12:
                # no descent left even for vanishing steps: p is stationary
                last_step = min(last_step, step_norm)
                break
    return p, loss, it, last_step < tol_m


def estimate_position(
    points: Sequence[Datapoint],
    plm: PathLossModel = URBAN_ESP,
    ant: AntennaModel = DEFAULT_ANTENNA,
    opts: EstimatorOptions | None = None,
) -> PositionEstimate:
    """Horizontal beacon fix minimizing the sum of squared ESP residuals."""
    opts = opts or EstimatorOptions()
    usable = _usable(points, opts.keep_low_confidence)
    if len(usable) < 3:
        raise InsufficientDataError(
            f"need at least 3 usable datapoints, got {len(usable)} of {len(points)}"
        )
    prob = _Problem(usable, plm, ant, opts.beacon_alt, opts.weights)
    _check_geometry(prob.rx)

    bbox = opts.bbox or default_bbox(usable, plm, ant)
    xy = _grid(bbox, opts.grid_cells)
    grid_loss = prob.loss_grid(xy)
    k = int(np.argmin(grid_loss))
    p_grid = xy[k]
    loss_grid = float(grid_loss[k])

    best = (p_grid, loss_grid, 0, False)
    starts = _seeds(grid_loss, xy, opts.grid_cells, opts.n_starts)
    starts += _range_seeds(prob, opts.n_starts)
    # short screening run from every seed, then finish the two most promising
    screened = []
    for start in starts:
        p, loss, iters, _ = _refine(prob, start, opts.tol_m, min(_SCREEN_ITERS, opts.max_iter))
        if np.all(np.isfinite(p)):
            screened.append((loss, iters, p))
    screened.sort(key=lambda t: t[0])
    for loss0, iters0, p0 in screened[:2]:
        p, loss, iters, converged = _refine(prob, p0, opts.tol_m, max(opts.max_iter - iters0, 1))
        if loss < best[1]:
            best = (p, loss, iters0 + iters, converged)
    p_ref, loss_ref, iters, converged = best

    wsum = float(np.sum(prob.w))
    rms = math.sqrt(loss_ref / wsum) if wsum > 0 else 0.0
    return PositionEstimate(
        position=LocalPoint(float(p_ref[0]), float(p_ref[1]), opts.beacon_alt),
        rms_residual=rms,
        n_points=len(usable),
        iterations=iters,
        converged=converged,
        loss=loss_ref,
    )


def total_loss(
    candidate: LocalPoint,
    points: Sequence[Datapoint],
    plm: PathLossModel = URBAN_ESP,
    ant: AntennaModel = DEFAULT_ANTENNA,
    weights: Mapping[str, float] | None = None,
) -> float:
    prob = _Problem(points, plm, ant, candidate.up, weights or {})
    return prob.loss(np.array([candidate.east, candidate.north]))


DATAPOINT_FIELDS = ("msg_id", "source_id", "east_m", "north_m", "up_m", "esp_dbm", "low_confidence")

_TRUE = {"1", "true", "yes"}
_FALSE = {"0", "false", "no", ""}


def read_datapoints_csv(path: str | Path) -> list[Datapoint]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != DATAPOINT_FIELDS:
            raise ParseError(
                f"expected header {','.join(DATAPOINT_FIELDS)}, got {reader.fieldnames}", line=1
            )
        for row in reader:
            line = reader.line_num
            try:
                msg_id = int(row["msg_id"])
            except (TypeError, ValueError):
                raise ParseError(f"not an integer: {row['msg_id']!r}", line, "msg_id") from None
            nums = {}
            for name in ("east_m", "north_m", "up_m", "esp_dbm"):
                try:
                    nums[name] = float(row[name])
                except (TypeError, ValueError):
                    raise ParseError(f"not a number: {row[name]!r}", line, name) from None
                if not math.isfinite(nums[name]):
                    raise ParseError("must be finite", line, name)
            flag = (row["low_confidence"] or "").strip().lower()
            if flag not in _TRUE | _FALSE:
                raise ParseError(f"not a boolean: {flag!r}", line, "low_confidence")
            out.append(
                Datapoint(
                    receiver_pos=LocalPoint(nums["east_m"], nums["north_m"], nums["up_m"]),
                    esp=nums["esp_dbm"],
                    source_id=row["source_id"],
                    msg_id=msg_id,
                    low_confidence=flag in _TRUE,
                )
            )
    return out


def write_datapoints_csv(path: str | Path, points: Iterable[Datapoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATAPOINT_FIELDS)
        for p in points:
            w.writerow(
                [
                    p.msg_id,
                    p.source_id,
                    repr(p.receiver_pos.east),
                    repr(p.receiver_pos.north),
                    repr(p.receiver_pos.up),
                    repr(p.esp),
                    int(p.low_confidence),
                ]
            )

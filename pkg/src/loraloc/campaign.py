"""Monte Carlo campaigns: many seeded missions, per-trial CSV and summary.

Trials share nothing mutable, so they may run in worker processes; results
are sorted by trial index before anything is written.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig, config_to_dict
from .errors import LocalizationError
from .simkit import run_mission

TRIAL_HEADER = ("trial", "seed", "error_m", "flight_time_s", "n_datapoints")
PERCENTILES = (5, 25, 75, 95)


@dataclass(frozen=True)
class TrialResult:
    trial: int
    seed: int
    error_m: float
    flight_time_s: float
    n_datapoints: int
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None


def run_trial(cfg: RunConfig, trial: int) -> TrialResult:
    seed = cfg.seed + trial
    try:
        r = run_mission(cfg.mission, cfg.world, cfg.models, seed, cfg.estimator)
    except LocalizationError as exc:
        return TrialResult(trial, seed, math.nan, math.nan, 0, f"{type(exc).__name__}: {exc}")
    return TrialResult(trial, seed, r.error, r.flight_time, r.n_datapoints)


def _run_chunk(args) -> list[TrialResult]:
    cfg, trials = args
    return [run_trial(cfg, t) for t in trials]


def describe(values: Sequence[float]) -> dict:
    if not len(values):
        return {"n": 0}
    a = np.asarray(values, float)
    out = {"n": int(a.size), "median": float(np.median(a)), "mean": float(np.mean(a)),
           "std": float(np.std(a)), "min": float(a.min()), "max": float(a.max())}
    for q in PERCENTILES:
        out[f"p{q}"] = float(np.percentile(a, q))
    return out


@dataclass
class CampaignStats:
    name: str
    config: dict
    trials: list[TrialResult] = field(default_factory=list)

    @property
    def succeeded(self) -> list[TrialResult]:
        return [t for t in self.trials if t.ok]

    @property
    def errors(self) -> np.ndarray:
        return np.array([t.error_m for t in self.succeeded])

    @property
    def flight_times(self) -> np.ndarray:
        return np.array([t.flight_time_s for t in self.succeeded])

    def summary(self) -> dict:
        ok = self.succeeded
        return {
            "name": self.name,
            "n_trials": len(self.trials),
            "n_failed": len(self.trials) - len(ok),
            "error_m": describe([t.error_m for t in ok]),
            "flight_time_s": describe([t.flight_time_s for t in ok]),
            "n_datapoints": describe([t.n_datapoints for t in ok]),
            "failures": [{"trial": t.trial, "seed": t.seed, "reason": t.failure} for t in self.trials if not t.ok],
            "config": self.config,
        }


def run_campaign(cfg: RunConfig, n_trials: int | None = None, workers: int | None = None) -> CampaignStats:
    n = cfg.trials if n_trials is None else n_trials
    if n < 1:
        raise ValueError("n_trials must be >= 1")
    workers = cfg.workers if workers is None else workers
    cfg = replace(cfg, trials=n)
    idx = list(range(n))
    if workers <= 1 or n == 1:
        results = _run_chunk((cfg, idx))
    else:
        chunks = [idx[k::workers] for k in range(workers)]
        results = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_run_chunk, [(cfg, c) for c in chunks if c]):
                results.extend(part)
    results.sort(key=lambda t: t.trial)
    return CampaignStats(cfg.name, config_to_dict(cfg), results)


def write_trials_csv(path: str | Path, trials: Sequence[TrialResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_HEADER)
        for t in sorted(trials, key=lambda t: t.trial):
            w.writerow([t.trial, t.seed, repr(t.error_m), repr(t.flight_time_s), t.n_datapoints])


def read_trials_csv(path: str | Path) -> list[TrialResult]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        TrialResult(int(r["trial"]), int(r["seed"]), float(r["error_m"]), float(r["flight_time_s"]),
                    int(r["n_datapoints"]), None if r["error_m"] != "nan" else "failed")
        for r in rows
    ]


def write_summary(path: str | Path, stats: CampaignStats) -> None:
    Path(path).write_text(json.dumps(stats.summary(), indent=2, sort_keys=True) + "\n")


GRID_HEADER = ("cell", "n_trials", "n_failed", "median_error_m", "mean_error_m", "mean_flight_time_s")


def write_grid_csv(path: str | Path, cells: Sequence[CampaignStats]) -> None:
    """One row per cell in the given order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for s in cells:
            e, f = s.errors, s.flight_times
            w.writerow([
                s.name, len(s.trials), len(s.trials) - len(s.succeeded),
                repr(float(np.median(e))) if e.size else "nan",
                repr(float(np.mean(e))) if e.size else "nan",
                repr(float(np.mean(f))) if f.size else "nan",
            ])

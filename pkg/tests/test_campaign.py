import json
import math

import numpy as np
import pytest

from loraloc.campaign import (
    CampaignStats,
    TrialResult,
    describe,
    read_trials_csv,
    run_campaign,
    run_trial,
    write_grid_csv,
    write_summary,
    write_trials_csv,
)
from loraloc.config import preset
from loraloc.simkit import run_mission


def test_single_trial_campaign_matches_mission():
    cfg = preset("discrete-3drone", seed=40)
    stats = run_campaign(cfg, n_trials=1)
    r = run_mission(cfg.mission, cfg.world, cfg.models, 40, cfg.estimator)
    s = stats.summary()
    assert s["n_trials"] == 1 and s["n_failed"] == 0
    assert s["error_m"]["median"] == r.error == s["error_m"]["mean"]
    assert s["error_m"]["std"] == 0.0
    assert s["flight_time_s"]["min"] == r.flight_time


def test_csv_byte_identical_across_runs_and_workers(tmp_path):
    cfg = preset("tradeoff-i2-m2", seed=3)
    paths = []
    for k, workers in enumerate((1, 1, 2)):
        p = tmp_path / f"t{k}.csv"
        write_trials_csv(p, run_campaign(cfg, n_trials=4, workers=workers).trials)
        paths.append(p.read_bytes())
    assert paths[0] == paths[1] == paths[2]


def test_summary_recomputed_from_csv(tmp_path):
    stats = run_campaign(preset("tradeoff-i2-m2"), n_trials=6)
    write_trials_csv(tmp_path / "t.csv", stats.trials)
    write_summary(tmp_path / "s.json", stats)
    rows = read_trials_csv(tmp_path / "t.csv")
    assert rows == stats.trials
    summary = json.loads((tmp_path / "s.json").read_text())
    errs = [t.error_m for t in rows]
    assert summary["error_m"]["median"] == float(np.median(errs))
    assert summary["error_m"]["p95"] == float(np.percentile(errs, 95))
    assert summary["config"]["mission"]["n_drones"] == 3


def test_failures_are_recorded_not_raised():
    cfg = preset("discrete-1drone", world={"max_time": 20.0})
    t = run_trial(cfg, 0)
    assert not t.ok and math.isnan(t.error_m)
    assert "MissionFailure" in t.failure
    stats = run_campaign(cfg, n_trials=2)
    assert stats.summary()["n_failed"] == 2
    assert stats.summary()["error_m"] == {"n": 0}


def test_describe():
    d = describe([1.0, 2.0, 3.0, 4.0])
    assert d["median"] == 2.5 and d["mean"] == 2.5 and d["min"] == 1.0 and d["max"] == 4.0
    assert d["p25"] == pytest.approx(1.75)


def test_grid_csv(tmp_path):
    a = CampaignStats("a", {}, [TrialResult(0, 0, 1.0, 10.0, 5), TrialResult(1, 1, 3.0, 20.0, 5)])
    b = CampaignStats("b", {}, [TrialResult(0, 0, math.nan, math.nan, 0, "boom")])
    write_grid_csv(tmp_path / "g.csv", [a, b])
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "cell,n_trials,n_failed,median_error_m,mean_error_m,mean_flight_time_s"
    assert lines[1] == "a,2,0,2.0,2.0,15.0"
    assert lines[2] == "b,1,1,nan,nan,nan"


def test_invalid_trial_count():
    with pytest.raises(ValueError):
        run_campaign(preset("discrete-1drone"), n_trials=0)

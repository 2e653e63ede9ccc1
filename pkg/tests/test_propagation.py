import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loraloc.errors import ModelDomainError, ParseError
from loraloc.geo import LocalPoint
from loraloc.propagation import (
    DEFAULT_ANTENNA,
    MEASURED_NOISE,
    SIMULATION_NOISE,
    URBAN_ESP,
    URBAN_RSSI,
    AntennaModel,
    NoiseModel,
    PathLossForm,
    PathLossModel,
    RadioSample,
    antenna_gain,
    distance_from_esp,
    elevation_deg,
    esp_from_rssi_snr,
    expected_esp,
    fit_noise,
    fit_path_loss,
    gain_low_confidence,
    group_by_geometry,
    read_characterization_csv,
    rssi_from_esp_snr,
    sample_esp,
    synth_characterization,
    write_characterization_csv,
)

FLAT = AntennaModel.flat()


def test_published_coefficients():
    assert (URBAN_ESP.a, URBAN_ESP.b) == (0.1973, -0.0902)
    assert (URBAN_RSSI.a, URBAN_RSSI.b) == (0.2189, -0.0894)
    assert (DEFAULT_ANTENNA.a_ang, DEFAULT_ANTENNA.b_ang) == (0.5667, 1.38)
    assert SIMULATION_NOISE.sigma == 2.5
    assert MEASURED_NOISE.sigma == 2.0


@pytest.mark.parametrize(
    "rssi,snr,expected",
    [
        # oracle values: 10*log10(1 + 10**(-snr/10)) evaluated by hand
        (-50.0, 0.0, -50.0 - 3.010299956639812),
        (-60.0, 10.0, -60.41392685158225),
    ],
)
def test_esp_spot_values(rssi, snr, expected):
    assert esp_from_rssi_snr(rssi, snr) == pytest.approx(expected, abs=1e-9)


def test_esp_spot_values_rounded():
    assert round(esp_from_rssi_snr(-50, 0), 4) == -53.0103
    assert round(esp_from_rssi_snr(-60, 10), 4) == -60.4139
    assert esp_from_rssi_snr(-50, 100) == pytest.approx(-50.0, abs=1e-9)


@given(st.floats(-140, -1), st.floats(-30, 60))
def test_esp_below_rssi_and_invertible(rssi, snr):
    esp = esp_from_rssi_snr(rssi, snr)
    assert esp < rssi
    assert rssi_from_esp_snr(esp, snr) == pytest.approx(rssi, abs=1e-9)


@given(st.floats(-140, -1), st.floats(-30, 40), st.floats(0.01, 10))
def test_esp_gap_shrinks_with_snr(rssi, snr, dsnr):
    assert rssi - esp_from_rssi_snr(rssi, snr + dsnr) < rssi - esp_from_rssi_snr(rssi, snr)


def test_esp_rejects_non_finite():
    with pytest.raises(ValueError):
        esp_from_rssi_snr(math.nan, 0)


def test_radio_sample():
    s = RadioSample(-50.0, 0.0)
    assert s.esp == pytest.approx(-53.0103, abs=1e-4)
    with pytest.raises(ValueError):
        RadioSample(5.0, 0.0)


@pytest.mark.parametrize("theta,gain", [(0, -1.38), (60, -35.382), (30, -18.381)])
def test_antenna_gain_values(theta, gain):
    assert antenna_gain(theta) == pytest.approx(gain, abs=1e-9)


def test_antenna_gain_domain():
    with pytest.raises(ValueError):
        antenna_gain(-1.0)
    assert not gain_low_confidence(60.0)
    assert gain_low_confidence(60.5)
    assert antenna_gain(75.0) == pytest.approx(-(0.5667 * 75 + 1.38))


@given(st.floats(0, 60), st.floats(0, 60))
def test_antenna_gain_non_increasing(t1, t2):
    lo, hi = sorted((t1, t2))
    assert antenna_gain(hi) <= antenna_gain(lo)


def test_elevation():
    assert elevation_deg(LocalPoint(0, 0, 0), LocalPoint(10, 0, 10)) == pytest.approx(45.0)
    assert elevation_deg(LocalPoint(0, 0, 0), LocalPoint(0, 0, 10)) == pytest.approx(90.0)
    assert elevation_deg(LocalPoint(0, 0, 10), LocalPoint(3, 4, 0)) == pytest.approx(math.degrees(math.atan2(10, 5)))


def test_expected_esp_at_a_is_zero():
    assert expected_esp(0.1973, 0.0, URBAN_ESP, FLAT) == pytest.approx(0.0, abs=1e-12)


def test_expected_esp_44m():
    # -60 dBm: 0.1973 * exp(0.0902 * 60), evaluated independently
    r = 0.1973 * math.exp(-0.0902 * -60.0)
    assert r == pytest.approx(44.21, abs=0.01)
    assert expected_esp(44.21, 0.0, URBAN_ESP, FLAT) == pytest.approx(-60.0, abs=0.01)


def test_distance_spot_values():
    assert distance_from_esp(-60.0, 0.0, URBAN_ESP, FLAT) == pytest.approx(44.2, abs=0.05)
    # 0.2189 * exp(0.0894 * 60) = 46.752, evaluated independently
    assert distance_from_esp(-60.0, 0.0, URBAN_RSSI, FLAT) == pytest.approx(46.752, abs=1e-3)


def test_gain_compensation():
    # a reading 1.38 dB weaker at theta 0 maps to the same distance as the flat model
    assert distance_from_esp(-61.38, 0.0) == pytest.approx(distance_from_esp(-60.0, 0.0, URBAN_ESP, FLAT))


@given(st.floats(1.0, 2000.0), st.floats(0.0, 60.0))
def test_inverse_pair(r, theta):
    esp = expected_esp(r, theta)
    assert distance_from_esp(esp, theta) == pytest.approx(r, rel=1e-9)


@given(st.floats(-130, -20), st.floats(0.001, 20))
def test_distance_strictly_decreasing(esp, gap):
    assert distance_from_esp(esp, 10.0) > distance_from_esp(esp + gap, 10.0)


def test_gain_model_esp_peaks_off_axis():
    # at 10 m height the elevation penalty outweighs path loss below ~29 m
    rho = np.linspace(1.0, 200.0, 3981)
    esp = [expected_esp(math.hypot(r, 10.0), math.degrees(math.atan2(10.0, r))) for r in rho]
    peak = rho[int(np.argmax(esp))]
    assert 25.0 < peak < 33.0
    flat = [expected_esp(math.hypot(r, 10.0), 0.0, URBAN_ESP, FLAT) for r in rho]
    assert np.all(np.diff(flat) < 0)


def test_model_domain_errors():
    with pytest.raises(ModelDomainError):
        expected_esp(0.0, 0.0)
    with pytest.raises(ModelDomainError):
        expected_esp(-5.0, 0.0)
    with pytest.raises(ModelDomainError):
        distance_from_esp(-20000.0, 0.0)


def test_linear_form_clamps():
    m = PathLossModel(form=PathLossForm.LINEAR, linear_slope=-2.0, linear_intercept=-100.0)
    assert distance_from_esp(-80.0, 0.0, m, FLAT) == pytest.approx(60.0)
    assert distance_from_esp(-40.0, 0.0, m, FLAT) == m.min_distance
    assert expected_esp(60.0, 0.0, m, FLAT) == pytest.approx(-80.0)


def test_sample_esp_noiseless_and_reproducible():
    rng = np.random.default_rng(3)
    assert sample_esp(50.0, 10.0, URBAN_ESP, DEFAULT_ANTENNA, NoiseModel(0.0), rng) == expected_esp(50.0, 10.0)
    a = sample_esp(50.0, 10.0, URBAN_ESP, DEFAULT_ANTENNA, SIMULATION_NOISE, np.random.default_rng(9))
    b = sample_esp(50.0, 10.0, URBAN_ESP, DEFAULT_ANTENNA, SIMULATION_NOISE, np.random.default_rng(9))
    assert a == b


def test_sample_esp_std():
    rng = np.random.default_rng(11)
    draws = np.array([sample_esp(80.0, 7.0, URBAN_ESP, DEFAULT_ANTENNA, SIMULATION_NOISE, rng) for _ in range(100_000)])
    assert abs(draws.std(ddof=1) - 2.5) / 2.5 < 0.02
    assert draws.mean() == pytest.approx(expected_esp(80.0, 7.0), abs=0.05)


def _noiseless(plm, distances, ant=FLAT):
    return synth_characterization(plm, NoiseModel(0.0), np.random.default_rng(0), distances, 1, ant)


def test_fit_recovers_noiseless_model():
    fit = fit_path_loss(_noiseless(URBAN_ESP, np.linspace(10, 150, 15), DEFAULT_ANTENNA))
    assert fit.a == pytest.approx(0.1973, rel=1e-6)
    assert fit.b == pytest.approx(-0.0902, rel=1e-6)
    assert fit.rms_residual == pytest.approx(0.0, abs=1e-6)


def test_fit_two_points_interpolates():
    samples = _noiseless(PathLossModel(0.3, -0.08), [20.0, 90.0])
    fit = fit_path_loss(samples, ant=FLAT)
    for s in samples:
        assert distance_from_esp(s.esp, s.theta, fit, FLAT) == pytest.approx(s.distance, rel=1e-9)


def test_fit_needs_two_samples():
    with pytest.raises(ValueError):
        fit_path_loss(_noiseless(URBAN_ESP, [50.0]))


def test_fit_noisy_within_ten_percent():
    rng = np.random.default_rng(5)
    samples = synth_characterization(URBAN_ESP, NoiseModel(2.0), rng, np.geomspace(2, 500, 50), 10, DEFAULT_ANTENNA)
    assert len(samples) == 500
    fit = fit_path_loss(samples)
    assert fit.a == pytest.approx(0.1973, rel=0.10)
    assert fit.b == pytest.approx(-0.0902, rel=0.10)


def test_fit_unbiased_on_characterization_range():
    # noise on the ESP axis must not pull the fitted rate toward zero
    fits = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        samples = synth_characterization(URBAN_ESP, NoiseModel(2.0), rng, np.linspace(10, 150, 50), 10)
        fits.append(fit_path_loss(samples))
    assert np.mean([f.b for f in fits]) == pytest.approx(-0.0902, rel=0.01)
    assert np.mean([f.a for f in fits]) == pytest.approx(0.1973, rel=0.03)


def test_linear_fit_worse_over_wide_range():
    samples = _noiseless(URBAN_ESP, np.linspace(10, 1000, 40))
    exp_fit = fit_path_loss(samples, PathLossForm.EXPONENTIAL, FLAT)
    lin_fit = fit_path_loss(samples, PathLossForm.LINEAR, FLAT)
    assert lin_fit.form is PathLossForm.LINEAR
    assert lin_fit.rms_residual > exp_fit.rms_residual + 1.0


def test_fit_noise():
    same = [RadioSample(-70.0, 5.0, 30.0, 0.0) for _ in range(5)]
    assert fit_noise([same]).sigma == 0.0
    rng = np.random.default_rng(2)
    samples = synth_characterization(URBAN_ESP, NoiseModel(2.0), rng, np.linspace(10, 150, 20), 50, DEFAULT_ANTENNA)
    groups = group_by_geometry(samples)
    assert len(groups) == 20
    sigma = fit_noise(groups).sigma
    assert abs(sigma - 2.0) / 2.0 < 0.10
    shifted = [[RadioSample(s.rssi - 3.0 * k, s.snr, s.distance, s.theta) for s in g] for k, g in enumerate(groups)]
    assert fit_noise(shifted).sigma == pytest.approx(sigma, rel=1e-9)


def test_characterization_csv_round_trip(tmp_path):
    samples = synth_characterization(URBAN_ESP, SIMULATION_NOISE, np.random.default_rng(1), [10, 50, 100], 3)
    path = tmp_path / "char.csv"
    write_characterization_csv(path, samples)
    assert path.read_text().splitlines()[0] == "distance_m,theta_deg,rssi_dbm,snr_db"
    back = read_characterization_csv(path)
    assert len(back) == 9
    for a, b in zip(samples, back):
        assert (a.distance, a.theta, a.rssi, a.snr) == (b.distance, b.theta, b.rssi, b.snr)


def test_characterization_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("distance_m,theta_deg,rssi_dbm,snr_db\n10,0,-60,5\n20,0,abc,5\n")
    with pytest.raises(ParseError) as exc:
        read_characterization_csv(path)
    assert exc.value.line == 3
    assert exc.value.field == "rssi_dbm"
    path.write_text("distance,theta_deg,rssi_dbm,snr_db\n")
    with pytest.raises(ParseError):
        read_characterization_csv(path)

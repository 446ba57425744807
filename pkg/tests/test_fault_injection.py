import math

import numpy as np
import pytest

from fault_injection import (
    CompleteFailure,
    FaultEvent,
    FaultProfile,
    GrowingSinusoid,
    GrowingWhiteNoise,
    Sigmoid,
    StepBias,
    apply_faults,
    event_from_dict,
    fault_series,
    fault_signals,
    profile_from_dict,
    profile_to_dict,
)
from tools import DimensionError


def test_fault_free_profile_is_identity():
    phi, zeta = fault_signals(FaultProfile.fault_free(5), 12.0, 100)
    np.testing.assert_array_equal(phi, np.ones(5))
    np.testing.assert_array_equal(zeta, np.zeros(5))


def test_complete_failure_switches_sensor_off_at_onset():
    profile = FaultProfile(5, (FaultEvent(4, 5.0, CompleteFailure()),))
    before, _ = fault_signals(profile, 4.99, 0)
    after, zeta = fault_signals(profile, 5.0, 1)
    assert before[3] == 1.0
    np.testing.assert_array_equal(after, [1, 1, 1, 0, 1])
    assert not np.any(zeta)


def test_step_bias_on_two_sensors():
    profile = FaultProfile(5, (FaultEvent(1, 5.0, StepBias(1.0)), FaultEvent(5, 15.0, StepBias(1.0))))
    _, zeta_mid = fault_signals(profile, 10.0, 0)
    _, zeta_late = fault_signals(profile, 15.0, 0)
    np.testing.assert_array_equal(zeta_mid, [1, 0, 0, 0, 0])
    np.testing.assert_array_equal(zeta_late, [1, 0, 0, 0, 1])


def test_sigmoid_level():
    profile = FaultProfile(5, (FaultEvent(2, 5.0, Sigmoid(level=2.0, rate=1.0, center=10.0)),))
    _, zeta = fault_signals(profile, 10.0, 0)
    assert zeta[1] == pytest.approx(1.0)
    _, zeta = fault_signals(profile, 12.0, 0)
    assert zeta[1] == pytest.approx(2.0 / (1.0 + math.exp(-2.0)))


def test_growing_sinusoid_ramps_over_duration():
    kind = GrowingSinusoid(amplitude=5.0, frequency=0.25, ramp=10.0)
    profile = FaultProfile(5, (FaultEvent(3, 5.0, kind),))
    _, zeta = fault_signals(profile, 6.0, 0)
    assert zeta[2] == pytest.approx(5.0 * 0.1 * math.sin(2 * math.pi * 0.25 * 1.0))
    _, zeta = fault_signals(profile, 21.0, 0)
    assert zeta[2] == pytest.approx(5.0 * math.sin(2 * math.pi * 0.25 * 16.0), abs=1e-12)


def test_growing_white_noise_is_reproducible_per_sample():
    profile = FaultProfile(5, (FaultEvent(3, 5.0, GrowingWhiteNoise(ramp=10.0, sigma=1.0, seed=3)),))
    _, a = fault_signals(profile, 20.0, 17)
    _, b = fault_signals(profile, 20.0, 17)
    _, c = fault_signals(profile, 20.0, 18)
    assert a[2] == b[2]
    assert a[2] != c[2]
    _, at_onset = fault_signals(profile, 5.0, 17)
    assert at_onset[2] == 0.0


def test_negative_time_is_rejected():
    with pytest.raises(ValueError):
        fault_signals(FaultProfile.fault_free(2), -0.1, 0)


def test_profile_rejects_unknown_sensor_and_bad_onset():
    with pytest.raises(ValueError):
        FaultProfile(5, (FaultEvent(6, 1.0, CompleteFailure()),))
    with pytest.raises(ValueError):
        FaultEvent(1, -1.0, CompleteFailure())
    with pytest.raises(ValueError):
        FaultEvent(1, 1.0, GrowingSinusoid(amplitude=1.0, frequency=1.0, ramp=0.0))


def test_apply_faults_formula():
    y = np.array([1.0, 2.0, 3.0])
    v = np.array([0.1, 0.1, 0.1])
    phi = np.array([1.0, 0.0, 1.0])
    zeta = np.array([0.0, 5.0, -1.0])
    np.testing.assert_allclose(apply_faults(y, v, phi, zeta), [1.1, 0.0, 2.1])


def test_apply_faults_checks_shapes():
    with pytest.raises(DimensionError):
        apply_faults(np.zeros(3), np.zeros(2), np.ones(3), np.zeros(3))


def test_fault_series_matches_pointwise_signals():
    profile = FaultProfile(2, (FaultEvent(2, 0.5, GrowingWhiteNoise(ramp=1.0, sigma=1.0, seed=0)),))
    times = np.linspace(0.0, 2.0, 21)
    phi, zeta = fault_series(profile, times)
    assert phi.shape == zeta.shape == (21, 2)
    for k, t in enumerate(times):
        np.testing.assert_array_equal(zeta[k], fault_signals(profile, float(t), k)[1])


def test_first_onset():
    profile = FaultProfile(5, (FaultEvent(5, 15.0, StepBias(1.0)), FaultEvent(1, 5.0, StepBias(1.0))))
    assert profile.first_onset() == 5.0
    assert FaultProfile.fault_free(5).first_onset() is None


def test_profile_dict_round_trip():
    profile = FaultProfile(
        5,
        (
            FaultEvent(2, 5.0, Sigmoid(level=2.0, rate=1.0, center=10.0)),
            FaultEvent(4, 7.0, CompleteFailure()),
        ),
    )
    assert profile_from_dict(5, profile_to_dict(profile)) == profile


def test_event_from_dict_errors():
    with pytest.raises(ValueError, match="Unknown fault kind"):
        event_from_dict({"sensor": 1, "onset": 0.0, "kind": "meteor"})
    with pytest.raises(ValueError, match="missing"):
        event_from_dict({"sensor": 1, "kind": "step_bias", "level": 1.0})
    with pytest.raises(ValueError, match="Bad parameters"):
        event_from_dict({"sensor": 1, "onset": 0.0, "kind": "step_bias", "amplitude": 1.0})


def test_steep_sigmoid_far_before_center_is_finite():
    profile = FaultProfile(5, (FaultEvent(2, 5.0, Sigmoid(level=2.0, rate=100.0, center=15.0)),))
    _, zeta = fault_signals(profile, 5.0, 0)
    assert zeta[1] == pytest.approx(0.0, abs=1e-300)
    _, zeta = fault_signals(profile, 25.0, 0)
    assert zeta[1] == pytest.approx(2.0)
    phi, zeta = fault_series(profile, np.linspace(0.0, 30.0, 301))
    assert np.all(np.isfinite(zeta))
    assert np.all(np.diff(zeta[:, 1]) >= 0.0)


def test_complete_failure_never_switches_back_on():
    profile = FaultProfile(
        3,
        (
            FaultEvent(2, 1.0, CompleteFailure()),
            FaultEvent(2, 3.0, StepBias(4.0)),
            FaultEvent(1, 2.0, Sigmoid(level=1.0, rate=2.0, center=4.0)),
        ),
    )
    times = np.linspace(0.0, 10.0, 1001)
    phi, _ = fault_series(profile, times)
    off = phi[:, 1] == 0.0
    first_off = int(np.argmax(off))
    assert times[first_off] == pytest.approx(1.0)
    assert np.all(off[first_off:])
    assert not np.any(off[:first_off])


def test_event_from_dict_coerces_numeric_parameters():
    event = event_from_dict({"sensor": 1, "onset": 0.0, "kind": "growing_white_noise", "ramp": "2", "sigma": 1, "seed": 4.0})
    assert event.kind == GrowingWhiteNoise(ramp=2.0, sigma=1.0, seed=4)
    assert isinstance(event.kind.seed, int)
    assert isinstance(event.kind.sigma, float)


@pytest.mark.parametrize(
    "params",
    [
        {"kind": "step_bias", "level": "high"},
        {"kind": "step_bias", "level": None},
        {"kind": "step_bias", "level": True},
        {"kind": "sigmoid", "level": 1.0, "rate": float("inf"), "center": 2.0},
        {"kind": "growing_white_noise", "ramp": 1.0, "sigma": 1.0, "seed": 1.5},
    ],
)
def test_event_from_dict_rejects_non_numeric_parameters(params):
    with pytest.raises(ValueError, match="must be a finite"):
        event_from_dict({"sensor": 1, "onset": 0.0, **params})

import pytest

from fault_injection import CompleteFailure, GrowingSinusoid, GrowingWhiteNoise, Sigmoid, StepBias
from scenarios import ScenarioFactory, ScenarioId


def test_every_scenario_has_a_profile():
    for scenario in ScenarioId:
        profile = ScenarioFactory.for_scenario(scenario)
        assert profile.n_y == 5
        assert not profile.is_fault_free
        assert scenario.description


def test_scenario_defaults():
    a = ScenarioFactory.for_scenario("a")
    assert a.events[0].sensor == 4 and isinstance(a.events[0].kind, CompleteFailure)

    b = ScenarioFactory.for_scenario(ScenarioId.STEP_DEGRADATION)
    assert [(e.sensor, e.onset) for e in b.events] == [(1, 5.0), (5, 15.0)]
    assert all(isinstance(e.kind, StepBias) for e in b.events)

    c = ScenarioFactory.for_scenario("c")
    assert c.events[0].sensor == 2 and isinstance(c.events[0].kind, Sigmoid)

    d = ScenarioFactory.for_scenario("d", seed=4)
    assert isinstance(d.events[0].kind, GrowingWhiteNoise) and d.events[0].kind.seed == 4

    e = ScenarioFactory.for_scenario("e")
    assert e.events[0].sensor == 3 and isinstance(e.events[0].kind, GrowingSinusoid)


def test_overrides_replace_single_parameters():
    profile = ScenarioFactory.sigmoid(rate=3.0)
    assert profile.events[0].kind.rate == 3.0
    assert profile.events[0].kind.level == 2.0


def test_unknown_override_is_rejected():
    with pytest.raises(ValueError, match="Unknown scenario parameter"):
        ScenarioFactory.complete_failure(level=1.0)


def test_unknown_scenario_id():
    with pytest.raises(ValueError):
        ScenarioFactory.for_scenario("f")

"""Built-in fault scenarios a..e.

Each factory method returns the default FaultProfile for one scenario; keyword
overrides replace individual event parameters so configs and tests can tweak a
single value without restating the whole profile.
"""

from __future__ import annotations

try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__
from typing import Any

from fault_injection import (
    CompleteFailure,
    FaultEvent,
    FaultProfile,
    GrowingSinusoid,
    GrowingWhiteNoise,
    Sigmoid,
    StepBias,
)
from tools import debug_print


class ScenarioId(StrEnum):
    COMPLETE_FAILURE = "a"
    STEP_DEGRADATION = "b"
    SIGMOID = "c"
    GROWING_NOISE = "d"
    GROWING_SINUSOID = "e"

    @property
    def description(self) -> str:
        return _DESCRIPTIONS[self]


_DESCRIPTIONS = {
    ScenarioId.COMPLETE_FAILURE: "Complete failure of sensor 4",
    ScenarioId.STEP_DEGRADATION: "Step degradation of sensors 1 and 5",
    ScenarioId.SIGMOID: "Smooth sigmoidal fault in sensor 2",
    ScenarioId.GROWING_NOISE: "Gradually increasing white noise in sensor 3",
    ScenarioId.GROWING_SINUSOID: "Gradually increasing sinusoidal signal in sensor 3",
}


def _build_params(defaults: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = defaults.copy()
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ValueError(f"Unknown scenario parameter(s): {sorted(unknown)}")
    merged.update(overrides)
    return merged


class ScenarioFactory:
    """Default fault profiles for the five reference scenarios."""

    @staticmethod
    def complete_failure(n_y: int = 5, **overrides: Any) -> FaultProfile:
        p = _build_params({"sensor": 4, "onset": 5.0}, overrides)
        return FaultProfile(n_y=n_y, events=(FaultEvent(p["sensor"], p["onset"], CompleteFailure()),))

    @staticmethod
    def step_degradation(n_y: int = 5, **overrides: Any) -> FaultProfile:
        p = _build_params(
            {"first_sensor": 1, "first_onset": 5.0, "second_sensor": 5, "second_onset": 15.0, "level": 1.0},
            overrides,
        )
        return FaultProfile(
            n_y=n_y,
            events=(
                FaultEvent(p["first_sensor"], p["first_onset"], StepBias(p["level"])),
                FaultEvent(p["second_sensor"], p["second_onset"], StepBias(p["level"])),
            ),
        )

    @staticmethod
    def sigmoid(n_y: int = 5, **overrides: Any) -> FaultProfile:
        p = _build_params({"sensor": 2, "onset": 5.0, "level": 2.0, "rate": 1.0, "center": 10.0}, overrides)
        kind = Sigmoid(level=p["level"], rate=p["rate"], center=p["center"])
        return FaultProfile(n_y=n_y, events=(FaultEvent(p["sensor"], p["onset"], kind),))

    @staticmethod
    def growing_noise(n_y: int = 5, **overrides: Any) -> FaultProfile:
        p = _build_params({"sensor": 3, "onset": 5.0, "ramp": 10.0, "sigma": 1.0, "seed": 0}, overrides)
        kind = GrowingWhiteNoise(ramp=p["ramp"], sigma=p["sigma"], seed=p["seed"])
        return FaultProfile(n_y=n_y, events=(FaultEvent(p["sensor"], p["onset"], kind),))

    @staticmethod
    def growing_sinusoid(n_y: int = 5, **overrides: Any) -> FaultProfile:
        p = _build_params({"sensor": 3, "onset": 5.0, "amplitude": 5.0, "frequency": 2.0, "ramp": 10.0}, overrides)
        kind = GrowingSinusoid(amplitude=p["amplitude"], frequency=p["frequency"], ramp=p["ramp"])
        return FaultProfile(n_y=n_y, events=(FaultEvent(p["sensor"], p["onset"], kind),))

    @classmethod
    def for_scenario(cls, scenario: ScenarioId | str, n_y: int = 5, seed: int = 0) -> FaultProfile:
        scenario = ScenarioId(scenario)
        debug_print("Scenarios", f"Building default profile for scenario {scenario.value}: {scenario.description}")
        if scenario is ScenarioId.COMPLETE_FAILURE:
            return cls.complete_failure(n_y)
        if scenario is ScenarioId.STEP_DEGRADATION:
            return cls.step_degradation(n_y)
        if scenario is ScenarioId.SIGMOID:
            return cls.sigmoid(n_y)
        if scenario is ScenarioId.GROWING_NOISE:
            return cls.growing_noise(n_y, seed=seed)
        return cls.growing_sinusoid(n_y)

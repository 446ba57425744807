"""Sensor fault model: y = phi * (h(x) + v + zeta).

phi_i in {0, 1} switches sensor i off (complete failure), zeta_i adds a
degradation signal. Sensors are numbered from 1 everywhere a user sees them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Union

import numpy as np
from scipy.special import expit

from tools import DimensionError, debug_print


@dataclass(frozen=True)
class CompleteFailure:
    name = "complete_failure"


@dataclass(frozen=True)
class StepBias:
    level: float
    name = "step_bias"


@dataclass(frozen=True)
class Sigmoid:
    level: float
    rate: float
    center: float
    name = "sigmoid"


@dataclass(frozen=True)
class GrowingWhiteNoise:
    ramp: float
    sigma: float
    seed: int
    name = "growing_white_noise"


@dataclass(frozen=True)
class GrowingSinusoid:
    amplitude: float
    frequency: float
    ramp: float
    name = "growing_sinusoid"


FaultKind = Union[CompleteFailure, StepBias, Sigmoid, GrowingWhiteNoise, GrowingSinusoid]

KIND_TYPES: dict[str, type] = {
    kind.name: kind for kind in (CompleteFailure, StepBias, Sigmoid, GrowingWhiteNoise, GrowingSinusoid)
}


@dataclass(frozen=True)
class FaultEvent:
    sensor: int
    onset: float
    kind: FaultKind

    def __post_init__(self) -> None:
        if not np.isfinite(self.onset) or self.onset < 0:
            raise ValueError(f"Fault onset must be a finite time >= 0, got {self.onset}")
        if isinstance(self.kind, (GrowingWhiteNoise, GrowingSinusoid)) and not self.kind.ramp > 0:
            raise ValueError("Growing faults need a positive ramp duration.")


@dataclass(frozen=True)
class FaultProfile:
    n_y: int
    events: tuple[FaultEvent, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))
        for event in self.events:
            if not 1 <= event.sensor <= self.n_y:
                raise ValueError(f"Fault on sensor {event.sensor} but only sensors 1..{self.n_y} exist.")

    @classmethod
    def fault_free(cls, n_y: int) -> "FaultProfile":
        return cls(n_y=n_y, events=())

    @property
    def is_fault_free(self) -> bool:
        return not self.events

    def first_onset(self) -> float | None:
        return min((event.onset for event in self.events), default=None)


def _ramp(t: float, onset: float, duration: float) -> float:
    return min(max(t - onset, 0.0) / duration, 1.0)


def _degradation(event: FaultEvent, t: float, k: int) -> float:
    kind = event.kind
    if isinstance(kind, StepBias):
        return kind.level
    if isinstance(kind, Sigmoid):
        return kind.level * float(expit(kind.rate * (t - kind.center)))
    if isinstance(kind, GrowingWhiteNoise):
        # one fresh generator per (seed, k) keeps draws independent of evaluation order
        draw = np.random.default_rng([kind.seed, k]).standard_normal()
        return kind.sigma * _ramp(t, event.onset, kind.ramp) * float(draw)
    if isinstance(kind, GrowingSinusoid):
        return (
            kind.amplitude
            * _ramp(t, event.onset, kind.ramp)
            * math.sin(2.0 * math.pi * kind.frequency * (t - event.onset))
        )
    return 0.0


def fault_signals(profile: FaultProfile, t: float, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Returns (phi, zeta) at time t / sample index k. Events stay active once started."""
    if t < 0:
        raise ValueError("fault_signals needs t >= 0.")
    phi = np.ones(profile.n_y)
    zeta = np.zeros(profile.n_y)
    for event in profile.events:
        if t < event.onset:
            continue
        i = event.sensor - 1
        if isinstance(event.kind, CompleteFailure):
            phi[i] = 0.0
        else:
            zeta[i] += _degradation(event, t, k)
    return phi, zeta


def fault_series(profile: FaultProfile, times: Iterable[float]) -> tuple[np.ndarray, np.ndarray]:
    """Evaluates fault_signals on a sample grid; row k uses sample index k."""
    times = np.asarray(list(times), dtype=np.float64)
    phi = np.ones((len(times), profile.n_y))
    zeta = np.zeros((len(times), profile.n_y))
    if profile.is_fault_free:
        return phi, zeta
    for k, t in enumerate(times):
        phi[k], zeta[k] = fault_signals(profile, float(t), k)
    return phi, zeta


def apply_faults(y_clean: np.ndarray, v: np.ndarray, phi: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """y_i = phi_i * (y_clean_i + v_i + zeta_i); works on single samples or whole series."""
    arrays = [np.asarray(a, dtype=np.float64) for a in (y_clean, v, phi, zeta)]
    shape = arrays[0].shape
    for name, arr in zip(("v", "phi", "zeta"), arrays[1:]):
        if arr.shape != shape:
            raise DimensionError(f"apply_faults: {name} has shape {arr.shape}, y_clean has {shape}")
    y_clean, v, phi, zeta = arrays
    return phi * (y_clean + v + zeta)


def event_from_dict(entry: dict[str, Any]) -> FaultEvent:
    """Builds one event from its config table: {sensor, onset, kind, **kind parameters}."""
    entry = dict(entry)
    try:
        sensor = int(entry.pop("sensor"))
        onset = float(entry.pop("onset"))
        kind_name = str(entry.pop("kind"))
    except KeyError as missing:
        raise ValueError(f"Fault event is missing required field {missing}") from None
    kind_type = KIND_TYPES.get(kind_name)
    if kind_type is None:
        raise ValueError(f"Unknown fault kind '{kind_name}'. Known kinds: {sorted(KIND_TYPES)}")
    fields = kind_type.__dataclass_fields__
    unknown = sorted(set(entry) - set(fields))
    missing = sorted(set(fields) - set(entry))
    if unknown or missing:
        raise ValueError(f"Bad parameters for fault kind '{kind_name}': unknown {unknown}, missing {missing}")
    params: dict[str, Any] = {}
    for key, value in entry.items():
        cast = int if fields[key].type in (int, "int") else float
        try:
            number = float(value)
        except (TypeError, ValueError):
            number = math.nan
        if isinstance(value, bool) or not math.isfinite(number) or (cast is int and not number.is_integer()):
            raise ValueError(f"Fault kind '{kind_name}' parameter '{key}' must be a finite {cast.__name__}, got {value!r}")
        params[key] = cast(number)
    kind = kind_type(**params)
    return FaultEvent(sensor=sensor, onset=onset, kind=kind)


def profile_from_dict(n_y: int, events: Iterable[dict[str, Any]]) -> FaultProfile:
    profile = FaultProfile(n_y=n_y, events=tuple(event_from_dict(entry) for entry in events))
    debug_print("FaultInjection", f"Loaded fault profile with {len(profile.events)} event(s).")
    return profile


def profile_to_dict(profile: FaultProfile) -> list[dict[str, Any]]:
    entries = []
    for event in profile.events:
        entry: dict[str, Any] = {"sensor": event.sensor, "onset": event.onset, "kind": event.kind.name}
        entry.update({key: getattr(event.kind, key) for key in event.kind.__dataclass_fields__})
        entries.append(entry)
    return entries

"""Residual generation, thresholds and fault detection / isolation.

Detection compares residuals r_i = |y_i - yhat_i| with the theoretical
thresholds tau_i. Isolation compares the differentiated residuals
|r_i(t_k) - r_i(t_k-1)| / delta with the empirical threshold r_delta.
Sensors are reported 1-based.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.linalg import expm

from dynamics import NoiseSpec, Plant, latin_hypercube, sample_measurement_noise, simulate
from fault_injection import FaultProfile, apply_faults, fault_series, profile_to_dict
from kkl_observer import (
    KAPPA_CAP,
    LatentState,
    TrainingDataset,
    eigen_structure,
    latent_rk4,
    min_decay_rate,
    run_latent_filter,
)
from neural_transform import ObserverModel, estimate_errors, lipschitz_upper_bound, mlp_forward, predict_states
from tools import ContractionError, DimensionError, debug_print, derive_seed, write_json


@dataclass
class ResidualSeries:
    delta: float
    r: np.ndarray
    r_tilde: np.ndarray
    t0: float = 0.0

    def __post_init__(self) -> None:
        if self.r.ndim != 2 or self.r_tilde.ndim != 2:
            raise DimensionError("Residual series must be (samples, sensors) arrays.")
        if self.r_tilde.shape != (self.r.shape[0] - 1, self.r.shape[1]):
            raise DimensionError(f"r_tilde {self.r_tilde.shape} must have one row fewer than r {self.r.shape}.")
        if np.any(self.r < 0) or np.any(self.r_tilde < 0):
            raise ValueError("Residuals are absolute values and cannot be negative.")

    @property
    def n_y(self) -> int:
        return self.r.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.delta * np.arange(self.r.shape[0])

    @property
    def times_tilde(self) -> np.ndarray:
        """r_tilde row j belongs to sample j + 1."""
        return self.times[1:]


def residuals(y_meas: np.ndarray, y_pred: np.ndarray) -> np.ndarray:
    y_meas = np.asarray(y_meas, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_meas.shape != y_pred.shape:
        raise DimensionError(f"Measured {y_meas.shape} and predicted {y_pred.shape} outputs differ in shape.")
    return np.abs(y_meas - y_pred)


def differentiated_residuals(r: np.ndarray, delta: float) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape[0] < 2:
        raise ValueError("Differentiating a residual needs at least two samples.")
    if not delta > 0:
        raise ValueError("Sample spacing must be positive.")
    return np.abs(np.diff(r, axis=0)) / delta


def residual_series(y_meas: np.ndarray, y_pred: np.ndarray, delta: float, t0: float = 0.0) -> ResidualSeries:
    r = residuals(y_meas, y_pred)
    return ResidualSeries(delta=delta, r=r, r_tilde=differentiated_residuals(r, delta), t0=t0)


def differentiated_residual_norm(r_tilde: np.ndarray) -> np.ndarray:
    """System-level alarm signal ||r_tilde(t_k)||_2 across sensors."""
    return np.linalg.norm(np.asarray(r_tilde, dtype=np.float64), axis=-1)


# --- thresholds --------------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdParams:
    v_bar: float
    w_bar: float
    psi_wbar: float
    l_h: float
    l_hi: np.ndarray
    kappa_V: float
    c: float
    norm_B: float
    eps_star_hat: float
    l_theta: Optional[float] = None
    l_eta: Optional[float] = None
    xi_bound: Optional[float] = None
    xi_star_bound: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "l_hi", np.atleast_1d(np.asarray(self.l_hi, dtype=np.float64)))
        if not self.c > 0:
            raise ValueError(f"Decay rate c must be positive, got {self.c}")
        scalars = {
            "v_bar": self.v_bar, "w_bar": self.w_bar, "psi_wbar": self.psi_wbar, "l_h": self.l_h,
            "kappa_V": self.kappa_V, "norm_B": self.norm_B, "eps_star_hat": self.eps_star_hat,
            "l_theta": self.l_theta, "l_eta": self.l_eta, "xi_bound": self.xi_bound, "xi_star_bound": self.xi_star_bound,
        }
        for name, value in scalars.items():
            if value is not None and not value >= 0:
                raise ValueError(f"ThresholdParams.{name} must be >= 0, got {value}")
        if np.any(self.l_hi < 0):
            raise ValueError("Per-sensor Lipschitz constants must be >= 0.")

    @property
    def n_y(self) -> int:
        return len(self.l_hi)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["l_hi"] = self.l_hi.tolist()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ThresholdParams":
        return cls(**data)


def _noise_gain(params: ThresholdParams, n_y: int) -> float:
    """(kappa/c) ||B|| (l_h psi + sqrt(n_y) v_bar): the steady-state bound on ||z_tilde||."""
    return params.kappa_V / params.c * params.norm_B * (params.l_h * params.psi_wbar + math.sqrt(n_y) * params.v_bar)


def theoretical_thresholds(params: ThresholdParams, n_y: int) -> np.ndarray:
    """tau_i = v_bar + l_hi [eps* + (kappa/c) ||B|| (l_h psi(w_bar) + sqrt(n_y) v_bar)]."""
    if not params.c > 0:
        raise ValueError("theoretical_thresholds needs c > 0.")
    if params.n_y != n_y:
        raise DimensionError(f"Got {params.n_y} per-sensor Lipschitz constants for {n_y} sensors.")
    return params.v_bar + params.l_hi * (params.eps_star_hat + _noise_gain(params, n_y))


def bound_contraction(params: ThresholdParams, xi_bound: float, xi_star_bound: float, i: int) -> float:
    """Fault-free residual bound when both networks are contractions (sensor i is 1-based)."""
    if params.l_theta is None or params.l_eta is None:
        raise ValueError("bound_contraction needs both network Lipschitz constants.")
    product = params.l_theta * params.l_eta
    if product >= 1.0:
        raise ContractionError(f"l_theta * l_eta = {product:.6g} >= 1; the contraction bound does not apply.")
    return float(params.l_hi[i - 1] * (params.l_eta * xi_bound + xi_star_bound) / (1.0 - product) + params.v_bar)


def bound_ztilde(params: ThresholdParams, z_tilde0_norm: float, t):
    """kappa e^{-ct} ||z_tilde0|| + (kappa/c) ||B|| (1 - e^{-ct}) (l_h psi + sqrt(n_y) v_bar); t may be an array."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValueError("bound_ztilde needs t >= 0.")
    decay = np.exp(-params.c * t_arr)
    bound = params.kappa_V * decay * z_tilde0_norm + (1.0 - decay) * _noise_gain(params, params.n_y)
    return float(bound) if bound.ndim == 0 else bound


def bound_residual(params: ThresholdParams, z_tilde0_norm: float, t, i: int):
    """Time-varying residual bound with eps* standing in for xi*(z); tends to tau_i as t grows."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValueError("bound_residual needs t >= 0.")
    l_eta = params.l_eta
    if l_eta is None:
        if z_tilde0_norm != 0:
            raise ValueError("bound_residual needs l_eta when the initial latent error is nonzero.")
        l_eta = 0.0
    decay = np.exp(-params.c * t_arr)
    transient = l_eta * params.kappa_V * decay * z_tilde0_norm
    steady = (1.0 - decay) * _noise_gain(params, params.n_y)
    bound = params.v_bar + params.l_hi[i - 1] * (params.eps_star_hat + transient + steady)
    return float(bound) if bound.ndim == 0 else bound


def verify_exp_inequalities(
    A: np.ndarray,
    t_grid: Sequence[float],
    B: Optional[np.ndarray] = None,
    quadrature_points: int = 10_000,
    rtol: float = 1e-6,
) -> dict:
    """Checks ||exp(At)|| <= kappa e^{-ct} and int_0^t ||exp(A s) B|| ds <= (kappa/c) ||B|| (1 - e^{-ct}).

    The integral uses composite Simpson on a uniform grid over [0, max t]. Matrices
    whose eigenvector basis is worse conditioned than KAPPA_CAP are reported as
    inapplicable instead of checked.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.eye(A.shape[0]) if B is None else np.asarray(B, dtype=np.float64)
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if np.any(t_grid < 0):
        raise ValueError("Time grid must be nonnegative.")
    c = min_decay_rate(A)
    _, _, kappa = eigen_structure(A)
    if not kappa <= KAPPA_CAP:
        return {"applicable": False, "reason": f"eigenvector condition number {kappa:.3g} exceeds {KAPPA_CAP:.0e}", "c": c}

    norm_B = float(np.linalg.norm(B, 2))
    exp_lhs = np.array([np.linalg.norm(expm(A * t), 2) for t in t_grid])
    exp_rhs = kappa * np.exp(-c * t_grid)

    integral = np.zeros_like(t_grid)
    if t_grid.max() > 0:
        s = np.linspace(0.0, float(t_grid.max()), quadrature_points)
        step = expm(A * (s[1] - s[0]))
        integrand = np.empty(quadrature_points)
        M = B.copy()
        for j in range(quadrature_points):
            integrand[j] = np.linalg.norm(M, 2)
            M = step @ M
        integral = np.interp(t_grid, s, cumulative_simpson(integrand, x=s, initial=0.0))
    int_rhs = kappa / c * norm_B * (1.0 - np.exp(-c * t_grid))

    exp_ok = exp_lhs <= exp_rhs * (1.0 + rtol) + 1e-15
    int_ok = integral <= int_rhs * (1.0 + rtol) + 1e-12
    return {
        "applicable": True,
        "c": c,
        "kappa_V": kappa,
        "norm_B": norm_B,
        "points": int(len(t_grid)),
        "exp_ok": bool(np.all(exp_ok)),
        "integral_ok": bool(np.all(int_ok)),
        "max_exp_ratio": float(np.max(np.divide(exp_lhs, exp_rhs, out=np.zeros_like(exp_lhs), where=exp_rhs > 0))),
        "max_integral_ratio": float(np.max(np.divide(integral, int_rhs, out=np.zeros_like(integral), where=int_rhs > 0))),
        "violations": [float(t) for t in t_grid[~(exp_ok & int_ok)]],
    }


def _post_cutoff_rows(series: ResidualSeries, t_c: float) -> np.ndarray:
    return series.times_tilde >= t_c - 1e-12


def empirical_threshold(runs: Iterable[ResidualSeries], t_c: float) -> float:
    """r_delta = max over runs, sensors and samples t_k >= t_c of r_tilde."""
    runs = list(runs)
    if not runs:
        raise ValueError("empirical_threshold needs at least one fault-free run.")
    peak = 0.0
    for series in runs:
        keep = _post_cutoff_rows(series, t_c)
        if not np.any(keep):
            raise ValueError(f"A run ending at t={series.times[-1]:.6g} is shorter than t_c={t_c}.")
        peak = max(peak, float(np.max(series.r_tilde[keep])))
    return peak


def empirical_norm_threshold(runs: Iterable[ResidualSeries], t_c: float) -> float:
    runs = list(runs)
    if not runs:
        raise ValueError("empirical_norm_threshold needs at least one fault-free run.")
    peak = 0.0
    for series in runs:
        keep = _post_cutoff_rows(series, t_c)
        if not np.any(keep):
            raise ValueError(f"A run ending at t={series.times[-1]:.6g} is shorter than t_c={t_c}.")
        peak = max(peak, float(np.max(differentiated_residual_norm(series.r_tilde[keep]))))
    return peak


@dataclass
class Thresholds:
    tau: np.ndarray
    r_delta: float
    params: ThresholdParams
    t_c: float
    r_delta_norm: Optional[float] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.tau = np.asarray(self.tau, dtype=np.float64)
        if np.any(self.tau < 0) or self.r_delta < 0:
            raise ValueError("Thresholds must be nonnegative.")

    def describe(self) -> dict:
        return {
            "tau": self.tau.tolist(),
            "r_delta": self.r_delta,
            "r_delta_norm": self.r_delta_norm,
            "t_c": self.t_c,
            "params": self.params.to_dict(),
            "provenance": dict(self.provenance),
        }


# --- detection / isolation ---------------------------------------------------------------------

class EventKind(StrEnum):
    DETECTION = "detection"
    ISOLATION = "isolation"
    NORM_ALARM = "norm_alarm"


@dataclass(frozen=True)
class FdiEvent:
    kind: EventKind
    sensors: tuple[int, ...]
    onset: float
    end: float
    peak: float
    threshold: float
    dominant: Optional[bool] = None

    def to_dict(self) -> dict:
        data = {
            "kind": self.kind.value,
            "sensors": list(self.sensors),
            "onset": self.onset,
            "end": self.end,
            "peak": self.peak,
            "threshold": self.threshold,
        }
        if self.dominant is not None:
            data["dominant"] = self.dominant
        return data


def _coalesce(times: np.ndarray, values: np.ndarray, limits: np.ndarray, t_c: float, kind: EventKind) -> list[FdiEvent]:
    """Groups consecutive samples where any column exceeds its limit into one event."""
    exceed = (values > limits) & (times[:, None] >= t_c - 1e-12)
    active = np.any(exceed, axis=1)
    events = []
    k = 0
    n = len(times)
    while k < n:
        if not active[k]:
            k += 1
            continue
        start = k
        while k < n and active[k]:
            k += 1
        block = slice(start, k)
        excess = np.where(exceed[block], values[block] - limits, -np.inf)
        row, col = np.unravel_index(np.argmax(excess), excess.shape)
        sensors = tuple(int(i) + 1 for i in np.flatnonzero(np.any(exceed[block], axis=0)))
        events.append(
            FdiEvent(
                kind=kind,
                sensors=sensors,
                onset=float(times[start]),
                end=float(times[k - 1]),
                peak=float(values[start + row, col]),
                threshold=float(limits[col]),
            )
        )
    return events


def detect(series: ResidualSeries, tau: np.ndarray, t_c: float) -> list[FdiEvent]:
    """One Detection event per run of consecutive samples (t >= t_c) where any r_i > tau_i."""
    tau = np.asarray(tau, dtype=np.float64)
    if tau.shape != (series.n_y,):
        raise DimensionError(f"Need one threshold per sensor ({series.n_y}), got {tau.shape}")
    return _coalesce(series.times, series.r, tau, t_c, EventKind.DETECTION)


def detect_by_norm(series: ResidualSeries, r_delta_norm: float, t_c: float) -> list[FdiEvent]:
    norms = differentiated_residual_norm(series.r_tilde)[:, None]
    events = _coalesce(series.times_tilde, norms, np.array([r_delta_norm]), t_c, EventKind.NORM_ALARM)
    # the norm channel is system-level; no sensor attribution
    return [FdiEvent(e.kind, (), e.onset, e.end, e.peak, e.threshold) for e in events]


def isolate(series: ResidualSeries, r_delta: float, t_c: float) -> list[FdiEvent]:
    """One Isolation event per (sample, sensor) with r_tilde_i > r_delta and t >= t_c."""
    times = series.times_tilde
    keep = _post_cutoff_rows(series, t_c)
    events = []
    for j in np.flatnonzero(keep & np.any(series.r_tilde > r_delta, axis=1)):
        row = series.r_tilde[j]
        top = float(np.max(row))
        for i in np.flatnonzero(row > r_delta):
            events.append(
                FdiEvent(
                    kind=EventKind.ISOLATION,
                    sensors=(int(i) + 1,),
                    onset=float(times[j]),
                    end=float(times[j]),
                    peak=float(row[i]),
                    threshold=float(r_delta),
                    dominant=bool(row[i] == top),
                )
            )
    return events


# --- observer runs -----------------------------------------------------------------------------

def observer_outputs(
    model: ObserverModel, plant: Plant, y: np.ndarray, delta: float, z0: Optional[np.ndarray] = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Latent filter on measured y, decoder, then h. Returns (zhat, xhat, yhat); y may be batched."""
    Z = run_latent_filter(model.obs, y, delta, z0)
    X_hat = predict_states(model.decoder, Z)
    return Z, X_hat, plant.output(X_hat)


def estimate_psi(
    plant: Plant,
    x0_set: np.ndarray,
    noise: NoiseSpec,
    t_span: Sequence[float],
    n_samples: int,
    seed: int,
) -> float:
    """max ||x_noisy(t) - x_clean(t)|| over paired runs from the same initial states."""
    if noise.process_var == 0.0:
        return 0.0
    x0_set = np.atleast_2d(np.asarray(x0_set, dtype=np.float64))
    clean = simulate(plant.rhs, x0_set, t_span, n_samples, NoiseSpec(), seed)
    noisy = simulate(plant.rhs, x0_set, t_span, n_samples, noise, seed)
    psi = float(np.max(np.linalg.norm(noisy.states - clean.states, axis=-1)))
    debug_print("FdiEngine", f"Estimated psi(w_bar) = {psi:.6g} from {len(x0_set)} paired runs.")
    return psi


def estimate_output_lipschitz(
    plant: Plant, bounds: Sequence[Sequence[float]], n_samples: int, seed: int
) -> tuple[float, np.ndarray]:
    """Sampled max of ||dh/dx||_2 and of each row norm over the box; an estimate, not a certificate."""
    points = latin_hypercube(n_samples, bounds, seed)
    l_h = 0.0
    l_hi = np.zeros(plant.n_y)
    for x in points:
        J = np.atleast_2d(plant.output_jacobian(x))
        l_h = max(l_h, float(np.linalg.norm(J, 2)))
        l_hi = np.maximum(l_hi, np.linalg.norm(J, axis=1))
    return l_h, l_hi


def _noisy_measurements(plant: Plant, x0: np.ndarray, noise: NoiseSpec, t_span, n_samples: int, seed: int):
    trajectory = simulate(plant.rhs, x0, t_span, n_samples, noise, derive_seed(seed, 0), plant.output)
    v = sample_measurement_noise(n_samples, plant.n_y, noise, derive_seed(seed, 1))
    return trajectory, v


def fault_free_runs(
    model: ObserverModel,
    plant: Plant,
    x0_set: np.ndarray,
    noise: NoiseSpec,
    t_span: Sequence[float],
    n_samples: int,
    seed: int,
    workers: int = 1,
    chunk: int = 10,
) -> list[ResidualSeries]:
    """Residual series of noisy fault-free runs; run j uses seed derive_seed(seed, j), zhat(0) = 0."""
    x0_set = np.atleast_2d(np.asarray(x0_set, dtype=np.float64))
    runs: list[ResidualSeries] = []
    for start in range(0, len(x0_set), chunk):
        indices = range(start, min(start + chunk, len(x0_set)))

        def one(j: int):
            return _noisy_measurements(plant, x0_set[j], noise, t_span, n_samples, derive_seed(seed, j))

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="calibrate") as pool:
                sims = list(pool.map(one, indices))
        else:
            sims = [one(j) for j in indices]
        y = np.stack([traj.outputs + v for traj, v in sims])
        delta = sims[0][0].delta
        _, _, y_hat = observer_outputs(model, plant, y, delta)
        for row in range(len(sims)):
            runs.append(residual_series(y[row], y_hat[row], delta, sims[row][0].t0))
    return runs


def calibrate(
    model: ObserverModel,
    plant: Plant,
    test_dataset: TrainingDataset,
    noise: NoiseSpec,
    seed: int,
    t_c: Optional[float] = None,
    psi_override: Optional[float] = None,
    workers: int = 1,
    provenance: Optional[dict] = None,
) -> Thresholds:
    """tau_i from the closed-form bound and r_delta from noisy fault-free replays of the test set."""
    model.check_plant(plant)
    if test_dataset.n_trajectories == 0:
        raise ValueError("Calibration needs a nonempty test set.")
    obs = model.obs
    t_c = 5.0 / obs.c if t_c is None else float(t_c)
    t_span = (test_dataset.t0, test_dataset.t0 + test_dataset.delta * (test_dataset.n_samples - 1))
    x0_set = test_dataset.states[:, 0]

    errors = estimate_errors(model.encoder, model.decoder, test_dataset)
    l_h, l_hi = plant.output_lipschitz()
    if psi_override is not None:
        psi = float(psi_override)
    else:
        psi = estimate_psi(plant, x0_set, noise, t_span, test_dataset.n_samples, derive_seed(seed, 11))
    params = ThresholdParams(
        v_bar=noise.v_bar,
        w_bar=noise.w_bar,
        psi_wbar=psi,
        l_h=l_h,
        l_hi=l_hi,
        kappa_V=obs.kappa_V,
        c=obs.c,
        norm_B=obs.norm_B,
        eps_star_hat=errors.eps_star_hat,
        l_theta=lipschitz_upper_bound(model.encoder) if model.encoder is not None else None,
        l_eta=lipschitz_upper_bound(model.decoder),
        xi_bound=errors.eps_hat,
        xi_star_bound=errors.eps_star_hat,
    )
    tau = theoretical_thresholds(params, plant.n_y)

    runs = fault_free_runs(model, plant, x0_set, noise, t_span, test_dataset.n_samples, derive_seed(seed, 12), workers)
    r_delta = empirical_threshold(runs, t_c)
    r_delta_norm = empirical_norm_threshold(runs, t_c)
    debug_print("FdiEngine", f"Calibrated tau={np.round(tau, 6).tolist()} r_delta={r_delta:.6g} on {len(runs)} runs")
    meta = {"n_runs": len(runs), "seed": seed}
    meta.update(provenance or {})
    return Thresholds(tau=tau, r_delta=r_delta, params=params, t_c=t_c, r_delta_norm=r_delta_norm, provenance=meta)


@dataclass
class FdiReport:
    series: ResidualSeries
    y: np.ndarray
    y_hat: np.ndarray
    events: list[FdiEvent]
    thresholds: Thresholds
    meta: dict = field(default_factory=dict)

    def events_of(self, kind: EventKind) -> list[FdiEvent]:
        return [e for e in self.events if e.kind is kind]

    def summary(self) -> dict:
        detections = self.events_of(EventKind.DETECTION)
        isolations = self.events_of(EventKind.ISOLATION)
        first_fault = self.meta.get("first_fault_onset")
        first_isolation = min((e.onset for e in isolations), default=None)
        return {
            "detections": len(detections),
            "isolations": len(isolations),
            "norm_alarms": len(self.events_of(EventKind.NORM_ALARM)),
            "first_detection": min((e.onset for e in detections), default=None),
            "first_isolation": first_isolation,
            "isolated_sensors": sorted({e.sensors[0] for e in isolations}),
            "isolation_delay": (
                first_isolation - first_fault if first_isolation is not None and first_fault is not None else None
            ),
        }

    def events_payload(self) -> dict:
        return {
            "meta": self.meta,
            "thresholds": self.thresholds.describe(),
            "summary": self.summary(),
            "events": [event.to_dict() for event in self.events],
        }

    def write_events_json(self, path: Path) -> None:
        write_json(path, self.events_payload())

    def write_series_csv(self, path: Path) -> None:
        """Columns t, y_i, yhat_i, r_i, rtilde_i; rtilde is nan at the first sample."""
        n_y = self.series.n_y
        r_tilde = np.vstack([np.full((1, n_y), np.nan), self.series.r_tilde])
        table = np.hstack([self.series.times[:, None], self.y, self.y_hat, self.series.r, r_tilde])
        header = ["t"]
        for prefix in ("y", "yhat", "r", "rtilde"):
            header += [f"{prefix}{i + 1}" for i in range(n_y)]
        np.savetxt(Path(path), table, delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def _events_for(series: ResidualSeries, thresholds: Thresholds) -> list[FdiEvent]:
    events = detect(series, thresholds.tau, thresholds.t_c) + isolate(series, thresholds.r_delta, thresholds.t_c)
    if thresholds.r_delta_norm is not None:
        events += detect_by_norm(series, thresholds.r_delta_norm, thresholds.t_c)
    return sorted(events, key=_event_order)


def _event_order(event: FdiEvent):
    return (event.onset, event.kind.value, event.sensors)


def run_pipeline(
    model: ObserverModel,
    plant: Plant,
    profile: FaultProfile,
    noise: NoiseSpec,
    seed: int,
    thresholds: Thresholds,
    t_span: Sequence[float],
    n_samples: int,
    x0: Optional[np.ndarray] = None,
    x0_bounds: tuple[float, float] = (-2.0, 2.0),
) -> FdiReport:
    """simulate -> faults -> latent filter -> decoder -> h -> residuals -> detect / isolate."""
    model.check_plant(plant)
    if profile.n_y != plant.n_y:
        raise DimensionError(f"Fault profile covers {profile.n_y} sensors, plant has {plant.n_y}.")
    if thresholds.tau.shape != (plant.n_y,):
        raise DimensionError("Thresholds were calibrated for a different number of sensors.")
    if x0 is None:
        x0 = np.random.default_rng(derive_seed(seed, 2)).uniform(x0_bounds[0], x0_bounds[1], size=plant.n_x)
    trajectory, v = _noisy_measurements(plant, np.asarray(x0, dtype=np.float64), noise, t_span, n_samples, seed)
    phi, zeta = fault_series(profile, trajectory.times)
    y = apply_faults(trajectory.outputs, v, phi, zeta)
    _, _, y_hat = observer_outputs(model, plant, y, trajectory.delta)
    series = residual_series(y, y_hat, trajectory.delta, trajectory.t0)
    events = _events_for(series, thresholds)
    meta = {
        "seed": seed,
        "x0": np.asarray(x0).tolist(),
        "faults": profile_to_dict(profile),
        "first_fault_onset": profile.first_onset(),
        "delta": trajectory.delta,
        "n_samples": n_samples,
    }
    debug_print("FdiEngine", f"Pipeline run produced {len(events)} event(s).")
    return FdiReport(series=series, y=y, y_hat=y_hat, events=events, thresholds=thresholds, meta=meta)


class FdiMonitor:
    """Streaming detector: feed output samples in time order, collect events as they close."""

    def __init__(self, model: ObserverModel, plant: Plant, thresholds: Thresholds, delta: float, t0: float = 0.0) -> None:
        model.check_plant(plant)
        if not delta > 0:
            raise ValueError("FdiMonitor needs a positive sample spacing.")
        self.model = model
        self.plant = plant
        self.thresholds = thresholds
        self.delta = delta
        self.t0 = t0
        self.k = 0
        self.state = LatentState(z=np.zeros(model.obs.n_z), t=t0)
        self._y_prev: Optional[np.ndarray] = None
        self._r_prev: Optional[np.ndarray] = None
        self._open: Optional[dict] = None
        self._norm_open: Optional[dict] = None
        self.events: list[FdiEvent] = []
        self.r_history: list[np.ndarray] = []

    def _predict(self) -> np.ndarray:
        x_hat = mlp_forward(self.model.decoder, self.state.z[None, :])
        return self.plant.output(x_hat)[0]

    def push(self, y_k: np.ndarray) -> list[FdiEvent]:
        y_k = np.asarray(y_k, dtype=np.float64)
        if y_k.shape != (self.plant.n_y,):
            raise DimensionError(f"Expected a sample of length {self.plant.n_y}, got shape {y_k.shape}")
        if self._y_prev is not None:
            z = latent_rk4(self.model.obs, self.state.z, self._y_prev, y_k, self.delta)
            self.state = LatentState(z=z, t=self.t0 + self.k * self.delta)
        t = self.t0 + self.k * self.delta
        r = residuals(y_k, self._predict())
        self.r_history.append(r)
        new_events: list[FdiEvent] = []

        th = self.thresholds
        after_cutoff = t >= th.t_c - 1e-12
        exceed = (r > th.tau) & after_cutoff
        self._open = self._track(self._open, exceed, r, th.tau, t, EventKind.DETECTION, new_events)

        if self._r_prev is not None:
            r_tilde = np.abs(r - self._r_prev) / self.delta
            if after_cutoff:
                top = float(np.max(r_tilde))
                for i in np.flatnonzero(r_tilde > th.r_delta):
                    new_events.append(
                        FdiEvent(EventKind.ISOLATION, (int(i) + 1,), t, t, float(r_tilde[i]), float(th.r_delta), bool(r_tilde[i] == top))
                    )
            if th.r_delta_norm is not None:
                norm = np.array([float(np.linalg.norm(r_tilde))])
                limit = np.array([th.r_delta_norm])
                self._norm_open = self._track(
                    self._norm_open, (norm > limit) & after_cutoff, norm, limit, t, EventKind.NORM_ALARM, new_events
                )

        self._y_prev = y_k
        self._r_prev = r
        self.k += 1
        self.events.extend(new_events)
        return new_events

    @staticmethod
    def _track(current, exceed, values, limits, t, kind, sink):
        if np.any(exceed):
            excess = np.where(exceed, values - limits, -np.inf)
            col = int(np.argmax(excess))
            if current is None:
                current = {"onset": t, "sensors": set(), "best": -np.inf, "peak": 0.0, "threshold": 0.0}
            current["sensors"].update(int(i) + 1 for i in np.flatnonzero(exceed))
            current["end"] = t
            if excess[col] > current["best"]:
                current.update(best=excess[col], peak=float(values[col]), threshold=float(limits[col]))
            return current
        if current is not None:
            sink.append(FdiMonitor._close(current, kind))
        return None

    @staticmethod
    def _close(current: dict, kind: EventKind) -> FdiEvent:
        sensors = tuple(sorted(current["sensors"])) if kind is EventKind.DETECTION else ()
        return FdiEvent(kind, sensors, current["onset"], current["end"], current["peak"], current["threshold"])

    def finish(self) -> list[FdiEvent]:
        closing = []
        if self._open is not None:
            closing.append(self._close(self._open, EventKind.DETECTION))
            self._open = None
        if self._norm_open is not None:
            closing.append(self._close(self._norm_open, EventKind.NORM_ALARM))
            self._norm_open = None
        self.events.extend(closing)
        self.events.sort(key=_event_order)
        return closing


def observer_quality(
    model: ObserverModel,
    plant: Plant,
    thresholds: Thresholds,
    x0_set: np.ndarray,
    noise: NoiseSpec,
    t_span: Sequence[float],
    n_samples: int,
    seed: int,
    workers: int = 1,
) -> dict:
    """Share of post-cutoff samples with r_i <= tau_i, and of r_tilde_i above r_delta, on fresh fault-free runs."""
    runs = fault_free_runs(model, plant, x0_set, noise, t_span, n_samples, seed, workers)
    within = np.zeros(plant.n_y)
    above = np.zeros(plant.n_y)
    count = count_tilde = 0
    for series in runs:
        keep = series.times >= thresholds.t_c - 1e-12
        keep_tilde = _post_cutoff_rows(series, thresholds.t_c)
        within += np.sum(series.r[keep] <= thresholds.tau, axis=0)
        above += np.sum(series.r_tilde[keep_tilde] > thresholds.r_delta, axis=0)
        count += int(np.sum(keep))
        count_tilde += int(np.sum(keep_tilde))
    within_fraction = within / max(count, 1)
    exceedance = above / max(count_tilde, 1)
    return {
        "runs": len(runs),
        "within_tau_fraction": within_fraction.tolist(),
        "min_within_tau_fraction": float(np.min(within_fraction)),
        "r_tilde_exceedance": exceedance.tolist(),
        "max_r_tilde_exceedance": float(np.max(exceedance)),
    }

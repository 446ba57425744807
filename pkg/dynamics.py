"""Plant simulation: Kuramoto reference network, RK4 integration, noise and initial conditions.

Vector fields use the signature ``rhs(t, x)`` and must accept a batch of states
stacked along leading axes (last axis = state dimension). The shipped Kuramoto
plant does; user-defined systems only need to when they are simulated in batch.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from tools import DimensionError, debug_print, derive_seed

VectorField = Callable[[float, np.ndarray], np.ndarray]


class Plant(Protocol):
    """Interface the observer pipeline expects from a plant model."""

    n_x: int
    n_y: int

    def rhs(self, t: float, x: np.ndarray) -> np.ndarray: ...

    def output(self, x: np.ndarray) -> np.ndarray: ...

    def output_jacobian(self, x: np.ndarray) -> np.ndarray: ...

    def output_lipschitz(self) -> tuple[float, np.ndarray]: ...

    def describe(self) -> dict: ...


@dataclass(frozen=True)
class KuramotoParams:
    n: int
    omega: np.ndarray
    coupling: np.ndarray
    seed: int
    # +1 reproduces sin(theta_i - theta_j); -1 gives the conventional sin(theta_j - theta_i)
    sign: float = 1.0

    def __post_init__(self) -> None:
        omega = np.asarray(self.omega, dtype=np.float64)
        coupling = np.asarray(self.coupling, dtype=np.float64)
        if omega.shape != (self.n,):
            raise DimensionError(f"omega must have length {self.n}, got shape {omega.shape}")
        if coupling.shape != (self.n, self.n):
            raise DimensionError(f"coupling must be {self.n}x{self.n}, got shape {coupling.shape}")
        if np.any(coupling < 0):
            raise ValueError("Kuramoto couplings must be nonnegative.")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "coupling", coupling)

    @classmethod
    def from_seed(
        cls,
        n: int,
        seed: int,
        omega_range: tuple[float, float] = (-1.0, 1.0),
        coupling_range: tuple[float, float] = (0.0, 1.0),
        conventional_sign: bool = False,
    ) -> "KuramotoParams":
        """Draws omega_i ~ U(omega_range) and a_ij ~ U(coupling_range) from the seed."""
        if n < 1:
            raise ValueError("Kuramoto network needs at least one node.")
        rng = np.random.default_rng(seed)
        omega = rng.uniform(omega_range[0], omega_range[1], size=n)
        coupling = rng.uniform(coupling_range[0], coupling_range[1], size=(n, n))
        np.fill_diagonal(coupling, 0.0)
        return cls(n=n, omega=omega, coupling=coupling, seed=int(seed), sign=-1.0 if conventional_sign else 1.0)


@dataclass(frozen=True)
class NoiseSpec:
    process_var: float = 0.0
    meas_var: float = 0.0
    w_bar: float = 0.0
    v_bar: float = 0.0

    def __post_init__(self) -> None:
        for name in ("process_var", "meas_var", "w_bar", "v_bar"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"NoiseSpec.{name} must be a finite nonnegative number, got {value}")

    @classmethod
    def from_variances(cls, process_var: float, meas_var: float, bound_sigmas: float = 3.0) -> "NoiseSpec":
        """Essential bounds default to bound_sigmas standard deviations of each Gaussian."""
        return cls(
            process_var=float(process_var),
            meas_var=float(meas_var),
            w_bar=bound_sigmas * math.sqrt(process_var),
            v_bar=bound_sigmas * math.sqrt(meas_var),
        )

    @property
    def is_zero(self) -> bool:
        return self.process_var == 0.0 and self.meas_var == 0.0


@dataclass
class Trajectory:
    t0: float
    delta: float
    states: np.ndarray
    outputs: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if not self.delta > 0:
            raise ValueError("Trajectory sample spacing must be positive.")
        if self.outputs is not None:
            self.outputs = np.atleast_2d(np.asarray(self.outputs, dtype=np.float64))
            if self.outputs.shape[0] != self.states.shape[0]:
                raise DimensionError("Trajectory outputs must align 1:1 with states.")

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.delta * np.arange(self.n_samples)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.states)))

    def to_csv(self, path: Path) -> None:
        """Writes `t,x1..xn[,y1..ym]` with full double precision."""
        n_x = self.states.shape[1]
        columns = ["t"] + [f"x{i + 1}" for i in range(n_x)]
        blocks = [self.times[:, None], self.states]
        if self.outputs is not None:
            columns += [f"y{i + 1}" for i in range(self.outputs.shape[1])]
            blocks.append(self.outputs)
        np.savetxt(Path(path), np.hstack(blocks), delimiter=",", header=",".join(columns), comments="", fmt="%.17g")


@dataclass(frozen=True)
class KuramotoPlant:
    """Kuramoto network measured through a coordinate selection h(x) = x[measured]."""

    params: KuramotoParams
    measured: tuple[int, ...] = field(default=(0, 1, 2, 3, 4))

    def __post_init__(self) -> None:
        measured = tuple(int(i) for i in self.measured)
        if not measured:
            raise ValueError("At least one state must be measured.")
        if any(i < 0 or i >= self.params.n for i in measured):
            raise DimensionError(f"Measured indices {measured} fall outside a {self.params.n}-node network.")
        object.__setattr__(self, "measured", measured)

    @property
    def n_x(self) -> int:
        return self.params.n

    @property
    def n_y(self) -> int:
        return len(self.measured)

    def rhs(self, t: float, x: np.ndarray) -> np.ndarray:
        return kuramoto_rhs(x, self.params)

    def output(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_x:
            raise DimensionError(f"State has dimension {x.shape[-1]}, plant expects {self.n_x}.")
        return x[..., list(self.measured)]

    def output_jacobian(self, x: np.ndarray) -> np.ndarray:
        jac = np.zeros((self.n_y, self.n_x))
        jac[np.arange(self.n_y), list(self.measured)] = 1.0
        return jac

    def output_lipschitz(self) -> tuple[float, np.ndarray]:
        # coordinate selection: both constants are exactly one
        return 1.0, np.ones(self.n_y)

    def describe(self) -> dict:
        return {
            "model": "kuramoto",
            "n": self.params.n,
            "seed": self.params.seed,
            "sign": self.params.sign,
            "measured": [i + 1 for i in self.measured],
        }


def latin_hypercube(n_points: int, bounds: Sequence[Sequence[float]], seed: int) -> np.ndarray:
    """Stratified sample with exactly one point per stratum in every dimension.

    Each column is a random permutation of the strata plus a uniform offset inside
    the cell, then mapped affinely onto its interval.
    """
    if n_points < 1:
        raise ValueError("latin_hypercube needs at least one point.")
    bounds = [tuple(float(v) for v in interval) for interval in bounds]
    if not bounds:
        raise ValueError("latin_hypercube needs at least one interval.")
    for lo, hi in bounds:
        if not hi > lo:
            raise ValueError(f"Interval [{lo}, {hi}] is empty or inverted.")
    rng = np.random.default_rng(seed)
    unit = np.empty((n_points, len(bounds)))
    for dim in range(len(bounds)):
        unit[:, dim] = (rng.permutation(n_points) + rng.random(n_points)) / n_points
    lows = np.array([lo for lo, _ in bounds])
    highs = np.array([hi for _, hi in bounds])
    return lows + unit * (highs - lows)


def kuramoto_rhs(theta: np.ndarray, params: KuramotoParams) -> np.ndarray:
    """dtheta_i/dt = omega_i + sum_j a_ij sin(theta_i - theta_j); batched over leading axes."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] != params.n:
        raise DimensionError(f"theta has length {theta.shape[-1]}, network has {params.n} nodes.")
    diff = theta[..., :, None] - theta[..., None, :]
    return params.omega + params.sign * np.sum(params.coupling * np.sin(diff), axis=-1)


def rk4_step(rhs: VectorField, x: np.ndarray, t: float, delta: float) -> np.ndarray:
    """Classical 4-stage Runge-Kutta step. Non-finite states pass through as non-finite."""
    if not delta > 0:
        raise ValueError("RK4 step size must be positive.")
    k1 = rhs(t, x)
    k2 = rhs(t + 0.5 * delta, x + 0.5 * delta * k1)
    k3 = rhs(t + 0.5 * delta, x + 0.5 * delta * k2)
    k4 = rhs(t + delta, x + delta * k3)
    return x + (delta / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def sample_spacing(t_span: Sequence[float], n_samples: int) -> float:
    """Samples include both endpoints: delta = span / (n_samples - 1)."""
    t_start, t_end = float(t_span[0]), float(t_span[1])
    if n_samples < 2:
        raise ValueError("A trajectory needs at least two samples.")
    if not t_end > t_start:
        raise ValueError(f"Time span [{t_start}, {t_end}] must have positive length.")
    return (t_end - t_start) / (n_samples - 1)


def simulate(
    system: VectorField,
    x0: np.ndarray,
    t_span: Sequence[float],
    n_samples: int,
    noise: NoiseSpec,
    seed: int,
    output: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Trajectory:
    """RK4 simulation with piecewise-constant process noise.

    w_k ~ N(0, process_var) is drawn once per step and added to the vector field
    at all four stages. When process_var is zero no draws are made, so the
    result does not depend on the seed. ``output`` (if given) fills clean
    outputs h(x_k); measurement noise is handled by the caller.
    """
    delta = sample_spacing(t_span, n_samples)
    t_start = float(t_span[0])
    x = np.array(x0, dtype=np.float64)
    states = np.empty((n_samples,) + x.shape)
    states[0] = x
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(noise.process_var)
    for k in range(1, n_samples):
        t = t_start + (k - 1) * delta
        if sigma > 0.0:
            w = sigma * rng.standard_normal(x.shape)
            x = rk4_step(lambda tau, s, w=w: system(tau, s) + w, x, t, delta)
        else:
            x = rk4_step(system, x, t, delta)
        states[k] = x
    if not np.all(np.isfinite(states)):
        debug_print("Dynamics", f"Simulation from x0={np.asarray(x0).tolist()} produced non-finite states.", "ERROR")
    outputs = output(states) if output is not None else None
    return Trajectory(t0=t_start, delta=delta, states=states, outputs=outputs)


def simulate_batch(
    system: VectorField,
    x0_set: np.ndarray,
    t_span: Sequence[float],
    n_samples: int,
    noise: NoiseSpec,
    seed: int,
    output: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    workers: int = 1,
) -> list[Trajectory]:
    """Simulates every initial condition with its own derived seed; order of results follows x0_set."""
    x0_set = np.atleast_2d(np.asarray(x0_set, dtype=np.float64))
    debug_print("Dynamics", f"Simulating {len(x0_set)} trajectories on {workers} worker(s).")

    def _one(index: int) -> Trajectory:
        return simulate(system, x0_set[index], t_span, n_samples, noise, derive_seed(seed, index), output)

    if workers <= 1:
        return [_one(i) for i in range(len(x0_set))]
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="simulate") as pool:
        return list(pool.map(_one, range(len(x0_set))))


def sample_measurement_noise(n_samples: int, n_y: int, noise: NoiseSpec, seed: int) -> np.ndarray:
    """v(t_k) ~ N(0, meas_var) per component; zeros (and no draws) when meas_var is 0."""
    if noise.meas_var == 0.0:
        return np.zeros((n_samples, n_y))
    rng = np.random.default_rng(seed)
    return math.sqrt(noise.meas_var) * rng.standard_normal((n_samples, n_y))

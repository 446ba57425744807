"""Linear part of the KKL observer and truncation-method training data.

The latent filter is zhat' = A zhat + B y with A Hurwitz. Training pairs
(x, z ~ T(x)) come from running the plant and the latent system jointly after a
burn-in long enough for the arbitrary latent initial condition to be forgotten.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from dynamics import Plant, rk4_step, sample_spacing
from tools import DimensionError, NotHurwitzError, debug_print

# above this the eigenvector basis is treated as numerically non-diagonalizable
KAPPA_CAP = 1e8
# controllability matrices beyond this size are too ill-conditioned for a rank test
RANK_TEST_MAX_NZ = 40


@dataclass(frozen=True)
class ObserverMatrices:
    A: np.ndarray
    B: np.ndarray
    n_x: int
    n_y: int
    n_z: int
    c: float
    kappa_V: float
    eig_range: Optional[tuple[float, float]] = None
    # None when no test was run (large user-supplied pairs)
    controllable: Optional[bool] = True

    def __post_init__(self) -> None:
        if self.A.shape != (self.n_z, self.n_z) or self.B.shape != (self.n_z, self.n_y):
            raise DimensionError(
                f"A {self.A.shape} / B {self.B.shape} do not match n_z={self.n_z}, n_y={self.n_y}"
            )
        if self.n_z != self.n_y * (2 * self.n_x + 1):
            raise DimensionError(f"n_z must equal n_y(2n_x+1) = {self.n_y * (2 * self.n_x + 1)}, got {self.n_z}")
        if not self.c > 0:
            raise NotHurwitzError("Observer decay rate c must be positive.")

    @property
    def norm_B(self) -> float:
        return float(np.linalg.norm(self.B, 2))

    def describe(self) -> dict:
        return {
            "n_x": self.n_x,
            "n_y": self.n_y,
            "n_z": self.n_z,
            "c": self.c,
            "kappa_V": self.kappa_V,
            "norm_B": self.norm_B,
            "eig_range": list(self.eig_range) if self.eig_range is not None else None,
            "controllable": self.controllable,
        }


@dataclass
class LatentState:
    z: np.ndarray
    t: float

    def __post_init__(self) -> None:
        self.z = np.asarray(self.z, dtype=np.float64)
        if not np.all(np.isfinite(self.z)):
            raise ValueError(f"Latent state at t={self.t} has non-finite entries.")


def eigen_structure(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Returns (eigenvalues, V, kappa(V)); exact identity basis for diagonal A."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"A must be square, got shape {A.shape}")
    if not np.any(A - np.diag(np.diag(A))):
        return np.diag(A).astype(np.complex128), np.eye(A.shape[0]), 1.0
    eigenvalues, V = np.linalg.eig(A)
    try:
        kappa = condition_number(V)
    except ValueError:
        kappa = math.inf
    return eigenvalues, V, kappa


def min_decay_rate(A: np.ndarray) -> float:
    """c = min |Re(lambda)| over eig(A); A must be Hurwitz."""
    eigenvalues, _, _ = eigen_structure(A)
    real = eigenvalues.real
    if np.max(real) >= 0:
        raise NotHurwitzError(f"A is not Hurwitz: max Re(eig) = {np.max(real):.6g}")
    return float(np.min(np.abs(real)))


def condition_number(V: np.ndarray) -> float:
    V = np.asarray(V)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise DimensionError(f"V must be square, got shape {V.shape}")
    singular = np.linalg.svd(V, compute_uv=False)
    if singular[-1] <= singular[0] * V.shape[0] * np.finfo(np.float64).eps:
        raise ValueError("V is singular; its condition number is unbounded.")
    return float(singular[0] / singular[-1])


def _controllability_rank(A: np.ndarray, B: np.ndarray) -> int:
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return int(np.linalg.matrix_rank(np.hstack(blocks)))


def build_matrices(n_x: int, n_y: int, eig_lo: float, eig_hi: float) -> ObserverMatrices:
    """A = Lambda (x) I_ny, B = Gamma (x) I_ny with Lambda spread linearly from eig_lo to eig_hi."""
    if n_x < 1 or n_y < 1:
        raise ValueError("build_matrices needs n_x, n_y >= 1.")
    if eig_lo >= 0 or eig_hi >= 0:
        raise NotHurwitzError(f"Requested eigenvalues [{eig_lo}, {eig_hi}] must be strictly negative.")
    m = 2 * n_x + 1
    lam = np.linspace(eig_lo, eig_hi, m)
    A = np.kron(np.diag(lam), np.eye(n_y))
    B = np.kron(np.ones((m, 1)), np.eye(n_y))
    # diagonal Lambda with a ones vector is controllable iff the entries are distinct
    controllable = m == 1 or len(np.unique(lam)) == m
    if not controllable:
        debug_print("KKLObserver", f"Lambda entries repeat over [{eig_lo}, {eig_hi}]; (A, B) is not controllable.")
    obs = ObserverMatrices(
        A=A,
        B=B,
        n_x=n_x,
        n_y=n_y,
        n_z=m * n_y,
        c=float(np.min(np.abs(lam))),
        kappa_V=1.0,
        eig_range=(float(eig_lo), float(eig_hi)),
        controllable=controllable,
    )
    debug_print("KKLObserver", f"Built observer matrices n_z={obs.n_z}, c={obs.c}, |B|={obs.norm_B:.6g}")
    return obs


def observer_from_matrices(A: np.ndarray, B: np.ndarray, n_x: int) -> ObserverMatrices:
    """Validates a user-supplied (A, B) pair."""
    A = np.array(A, dtype=np.float64)
    B = np.array(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
        raise DimensionError(f"Incompatible observer matrices A {A.shape}, B {B.shape}")
    c = min_decay_rate(A)
    _, _, kappa = eigen_structure(A)
    n_z, n_y = B.shape
    controllable: Optional[bool] = None
    if n_z <= RANK_TEST_MAX_NZ:
        controllable = _controllability_rank(A, B) == n_z
        if not controllable:
            debug_print("KKLObserver", "User-supplied (A, B) failed the controllability rank test.", "ERROR")
    return ObserverMatrices(A=A, B=B, n_x=n_x, n_y=n_y, n_z=n_z, c=c, kappa_V=kappa, controllable=controllable)


def default_burn_in(c: float) -> float:
    """5/c rounded up to the next multiple of 0.5."""
    if not c > 0:
        raise ValueError("Decay rate must be positive.")
    return math.ceil((5.0 / c) / 0.5 - 1e-12) * 0.5


def _latent_rhs(obs: ObserverMatrices, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    return z @ obs.A.T + y @ obs.B.T


def latent_rk4(obs: ObserverMatrices, z: np.ndarray, y_k: np.ndarray, y_k1: np.ndarray, delta: float) -> np.ndarray:
    y_mid = 0.5 * (y_k + y_k1)
    k1 = _latent_rhs(obs, z, y_k)
    k2 = _latent_rhs(obs, z + 0.5 * delta * k1, y_mid)
    k3 = _latent_rhs(obs, z + 0.5 * delta * k2, y_mid)
    k4 = _latent_rhs(obs, z + delta * k3, y_k1)
    return z + (delta / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def latent_step(obs: ObserverMatrices, state: LatentState, y_k: np.ndarray, y_k1: np.ndarray, delta: float) -> LatentState:
    """One RK4 step of zhat' = A zhat + B y, y linear between the two samples."""
    if not delta > 0:
        raise ValueError("latent_step needs delta > 0.")
    y_k = np.asarray(y_k, dtype=np.float64)
    y_k1 = np.asarray(y_k1, dtype=np.float64)
    if y_k.shape[-1] != obs.n_y or y_k1.shape[-1] != obs.n_y:
        raise DimensionError(f"Output samples must have length {obs.n_y}.")
    if state.z.shape[-1] != obs.n_z:
        raise DimensionError(f"Latent state must have length {obs.n_z}, got {state.z.shape[-1]}.")
    return LatentState(z=latent_rk4(obs, state.z, y_k, y_k1, delta), t=state.t + delta)


def run_latent_filter(
    obs: ObserverMatrices,
    y_series: np.ndarray,
    delta: float,
    z0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Runs the latent filter over sampled outputs of shape (..., K, n_y); returns (..., K, n_z)."""
    if not delta > 0:
        raise ValueError("run_latent_filter needs delta > 0.")
    y_series = np.asarray(y_series, dtype=np.float64)
    if y_series.ndim < 2 or y_series.shape[-1] != obs.n_y:
        raise DimensionError(f"Output series must have shape (..., K, {obs.n_y}), got {y_series.shape}")
    lead = y_series.shape[:-2]
    n_samples = y_series.shape[-2]
    Z = np.empty(lead + (n_samples, obs.n_z))
    z = np.zeros(lead + (obs.n_z,)) if z0 is None else np.broadcast_to(np.asarray(z0, dtype=np.float64), lead + (obs.n_z,)).copy()
    Z[..., 0, :] = z
    for k in range(n_samples - 1):
        z = latent_rk4(obs, z, y_series[..., k, :], y_series[..., k + 1, :], delta)
        Z[..., k + 1, :] = z
    if not np.all(np.isfinite(Z)):
        debug_print("KKLObserver", "Latent filter produced non-finite values.", "ERROR")
    return Z


@dataclass
class TrainingDataset:
    """Paired samples (x^j(t_k), z^j(t_k)); arrays are (trajectory, k, component)."""

    t0: float
    delta: float
    states: np.ndarray
    latents: np.ndarray
    source_indices: np.ndarray
    t_pre: float = 0.0
    discarded: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.states.ndim != 3 or self.latents.ndim != 3 or self.states.shape[:2] != self.latents.shape[:2]:
            raise DimensionError(
                f"states {self.states.shape} and latents {self.latents.shape} must be aligned (p, K, .) arrays"
            )

    @property
    def n_trajectories(self) -> int:
        return self.states.shape[0]

    @property
    def n_samples(self) -> int:
        return self.states.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.n_trajectories * self.n_samples

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.delta * np.arange(self.n_samples)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (X, Z) in trajectory-major order."""
        return (
            self.states.reshape(-1, self.states.shape[-1]),
            self.latents.reshape(-1, self.latents.shape[-1]),
        )

    def regression_split(self) -> tuple[np.ndarray, np.ndarray]:
        """Even sample indices k of every trajectory."""
        return (
            self.states[:, 0::2].reshape(-1, self.states.shape[-1]),
            self.latents[:, 0::2].reshape(-1, self.latents.shape[-1]),
        )

    def physics_split(self) -> np.ndarray:
        """Odd sample indices k of every trajectory."""
        return self.states[:, 1::2].reshape(-1, self.states.shape[-1])

    def report(self, n_requested: int) -> dict:
        return {
            "requested": n_requested,
            "kept": self.n_trajectories,
            "discarded": list(self.discarded),
            "discarded_fraction": (n_requested - self.n_trajectories) / n_requested if n_requested else 0.0,
            "samples_per_trajectory": self.n_samples,
            "delta": self.delta,
            "t_pre": self.t_pre,
        }


def _joint_step(plant: Plant, obs: ObserverMatrices, x: np.ndarray, z: np.ndarray, t: float, delta: float):
    def joint(tau: float, xz: tuple[np.ndarray, np.ndarray]):
        xs, zs = xz
        return plant.rhs(tau, xs), _latent_rhs(obs, zs, plant.output(xs))

    k1 = joint(t, (x, z))
    k2 = joint(t + 0.5 * delta, (x + 0.5 * delta * k1[0], z + 0.5 * delta * k1[1]))
    k3 = joint(t + 0.5 * delta, (x + 0.5 * delta * k2[0], z + 0.5 * delta * k2[1]))
    k4 = joint(t + delta, (x + delta * k3[0], z + delta * k3[1]))
    x_next = x + (delta / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    z_next = z + (delta / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    return x_next, z_next


def _finite_rows(arr: np.ndarray) -> np.ndarray:
    return np.all(np.isfinite(arr.reshape(arr.shape[0], -1)), axis=1)


def generate_training_data(
    plant: Plant,
    obs: ObserverMatrices,
    x0_set: np.ndarray,
    t_pre: float,
    t_span: Sequence[float],
    n_samples: int,
    z_init: Optional[np.ndarray] = None,
) -> TrainingDataset:
    """Truncation method: backward plant run over [-t_pre, 0], then joint forward run with z(-t_pre) = z_init.

    The burn-in is rounded up to a whole number of sample steps. Trajectories
    that blow up in either direction are dropped and listed in ``discarded``.
    """
    if t_pre < 5.0 / obs.c - 1e-12:
        raise ValueError(f"Burn-in t_pre={t_pre} is shorter than 5/c = {5.0 / obs.c:.6g}.")
    delta = sample_spacing(t_span, n_samples)
    x0_set = np.atleast_2d(np.asarray(x0_set, dtype=np.float64))
    if x0_set.shape[1] != obs.n_x:
        raise DimensionError(f"Initial conditions have dimension {x0_set.shape[1]}, observer expects {obs.n_x}.")
    n_back = math.ceil(t_pre / delta - 1e-9)
    t_start = float(t_span[0])
    debug_print(
        "KKLObserver",
        f"Generating training data for {len(x0_set)} trajectories: {n_back} burn-in steps, {n_samples} samples.",
    )

    discarded: list[dict] = []
    indices = np.arange(len(x0_set))

    def backward(tau: float, s: np.ndarray) -> np.ndarray:
        return -plant.rhs(-tau, s)

    x = x0_set.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(n_back):
            x = rk4_step(backward, x, -t_start + step * delta, delta)
    ok = _finite_rows(x)
    for j in indices[~ok]:
        discarded.append({"index": int(j), "reason": "non-finite state during backward integration"})
    x, indices = x[ok], indices[ok]

    if z_init is None:
        z = np.zeros((len(x), obs.n_z))
    else:
        z = np.broadcast_to(np.asarray(z_init, dtype=np.float64), (len(x0_set), obs.n_z))[indices].copy()

    states = np.empty((len(x), n_samples, obs.n_x))
    latents = np.empty((len(x), n_samples, obs.n_z))
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(n_back):
            x, z = _joint_step(plant, obs, x, z, t_start - (n_back - step) * delta, delta)
        states[:, 0], latents[:, 0] = x, z
        for k in range(1, n_samples):
            x, z = _joint_step(plant, obs, x, z, t_start + (k - 1) * delta, delta)
            states[:, k], latents[:, k] = x, z

    ok = _finite_rows(states) & _finite_rows(latents)
    for j in indices[~ok]:
        discarded.append({"index": int(j), "reason": "non-finite state during forward integration"})
    if discarded:
        debug_print("KKLObserver", f"Discarded {len(discarded)} trajectories during data generation.", "ERROR")

    return TrainingDataset(
        t0=t_start,
        delta=delta,
        states=states[ok],
        latents=latents[ok],
        source_indices=indices[ok],
        t_pre=n_back * delta,
        discarded=sorted(discarded, key=lambda entry: entry["index"]),
    )

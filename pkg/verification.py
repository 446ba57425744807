"""Numerical property suites run by `launcher.py verify`.

Every suite returns a dict with at least ``name`` and ``passed``; run_verification
collects them into one report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from dynamics import NoiseSpec, Plant, latin_hypercube, rk4_step, simulate
from fdi_engine import (
    ThresholdParams,
    bound_contraction,
    bound_residual,
    bound_ztilde,
    theoretical_thresholds,
    verify_exp_inequalities,
)
from kkl_observer import ObserverMatrices, build_matrices, condition_number, run_latent_filter
from neural_transform import (
    Mlp,
    TrainConfig,
    flat_gradients,
    flat_parameters,
    loss_and_gradients,
    mlp_forward,
    mlp_jacobian,
    set_flat_parameters,
)
from tools import debug_print, derive_seed


@dataclass(frozen=True)
class LinearPlant:
    """x' = F x, y = H x. Small test plant with a closed-form KKL map."""

    F: np.ndarray
    H: np.ndarray

    @property
    def n_x(self) -> int:
        return self.F.shape[0]

    @property
    def n_y(self) -> int:
        return self.H.shape[0]

    def rhs(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.F.T

    def output(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.H.T

    def output_jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.H

    def output_lipschitz(self) -> tuple[float, np.ndarray]:
        return float(np.linalg.norm(self.H, 2)), np.linalg.norm(self.H, axis=1)

    def describe(self) -> dict:
        return {"model": "linear", "n": self.n_x, "n_y": self.n_y}


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-30)
    return float(np.linalg.norm(a - b)) / scale


def rk4_order(lam: float = -1.0, horizon: float = 1.0, steps: tuple[int, ...] = (10, 20, 40, 80)) -> dict:
    """Empirical global order on x' = lam x from the slope of log(error) against log(step)."""
    errors = []
    for n in steps:
        delta = horizon / n
        x = np.array([1.0])
        for k in range(n):
            x = rk4_step(lambda t, s: lam * s, x, k * delta, delta)
        errors.append(abs(float(x[0]) - math.exp(lam * horizon)))
    slope = np.polyfit(np.log([horizon / n for n in steps]), np.log(errors), 1)[0]
    return {"name": "rk4_order", "order": float(slope), "errors": errors, "passed": bool(abs(slope - 4.0) <= 0.2)}


def _small_instance(seed: int):
    rng = np.random.default_rng(seed)
    plant = LinearPlant(F=np.array([[0.0, 1.0], [-1.0, -0.3]]), H=np.array([[1.0, 0.0]]))
    obs = build_matrices(2, 1, -1.0, -3.0)
    X = rng.uniform(-1.0, 1.0, size=(12, 2))
    Z = rng.normal(size=(12, obs.n_z))
    encoder = Mlp.create([2, 7, 6, obs.n_z], derive_seed(seed, 1), inputs=X, targets=Z)
    decoder = Mlp.create([obs.n_z, 8, 2], derive_seed(seed, 2), inputs=Z, targets=X)
    for net in (encoder, decoder):
        for b in net.biases:
            b += rng.normal(scale=0.1, size=b.shape)
    return plant, obs, X, Z, encoder, decoder


def gradient_check(seed: int = 0, step: float = 1e-6, tolerance: float = 1e-4, probes: int = 40) -> dict:
    """Backprop gradients of the full loss against central differences, encoder and decoder."""
    plant, obs, X, Z, encoder, decoder = _small_instance(seed)
    X_phy = np.random.default_rng(derive_seed(seed, 3)).uniform(-1.0, 1.0, size=(10, 2))
    config = TrainConfig(chi=0.7, lam=0.3, train_encoder=True, enable_physics_loss=True, hidden_layers=(7, 6))
    _, _, grads = loss_and_gradients(encoder, decoder, X, Z, config, X_phy, plant, obs)
    rng = np.random.default_rng(derive_seed(seed, 4))
    worst = 0.0
    for name, net, layer_grads in (("encoder", encoder, grads["encoder"]), ("decoder", decoder, grads["decoder"])):
        theta = flat_parameters(net)
        analytic = flat_gradients(layer_grads)
        picks = rng.choice(len(theta), size=min(probes, len(theta)), replace=False)
        numeric = np.empty(len(picks))
        for j, p in enumerate(picks):
            values = []
            for sign in (1.0, -1.0):
                shifted = theta.copy()
                shifted[p] += sign * step
                trial = set_flat_parameters(net, shifted)
                enc = trial if name == "encoder" else encoder
                dec = trial if name == "decoder" else decoder
                values.append(loss_and_gradients(enc, dec, X, Z, config, X_phy, plant, obs)[0])
            numeric[j] = (values[0] - values[1]) / (2.0 * step)
        worst = max(worst, _relative_error(analytic[picks], numeric))
    return {"name": "gradient_check", "max_relative_error": worst, "passed": bool(worst < tolerance)}


def jacobian_check(seed: int = 0, step: float = 1e-6, tolerance: float = 1e-5, points: int = 5) -> dict:
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(64, 4))
    net = Mlp.create([4, 9, 9, 3], derive_seed(seed, 1), inputs=data, targets=rng.normal(size=(64, 3)))
    worst = 0.0
    for x in rng.normal(size=(points, 4)):
        numeric = np.empty((3, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = step
            numeric[:, j] = (mlp_forward(net, x + e) - mlp_forward(net, x - e)) / (2.0 * step)
        worst = max(worst, _relative_error(mlp_jacobian(net, x), numeric))
    return {"name": "jacobian_check", "max_relative_error": worst, "passed": bool(worst < tolerance)}


def _random_stable_matrix(rng: np.random.Generator, n: int) -> np.ndarray:
    while True:
        V = rng.normal(size=(n, n))
        if condition_number(V) < 1e3:
            break
    lam = -rng.uniform(0.5, 5.0, size=n)
    return V @ np.diag(lam) @ np.linalg.inv(V)


def exp_inequalities(obs: ObserverMatrices, seed: int = 0, grid_points: int = 100, random_matrices: int = 20) -> dict:
    grid = np.linspace(0.0, 2.0, grid_points)
    reports = [verify_exp_inequalities(obs.A, grid, obs.B)]
    rng = np.random.default_rng(seed)
    for _ in range(random_matrices):
        A = _random_stable_matrix(rng, 6)
        reports.append(verify_exp_inequalities(A, np.linspace(0.0, 5.0, grid_points), rng.normal(size=(6, 2))))
    passed = all(r["applicable"] and r["exp_ok"] and r["integral_ok"] for r in reports)
    return {
        "name": "exp_inequalities",
        "matrices": len(reports),
        "max_exp_ratio": max(r.get("max_exp_ratio", 0.0) for r in reports),
        "max_integral_ratio": max(r.get("max_integral_ratio", 0.0) for r in reports),
        "passed": bool(passed),
    }


def ztilde_monte_carlo(
    plant: Plant,
    obs: ObserverMatrices,
    noise: NoiseSpec,
    seed: int = 0,
    runs: int = 100,
    horizon: float = 2.0,
    delta: float = 30.0 / 3999.0,
) -> dict:
    """Latent error between clean-driven z and noisy-driven zhat stays under its bound at every sample."""
    n_samples = int(round(horizon / delta)) + 1
    t_span = (0.0, delta * (n_samples - 1))
    x0 = latin_hypercube(runs, [(-2.0, 2.0)] * plant.n_x, derive_seed(seed, 0))
    clean = simulate(plant.rhs, x0, t_span, n_samples, NoiseSpec(), derive_seed(seed, 1))
    noisy = simulate(plant.rhs, x0, t_span, n_samples, noise, derive_seed(seed, 1))
    rng = np.random.default_rng(derive_seed(seed, 2))
    v = math.sqrt(noise.meas_var) * rng.standard_normal((n_samples, runs, plant.n_y))
    y_clean = np.swapaxes(plant.output(clean.states), 0, 1)
    y_noisy = np.swapaxes(plant.output(noisy.states) + v, 0, 1)
    z_hat0 = rng.normal(size=(runs, obs.n_z))

    z = run_latent_filter(obs, y_clean, clean.delta)
    z_hat = run_latent_filter(obs, y_noisy, clean.delta, z_hat0)
    error = np.linalg.norm(z - z_hat, axis=-1)

    l_h, l_hi = plant.output_lipschitz()
    params = ThresholdParams(
        v_bar=float(np.max(np.abs(v))),
        w_bar=noise.w_bar,
        psi_wbar=float(np.max(np.linalg.norm(noisy.states - clean.states, axis=-1))),
        l_h=l_h,
        l_hi=l_hi,
        kappa_V=obs.kappa_V,
        c=obs.c,
        norm_B=obs.norm_B,
        eps_star_hat=0.0,
    )
    times = clean.times
    bounds = np.stack([bound_ztilde(params, float(np.linalg.norm(z0)), times) for z0 in z_hat0])
    slack = float(np.min(bounds - error))
    return {"name": "ztilde_monte_carlo", "runs": runs, "min_slack": slack, "passed": bool(slack >= -1e-9)}


def contraction_monte_carlo(seed: int = 0, samples: int = 1000, n_x: int = 4, n_y: int = 2) -> dict:
    """Constructed contraction maps: the fault-free residual never exceeds the contraction bound."""
    rng = np.random.default_rng(seed)
    n_z = n_y * (2 * n_x + 1)
    Q, _ = np.linalg.qr(rng.normal(size=(n_z, n_x)))
    offset = 0.05 * rng.normal(size=n_z)
    l_theta, l_eta = 0.6, 0.7

    def encoder(x):
        return l_theta * np.tanh(x) @ Q.T + offset

    def decoder(z):
        return l_eta * np.tanh(z) @ Q

    X = rng.uniform(-2.0, 2.0, size=(samples, n_x))
    Z = X @ Q.T
    x_hat = np.zeros_like(X)
    for _ in range(200):
        x_hat = decoder(encoder(x_hat))
    xi = np.linalg.norm(Z - encoder(X), axis=1)
    xi_star = np.linalg.norm(X - decoder(Z), axis=1)
    v_bar = 0.05
    v = rng.uniform(-v_bar, v_bar, size=(samples, n_y))
    r = np.abs(X[:, :n_y] - x_hat[:, :n_y] + v)

    params = ThresholdParams(
        v_bar=v_bar, w_bar=0.0, psi_wbar=0.0, l_h=1.0, l_hi=np.ones(n_y), kappa_V=1.0, c=1.0,
        norm_B=1.0, eps_star_hat=0.0, l_theta=l_theta, l_eta=l_eta,
    )
    violations = 0
    for n in range(samples):
        for i in range(1, n_y + 1):
            if r[n, i - 1] > bound_contraction(params, xi[n], xi_star[n], i) + 1e-12:
                violations += 1
    return {"name": "contraction_monte_carlo", "samples": samples, "violations": violations, "passed": violations == 0}


def limit_consistency(obs: ObserverMatrices, noise: NoiseSpec, tolerance: float = 1e-9) -> dict:
    """tau_i equals the residual bound evaluated far past the transient."""
    params = ThresholdParams(
        v_bar=noise.v_bar, w_bar=noise.w_bar, psi_wbar=0.37, l_h=1.0, l_hi=np.ones(obs.n_y),
        kappa_V=obs.kappa_V, c=obs.c, norm_B=obs.norm_B, eps_star_hat=0.08, l_eta=2.5,
    )
    tau = theoretical_thresholds(params, obs.n_y)
    late = np.array([bound_residual(params, 10.0, 60.0 / obs.c, i) for i in range(1, obs.n_y + 1)])
    worst = float(np.max(np.abs(late - tau) / tau))
    return {"name": "limit_consistency", "max_relative_difference": worst, "passed": bool(worst <= tolerance)}


def observer_structure(n_x: int = 10, n_y: int = 5, eig_range: tuple[float, float] = (-15.0, -21.0)) -> dict:
    """||Gamma (x) I|| = sqrt(2 n_x + 1), c and kappa(V) for the shipped matrices, checked independently."""
    obs = build_matrices(n_x, n_y, *eig_range)
    norm_B = float(np.linalg.svd(obs.B, compute_uv=False)[0])
    expected_norm = math.sqrt(2 * n_x + 1)
    c_check = float(np.min(np.abs(np.linalg.eigvals(obs.A).real)))
    expected_c = min(abs(eig_range[0]), abs(eig_range[1]))
    passed = (
        abs(norm_B - expected_norm) <= 1e-10
        and abs(c_check - expected_c) <= 1e-10
        and abs(obs.c - expected_c) <= 1e-12
        and obs.kappa_V == 1.0
    )
    return {"name": "observer_structure", "norm_B": norm_B, "c": c_check, "kappa_V": obs.kappa_V, "passed": bool(passed)}


def run_verification(
    plant: Plant,
    obs: ObserverMatrices,
    noise: NoiseSpec,
    seed: int,
    mc_runs: int = 100,
    grid_points: int = 100,
    random_matrices: int = 20,
    contraction_samples: int = 1000,
    horizon: float = 2.0,
) -> dict:
    suites: list[Callable[[], dict]] = [
        rk4_order,
        lambda: gradient_check(derive_seed(seed, 1)),
        lambda: jacobian_check(derive_seed(seed, 2)),
        lambda: exp_inequalities(obs, derive_seed(seed, 3), grid_points, random_matrices),
        lambda: ztilde_monte_carlo(plant, obs, noise, derive_seed(seed, 4), mc_runs, horizon),
        lambda: contraction_monte_carlo(derive_seed(seed, 5), contraction_samples),
        lambda: limit_consistency(obs, noise),
        observer_structure,
    ]
    results = []
    for suite in suites:
        result = suite()
        debug_print("Verification", f"{result['name']}: {'pass' if result['passed'] else 'FAIL'}")
        results.append(result)
    return {"passed": all(r["passed"] for r in results), "seed": seed, "suites": results}

"""Neural approximations of the KKL transformation T (encoder) and its left inverse T* (decoder).

Networks are plain numpy MLPs with rectified hidden layers and a linear output
layer, wrapped in per-component standardization. Inputs are batched along the
first axis and every layer computes ``H @ W.T + b``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from dynamics import Plant
from kkl_observer import ObserverMatrices, TrainingDataset
from tools import DimensionError, DivergenceError, debug_print, derive_seed, fingerprint_payload

CHUNK_ROWS = 8192


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_mean: np.ndarray
    out_scale: np.ndarray
    activation: str = "relu"

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("Mlp needs one bias vector per weight matrix.")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (W.shape[0],):
                raise DimensionError(f"Layer {l + 1}: bias {b.shape} does not match weight {W.shape}")
            if l > 0 and W.shape[1] != self.weights[l - 1].shape[0]:
                raise DimensionError(f"Layer {l + 1} expects {W.shape[1]} inputs, previous layer gives {self.weights[l - 1].shape[0]}")
        if self.in_mean.shape != (self.n_in,) or self.in_scale.shape != (self.n_in,):
            raise DimensionError("Input standardization statistics must match the input width.")
        if self.out_mean.shape != (self.n_out,) or self.out_scale.shape != (self.n_out,):
            raise DimensionError("Output standardization statistics must match the output width.")
        if np.any(self.in_scale <= 0) or np.any(self.out_scale <= 0):
            raise ValueError("Standardization scales must be positive.")
        if self.activation != "relu":
            raise ValueError(f"Unsupported hidden activation '{self.activation}'")

    @classmethod
    def create(
        cls,
        sizes: Sequence[int],
        seed: int,
        inputs: Optional[np.ndarray] = None,
        targets: Optional[np.ndarray] = None,
    ) -> "Mlp":
        """Fan-in scaled uniform init, zero biases; statistics taken from data when given."""
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"Invalid layer sizes {sizes}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        in_mean, in_scale = standardization_stats(inputs, sizes[0])
        out_mean, out_scale = standardization_stats(targets, sizes[-1])
        return cls(weights, biases, in_mean, in_scale, out_mean, out_scale)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def parameters(self) -> list[np.ndarray]:
        params = []
        for W, b in zip(self.weights, self.biases):
            params += [W, b]
        return params

    def copy(self) -> "Mlp":
        return replace(
            self,
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def standardize_input(self, x: np.ndarray) -> np.ndarray:
        return (x - self.in_mean) / self.in_scale

    def destandardize_input(self, u: np.ndarray) -> np.ndarray:
        return u * self.in_scale + self.in_mean

    def standardize_output(self, y: np.ndarray) -> np.ndarray:
        return (y - self.out_mean) / self.out_scale

    def destandardize_output(self, u: np.ndarray) -> np.ndarray:
        return u * self.out_scale + self.out_mean


def standardization_stats(data: Optional[np.ndarray], width: int) -> tuple[np.ndarray, np.ndarray]:
    if data is None:
        return np.zeros(width), np.ones(width)
    data = np.asarray(data, dtype=np.float64).reshape(-1, width)
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    return mean, np.where(std > 1e-12, std, 1.0)


def _forward_cache(net: Mlp, U: np.ndarray):
    """Forward pass from standardized inputs; keeps what backprop needs."""
    hidden = [U]
    masks = []
    H = U
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        pre = H @ W.T + b
        if l == last:
            return pre, hidden, masks
        mask = pre > 0
        H = np.where(mask, pre, 0.0)
        masks.append(mask)
        hidden.append(H)
    raise AssertionError("unreachable")


def _backward(net: Mlp, hidden: list[np.ndarray], masks: list[np.ndarray], g_raw: np.ndarray):
    """Backprop a gradient on the raw (standardized) output; returns per-layer grads and d/dU."""
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.weights)  # type: ignore[list-item]
    g = g_raw
    for l in range(len(net.weights) - 1, -1, -1):
        W = net.weights[l]
        grads[l] = (g.T @ hidden[l], g.sum(axis=0))
        g = g @ W
        if l > 0:
            g = g * masks[l - 1]
    return grads, g


def _as_batch(net: Mlp, inputs: np.ndarray) -> tuple[np.ndarray, bool]:
    inputs = np.asarray(inputs, dtype=np.float64)
    single = inputs.ndim == 1
    batch = inputs[None, :] if single else inputs
    if batch.ndim != 2 or batch.shape[1] != net.n_in:
        raise DimensionError(f"Network expects inputs of width {net.n_in}, got shape {inputs.shape}")
    return batch, single


def mlp_forward(net: Mlp, inputs: np.ndarray) -> np.ndarray:
    """standardize -> affine/rectify layers -> de-standardize; accepts one vector or a batch."""
    batch, single = _as_batch(net, inputs)
    out = np.empty((batch.shape[0], net.n_out))
    for start in range(0, batch.shape[0], CHUNK_ROWS):
        raw, _, _ = _forward_cache(net, net.standardize_input(batch[start : start + CHUNK_ROWS]))
        out[start : start + CHUNK_ROWS] = net.destandardize_output(raw)
    return out[0] if single else out


def mlp_jacobian(net: Mlp, inputs: np.ndarray) -> np.ndarray:
    """Exact Jacobian d output / d input, rectifier'(0) = 0. Shape (n_out, n_in) or (N, n_out, n_in)."""
    batch, single = _as_batch(net, inputs)
    _, _, masks = _forward_cache(net, net.standardize_input(batch))
    J = np.broadcast_to(net.weights[0] / net.in_scale, (batch.shape[0],) + net.weights[0].shape)
    for l in range(1, len(net.weights)):
        J = np.einsum("ij,njk->nik", net.weights[l], masks[l - 1][:, :, None] * J)
    J = net.out_scale[None, :, None] * J
    return J[0] if single else J


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    lr_interval: int = 50
    chi: float = 1.0
    lam: float = 0.1
    seed: int = 0
    enable_physics_loss: bool = False
    train_encoder: bool = False
    hidden_layers: tuple[int, ...] = (250, 250, 250)
    betas: tuple[float, float] = (0.9, 0.999)
    eval_samples: int = 2048

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.epochs < 1 or self.batch_size < 1 or self.lr_interval < 1 or self.eval_samples < 1:
            raise ValueError("epochs, batch_size, lr_interval and eval_samples must be positive.")
        if not self.learning_rate > 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("learning_rate must be positive and lr_decay in (0, 1].")
        if self.chi < 0 or self.lam < 0:
            raise ValueError("chi and lambda must be nonnegative.")
        if not all(0 <= b < 1 for b in self.betas):
            raise ValueError("Adam betas must lie in [0, 1).")
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError("Hidden layer widths must be positive.")
        if self.enable_physics_loss and not self.train_encoder:
            raise ValueError("The physics loss constrains the encoder; enable train_encoder as well.")

    def learning_rate_at(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_interval)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["hidden_layers"] = list(self.hidden_layers)
        data["betas"] = list(self.betas)
        return data

    def fingerprint(self) -> str:
        return fingerprint_payload(self.to_dict())


@dataclass(frozen=True)
class ApproxErrors:
    eps_hat: Optional[float]
    eps_star_hat: float

    def __post_init__(self) -> None:
        if self.eps_star_hat < 0 or (self.eps_hat is not None and self.eps_hat < 0):
            raise ValueError("Approximation errors are norms and cannot be negative.")


# --- losses -----------------------------------------------------------------------------------

def _require_rows(*arrays: np.ndarray) -> None:
    for arr in arrays:
        if arr is None or len(arr) == 0:
            raise ValueError("Loss needs a nonempty batch.")


def _regression_terms(encoder: Optional[Mlp], decoder: Mlp, X: np.ndarray, Z: np.ndarray, chi: float, with_grads: bool):
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    _require_rows(X, Z)
    if len(X) != len(Z):
        raise DimensionError("Regression batch needs as many x rows as z rows.")
    n = len(X)
    if encoder is None:
        raw, hidden, masks = _forward_cache(decoder, decoder.standardize_input(Z))
        err = X - decoder.destandardize_output(raw)
        loss = float(np.sum(err**2) / n)
        if not with_grads:
            return loss, None, None
        dec_grads, _ = _backward(decoder, hidden, masks, (-2.0 / n) * err * decoder.out_scale)
        return loss, None, dec_grads

    e_raw, e_hidden, e_masks = _forward_cache(encoder, encoder.standardize_input(X))
    Z_hat = encoder.destandardize_output(e_raw)
    d_raw, d_hidden, d_masks = _forward_cache(decoder, decoder.standardize_input(Z_hat))
    err_z = Z - Z_hat
    err_x = X - decoder.destandardize_output(d_raw)
    loss = float((np.sum(err_z**2) + chi * np.sum(err_x**2)) / n)
    if not with_grads:
        return loss, None, None
    dec_grads, g_dec_in = _backward(decoder, d_hidden, d_masks, (-2.0 * chi / n) * err_x * decoder.out_scale)
    g_z_hat = (-2.0 / n) * err_z + g_dec_in / decoder.in_scale
    enc_grads, _ = _backward(encoder, e_hidden, e_masks, g_z_hat * encoder.out_scale)
    return loss, enc_grads, dec_grads


def _physics_terms(
    encoder: Mlp,
    X: np.ndarray,
    f_values: np.ndarray,
    h_values: np.ndarray,
    A: np.ndarray,
    B: np.ndarray,
    with_grads: bool,
):
    """Residual of (dT/dx) f = A T + B h, with the Jacobian-vector product carried forward."""
    n = len(X)
    U = encoder.standardize_input(X)
    tangent = f_values / encoder.in_scale
    hidden, tangents, masks = [U], [tangent], []
    H, T = U, tangent
    last = len(encoder.weights) - 1
    for l, (W, b) in enumerate(zip(encoder.weights, encoder.biases)):
        pre = H @ W.T + b
        pre_dot = T @ W.T
        if l == last:
            break
        mask = pre > 0
        H = np.where(mask, pre, 0.0)
        T = np.where(mask, pre_dot, 0.0)
        masks.append(mask)
        hidden.append(H)
        tangents.append(T)
    jvp = encoder.out_scale * pre_dot
    T_x = encoder.destandardize_output(pre)
    residual = jvp - T_x @ A.T - h_values @ B.T
    loss = float(np.sum(residual**2) / n)
    if not with_grads:
        return loss, None
    g_res = (2.0 / n) * residual
    g_dot = g_res * encoder.out_scale
    g_pre = -(g_res @ A) * encoder.out_scale
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(encoder.weights)  # type: ignore[list-item]
    for l in range(last, -1, -1):
        W = encoder.weights[l]
        grads[l] = (g_dot.T @ tangents[l] + g_pre.T @ hidden[l], g_pre.sum(axis=0))
        if l > 0:
            g_dot = (g_dot @ W) * masks[l - 1]
            g_pre = (g_pre @ W) * masks[l - 1]
    return loss, grads


def loss_regression(encoder: Optional[Mlp], decoder: Mlp, X: np.ndarray, Z: np.ndarray, chi: float) -> float:
    """mean ||z - T(x)||^2 + chi ||x - T*(T(x))||^2, or mean ||x - T*(z)||^2 without an encoder."""
    loss, _, _ = _regression_terms(encoder, decoder, X, Z, chi, with_grads=False)
    return loss


def loss_physics(
    encoder: Mlp,
    X: np.ndarray,
    rhs: Callable[[float, np.ndarray], np.ndarray],
    output: Callable[[np.ndarray], np.ndarray],
    A: np.ndarray,
    B: np.ndarray,
) -> float:
    """mean ||J_T(x) f(x) - A T(x) - B h(x)||^2 for an autonomous rhs."""
    X = np.asarray(X, dtype=np.float64)
    _require_rows(X)
    loss, _ = _physics_terms(encoder, X, rhs(0.0, X), output(X), A, B, with_grads=False)
    return loss


def loss_and_gradients(
    encoder: Optional[Mlp],
    decoder: Mlp,
    X_reg: np.ndarray,
    Z_reg: np.ndarray,
    config: TrainConfig,
    X_phy: Optional[np.ndarray] = None,
    plant: Optional[Plant] = None,
    obs: Optional[ObserverMatrices] = None,
) -> tuple[float, dict[str, float], dict[str, list]]:
    """Total loss L_reg + lambda L_phy with exact gradients for every trained network."""
    reg, enc_grads, dec_grads = _regression_terms(encoder, decoder, X_reg, Z_reg, config.chi, with_grads=True)
    parts = {"regression": reg, "physics": 0.0}
    grads: dict[str, list] = {"decoder": dec_grads}
    if encoder is not None:
        grads["encoder"] = enc_grads
    if config.enable_physics_loss:
        if encoder is None or X_phy is None or plant is None or obs is None:
            raise ValueError("Physics loss needs an encoder, a physics batch, the plant and the observer matrices.")
        _require_rows(X_phy)
        phy, phy_grads = _physics_terms(encoder, X_phy, plant.rhs(0.0, X_phy), plant.output(X_phy), obs.A, obs.B, True)
        parts["physics"] = phy
        grads["encoder"] = [
            (gW + config.lam * pW, gb + config.lam * pb) for (gW, gb), (pW, pb) in zip(grads["encoder"], phy_grads)
        ]
    return reg + config.lam * parts["physics"], parts, grads


def flat_parameters(net: Mlp) -> np.ndarray:
    return np.concatenate([p.ravel() for p in net.parameters()])


def set_flat_parameters(net: Mlp, vector: np.ndarray) -> Mlp:
    """Returns a copy of ``net`` whose weights and biases are read from ``vector`` in layer order."""
    vector = np.asarray(vector, dtype=np.float64)
    expected = sum(p.size for p in net.parameters())
    if vector.shape != (expected,):
        raise DimensionError(f"Parameter vector must have length {expected}, got {vector.shape}")
    clone = net.copy()
    offset = 0
    for l in range(len(clone.weights)):
        W, b = clone.weights[l], clone.biases[l]
        clone.weights[l] = vector[offset : offset + W.size].reshape(W.shape).copy()
        offset += W.size
        clone.biases[l] = vector[offset : offset + b.size].copy()
        offset += b.size
    return clone


def flat_gradients(layer_grads: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([arr.ravel() for pair in layer_grads for arr in pair])


# --- optimisation ------------------------------------------------------------------------------

class AdamOptimizer:
    """Adaptive-moment updates applied in place to a list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def _layer_list(layer_grads: list[tuple[np.ndarray, np.ndarray]]) -> list[np.ndarray]:
    out = []
    for gW, gb in layer_grads:
        out += [gW, gb]
    return out


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    initial_loss: float = math.nan
    final_loss: float = math.nan
    eval_samples: int = 0
    heldout: Optional[dict] = None
    diverged: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainReport":
        return cls(**data)

    def write_loss_curve(self, path: Path) -> None:
        rows = [[e["epoch"], e["loss"], e["regression"], e["physics"], e["learning_rate"]] for e in self.epochs]
        np.savetxt(
            Path(path),
            np.array(rows, dtype=np.float64).reshape(-1, 5),
            delimiter=",",
            header="epoch,loss,regression,physics,learning_rate",
            comments="",
            fmt="%.17g",
        )


@dataclass
class ObserverModel:
    """Everything a model file holds: trained networks plus the observer they were trained for."""

    decoder: Mlp
    obs: ObserverMatrices
    train_config: TrainConfig
    report: TrainReport
    plant_description: dict
    encoder: Optional[Mlp] = None

    def check_plant(self, plant: Plant) -> None:
        if plant.n_x != self.obs.n_x or plant.n_y != self.obs.n_y:
            raise DimensionError(
                f"Model was trained for n_x={self.obs.n_x}, n_y={self.obs.n_y}; "
                f"plant has n_x={plant.n_x}, n_y={plant.n_y}."
            )
        if self.decoder.n_in != self.obs.n_z or self.decoder.n_out != self.obs.n_x:
            raise DimensionError("Decoder widths do not match the observer dimensions.")


def _objective(encoder, decoder, X_reg, Z_reg, X_phy, config, plant, obs) -> tuple[float, dict[str, float]]:
    reg = loss_regression(encoder, decoder, X_reg, Z_reg, config.chi)
    phy = 0.0
    if config.enable_physics_loss and len(X_phy):
        phy = loss_physics(encoder, X_phy, plant.rhs, plant.output, obs.A, obs.B)
    return reg + config.lam * phy, {"regression": reg, "physics": phy}


def train(
    dataset: TrainingDataset,
    config: TrainConfig,
    plant: Optional[Plant] = None,
    obs: Optional[ObserverMatrices] = None,
    validation: Optional[TrainingDataset] = None,
) -> tuple[Optional[Mlp], Mlp, TrainReport]:
    """Minimises L_reg + lambda L_phy with Adam; deterministic given config.seed.

    Raises DivergenceError (carrying the partial report) when an epoch loss is not finite.
    """
    if dataset.n_pairs == 0:
        raise ValueError("Cannot train on an empty dataset.")
    if config.enable_physics_loss and (plant is None or obs is None):
        raise ValueError("Physics loss needs the plant and the observer matrices.")
    X_all, Z_all = dataset.pairs()
    X_reg, Z_reg = dataset.regression_split()
    X_phy = dataset.physics_split()
    n_x, n_z = X_all.shape[1], Z_all.shape[1]
    hidden = list(config.hidden_layers)

    decoder = Mlp.create([n_z] + hidden + [n_x], derive_seed(config.seed, 1), inputs=Z_all, targets=X_all)
    encoder = None
    if config.train_encoder:
        encoder = Mlp.create([n_x] + hidden + [n_z], derive_seed(config.seed, 2), inputs=X_all, targets=Z_all)

    eval_rng = np.random.default_rng(derive_seed(config.seed, 3))
    eval_reg = np.sort(eval_rng.choice(len(X_reg), size=min(config.eval_samples, len(X_reg)), replace=False))
    eval_phy = np.sort(eval_rng.choice(len(X_phy), size=min(config.eval_samples, len(X_phy)), replace=False))

    def evaluate() -> float:
        loss, _ = _objective(encoder, decoder, X_reg[eval_reg], Z_reg[eval_reg], X_phy[eval_phy], config, plant, obs)
        return loss

    report = TrainReport(initial_loss=evaluate(), eval_samples=len(eval_reg))
    debug_print("NeuralTransform", f"Training on {len(X_reg)} regression / {len(X_phy)} physics samples, initial loss {report.initial_loss:.6g}")

    params = decoder.parameters() + (encoder.parameters() if encoder is not None else [])
    optimizer = AdamOptimizer(params, betas=config.betas)
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, 0))

    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        order = shuffle_rng.permutation(len(X_reg))
        phy_order = shuffle_rng.permutation(len(X_phy)) if config.enable_physics_loss else None
        totals = {"loss": 0.0, "regression": 0.0, "physics": 0.0}
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            phy_batch = None
            if phy_order is not None:
                phy_idx = phy_order[np.arange(start, start + len(batch)) % len(phy_order)]
                phy_batch = X_phy[phy_idx]
            loss, parts, grads = loss_and_gradients(
                encoder, decoder, X_reg[batch], Z_reg[batch], config, phy_batch, plant, obs
            )
            flat = _layer_list(grads["decoder"]) + (_layer_list(grads["encoder"]) if encoder is not None else [])
            optimizer.step(flat, lr)
            weight = len(batch) / len(order)
            totals["loss"] += weight * loss
            totals["regression"] += weight * parts["regression"]
            totals["physics"] += weight * parts["physics"]
        report.epochs.append({"epoch": epoch, "learning_rate": lr, **totals})
        if not math.isfinite(totals["loss"]):
            report.diverged = True
            debug_print("NeuralTransform", f"Loss became non-finite at epoch {epoch}.", "ERROR")
            raise DivergenceError(f"Training diverged at epoch {epoch}", report)
        if epoch % 10 == 0 or epoch == config.epochs - 1:
            debug_print("NeuralTransform", f"Epoch {epoch}: loss={totals['loss']:.6g} lr={lr:.3g}")

    report.final_loss = evaluate()
    if validation is not None:
        errors = estimate_errors(encoder, decoder, validation)
        X_val, Z_val = validation.pairs()
        report.heldout = {
            "eps_hat": errors.eps_hat,
            "eps_star_hat": errors.eps_star_hat,
            "mse": loss_regression(None, decoder, X_val, Z_val, config.chi),
        }
    debug_print("NeuralTransform", f"Training finished: final loss {report.final_loss:.6g}")
    return encoder, decoder, report


def estimate_errors(encoder: Optional[Mlp], decoder: Mlp, dataset: TrainingDataset) -> ApproxErrors:
    """Exact maxima of ||x - T*(z)|| (and ||z - T(x)|| with an encoder) over every pair."""
    X, Z = dataset.pairs()
    if len(X) == 0:
        raise ValueError("estimate_errors needs a nonempty test set.")
    eps_star = float(np.max(np.linalg.norm(X - mlp_forward(decoder, Z), axis=1)))
    eps = None
    if encoder is not None:
        eps = float(np.max(np.linalg.norm(Z - mlp_forward(encoder, X), axis=1)))
    return ApproxErrors(eps_hat=eps, eps_star_hat=eps_star)


def _spectral_norm(W: np.ndarray, iterations: int = 200) -> float:
    v = np.ones(W.shape[1]) / math.sqrt(W.shape[1])
    sigma = 0.0
    for _ in range(iterations):
        u = W @ v
        norm_u = np.linalg.norm(u)
        if norm_u == 0.0:
            return 0.0
        v = W.T @ (u / norm_u)
        new_sigma = float(np.linalg.norm(v))
        v /= new_sigma
        if abs(new_sigma - sigma) <= 1e-12 * new_sigma:
            return new_sigma
        sigma = new_sigma
    return sigma


def lipschitz_upper_bound(net: Mlp) -> float:
    """Product of layer spectral norms (power iteration) times the standardization gains."""
    bound = float(np.max(net.out_scale) / np.min(net.in_scale))
    for W in net.weights:
        bound *= _spectral_norm(W)
    return bound


def predict_states(decoder: Mlp, Z: np.ndarray) -> np.ndarray:
    """xhat = T*(zhat) on any (..., n_z) array."""
    Z = np.asarray(Z, dtype=np.float64)
    return mlp_forward(decoder, Z.reshape(-1, Z.shape[-1])).reshape(Z.shape[:-1] + (decoder.n_out,))


def predict_outputs(plant: Plant, decoder: Mlp, Z: np.ndarray) -> np.ndarray:
    """yhat = h(T*(zhat))."""
    return plant.output(predict_states(decoder, Z))

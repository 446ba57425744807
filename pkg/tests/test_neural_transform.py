import numpy as np
import pytest
from scipy.linalg import solve_sylvester

from kkl_observer import TrainingDataset, build_matrices
from neural_transform import (
    AdamOptimizer,
    Mlp,
    TrainConfig,
    TrainReport,
    estimate_errors,
    flat_gradients,
    flat_parameters,
    lipschitz_upper_bound,
    loss_and_gradients,
    loss_physics,
    loss_regression,
    mlp_forward,
    mlp_jacobian,
    predict_outputs,
    predict_states,
    set_flat_parameters,
    train,
)
from tools import DimensionError, DivergenceError
from verification import LinearPlant, gradient_check, jacobian_check


def _linear_as_relu_net(M: np.ndarray) -> Mlp:
    """relu(x) - relu(-x) = x, so this network computes x -> M x exactly."""
    n_out, n_in = M.shape
    W1 = np.vstack([np.eye(n_in), -np.eye(n_in)])
    W2 = np.hstack([M, -M])
    return Mlp(
        weights=[W1, W2],
        biases=[np.zeros(2 * n_in), np.zeros(n_out)],
        in_mean=np.zeros(n_in),
        in_scale=np.ones(n_in),
        out_mean=np.zeros(n_out),
        out_scale=np.ones(n_out),
    )


def test_create_shapes_and_standardization(rng):
    X = rng.normal(loc=3.0, scale=2.0, size=(100, 4))
    net = Mlp.create([4, 8, 2], seed=0, inputs=X)
    assert net.sizes == [4, 8, 2]
    assert net.n_in == 4 and net.n_out == 2
    np.testing.assert_allclose(net.in_mean, X.mean(axis=0))
    np.testing.assert_allclose(net.in_scale, X.std(axis=0))
    assert all(not np.any(b) for b in net.biases)


def test_standardization_round_trips(rng):
    X = rng.normal(loc=-2.0, scale=5.0, size=(40, 3))
    X[:, 1] = 7.0
    Y = rng.normal(loc=1.0, scale=0.1, size=(40, 2))
    net = Mlp.create([3, 4, 2], seed=0, inputs=X, targets=Y)
    assert net.in_scale[1] == 1.0
    v = rng.normal(size=(10, 3)) * 100.0
    np.testing.assert_allclose(net.destandardize_input(net.standardize_input(v)), v, rtol=1e-12, atol=1e-12)
    w = rng.normal(size=(10, 2))
    np.testing.assert_allclose(net.destandardize_output(net.standardize_output(w)), w, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(net.standardize_input(X).mean(axis=0), 0.0, atol=1e-12)


def test_forward_single_and_batch_agree(rng):
    net = Mlp.create([3, 5, 5, 2], seed=1)
    X = rng.normal(size=(6, 3))
    batch = mlp_forward(net, X)
    assert batch.shape == (6, 2)
    np.testing.assert_allclose(mlp_forward(net, X[2]), batch[2], atol=1e-14)


def test_forward_rejects_wrong_width():
    net = Mlp.create([3, 5, 2], seed=1)
    with pytest.raises(DimensionError):
        mlp_forward(net, np.zeros(4))


def test_mlp_validation():
    with pytest.raises(DimensionError):
        Mlp(
            weights=[np.zeros((4, 3)), np.zeros((2, 5))],
            biases=[np.zeros(4), np.zeros(2)],
            in_mean=np.zeros(3),
            in_scale=np.ones(3),
            out_mean=np.zeros(2),
            out_scale=np.ones(2),
        )
    with pytest.raises(ValueError):
        Mlp.create([3], seed=0)


def test_jacobian_of_linear_network_is_the_matrix(rng):
    M = rng.normal(size=(3, 2))
    net = _linear_as_relu_net(M)
    np.testing.assert_allclose(mlp_jacobian(net, rng.normal(size=2)), M, atol=1e-14)
    assert mlp_jacobian(net, rng.normal(size=(4, 2))).shape == (4, 3, 2)


def test_jacobian_and_gradient_suites_pass():
    assert jacobian_check(seed=0)["passed"]
    assert gradient_check(seed=0)["passed"]


def test_flat_parameters_round_trip(rng):
    net = Mlp.create([3, 4, 2], seed=2)
    theta = flat_parameters(net)
    assert len(theta) == 3 * 4 + 4 + 4 * 2 + 2
    moved = set_flat_parameters(net, theta + 1.0)
    np.testing.assert_array_equal(flat_parameters(moved), theta + 1.0)
    # original untouched
    np.testing.assert_array_equal(flat_parameters(net), theta)
    with pytest.raises(DimensionError):
        set_flat_parameters(net, theta[:-1])


def test_regression_loss_without_encoder(rng):
    decoder = Mlp.create([4, 6, 2], seed=3)
    Z = rng.normal(size=(10, 4))
    X = mlp_forward(decoder, Z)
    assert loss_regression(None, decoder, X, Z, chi=1.0) == pytest.approx(0.0, abs=1e-24)
    assert loss_regression(None, decoder, X + 1.0, Z, chi=1.0) == pytest.approx(2.0)


def test_regression_loss_rejects_empty_batch():
    decoder = Mlp.create([4, 6, 2], seed=3)
    with pytest.raises(ValueError):
        loss_regression(None, decoder, np.zeros((0, 2)), np.zeros((0, 4)), chi=1.0)


def test_physics_loss_vanishes_on_exact_linear_kkl_map(rng):
    F = np.array([[0.0, 1.0], [-2.0, -0.5]])
    H = np.array([[1.0, 0.0]])
    plant = LinearPlant(F=F, H=H)
    obs = build_matrices(2, 1, -1.0, -3.0)
    # T(x) = M x with M F = A M + B H
    M = solve_sylvester(obs.A, -F, -obs.B @ H)
    encoder = _linear_as_relu_net(M)
    X = rng.uniform(-1.0, 1.0, size=(50, 2))
    assert loss_physics(encoder, X, plant.rhs, plant.output, obs.A, obs.B) < 1e-20
    wrong = _linear_as_relu_net(M + 0.1)
    assert loss_physics(wrong, X, plant.rhs, plant.output, obs.A, obs.B) > 1e-4


def test_physics_loss_requires_encoder(rng):
    decoder = Mlp.create([5, 4, 2], seed=0)
    config = TrainConfig(train_encoder=True, enable_physics_loss=True)
    with pytest.raises(ValueError):
        loss_and_gradients(None, decoder, np.zeros((2, 2)), np.zeros((2, 5)), config, np.zeros((2, 2)))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(enable_physics_loss=True, train_encoder=False)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    config = TrainConfig(hidden_layers=[8, 8])
    assert config.hidden_layers == (8, 8)
    assert config.learning_rate_at(0) == 1e-3
    assert config.learning_rate_at(50) == pytest.approx(5e-4)
    assert config.learning_rate_at(149) == pytest.approx(2.5e-4)
    assert config.fingerprint() == TrainConfig(hidden_layers=(8, 8)).fingerprint()


def test_adam_moves_against_the_gradient():
    p = np.array([1.0, -1.0])
    optimizer = AdamOptimizer([p])
    optimizer.step([np.array([2.0, -3.0])], lr=0.1)
    np.testing.assert_allclose(p, [0.9, -0.9])


def test_training_reduces_loss_and_is_deterministic(tiny_dataset, tiny_train_config, small_plant, small_obs):
    _, decoder_a, report_a = train(tiny_dataset, tiny_train_config, small_plant, small_obs)
    _, decoder_b, report_b = train(tiny_dataset, tiny_train_config, small_plant, small_obs)
    assert report_a.final_loss < report_a.initial_loss
    assert len(report_a.epochs) == tiny_train_config.epochs
    for W_a, W_b in zip(decoder_a.weights, decoder_b.weights):
        np.testing.assert_array_equal(W_a, W_b)
    assert report_a.to_dict() == report_b.to_dict()


def test_training_with_encoder_and_physics_loss(tiny_dataset, small_plant, small_obs):
    config = TrainConfig(
        epochs=2, batch_size=64, hidden_layers=(8,), eval_samples=32, train_encoder=True, enable_physics_loss=True
    )
    encoder, decoder, report = train(tiny_dataset, config, small_plant, small_obs, validation=tiny_dataset)
    assert encoder is not None and encoder.sizes == [3, 8, small_obs.n_z]
    assert all(epoch["physics"] > 0 for epoch in report.epochs)
    assert report.heldout["eps_hat"] is not None


def test_training_divergence_is_reported(tiny_dataset):
    config = TrainConfig(epochs=3, batch_size=32, hidden_layers=(8,), learning_rate=1e300, eval_samples=16)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
        train(tiny_dataset, config)
    assert info.value.report.diverged


def test_loss_curve_export(tmp_path):
    report = TrainReport(
        epochs=[{"epoch": 0, "loss": 1.5, "regression": 1.5, "physics": 0.0, "learning_rate": 1e-3}],
        initial_loss=2.0,
        final_loss=1.0,
    )
    path = tmp_path / "loss.csv"
    report.write_loss_curve(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss,regression,physics,learning_rate"
    assert TrainReport.from_dict(report.to_dict()) == report


def test_estimate_errors_are_exact_maxima(tiny_model, tiny_dataset):
    errors = estimate_errors(None, tiny_model.decoder, tiny_dataset)
    X, Z = tiny_dataset.pairs()
    assert errors.eps_hat is None
    assert errors.eps_star_hat == pytest.approx(np.max(np.linalg.norm(X - mlp_forward(tiny_model.decoder, Z), axis=1)))


def test_estimate_errors_never_shrink_on_a_larger_test_set(tiny_model, tiny_dataset):
    encoder = Mlp.create([3, 8, tiny_model.obs.n_z], seed=4)
    subset = TrainingDataset(
        t0=tiny_dataset.t0,
        delta=tiny_dataset.delta,
        states=tiny_dataset.states[:2, :20],
        latents=tiny_dataset.latents[:2, :20],
        source_indices=tiny_dataset.source_indices[:2],
    )
    small = estimate_errors(encoder, tiny_model.decoder, subset)
    full = estimate_errors(encoder, tiny_model.decoder, tiny_dataset)
    assert full.eps_star_hat >= small.eps_star_hat - 1e-12
    assert full.eps_hat >= small.eps_hat - 1e-12


def test_decoder_recovers_a_smooth_scalar_map():
    # z = 2 tanh(x / 2) on [-1, 1]; the decoder has to learn x = 2 artanh(z / 2)
    x = np.linspace(-1.0, 1.0, 801)
    dataset = TrainingDataset(
        t0=0.0,
        delta=1.0 / 400,
        states=x.reshape(1, -1, 1),
        latents=(2.0 * np.tanh(x / 2.0)).reshape(1, -1, 1),
        source_indices=np.array([0]),
    )
    config = TrainConfig(
        epochs=600,
        batch_size=32,
        learning_rate=1e-2,
        lr_interval=150,
        hidden_layers=(32, 32),
        eval_samples=128,
        seed=2,
    )
    _, decoder, report = train(dataset, config)
    errors = estimate_errors(None, decoder, dataset)
    assert report.final_loss < report.initial_loss
    assert errors.eps_star_hat < 1e-2


def test_lipschitz_bound_dominates_observed_slopes(rng):
    net = Mlp.create([4, 10, 10, 3], seed=5, inputs=rng.normal(size=(50, 4)), targets=rng.normal(size=(50, 3)))
    bound = lipschitz_upper_bound(net)
    a, b = rng.normal(size=(200, 4)), rng.normal(size=(200, 4))
    slopes = np.linalg.norm(mlp_forward(net, a) - mlp_forward(net, b), axis=1) / np.linalg.norm(a - b, axis=1)
    assert np.max(slopes) <= bound * (1 + 1e-9)


def test_predictions_keep_leading_axes(tiny_model, small_plant, rng):
    Z = rng.normal(size=(2, 5, tiny_model.obs.n_z))
    assert predict_states(tiny_model.decoder, Z).shape == (2, 5, 3)
    assert predict_outputs(small_plant, tiny_model.decoder, Z).shape == (2, 5, 2)


def test_flat_gradients_layout(tiny_model, tiny_dataset):
    X, Z = tiny_dataset.regression_split()
    _, _, grads = loss_and_gradients(None, tiny_model.decoder, X, Z, tiny_model.train_config)
    assert flat_gradients(grads["decoder"]).shape == flat_parameters(tiny_model.decoder).shape

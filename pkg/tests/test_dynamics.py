import math

import numpy as np
import pytest

from dynamics import (
    KuramotoParams,
    KuramotoPlant,
    NoiseSpec,
    Trajectory,
    kuramoto_rhs,
    latin_hypercube,
    rk4_step,
    sample_measurement_noise,
    sample_spacing,
    simulate,
    simulate_batch,
)
from tools import DimensionError


def test_kuramoto_rhs_reduces_to_omega_when_uncoupled():
    params = KuramotoParams(n=3, omega=np.array([0.1, -0.2, 0.3]), coupling=np.zeros((3, 3)), seed=0)
    theta = np.array([0.5, 1.0, -2.0])
    np.testing.assert_allclose(kuramoto_rhs(theta, params), params.omega)


def test_kuramoto_rhs_sign_convention():
    coupling = np.array([[0.0, 1.0], [0.0, 0.0]])
    params = KuramotoParams(n=2, omega=np.zeros(2), coupling=coupling, seed=0)
    theta = np.array([0.3, 0.0])
    assert kuramoto_rhs(theta, params)[0] == pytest.approx(math.sin(0.3))
    conventional = KuramotoParams(n=2, omega=np.zeros(2), coupling=coupling, seed=0, sign=-1.0)
    assert kuramoto_rhs(theta, conventional)[0] == pytest.approx(-math.sin(0.3))


def test_kuramoto_rhs_is_batched():
    params = KuramotoParams.from_seed(4, seed=3)
    thetas = np.random.default_rng(0).normal(size=(5, 4))
    batched = kuramoto_rhs(thetas, params)
    for row, theta in zip(batched, thetas):
        np.testing.assert_allclose(row, kuramoto_rhs(theta, params))


@pytest.mark.parametrize("shift", [0.7, -3.0, 2 * math.pi, 100.0])
def test_kuramoto_rhs_ignores_common_phase_shift(shift):
    params = KuramotoParams.from_seed(5, seed=2)
    theta = np.random.default_rng(1).uniform(-math.pi, math.pi, size=(3, 5))
    np.testing.assert_allclose(kuramoto_rhs(theta + shift, params), kuramoto_rhs(theta, params), atol=1e-10)


def test_kuramoto_rhs_rejects_wrong_length():
    params = KuramotoParams.from_seed(4, seed=3)
    with pytest.raises(DimensionError):
        kuramoto_rhs(np.zeros(3), params)


def test_params_from_seed_is_reproducible_and_in_range():
    a = KuramotoParams.from_seed(10, seed=7)
    b = KuramotoParams.from_seed(10, seed=7)
    np.testing.assert_array_equal(a.omega, b.omega)
    np.testing.assert_array_equal(a.coupling, b.coupling)
    assert np.all((a.omega >= -1) & (a.omega <= 1))
    assert np.all(np.diag(a.coupling) == 0)
    assert np.all((a.coupling >= 0) & (a.coupling <= 1))


def test_params_reject_negative_coupling():
    with pytest.raises(ValueError):
        KuramotoParams(n=2, omega=np.zeros(2), coupling=np.array([[0.0, -1.0], [0.0, 0.0]]), seed=0)


def test_rk4_step_matches_exponential():
    x = rk4_step(lambda t, s: -s, np.array([1.0]), 0.0, 0.1)
    assert x[0] == pytest.approx(math.exp(-0.1), abs=1e-7)


def test_rk4_step_rejects_nonpositive_delta():
    with pytest.raises(ValueError):
        rk4_step(lambda t, s: s, np.array([1.0]), 0.0, 0.0)


def test_sample_spacing_includes_both_endpoints():
    assert sample_spacing((0.0, 30.0), 4000) == pytest.approx(30.0 / 3999.0)
    with pytest.raises(ValueError):
        sample_spacing((0.0, 1.0), 1)
    with pytest.raises(ValueError):
        sample_spacing((1.0, 1.0), 10)


def test_latin_hypercube_one_point_per_stratum():
    points = latin_hypercube(50, [(-2.0, 2.0)] * 10, seed=4)
    assert points.shape == (50, 10)
    assert np.all((points >= -2.0) & (points < 2.0))
    strata = np.floor((points + 2.0) / 4.0 * 50).astype(int)
    for dim in range(10):
        assert sorted(strata[:, dim]) == list(range(50))


def test_latin_hypercube_is_seeded():
    np.testing.assert_array_equal(latin_hypercube(7, [(0, 1)], 3), latin_hypercube(7, [(0, 1)], 3))
    with pytest.raises(ValueError):
        latin_hypercube(5, [(1.0, 0.0)], 0)


def test_simulate_without_noise_ignores_seed(small_plant):
    x0 = np.array([0.1, -0.4, 0.9])
    a = simulate(small_plant.rhs, x0, (0.0, 1.0), 21, NoiseSpec(), seed=1)
    b = simulate(small_plant.rhs, x0, (0.0, 1.0), 21, NoiseSpec(), seed=99)
    np.testing.assert_array_equal(a.states, b.states)
    assert a.states.shape == (21, 3)
    np.testing.assert_array_equal(a.states[0], x0)
    assert a.times[-1] == pytest.approx(1.0)


def test_simulate_with_noise_is_reproducible(small_plant):
    noise = NoiseSpec.from_variances(0.02, 0.02)
    x0 = np.zeros(3)
    a = simulate(small_plant.rhs, x0, (0.0, 1.0), 21, noise, seed=5, output=small_plant.output)
    b = simulate(small_plant.rhs, x0, (0.0, 1.0), 21, noise, seed=5, output=small_plant.output)
    c = simulate(small_plant.rhs, x0, (0.0, 1.0), 21, noise, seed=6)
    np.testing.assert_array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)
    np.testing.assert_array_equal(a.outputs, a.states[:, :2])


def test_simulate_accepts_a_batch_of_initial_states(small_plant):
    x0 = latin_hypercube(4, [(-1.0, 1.0)] * 3, seed=2)
    batch = simulate(small_plant.rhs, x0, (0.0, 0.5), 11, NoiseSpec(), seed=0)
    assert batch.states.shape == (11, 4, 3)
    single = simulate(small_plant.rhs, x0[2], (0.0, 0.5), 11, NoiseSpec(), seed=0)
    np.testing.assert_allclose(batch.states[:, 2], single.states, rtol=0, atol=1e-14)


def test_simulate_batch_is_independent_of_worker_count(small_plant):
    noise = NoiseSpec.from_variances(0.02, 0.0)
    x0 = latin_hypercube(3, [(-1.0, 1.0)] * 3, seed=2)
    serial = simulate_batch(small_plant.rhs, x0, (0.0, 0.5), 11, noise, seed=8)
    threaded = simulate_batch(small_plant.rhs, x0, (0.0, 0.5), 11, noise, seed=8, workers=3)
    for a, b in zip(serial, threaded):
        np.testing.assert_array_equal(a.states, b.states)


def test_simulate_reports_divergence_as_nonfinite():
    trajectory = simulate(lambda t, x: x**2, np.array([10.0]), (0.0, 1.0), 11, NoiseSpec(), seed=0)
    assert not trajectory.is_finite()


def test_noise_spec_bounds_default_to_three_sigma():
    noise = NoiseSpec.from_variances(0.02, 0.08)
    assert noise.w_bar == pytest.approx(3 * math.sqrt(0.02))
    assert noise.v_bar == pytest.approx(3 * math.sqrt(0.08))
    assert NoiseSpec().is_zero
    with pytest.raises(ValueError):
        NoiseSpec(process_var=-1.0)


def test_measurement_noise_zero_variance_gives_zeros():
    assert not np.any(sample_measurement_noise(5, 2, NoiseSpec(), seed=0))
    v = sample_measurement_noise(20000, 1, NoiseSpec(meas_var=0.04), seed=0)
    assert float(np.std(v)) == pytest.approx(0.2, rel=0.05)


def test_plant_output_and_lipschitz(small_plant):
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(small_plant.output(x), [1.0, 2.0])
    np.testing.assert_array_equal(small_plant.output_jacobian(x), [[1, 0, 0], [0, 1, 0]])
    l_h, l_hi = small_plant.output_lipschitz()
    assert l_h == 1.0
    np.testing.assert_array_equal(l_hi, [1.0, 1.0])
    assert small_plant.describe()["measured"] == [1, 2]


def test_plant_rejects_out_of_range_sensor():
    with pytest.raises(DimensionError):
        KuramotoPlant(KuramotoParams.from_seed(3, seed=1), measured=(0, 3))


def test_trajectory_csv_round_trip(tmp_path):
    states = np.array([[0.1, 1.0 / 3.0], [0.2, 2.0 / 3.0]])
    trajectory = Trajectory(t0=0.0, delta=0.5, states=states, outputs=states[:, :1])
    path = tmp_path / "trajectory.csv"
    trajectory.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,x2,y1"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1:3], states)

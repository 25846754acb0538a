import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from podec import SampleConfig, benchmark_systems, linearize, sample_strategy_1, sample_strategy_2, solve_care
from podec.errors import InvalidPlant, NonEquilibriumGoal
from podec.representation import classify_singular_values
from podec.stiefel import StiefelL1Config
from podec.tabular import NonlinearSystem
from podec.zoo import QUADROTOR, benchmark, manipulator_gravity, sample


@given(seed=st.integers(0, 2**63 - 1), strategy=st.sampled_from(["I", "II"]))
def test_sampling_is_a_pure_function_of_config(seed, strategy):
    cfg = SampleConfig(strategy, 2, 2 if strategy == "II" else 3, seed)
    a, b = sample(cfg), sample(cfg)
    for k in ("A", "B", "Q", "R"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))


def test_strategy1_records_draws():
    plant = sample_strategy_1(SampleConfig("I", 2, 4, 3))
    assert plant.meta["draws"] >= 1 and plant.meta["strategy"] == "I"
    assert np.all(plant.A >= 0) and np.all(plant.A <= 1)


@pytest.mark.parametrize("size", [2, 3, 4])
def test_strategy2_round_trip(size):
    for seed in range(10):
        plant, K = sample_strategy_2(SampleConfig("II", size, size, seed))
        _, K_rec = solve_care(plant)
        assert np.abs(K_rec - K).max() <= 1e-8
        s = np.linalg.svd(K, compute_uv=False)
        np.testing.assert_allclose(s, 1.0, atol=1e-12)


def test_strategy2_zero_singular_values():
    plant, K = sample_strategy_2(SampleConfig("II", 4, 4, 1, zero_sv_count=2))
    s = np.linalg.svd(K, compute_uv=False)
    tol = StiefelL1Config().zero_sv_tolerance
    assert np.all(s[-2:] < tol * s[0])
    assert classify_singular_values(s, StiefelL1Config())["zero"] == [2, 3]


def test_sample_config_validation():
    with pytest.raises(InvalidPlant):
        SampleConfig("II", 2, 3)
    with pytest.raises(InvalidPlant):
        SampleConfig("III", 2, 3)
    with pytest.raises(InvalidPlant):
        SampleConfig("I", 3, 2)


def test_benchmarks_are_goal_equilibria():
    for name, sys_ in benchmark_systems().items():
        np.testing.assert_allclose(sys_.dynamics(sys_.x_goal, sys_.u_goal), 0, atol=1e-9)
        plant = linearize(sys_)
        solve_care(plant)


def test_linear_system_linearizes_exactly():
    rng = np.random.default_rng(0)
    A, B = rng.standard_normal((3, 3)), rng.standard_normal((3, 2))
    sys_ = NonlinearSystem("lin", lambda X, U: X @ A.T + U @ B.T, np.zeros(3), np.zeros(2),
                           -np.ones(3), np.ones(3), -np.ones(2), np.ones(2), np.eye(3), np.eye(2))
    plant = linearize(sys_)
    np.testing.assert_allclose(plant.A, A, atol=1e-6)
    np.testing.assert_allclose(plant.B, B, atol=1e-6)


def test_pendulum_jacobian():
    plant = linearize(benchmark("pendulum"))
    np.testing.assert_allclose(plant.A, [[0, 1], [1, 0]], atol=1e-6)
    np.testing.assert_allclose(plant.B, [[0], [1]], atol=1e-6)


def test_quadrotor_hover_jacobian():
    plant = linearize(benchmark("planar_quadrotor"))
    p = QUADROTOR
    # both thrusts lift equally and twist in opposite directions
    expected_B = np.array([[0, 0], [0, 0], [1 / p["mass"], 1 / p["mass"]],
                           [p["arm"] / p["inertia"], -p["arm"] / p["inertia"]]])
    np.testing.assert_allclose(plant.B, expected_B, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(plant.B[2, 0], plant.B[2, 1])
    expected_A = np.zeros((4, 4))
    expected_A[0, 2] = expected_A[1, 3] = 1.0
    np.testing.assert_allclose(plant.A, expected_A, atol=1e-6)


def test_manipulator_goal_input_cancels_gravity():
    sys_ = benchmark("two_link_manipulator")
    np.testing.assert_allclose(sys_.u_goal, manipulator_gravity(sys_.x_goal[:2])[0])


def test_non_equilibrium_goal_rejected():
    with pytest.raises(NonEquilibriumGoal):
        NonlinearSystem("bad", lambda X, U: X + U + 1.0, np.zeros(1), np.zeros(1), -np.ones(1),
                        np.ones(1), -np.ones(1), np.ones(1), np.eye(1), np.eye(1))


def test_unknown_benchmark():
    with pytest.raises(InvalidPlant):
        benchmark("nope")

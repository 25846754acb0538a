import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg

from podec import PlantSpec, mean_value_gap, solve_care, solve_lyapunov, value_of_linear_policy
from podec.care import care_residual, is_hurwitz, plant_value_gap
from podec.errors import DimensionMismatch, InvalidPlant, NotHurwitz, NotStabilizable
from podec.zoo import SampleConfig, sample


def test_double_integrator_analytic():
    plant = PlantSpec([[0, 1], [0, 0]], [[0], [1]], np.eye(2), [[1.0]])
    V, K = solve_care(plant)
    r3 = np.sqrt(3.0)
    np.testing.assert_allclose(V.P, [[r3, 1], [1, r3]], atol=1e-10)
    np.testing.assert_allclose(K, [[1, r3]], atol=1e-10)


def test_zero_cost_gives_zero_value():
    plant = PlantSpec(-np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2))
    V, K = solve_care(plant)
    np.testing.assert_allclose(V.P, 0, atol=1e-12)
    np.testing.assert_allclose(K, 0, atol=1e-12)


def test_strategy1_seed42_matches_reference_solver(oracles):
    plant = sample(SampleConfig("I", 2, 4, 42))
    ref = oracles["strategy1_seed42_2x4"]
    np.testing.assert_allclose(plant.A, ref["A"], atol=0)
    V, K = solve_care(plant)
    assert care_residual(plant.A, plant.B, plant.Q, plant.R, V.P) <= 1e-8
    np.testing.assert_allclose(V.P, ref["P"], rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(K, ref["K"], rtol=1e-8, atol=1e-10)


def test_discounted_double_integrator(oracles):
    plant = PlantSpec([[0, 1], [0, 0]], [[0], [1]], np.eye(2), [[1.0]], lambda_discount=0.5)
    V, K = solve_care(plant)
    np.testing.assert_allclose(V.P, oracles["double_integrator_lam05"]["P"], atol=1e-10)
    np.testing.assert_allclose(K, oracles["double_integrator_lam05"]["K"], atol=1e-10)


def test_uncontrollable_unstable_mode_raises():
    plant = PlantSpec(np.diag([1.0, -1.0]), [[0.0], [1.0]], np.eye(2), [[1.0]])
    with pytest.raises(NotStabilizable):
        solve_care(plant)


def test_plant_validation():
    with pytest.raises(InvalidPlant):
        PlantSpec(np.eye(2), np.eye(2), -np.eye(2), np.eye(2))
    with pytest.raises(InvalidPlant):
        PlantSpec(np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 2)))
    with pytest.raises(DimensionMismatch):
        PlantSpec(np.eye(2), np.ones((3, 1)), np.eye(2), np.eye(1))
    with pytest.raises(InvalidPlant):
        PlantSpec(np.eye(2), np.eye(2), np.eye(2), np.eye(2), lambda_discount=-1)


def test_lyapunov_examples(oracles):
    np.testing.assert_allclose(solve_lyapunov(-np.eye(2), np.eye(2)), np.eye(2) / 2, atol=1e-12)
    X = solve_lyapunov(np.array([[-1.0, 1.0], [0.0, -2.0]]), np.eye(2))
    np.testing.assert_allclose(X, oracles["lyapunov_upper_triangular"], atol=1e-12)
    with pytest.raises(NotHurwitz):
        solve_lyapunov(np.array([[0.0, 1.0], [0.0, 0.0]]), np.eye(2))


def test_value_of_linear_policy_examples(intro_plant):
    plant = PlantSpec(-np.eye(2), np.eye(2), np.eye(2), np.eye(2))
    np.testing.assert_allclose(value_of_linear_policy(plant, np.zeros((2, 2))).P, np.eye(2) / 2)
    assert value_of_linear_policy(intro_plant, np.zeros((2, 2))) is None


def test_mean_value_gap_examples(oracles):
    assert mean_value_gap(np.eye(2), np.eye(2), [1, 1]) == 0.0
    assert mean_value_gap(2 * np.eye(2), np.eye(2), [1, 1]) == pytest.approx(2 / 3)
    mc = oracles["monte_carlo_gap"]
    D = np.array(mc["D"])
    gap = mean_value_gap(D, np.zeros_like(D), mc["halfwidths"])
    assert gap == pytest.approx(mc["estimate"], rel=0.01)


def test_mean_value_gap_with_region_basis():
    # a rotated square has the same average as the pulled-back box
    rng = np.random.default_rng(3)
    M = np.linalg.qr(rng.standard_normal((2, 2)))[0]
    D = rng.standard_normal((2, 2))
    D = D + D.T
    direct = mean_value_gap(D, np.zeros((2, 2)), [1.0, 2.0], M)
    pulled = mean_value_gap(M.T @ D @ M, np.zeros((2, 2)), [1.0, 2.0])
    assert direct == pytest.approx(pulled)


@given(seed=st.integers(0, 2**31 - 1), strategy=st.sampled_from(["I", "II"]),
       size=st.sampled_from([(1, 2), (2, 2), (2, 3), (2, 4), (3, 3), (3, 5)]))
def test_care_residual_and_optimality_consistency(seed, strategy, size):
    m, n = size
    if strategy == "II":
        n = m
    plant = sample(SampleConfig(strategy, m, n, seed))
    V, K = solve_care(plant)
    scale = max(1.0, np.linalg.norm(V.P))
    assert care_residual(plant.A_discounted, plant.B, plant.Q, plant.R, V.P) <= 1e-8 * scale
    assert is_hurwitz(plant.A_discounted - plant.B @ K)
    VK = value_of_linear_policy(plant, K)
    np.testing.assert_allclose(VK.P, V.P, atol=1e-8 * scale)


@given(seed=st.integers(0, 2**31 - 1), lam=st.sampled_from([0.0, 0.5, 2.0]))
def test_suboptimal_policies_never_beat_optimal(seed, lam):
    plant = sample(SampleConfig("I", 2, 3, seed)).replace(lambda_discount=lam)
    V, K = solve_care(plant)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        VK = value_of_linear_policy(plant, K + 0.3 * rng.standard_normal(K.shape))
        if VK is not None:
            assert plant_value_gap(plant, VK, V) >= -1e-9


def test_agrees_with_scipy_riccati_on_random_plants():
    for seed in range(20):
        plant = sample(SampleConfig("I", 2, 4, seed)).replace(lambda_discount=0.3)
        V, _ = solve_care(plant)
        P = linalg.solve_continuous_are(plant.A_discounted, plant.B, plant.Q, plant.R)
        np.testing.assert_allclose(V.P, P, rtol=1e-7, atol=1e-9)

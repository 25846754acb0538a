import math

import numpy as np
import pytest

from podec import (
    Decomposition,
    DPConfig,
    InputGroup,
    NonlinearSystem,
    TabularPolicy,
    compose_and_rollout,
    linearize,
    normalized_value_error,
    policy_iteration,
    solve_care,
)
from podec.errors import DimensionMismatch, InvalidDecomposition, InvalidPlant, NonPositiveReference
from podec.tabular import (
    Grid,
    _evaluate,
    _Subproblem,
    action_lattice,
    grid_points_for,
    rollout_batch,
    sample_starts,
    solve_decomposition,
    transform_system,
)
from podec.representation import sparse_svd_map
from podec.zoo import benchmark


@pytest.fixture(scope="module")
def di():
    return benchmark("double_integrator")


@pytest.fixture(scope="module")
def di_policy(di):
    return policy_iteration(di, (0, 1), (0,), (), DPConfig(grid_points=81, action_levels=41))


def test_grid_interpolation_is_exact_for_multilinear_functions():
    g = Grid([-1.0, 0.0], [1.0, 2.0], (5, 7))
    nodes = g.nodes()
    f = lambda X: 1 + 2 * X[:, 0] - X[:, 1] + 0.5 * X[:, 0] * X[:, 1]
    X = np.random.default_rng(0).uniform([-1, 0], [1, 2], (100, 2))
    idx, w = g.weights(X)
    np.testing.assert_allclose(np.sum(f(nodes)[idx] * w, axis=1), f(X))
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    assert np.array_equal(g.nearest(nodes), np.arange(g.size))


def test_grid_points_respect_node_cap():
    assert grid_points_for(DPConfig(grid_points=81, max_nodes=250_000), 4) == (22,) * 4
    assert grid_points_for(DPConfig(grid_points=81), 2) == (81, 81)


def _lqr_action_gap(di, pol, radius):
    _, K = solve_care(linearize(di))
    nodes = pol.grid.nodes()
    u_lqr = -(nodes @ K.T)[:, 0]
    step = (di.u_upper[0] - di.u_lower[0]) / 40
    inside = np.all(np.abs(nodes) <= radius + 1e-9, axis=1) & (np.abs(u_lqr) <= di.u_upper[0] - step)
    return np.abs(pol.actions[:, 0] - u_lqr)[inside].max() / step


def test_policy_matches_lqr_gain_near_goal(di, di_policy):
    assert _lqr_action_gap(di, di_policy, 0.5) <= 1.0


@pytest.mark.xfail(strict=True, reason="a few nodes on the start box sit 1.02 lattice steps "
                   "from the LQR action: interpolation kinks pull them to u = 0")
def test_policy_matches_lqr_gain_on_start_box(di, di_policy):
    assert _lqr_action_gap(di, di_policy, 1.0) <= 1.0


def test_grid_refinement_halves_interior_error(di):
    V, _ = solve_care(linearize(di))
    errors = []
    for points in (41, 81):
        spacing = 4.0 / (points - 1)
        # the time step is refined with the grid so the O(h) floor does not mask the spatial rate
        cfg = DPConfig(grid_points=points, action_levels=points, h=0.1 * spacing)
        pol = policy_iteration(di, (0, 1), (0,), (), cfg)
        nodes = pol.grid.nodes()
        inner = np.all(np.abs(nodes) <= 1.0 + 1e-9, axis=1)
        errors.append(np.abs(pol.values - V(nodes))[inner].max())
    assert errors[0] >= 2.0 * errors[1]


def test_large_discount_approaches_myopic_value(di):
    sys_ = di.replace(lambda_discount=10.0)
    cfg = DPConfig(grid_points=21, action_levels=11)
    pol = policy_iteration(sys_, (0, 1), (0,), (), cfg)
    nodes = pol.grid.nodes()
    lat = action_lattice(sys_.u_lower, sys_.u_upper, 11)
    stage = sys_.cost(np.repeat(nodes, len(lat), 0), np.tile(lat, (len(nodes), 1)))
    best = stage.reshape(len(nodes), len(lat)).min(axis=1)
    myopic = best * cfg.h / (1 - math.exp(-10.0 * cfg.h))
    far = np.linalg.norm(nodes, axis=1) > 0.5
    assert np.all(np.abs(pol.values - myopic)[far] <= 0.15 * myopic[far])


def test_zero_cost_gives_zero_values_and_lowest_action(di):
    sys_ = di.replace(Q=np.zeros((2, 2)), R=np.zeros((1, 1)))
    pol = policy_iteration(sys_, (0, 1), (0,), (), DPConfig(grid_points=11, action_levels=5))
    assert np.all(pol.values == 0)
    assert np.all(pol.actions == sys_.u_lower[0])


def test_sweep_residuals_are_monotone(di):
    cfg = DPConfig(grid_points=21, action_levels=11, evaluation="sweeps")
    sub = _Subproblem(di, (0, 1), (0,), (), cfg)
    a_idx = np.zeros(sub.grid.size, dtype=int) + 5
    V, residuals = _evaluate(sub, a_idx, cfg, np.zeros(sub.grid.size))
    assert np.all(np.diff(residuals) <= 1e-12)
    direct, _ = _evaluate(sub, a_idx, DPConfig(grid_points=21, action_levels=11),
                          np.zeros(sub.grid.size))
    # a sweep residual r bounds the distance to the fixed point by r / (1 - gamma)
    bound = residuals[-1] / (1 - sub.gamma)
    assert np.abs(V - direct).max() <= bound


def test_sweeps_and_direct_solve_give_the_same_policy(di):
    a = policy_iteration(di, (0, 1), (0,), (), DPConfig(grid_points=15, action_levels=7))
    b = policy_iteration(di, (0, 1), (0,), (),
                         DPConfig(grid_points=15, action_levels=7, evaluation="sweeps"))
    np.testing.assert_array_equal(a.actions, b.actions)


def test_undiscounted_is_rejected(di):
    with pytest.raises(InvalidPlant):
        policy_iteration(di.replace(lambda_discount=0.0), (0, 1), (0,))


def test_rollout_is_deterministic(di, di_policy):
    X0 = sample_starts(di, 5, 0)
    a = rollout_batch(di, [di_policy], X0, horizon=20)
    b = rollout_batch(di, [di_policy], X0, horizon=20)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.x, rb.x) and ra.cost == rb.cost and ra.converged
    single = compose_and_rollout(di, [di_policy], X0[0], horizon=20)
    assert single.cost == a[0].cost


def test_rollout_csv_has_one_row_per_time(di, di_policy):
    r = compose_and_rollout(di, [di_policy], [0.5, 0.0], horizon=0.05)
    lines = r.to_csv().strip().splitlines()
    assert lines[0] == "t,x0,x1,u0,running_cost" and len(lines) == 1 + r.t.size


def test_composition_must_partition_inputs(di_policy):
    quad = benchmark("planar_quadrotor")
    with pytest.raises(InvalidDecomposition):
        rollout_batch(quad, [di_policy], np.zeros((1, 4)))


def test_cascaded_subpolicy_reads_only_its_states():
    intro = benchmark("intro")
    d = Decomposition((InputGroup((0,), (0,)), InputGroup((1,), (1,))), (None, 0))
    cfg = DPConfig(grid_points=21, action_levels=11)
    child, parent = solve_decomposition(intro, d, cfg)[1], solve_decomposition(intro, d, cfg)[0]
    assert child.states == (1,) and parent.states == (0, 1)
    with pytest.raises(DimensionMismatch):
        child.action(np.zeros((1, 2)))
    with pytest.raises(InvalidDecomposition):
        policy_iteration(intro, (0,), (0,), (parent,), cfg)


def test_policy_save_load_round_trip(tmp_path, di_policy):
    path = tmp_path / "p.npz"
    di_policy.save(path)
    back = TabularPolicy.load(path)
    np.testing.assert_array_equal(back.actions, di_policy.actions)
    np.testing.assert_array_equal(back.values, di_policy.values)
    assert back.header() == di_policy.header()


def test_transformed_system_is_consistent():
    quad = benchmark("planar_quadrotor")
    rmap = sparse_svd_map(linearize(quad))
    tsys = transform_system(quad, rmap)
    np.testing.assert_allclose(tsys.dynamics(np.zeros(4), np.zeros(2)), 0, atol=1e-9)
    x = quad.x_goal + np.array([0.1, -0.05, 0.2, 0.0])
    u = quad.u_goal + np.array([0.3, -0.1])
    y = rmap.T_y @ (x - quad.x_goal)
    v = rmap.T_v @ (u - quad.u_goal)
    np.testing.assert_allclose(tsys.dynamics(y, v), rmap.T_y @ quad.dynamics(x, u), atol=1e-12)


def test_normalized_value_error():
    assert normalized_value_error(2.0, 3.0) == -0.5
    with pytest.raises(NonPositiveReference):
        normalized_value_error(0.0, 1.0)


def test_divergent_rollout_is_flagged():
    sys_ = NonlinearSystem("blowup", lambda X, U: X**3 + U, [0.0], [0.0], [-1.0], [1.0],
                           [-0.1], [0.1], np.eye(1), np.eye(1))
    pol = TabularPolicy((0,), (0,), [-1.0], [1.0], (3,), [[0.1], [0.1], [0.1]], [0.0, 0.0, 0.0])
    r = compose_and_rollout(sys_, [pol], [0.9], horizon=10)
    assert r.nonfinite and math.isinf(r.cost) and not r.converged

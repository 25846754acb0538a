import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from podec import (
    Decomposition,
    InputGroup,
    PlantSpec,
    best_decomposition_exhaustive,
    enumerate_decompositions,
    evaluate_lqr,
    policy_domain,
)
from podec.decomposition import count_decompositions, error_rank
from podec.errors import AllUnstable, BudgetExceeded, InvalidDecomposition
from podec.zoo import SampleConfig, sample

DECOUPLED = Decomposition((InputGroup((0,), (0,)), InputGroup((1,), (1,))), (None, None))


def test_policy_domains():
    d = Decomposition((InputGroup((0,), (0, 1)), InputGroup((1,), (2, 3))), (None, None))
    assert policy_domain(d, 0) == (0, 1) and policy_domain(d, 1) == (2, 3)
    d = Decomposition((InputGroup((0,), (0, 1)), InputGroup((1,), (2, 3))), (None, 0))
    assert policy_domain(d, 0) == (0, 1, 2, 3)
    chain = Decomposition(tuple(InputGroup((i,), (i,)) for i in range(3)), (None, 0, 1))
    assert policy_domain(chain, 0) == (0, 1, 2)
    assert chain.post_order() == [2, 1, 0]


def test_invalid_decompositions():
    with pytest.raises(InvalidDecomposition):
        Decomposition((InputGroup((0,), (0,)),), (None,))
    with pytest.raises(InvalidDecomposition):
        Decomposition((InputGroup((0,), (0,)), InputGroup((1,), (0,))), (None, None))
    with pytest.raises(InvalidDecomposition):
        Decomposition((InputGroup((0,), (0,)), InputGroup((1,), (1,))), (1, 0))
    with pytest.raises(InvalidDecomposition):
        Decomposition((InputGroup((0,), (0,)), InputGroup((1,), (2,))), (None, None))


def test_json_round_trip_is_canonical():
    d = Decomposition((InputGroup((1,), (1,)), InputGroup((0,), (0, 2))), (1, None))
    back = Decomposition.from_json(d.to_json())
    assert back == d.canonical()
    assert back.groups[0].inputs == (0,) and back.parent == (None, 0)


def test_counts_match_brute_force(oracles):
    for key, expected in oracles["decomposition_counts"].items():
        m, n = map(int, key.split(","))
        listed = list(enumerate_decompositions(m, n))
        assert len(listed) == expected == count_decompositions(m, n)
        assert len({d.to_json() for d in listed}) == expected


def test_single_input_has_no_decompositions():
    assert list(enumerate_decompositions(1, 3)) == []


def test_budget():
    with pytest.raises(BudgetExceeded):
        list(enumerate_decompositions(3, 6, budget=100))


def test_intro_errors_match_closed_form(intro_plant, oracles):
    ref = oracles["intro_errors_undiscounted"]
    cascade = Decomposition((InputGroup((0,), (0,)), InputGroup((1,), (1,))), (None, 0))
    assert evaluate_lqr(intro_plant, cascade).err_lqr == pytest.approx(
        ref["cascade_u2_into_u1"], rel=1e-8)
    ev = evaluate_lqr(intro_plant, DECOUPLED)
    assert math.isinf(ref["decoupled_diagonal"]) and math.isinf(ev.err_lqr) and not ev.stable


def test_transformed_intro_is_free():
    plant = PlantSpec(np.diag([1.0, -1.0]), np.eye(2), np.eye(2), np.eye(2))
    ev = evaluate_lqr(plant, DECOUPLED)
    assert ev.err_lqr <= 1e-9
    d, best = best_decomposition_exhaustive(plant)
    assert best.err_lqr <= 1e-9 and d == DECOUPLED


def test_decoupled_plant_gives_diagonal_gain():
    plant = PlantSpec(np.diag([-1.0, -2.0]), np.eye(2), np.eye(2), np.eye(2))
    ev = evaluate_lqr(plant, DECOUPLED)
    assert ev.err_lqr <= 1e-9
    assert ev.K_delta[0, 1] == 0 and ev.K_delta[1, 0] == 0


def test_block_diagonal_plant_finds_block_split():
    rng = np.random.default_rng(5)
    A = np.zeros((4, 4))
    A[:2, :2], A[2:, 2:] = rng.uniform(-1, 1, (2, 2)), rng.uniform(-1, 1, (2, 2))
    B = np.zeros((4, 2))
    B[:2, 0], B[2:, 1] = rng.uniform(0.5, 1, 2), rng.uniform(0.5, 1, 2)
    plant = PlantSpec(A, B, np.eye(4), np.eye(2))
    d, ev = best_decomposition_exhaustive(plant)
    assert ev.err_lqr <= 1e-9
    assert {g.states for g in d.groups} == {(0, 1), (2, 3)} and d.parent == (None, None)


def test_all_unstable():
    # u1 has no authority, so whichever unstable state it owns cannot be steered
    plant = PlantSpec([[1.7, 0.2], [0.6, 0.3]], [[0.0, 1.0], [0.0, 0.0]], np.eye(2), np.eye(2))
    with pytest.raises(AllUnstable):
        best_decomposition_exhaustive(plant)


def test_error_rank_ties():
    assert error_rank(7e-14) == error_rank(8e-14) == 0.0
    assert error_rank(math.inf) == math.inf
    assert error_rank(0.1234567891) < error_rank(0.1234567899)


def _relabel(d, perm):
    inv = {old: new for new, old in enumerate(perm)}
    groups = tuple(d.groups[old] for old in perm)
    parent = tuple(None if d.parent[old] is None else inv[d.parent[old]] for old in perm)
    return Decomposition(groups, parent)


@given(seed=st.integers(0, 10**6), pick=st.integers(0, 10**6))
def test_evaluation_properties(seed, pick):
    plant = sample(SampleConfig("I", 3, 4, seed))
    ds = list(enumerate_decompositions(3, 4))
    d = ds[pick % len(ds)]
    ev = evaluate_lqr(plant, d)
    again = evaluate_lqr(plant, d)
    assert ev.err_lqr == again.err_lqr or (math.isnan(ev.err_lqr) and math.isnan(again.err_lqr))
    assert np.array_equal(ev.K_delta, again.K_delta)
    assert ev.err_lqr >= -1e-9
    # gains only read states inside each group's policy domain
    mask = np.zeros((plant.m, plant.n), dtype=bool)
    for g, grp in enumerate(d.groups):
        mask[np.ix_(grp.inputs, policy_domain(d, g))] = True
    assert not np.any(ev.K_delta[~mask])
    for perm in itertools.permutations(range(len(d.groups))):
        ev_p = evaluate_lqr(plant, _relabel(d, perm))
        if math.isfinite(ev.err_lqr):
            assert ev_p.err_lqr == pytest.approx(ev.err_lqr, rel=1e-9, abs=1e-12)
        else:
            assert not math.isfinite(ev_p.err_lqr)


@pytest.mark.parametrize("size", [(2, 3), (3, 3)])
def test_exhaustive_best_is_minimal(size):
    plant = sample(SampleConfig("I", *size, 11))
    d, ev, results = best_decomposition_exhaustive(plant, return_all=True)
    assert all(ev.err_lqr <= r.err_lqr + 1e-9 for _, r in results)

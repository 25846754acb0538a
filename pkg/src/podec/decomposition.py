"""Policy decompositions: structure, enumeration and LQR value-error estimates.

A decomposition splits the inputs into groups. Each group owns a disjoint
set of states, and groups are wired into a forest: a child group's
sub-policy is computed first and then substituted into its parent's
subproblem. Groups with no cascade relation are decoupled, so while one
group's policy is computed the inputs of unrelated groups sit at their goal
value and the states outside its domain are frozen at the goal.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .care import (
    PlantSpec,
    QuadraticValue,
    plant_value_gap,
    solve_care,
    solve_care_matrices,
    value_of_linear_policy,
)
from .errors import (
    AllUnstable,
    BudgetExceeded,
    IllConditioned,
    InvalidDecomposition,
    NotStabilizable,
)

DEFAULT_GRID_POINTS = 21
DEFAULT_ACTION_LEVELS = 11
DEFAULT_BUDGET = 10**6
ERR_DECIMALS = 9  # value errors closer than this are treated as ties


def error_rank(err: float) -> float:
    """Value error rounded so that round-off differences compare equal."""
    return round(err, ERR_DECIMALS) + 0.0 if math.isfinite(err) else math.inf


@dataclass(frozen=True)
class InputGroup:
    inputs: tuple[int, ...]
    states: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(sorted(int(i) for i in self.inputs)))
        object.__setattr__(self, "states", tuple(sorted(int(i) for i in self.states)))
        if not self.inputs or not self.states:
            raise InvalidDecomposition("input groups need at least one input and one state")


@dataclass(frozen=True)
class Decomposition:
    """A forest of input groups; ``parent[g]`` is the group ``g`` cascades into."""

    groups: tuple[InputGroup, ...]
    parent: tuple[int | None, ...]

    def __post_init__(self):
        groups = tuple(g if isinstance(g, InputGroup) else InputGroup(*g) for g in self.groups)
        parent = tuple(None if p is None else int(p) for p in self.parent)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "parent", parent)
        G = len(groups)
        if G < 2:
            raise InvalidDecomposition("a decomposition needs at least two groups")
        if len(parent) != G:
            raise InvalidDecomposition("parent array length must equal the number of groups")
        for which in ("inputs", "states"):
            seen = [i for g in groups for i in getattr(g, which)]
            if len(seen) != len(set(seen)):
                raise InvalidDecomposition(f"{which} must be disjoint across groups")
            if sorted(seen) != list(range(len(seen))):
                raise InvalidDecomposition(f"{which} must cover 0..{len(seen) - 1}")
        for g, p in enumerate(parent):
            if p is not None and not (0 <= p < G and p != g):
                raise InvalidDecomposition(f"group {g} has invalid parent {p}")
        for g in range(G):
            seen_nodes = set()
            node = g
            while node is not None:
                if node in seen_nodes:
                    raise InvalidDecomposition("cascade links must form a forest")
                seen_nodes.add(node)
                node = parent[node]

    @property
    def m(self) -> int:
        return sum(len(g.inputs) for g in self.groups)

    @property
    def n(self) -> int:
        return sum(len(g.states) for g in self.groups)

    def children(self, g: int) -> list[int]:
        return [c for c, p in enumerate(self.parent) if p == g]

    def descendants(self, g: int) -> list[int]:
        out = []
        stack = self.children(g)
        while stack:
            c = stack.pop()
            out.append(c)
            stack.extend(self.children(c))
        return sorted(out)

    def post_order(self) -> list[int]:
        """Group indices with every child listed before its parent."""
        order = []

        def visit(g):
            for c in self.children(g):
                visit(c)
            order.append(g)

        for g, p in enumerate(self.parent):
            if p is None:
                visit(g)
        return order

    def canonical(self) -> "Decomposition":
        """Same structure with groups sorted by their smallest input."""
        order = sorted(range(len(self.groups)), key=lambda g: self.groups[g].inputs[0])
        new_index = {old: new for new, old in enumerate(order)}
        parent = tuple(
            None if self.parent[old] is None else new_index[self.parent[old]] for old in order
        )
        return Decomposition(tuple(self.groups[old] for old in order), parent)

    def to_dict(self) -> dict:
        c = self.canonical()
        return {
            "groups": [{"inputs": list(g.inputs), "states": list(g.states)} for g in c.groups],
            "parent": list(c.parent),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "Decomposition":
        groups = tuple(InputGroup(g["inputs"], g["states"]) for g in data["groups"])
        return cls(groups, tuple(data["parent"]))

    @classmethod
    def from_json(cls, text: str) -> "Decomposition":
        return cls.from_dict(json.loads(text))

    def describe(self) -> str:
        parts = []
        for g, grp in enumerate(self.groups):
            u = ",".join(f"u{i + 1}" for i in grp.inputs)
            x = ",".join(f"x{i + 1}" for i in grp.states)
            link = "" if self.parent[g] is None else f" -> [{self.parent[g]}]"
            parts.append(f"[{g}] ({u} | {x}){link}")
        return "; ".join(parts)


def policy_domain(d: Decomposition, g: int) -> tuple[int, ...]:
    """States the sub-policy of group ``g`` depends on (own plus all descendants')."""
    states = set(d.groups[g].states)
    for c in d.descendants(g):
        states.update(d.groups[c].states)
    return tuple(sorted(states))


def compute_surrogate(d: Decomposition, grid_points=DEFAULT_GRID_POINTS,
                      action_levels=DEFAULT_ACTION_LEVELS) -> float:
    return float(sum(
        float(grid_points) ** len(policy_domain(d, g)) * float(action_levels) ** len(grp.inputs)
        for g, grp in enumerate(d.groups)
    ))


@dataclass(frozen=True, eq=False)
class DecompositionEvaluation:
    err_lqr: float
    K_delta: np.ndarray
    stable: bool
    compute_surrogate: float
    diagnostic: str | None = field(default=None, compare=False)

    def sort_key(self):
        return (self.err_lqr, self.compute_surrogate)


def evaluate_lqr(plant: PlantSpec, d: Decomposition, *, optimal: QuadraticValue | None = None,
                 grid_points=DEFAULT_GRID_POINTS,
                 action_levels=DEFAULT_ACTION_LEVELS) -> DecompositionEvaluation:
    """LQR estimate of the value error of decomposition ``d`` on ``plant``.

    Sub-gains are solved bottom-up; each group sees the discounted dynamics
    restricted to its policy domain, closed by the gains of its descendants,
    and pays the full running cost including its descendants' inputs.
    The assembled block-sparse gain is scored by the mean gap between its
    value and the optimal value over the plant's region.
    """
    if d.m != plant.m or d.n != plant.n:
        raise InvalidDecomposition(
            f"decomposition is for (m={d.m}, n={d.n}), plant is (m={plant.m}, n={plant.n})"
        )
    surrogate = compute_surrogate(d, grid_points, action_levels)
    A, B, Q, R = plant.A_discounted, plant.B, plant.Q, plant.R
    K_delta = np.zeros((plant.m, plant.n))
    for g in d.post_order():
        D = list(policy_domain(d, g))
        ug = list(d.groups[g].inputs)
        uc = [i for c in d.descendants(g) for i in d.groups[c].inputs]
        K_c = K_delta[np.ix_(uc, D)]
        # descendants' inputs follow their gains, so their cost enters the parent's problem;
        # the cross weight S = -K_c' R_cg is removed by the usual change of input
        A_g = A[np.ix_(D, D)] - B[np.ix_(D, uc)] @ K_c
        B_g = B[np.ix_(D, ug)]
        R_g = R[np.ix_(ug, ug)]
        S = -K_c.T @ R[np.ix_(uc, ug)]
        Q_g = Q[np.ix_(D, D)] + K_c.T @ R[np.ix_(uc, uc)] @ K_c
        shift = np.linalg.solve(R_g, S.T)
        Q_hat = Q_g - S @ shift
        try:
            _, K_hat = solve_care_matrices(A_g - B_g @ shift, B_g, 0.5 * (Q_hat + Q_hat.T), R_g)
            K_g = K_hat + shift
        except (NotStabilizable, IllConditioned) as exc:
            K_delta.setflags(write=False)
            return DecompositionEvaluation(math.inf, K_delta, False, surrogate,
                                           f"group {g}: {exc}")
        K_delta[np.ix_(ug, D)] = K_g
    K_delta.setflags(write=False)

    value = value_of_linear_policy(plant, K_delta)
    if value is None:
        return DecompositionEvaluation(math.inf, K_delta, False, surrogate,
                                       "assembled closed loop is not Hurwitz")
    if optimal is None:
        optimal, _ = solve_care(plant)
    err = plant_value_gap(plant, value, optimal)
    return DecompositionEvaluation(err, K_delta, True, surrogate)


def _set_partitions(m: int, k: int) -> Iterator[list[list[int]]]:
    """Partitions of ``range(m)`` into exactly ``k`` blocks, via restricted growth strings.

    Blocks come out ordered by their smallest element.
    """
    def grow(prefix, top):
        if len(prefix) == m:
            if top + 1 == k:
                yield prefix
            return
        if top + 1 + (m - len(prefix)) < k:
            return
        for label in range(min(top + 2, k)):
            yield from grow(prefix + [label], max(top, label))

    if m == 0 or k == 0:
        return
    for rgs in grow([0], 0):
        yield [[i for i, lab in enumerate(rgs) if lab == b] for b in range(k)]


def _forests(G: int) -> list[tuple[int | None, ...]]:
    out = []
    for parent in itertools.product([None, *range(G)], repeat=G):
        if any(p == g for g, p in enumerate(parent)):
            continue
        ok = True
        for g in range(G):
            node, steps = g, 0
            while node is not None and steps <= G:
                node, steps = parent[node], steps + 1
            if node is not None:
                ok = False
                break
        if ok:
            out.append(parent)
    return out


def _stirling2(n: int, k: int) -> int:
    return sum((-1) ** j * math.comb(k, j) * (k - j) ** n for j in range(k + 1)) // math.factorial(k)


def count_decompositions(m: int, n: int, max_groups: int | None = None) -> int:
    top = min(m, n) if max_groups is None else min(m, n, max_groups)
    return sum(
        _stirling2(m, G) * math.factorial(G) * _stirling2(n, G) * (G + 1) ** (G - 1)
        for G in range(2, top + 1)
    )


def enumerate_decompositions(m: int, n: int, max_groups: int | None = None,
                             budget: int = DEFAULT_BUDGET) -> Iterator[Decomposition]:
    """Every distinct decomposition of an (m inputs, n states) system, once each."""
    total = count_decompositions(m, n, max_groups)
    if total > budget:
        raise BudgetExceeded(f"{total} decompositions exceed the budget of {budget}")
    top = min(m, n) if max_groups is None else min(m, n, max_groups)
    for G in range(2, top + 1):
        forests = _forests(G)
        for blocks in _set_partitions(m, G):
            for labels in itertools.product(range(G), repeat=n):
                if len(set(labels)) != G:
                    continue
                groups = tuple(
                    InputGroup(tuple(blocks[g]), tuple(i for i, lab in enumerate(labels) if lab == g))
                    for g in range(G)
                )
                for parent in forests:
                    yield Decomposition(groups, parent)


def best_decomposition_exhaustive(plant: PlantSpec, max_groups: int | None = None, *,
                                  budget: int = DEFAULT_BUDGET,
                                  optimal: QuadraticValue | None = None,
                                  return_all: bool = False):
    """Least value-error decomposition by full enumeration.

    Errors equal to nine decimals count as ties, which are broken by the
    compute surrogate and then by the canonical JSON form (as in the GA).
    Raises AllUnstable if no decomposition yields a stable closed loop.
    """
    if optimal is None:
        optimal, _ = solve_care(plant)
    results = [
        (d, evaluate_lqr(plant, d, optimal=optimal))
        for d in enumerate_decompositions(plant.m, plant.n, max_groups, budget)
    ]
    best = None
    for d, ev in results:
        key = (error_rank(ev.err_lqr), ev.compute_surrogate, d.to_json())
        if best is None or key < best[0]:
            best = (key, d, ev)
    if best is None or not math.isfinite(best[2].err_lqr):
        raise AllUnstable("no decomposition yields a stable closed loop", results)
    if return_all:
        return best[1], best[2], results
    return best[1], best[2]

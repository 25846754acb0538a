"""Grid-based policy iteration, sub-policy composition and closed-loop rollouts.

Sub-policies are lookup tables over a subset of the state variables. While
one is computed, the remaining states are frozen at the goal, inputs that are
decoupled from it are held at zero and inputs of cascaded (descendant)
groups follow their already computed tables. Continuous time is handled with
a fixed step ``h``: one DP step costs ``c(x, u) h`` and discounts by
``exp(-lam h)``, and the successor ``x + h f(x, u)`` is read off the value
table by multilinear interpolation.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .care import PlantSpec
from .errors import (
    DimensionMismatch,
    DivergedValue,
    InvalidDecomposition,
    InvalidPlant,
    NonConvergence,
    NonEquilibriumGoal,
    NonPositiveReference,
)

log = logging.getLogger(__name__)

EQUILIBRIUM_TOL = 1e-6
GOAL_TOLERANCE = 0.05


def _vec(a, size, name):
    arr = np.array(a, dtype=float).reshape(-1)
    if arr.size != size:
        raise DimensionMismatch(f"{name} has {arr.size} entries, expected {size}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NonlinearSystem:
    """``xdot = f(x, u)`` with box bounds and a quadratic cost about the goal.

    ``f`` is evaluated on batches: ``f(X, U)`` with ``X`` of shape ``(N, n)``
    and ``U`` of shape ``(N, m)`` returns an ``(N, n)`` array.
    """

    name: str
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    x_goal: np.ndarray
    u_goal: np.ndarray
    x_lower: np.ndarray
    x_upper: np.ndarray
    u_lower: np.ndarray
    u_upper: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    lambda_discount: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = np.asarray(self.x_goal).size
        m = np.asarray(self.u_goal).size
        set_ = object.__setattr__
        for name, size in (("x_goal", n), ("x_lower", n), ("x_upper", n),
                           ("u_goal", m), ("u_lower", m), ("u_upper", m)):
            set_(self, name, _vec(getattr(self, name), size, name))
        for name, size in (("Q", n), ("R", m)):
            M = np.array(getattr(self, name), dtype=float).reshape(size, size)
            if np.abs(M - M.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(M).max(initial=0.0)):
                raise InvalidPlant(f"{name} must be symmetric")
            if size and np.linalg.eigvalsh(M).min() < -1e-10:
                raise InvalidPlant(f"{name} must be positive semidefinite")
            M.setflags(write=False)
            set_(self, name, M)
        set_(self, "lambda_discount", float(self.lambda_discount))
        if self.lambda_discount < 0:
            raise InvalidPlant("lambda_discount must be nonnegative")
        if np.any(self.x_lower >= self.x_upper) or np.any(self.u_lower >= self.u_upper):
            raise InvalidPlant("bounds must have lower < upper")
        if np.any(self.x_goal < self.x_lower) or np.any(self.x_goal > self.x_upper):
            raise InvalidPlant("state bounds must contain the goal")
        if np.any(self.u_goal < self.u_lower) or np.any(self.u_goal > self.u_upper):
            raise InvalidPlant("input bounds must contain the goal input")
        drift = self.dynamics(self.x_goal, self.u_goal)
        if not np.all(np.abs(drift) <= EQUILIBRIUM_TOL):
            raise NonEquilibriumGoal(
                f"{self.name}: f(x_goal, u_goal) = {np.round(drift, 9).tolist()} is not zero")

    @property
    def n(self) -> int:
        return self.x_goal.size

    @property
    def m(self) -> int:
        return self.u_goal.size

    @property
    def state_halfrange(self) -> np.ndarray:
        return 0.5 * (self.x_upper - self.x_lower)

    def dynamics(self, x, u) -> np.ndarray:
        """``f`` at a single point."""
        X = np.asarray(x, dtype=float).reshape(1, self.n)
        U = np.asarray(u, dtype=float).reshape(1, self.m)
        return np.asarray(self.f(X, U), dtype=float).reshape(self.n)

    def cost(self, X, U) -> np.ndarray:
        """Running cost rate for batches of states and inputs."""
        dx = np.asarray(X, dtype=float) - self.x_goal
        du = np.asarray(U, dtype=float) - self.u_goal
        return np.einsum("ni,ij,nj->n", dx, self.Q, dx) + np.einsum("ni,ij,nj->n", du, self.R, du)

    def replace(self, **changes) -> "NonlinearSystem":
        fields = {k: getattr(self, k) for k in (
            "name", "f", "x_goal", "u_goal", "x_lower", "x_upper", "u_lower", "u_upper",
            "Q", "R", "lambda_discount")}
        fields["meta"] = dict(self.meta)
        fields.update(changes)
        return NonlinearSystem(**fields)


def linearize(sys: NonlinearSystem) -> PlantSpec:
    """Central-difference Jacobians of ``f`` at the goal.

    The evaluation region is the largest box centered at the goal that fits
    inside the state bounds.
    """
    n, m = sys.n, sys.m
    x0, u0 = sys.x_goal, sys.u_goal
    A = np.zeros((n, n))
    B = np.zeros((n, m))
    for j in range(n):
        step = 1e-6 * max(1.0, abs(x0[j]))
        e = np.zeros(n)
        e[j] = step
        A[:, j] = (sys.dynamics(x0 + e, u0) - sys.dynamics(x0 - e, u0)) / (2 * step)
    for j in range(m):
        step = 1e-6 * max(1.0, abs(u0[j]))
        e = np.zeros(m)
        e[j] = step
        B[:, j] = (sys.dynamics(x0, u0 + e) - sys.dynamics(x0, u0 - e)) / (2 * step)
    halfwidths = np.minimum(x0 - sys.x_lower, sys.x_upper - x0)
    if np.any(halfwidths <= 0):
        raise InvalidPlant("the goal lies on a state bound, so the region is empty")
    return PlantSpec(A, B, sys.Q, sys.R, lambda_discount=sys.lambda_discount,
                     x_goal=x0, u_goal=u0, region_halfwidths=halfwidths,
                     meta={"system": sys.name, **sys.meta})


class Grid:
    """Uniform tensor grid; nodes are stored in C order."""

    def __init__(self, lower, upper, points):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.points = tuple(int(p) for p in np.broadcast_to(points, self.lower.shape))
        if any(p < 2 for p in self.points):
            raise InvalidPlant("grids need at least two points per dimension")
        self.spacing = (self.upper - self.lower) / (np.array(self.points) - 1)
        strides = np.ones(len(self.points), dtype=np.int64)
        for k in range(len(self.points) - 2, -1, -1):
            strides[k] = strides[k + 1] * self.points[k + 1]
        self.strides = strides
        self.size = int(np.prod(self.points))
        self._corners = np.array(list(itertools.product((0, 1), repeat=self.dim)), dtype=np.int64)

    @property
    def dim(self) -> int:
        return len(self.points)

    def nodes(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, p) for lo, hi, p in zip(self.lower, self.upper, self.points)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([a.ravel() for a in mesh], axis=1)

    def outside(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.any((X < self.lower - 1e-12) | (X > self.upper + 1e-12), axis=1)

    def weights(self, X):
        """Corner indices and multilinear weights, shape ``(N, 2^d)``; X is clamped."""
        t = (np.asarray(X, dtype=float) - self.lower) / self.spacing
        top = np.array(self.points) - 1
        t = np.clip(t, 0.0, top)
        i0 = np.minimum(np.floor(t).astype(np.int64), top - 1)
        frac = t - i0
        base = i0 @ self.strides
        idx = base[:, None] + self._corners @ self.strides
        w = np.ones((t.shape[0], len(self._corners)))
        for k in range(self.dim):
            bit = self._corners[:, k]
            w *= np.where(bit, frac[:, k:k + 1], 1.0 - frac[:, k:k + 1])
        return idx, w

    def nearest(self, X) -> np.ndarray:
        t = (np.asarray(X, dtype=float) - self.lower) / self.spacing
        i = np.clip(np.rint(t).astype(np.int64), 0, np.array(self.points) - 1)
        return i @ self.strides


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Action and value tables for one input group over its state subset."""

    states: tuple[int, ...]
    inputs: tuple[int, ...]
    lower: np.ndarray
    upper: np.ndarray
    points: tuple[int, ...]
    actions: np.ndarray  # (nodes, len(inputs))
    values: np.ndarray  # (nodes,)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "states", tuple(int(i) for i in self.states))
        set_(self, "inputs", tuple(int(i) for i in self.inputs))
        set_(self, "points", tuple(int(p) for p in self.points))
        d = len(self.states)
        set_(self, "lower", _vec(self.lower, d, "lower"))
        set_(self, "upper", _vec(self.upper, d, "upper"))
        if len(self.points) != d:
            raise DimensionMismatch("one point count per state is required")
        size = int(np.prod(self.points))
        actions = np.array(self.actions, dtype=float).reshape(size, len(self.inputs))
        values = np.array(self.values, dtype=float).reshape(size)
        actions.setflags(write=False)
        values.setflags(write=False)
        set_(self, "actions", actions)
        set_(self, "values", values)
        set_(self, "_grid", Grid(self.lower, self.upper, self.points))

    @property
    def grid(self) -> Grid:
        return self._grid

    def action(self, X_sub):
        """Nearest-node actions for states given on ``self.states`` only.

        Returns ``(U, outside)``; points beyond the grid are clamped onto it.
        """
        X_sub = np.atleast_2d(np.asarray(X_sub, dtype=float))
        if X_sub.shape[1] != len(self.states):
            raise DimensionMismatch(f"expected {len(self.states)} state columns")
        return self.actions[self.grid.nearest(X_sub)], self.grid.outside(X_sub)

    def value(self, X_sub) -> np.ndarray:
        X_sub = np.atleast_2d(np.asarray(X_sub, dtype=float))
        idx, w = self.grid.weights(X_sub)
        return np.sum(self.values[idx] * w, axis=1)

    def header(self) -> dict:
        return {
            "states": list(self.states),
            "inputs": list(self.inputs),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "points": list(self.points),
            "info": self.info,
        }

    def save(self, path) -> None:
        """Binary tables with a JSON header, in one ``.npz`` archive."""
        header = json.dumps(self.header(), sort_keys=True)
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(header), actions=self.actions, values=self.values)

    @classmethod
    def load(cls, path) -> "TabularPolicy":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            return cls(header["states"], header["inputs"], header["lower"], header["upper"],
                       header["points"], data["actions"], data["values"], header.get("info", {}))


@dataclass(frozen=True)
class DPConfig:
    grid_points: int | tuple[int, ...] = 21
    action_levels: int = 11
    h: float = 0.01
    max_iterations: int = 200
    evaluation: str = "direct"  # or "sweeps"
    direct_limit: int = 40_000  # larger tables use a Krylov solve instead of LU
    max_nodes: int | None = 250_000  # caps points per dimension on high-dimensional domains
    sweep_tolerance: float = 1e-9
    max_sweeps: int = 200_000
    overflow: float = 1e12

    def __post_init__(self):
        if self.h <= 0:
            raise InvalidPlant("h must be positive")
        if self.action_levels < 2:
            raise InvalidPlant("action_levels must be at least 2")
        if self.evaluation not in ("direct", "sweeps"):
            raise InvalidPlant(f"unknown evaluation method {self.evaluation!r}")


def grid_points_for(cfg: DPConfig, dim: int):
    """Point counts for a ``dim``-dimensional table, shrunk to respect ``max_nodes``."""
    if np.ndim(cfg.grid_points) != 0:
        points = tuple(int(p) for p in cfg.grid_points)
        if len(points) != dim:
            raise DimensionMismatch(f"{len(points)} point counts given for {dim} states")
        return points
    p = int(cfg.grid_points)
    if cfg.max_nodes is not None:
        while p > 2 and p**dim > cfg.max_nodes:
            p -= 1
    return (p,) * dim


def action_lattice(lower, upper, levels: int) -> np.ndarray:
    """All combinations of ``levels`` evenly spaced values per input, C order."""
    axes = [np.linspace(lo, hi, levels) for lo, hi in zip(lower, upper)]
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(axes))


class _Subproblem:
    """Everything about one sub-policy that stays fixed during policy iteration."""

    def __init__(self, sys, states, inputs, fixed, cfg):
        self.sys = sys
        self.states = states
        self.inputs = inputs
        self.grid = Grid(sys.x_lower[list(states)], sys.x_upper[list(states)],
                         grid_points_for(cfg, len(states)))
        nodes = self.grid.nodes()
        X = np.tile(sys.x_goal, (nodes.shape[0], 1))
        X[:, states] = nodes
        # decoupled complement inputs are held at zero
        U = np.zeros((nodes.shape[0], sys.m))
        active = list(inputs)
        for pol in fixed:
            local = [states.index(s) for s in pol.states]
            U[:, list(pol.inputs)], _ = pol.action(nodes[:, local])
            active.extend(pol.inputs)
        self.X, self.U = X, U
        self.active = sorted(active)
        self.lattice = action_lattice(sys.u_lower[list(inputs)], sys.u_upper[list(inputs)],
                                      cfg.action_levels)
        self.h = cfg.h
        self.gamma = math.exp(-sys.lambda_discount * cfg.h)

    def step(self, a_idx):
        """Stage cost and successor weights when node i applies action ``a_idx[i]``."""
        U = self.U.copy()
        U[:, list(self.inputs)] = self.lattice[a_idx]
        xdot = np.asarray(self.sys.f(self.X, U), dtype=float)
        nxt = self.X[:, self.states] + self.h * xdot[:, self.states]
        dx = self.X - self.sys.x_goal
        du = (U - self.sys.u_goal)[:, self.active]
        R = self.sys.R[np.ix_(self.active, self.active)]
        c = np.einsum("ni,ij,nj->n", dx, self.sys.Q, dx) + np.einsum("ni,ij,nj->n", du, R, du)
        idx, w = self.grid.weights(nxt)
        return c * self.h, idx, w


def _evaluate(sub, a_idx, cfg, V0):
    cost, idx, w = sub.step(a_idx)
    N = cost.size
    if cfg.evaluation == "direct":
        rows = np.repeat(np.arange(N), idx.shape[1])
        W = sparse.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(N, N))
        M = sparse.identity(N, format="csr") - sub.gamma * W
        if N <= cfg.direct_limit:
            V = splinalg.spsolve(M.tocsc(), cost)
        else:
            V, status = splinalg.bicgstab(M, cost, x0=V0, rtol=1e-12, maxiter=20_000)
            if status != 0:
                raise NonConvergence(f"Krylov policy evaluation stopped with status {status}")
        residuals = [float(np.abs(cost + sub.gamma * (W @ V) - V).max())]
    else:
        V = V0.copy()
        residuals = []
        for _ in range(cfg.max_sweeps):
            V_new = cost + sub.gamma * np.sum(V[idx] * w, axis=1)
            res = float(np.abs(V_new - V).max())
            V = V_new
            residuals.append(res)
            if not np.isfinite(res) or res <= cfg.sweep_tolerance * max(1.0, np.abs(V).max()):
                break
        else:
            raise NonConvergence(f"evaluation sweeps did not settle (residual {residuals[-1]:.3g})")
    if not np.all(np.isfinite(V)) or np.abs(V).max() > cfg.overflow:
        raise DivergedValue("value table overflowed; the subsystem may be uncontrollable")
    return V, residuals


def policy_iteration(sys: NonlinearSystem, states: Sequence[int], inputs: Sequence[int],
                     fixed_subpolicies: Sequence[TabularPolicy] = (),
                     cfg: DPConfig | None = None) -> TabularPolicy:
    """Policy iteration for the inputs ``inputs`` over the states ``states``.

    Starts from the myopic policy and stops once no node changes its action
    (an action is only replaced by a strictly better one, so ties keep the
    incumbent and fresh choices go to the lowest lattice index).
    """
    cfg = cfg or DPConfig()
    states = tuple(sorted(int(s) for s in states))
    inputs = tuple(sorted(int(i) for i in inputs))
    if not states or not inputs or len(set(states)) != len(states) or len(set(inputs)) != len(inputs):
        raise InvalidDecomposition("states and inputs must be nonempty sets")
    if states[0] < 0 or states[-1] >= sys.n or inputs[0] < 0 or inputs[-1] >= sys.m:
        raise InvalidDecomposition("state or input index out of range")
    seen = set(inputs)
    for pol in fixed_subpolicies:
        if not set(pol.states) <= set(states):
            raise InvalidDecomposition("a fixed sub-policy reads states outside this subproblem")
        if seen & set(pol.inputs):
            raise InvalidDecomposition("fixed sub-policies must not share inputs")
        seen |= set(pol.inputs)
    if sys.lambda_discount <= 0:
        raise InvalidPlant("tabular policy iteration needs a positive discount rate")

    sub = _Subproblem(sys, states, inputs, tuple(fixed_subpolicies), cfg)
    N, A = sub.grid.size, len(sub.lattice)

    def q_values(V):
        Qv = np.empty((N, A))
        for a in range(A):
            cost, idx, w = sub.step(np.full(N, a))
            Qv[:, a] = cost + sub.gamma * np.sum(V[idx] * w, axis=1)
        return Qv

    a_idx = np.argmin(q_values(np.zeros(N)), axis=1)
    V = np.zeros(N)
    history = []
    for it in range(1, cfg.max_iterations + 1):
        V, residuals = _evaluate(sub, a_idx, cfg, V)
        Qv = q_values(V)
        best = np.argmin(Qv, axis=1)
        current = Qv[np.arange(N), a_idx]
        better = Qv[np.arange(N), best] < current - 1e-12 * np.maximum(1.0, np.abs(current))
        changed = int(better.sum())
        history.append({"iteration": it, "changed": changed, "sweeps": len(residuals),
                        "residual": residuals[-1]})
        if changed == 0:
            break
        a_idx = np.where(better, best, a_idx)
    else:
        raise NonConvergence(f"policy iteration did not settle in {cfg.max_iterations} iterations")
    info = {"iterations": len(history), "h": cfg.h, "action_levels": cfg.action_levels,
            "fixed": [list(p.inputs) for p in fixed_subpolicies]}
    return TabularPolicy(states, inputs, sub.grid.lower, sub.grid.upper, sub.grid.points,
                         sub.lattice[a_idx], V, info)


def solve_decomposition(sys: NonlinearSystem, d, cfg: DPConfig | None = None) -> list[TabularPolicy]:
    """Tabular sub-policies for every group of decomposition ``d``, leaves first.

    Each group's table spans its own states plus those of its descendants,
    whose tables are substituted while it is computed.
    """
    from .decomposition import policy_domain

    if d.m != sys.m or d.n != sys.n:
        raise DimensionMismatch("decomposition and system sizes differ")
    done: dict[int, TabularPolicy] = {}
    for g in d.post_order():
        fixed = [done[c] for c in d.descendants(g)]
        done[g] = policy_iteration(sys, policy_domain(d, g), d.groups[g].inputs, fixed, cfg)
    return [done[g] for g in range(len(d.groups))]


@dataclass
class Rollout:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    running_cost: np.ndarray
    cost: float
    converged: bool
    out_of_bounds: bool
    nonfinite: bool

    def to_csv(self, fh=None) -> str:
        """Rows ``t, x..., u..., running_cost``; the last row has no input."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        n, m = self.x.shape[1], self.u.shape[1]
        writer.writerow(["t"] + [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)]
                        + ["running_cost"])
        for k in range(self.t.size):
            u = self.u[k] if k < self.u.shape[0] else np.full(m, np.nan)
            c = self.running_cost[k] if k < self.running_cost.size else np.nan
            writer.writerow([repr(float(v)) for v in (self.t[k], *self.x[k], *u, c)])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def _check_partition(policies, m):
    owned = [i for p in policies for i in p.inputs]
    if sorted(owned) != list(range(m)):
        raise InvalidDecomposition("sub-policy inputs must partition the system inputs")


def rollout_batch(sys: NonlinearSystem, policies: Sequence[TabularPolicy], X0, horizon=10.0,
                  h=0.01, *, rmap=None, goal_tolerance=GOAL_TOLERANCE) -> list[Rollout]:
    """Simulate the composed policy from every row of ``X0``.

    Integration is classic fourth-order Runge-Kutta with the input held over
    each step. With ``rmap`` the policies live in mapped coordinates
    ``y = T_y (x - x_goal)`` and return ``v``, applied as
    ``u = u_goal + T_v^-1 v``. Inputs are clipped to the input bounds.
    Convergence is judged on ``(x - x_goal) / halfrange`` in the sup norm.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if X0.shape[1] != sys.n:
        raise DimensionMismatch(f"starts must have {sys.n} columns")
    _check_partition(policies, sys.m)
    steps = int(round(horizon / h))
    N, n, m = X0.shape[0], sys.n, sys.m
    if rmap is not None:
        Ty, Tv_inv = rmap.T_y, np.linalg.inv(rmap.T_v)

    def control(X):
        Z = X if rmap is None else (X - sys.x_goal) @ Ty.T
        V = np.zeros((X.shape[0], m))
        outside = np.zeros(X.shape[0], dtype=bool)
        for pol in policies:
            Ui, out = pol.action(Z[:, list(pol.states)])
            V[:, list(pol.inputs)] = Ui
            outside |= out
        U = V if rmap is None else sys.u_goal + V @ Tv_inv.T
        return np.clip(U, sys.u_lower, sys.u_upper), outside

    xs = np.full((steps + 1, N, n), np.nan)
    us = np.full((steps, N, m), np.nan)
    cs = np.full((steps, N), np.nan)
    xs[0] = X0
    alive = np.ones(N, dtype=bool)
    oob = np.zeros(N, dtype=bool)
    total = np.zeros(N)
    X = X0.copy()
    for k in range(steps):
        U, outside = control(X)
        oob |= outside & alive
        c = sys.cost(X, U)
        total += np.where(alive, math.exp(-sys.lambda_discount * k * h) * c * h, 0.0)
        k1 = sys.f(X, U)
        k2 = sys.f(X + 0.5 * h * k1, U)
        k3 = sys.f(X + 0.5 * h * k2, U)
        k4 = sys.f(X + h * k3, U)
        X_new = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        us[k, alive] = U[alive]
        cs[k, alive] = c[alive]
        bad = alive & ~(np.all(np.isfinite(X_new), axis=1) & (np.abs(X_new).max(axis=1) < 1e8))
        alive &= ~bad
        X = np.where(alive[:, None], X_new, X)
        xs[k + 1, alive] = X[alive]
        oob |= alive & np.any((X < sys.x_lower) | (X > sys.x_upper), axis=1)

    t = np.arange(steps + 1) * h
    out = []
    for i in range(N):
        dead = not alive[i]
        err = np.abs((X[i] - sys.x_goal) / sys.state_halfrange).max()
        out.append(Rollout(t, xs[:, i], us[:, i], cs[:, i], math.inf if dead else float(total[i]),
                           (not dead) and bool(err <= goal_tolerance), bool(oob[i]), dead))
    return out


def compose_and_rollout(sys: NonlinearSystem, policies: Sequence[TabularPolicy], x0,
                        horizon=10.0, h=0.01, **kwargs) -> Rollout:
    """Single-start version of ``rollout_batch``."""
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    return rollout_batch(sys, policies, x0, horizon, h, **kwargs)[0]


def sample_starts(sys: NonlinearSystem, count: int, seed: int, fraction=0.5) -> np.ndarray:
    """Uniform starts in the goal-centered box scaled by ``fraction``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, count]))
    half = np.minimum(sys.x_goal - sys.x_lower, sys.x_upper - sys.x_goal) * fraction
    return sys.x_goal + half * rng.uniform(-1.0, 1.0, (count, sys.n))


def normalized_value_error(V_ref: float, V_other: float) -> float:
    """``(V_ref - V_other) / V_ref``; negative when the other policy costs more."""
    if not V_ref > 0:
        raise NonPositiveReference(f"reference value must be positive, got {V_ref}")
    return (V_ref - V_other) / V_ref


def transform_system(sys: NonlinearSystem, rmap) -> NonlinearSystem:
    """The system in coordinates ``y = T_y (x - x_goal)``, ``v = T_v (u - u_goal)``.

    Bounds become the symmetric bounding boxes of the mapped original boxes;
    physical inputs are clipped to the original input bounds.
    """
    Ty, Tv = rmap.T_y, rmap.T_v
    Ty_inv, Tv_inv = np.linalg.inv(Ty), np.linalg.inv(Tv)
    xg, ug = sys.x_goal, sys.u_goal
    f0, ulo, uhi = sys.f, sys.u_lower, sys.u_upper

    def f(Y, V):
        X = xg + Y @ Ty_inv.T
        U = np.clip(ug + V @ Tv_inv.T, ulo, uhi)
        return f0(X, U) @ Ty.T

    xhalf = np.maximum(xg - sys.x_lower, sys.x_upper - xg)
    uhalf = np.maximum(ug - sys.u_lower, sys.u_upper - ug)
    yb = np.abs(Ty) @ xhalf
    vb = np.abs(Tv) @ uhalf
    Q = Ty_inv.T @ sys.Q @ Ty_inv
    R = Tv_inv.T @ sys.R @ Tv_inv
    return NonlinearSystem(
        name=f"{sys.name}[{rmap.provenance}]", f=f,
        x_goal=np.zeros(sys.n), u_goal=np.zeros(sys.m),
        x_lower=-yb, x_upper=yb, u_lower=-vb, u_upper=vb,
        Q=0.5 * (Q + Q.T), R=0.5 * (R + R.T), lambda_discount=sys.lambda_discount,
        meta={**sys.meta, "representation": rmap.provenance},
    )

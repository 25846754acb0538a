"""Continuous-time LQR machinery.

Discounting with rate ``lam`` is handled by the usual substitution
``A -> A - (lam / 2) I``, after which every routine below works on an
undiscounted problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import (
    DimensionMismatch,
    IllConditioned,
    InvalidPlant,
    NotHurwitz,
    NotStabilizable,
)

SYM_TOL = 1e-10
HURWITZ_MARGIN = 1e-10
MAX_COND = 1e12


def _frozen(a, shape=None, name="array"):
    arr = np.array(a, dtype=float)
    if shape is not None and arr.shape != shape:
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidPlant(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PlantSpec:
    """Linear(ized) optimal control problem about a goal state.

    Cost rate is ``(x - x_goal)' Q (x - x_goal) + (u - u_goal)' R (u - u_goal)``
    discounted by ``exp(-lambda_discount * t)``. ``region_halfwidths`` describe
    the box S (centered at ``x_goal``) over which value errors are averaged.
    If ``region_basis`` is given, S is the parallelotope
    ``x_goal + region_basis @ z`` for ``z`` in that box instead.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    lambda_discount: float = 0.0
    x_goal: np.ndarray | None = None
    u_goal: np.ndarray | None = None
    region_halfwidths: np.ndarray | None = None
    region_basis: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(n, -1)
        if B.ndim != 2 or B.shape[0] != n:
            raise DimensionMismatch(f"B must have {n} rows, got {B.shape}")
        m = B.shape[1]
        if not n >= m >= 1:
            raise InvalidPlant(f"need n >= m >= 1, got n={n}, m={m}")
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        x_goal = np.zeros(n) if self.x_goal is None else self.x_goal
        u_goal = np.zeros(m) if self.u_goal is None else self.u_goal
        halfwidths = np.ones(n) if self.region_halfwidths is None else self.region_halfwidths

        set_ = object.__setattr__
        set_(self, "A", _frozen(A, (n, n), "A"))
        set_(self, "B", _frozen(B, (n, m), "B"))
        set_(self, "Q", _frozen(Q, (n, n), "Q"))
        set_(self, "R", _frozen(R, (m, m), "R"))
        set_(self, "x_goal", _frozen(x_goal, (n,), "x_goal"))
        set_(self, "u_goal", _frozen(u_goal, (m,), "u_goal"))
        set_(self, "region_halfwidths", _frozen(halfwidths, (n,), "region_halfwidths"))
        set_(self, "lambda_discount", float(self.lambda_discount))
        if self.region_basis is not None:
            set_(self, "region_basis", _frozen(self.region_basis, (n, n), "region_basis"))

        if self.lambda_discount < 0:
            raise InvalidPlant("lambda_discount must be nonnegative")
        if np.any(self.region_halfwidths <= 0):
            raise InvalidPlant("region_halfwidths must be strictly positive")
        _check_symmetric(self.Q, "Q")
        _check_symmetric(self.R, "R")
        if np.linalg.eigvalsh(_sym(self.Q)).min() < -1e-10 * max(1.0, np.abs(self.Q).max()):
            raise InvalidPlant("Q must be positive semidefinite")
        if np.linalg.eigvalsh(_sym(self.R)).min() <= 0:
            raise InvalidPlant("R must be positive definite")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def A_discounted(self) -> np.ndarray:
        return self.A - 0.5 * self.lambda_discount * np.eye(self.n)

    def replace(self, **changes) -> "PlantSpec":
        fields = dict(
            A=self.A, B=self.B, Q=self.Q, R=self.R,
            lambda_discount=self.lambda_discount, x_goal=self.x_goal,
            u_goal=self.u_goal, region_halfwidths=self.region_halfwidths,
            region_basis=self.region_basis, meta=dict(self.meta),
        )
        fields.update(changes)
        return PlantSpec(**fields)


@dataclass(frozen=True, eq=False)
class QuadraticValue:
    """Value function ``V(x) = (x - center)' P (x - center)``."""

    P: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        object.__setattr__(self, "P", _frozen(P, name="P"))
        object.__setattr__(self, "center", _frozen(self.center, (P.shape[0],), "center"))

    def __call__(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return np.einsum("...i,ij,...j->...", d, self.P, d)


def _sym(M):
    return 0.5 * (M + M.T)


def _check_symmetric(M, name):
    if np.abs(M - M.T).max(initial=0.0) > SYM_TOL * max(1.0, np.abs(M).max(initial=0.0)):
        raise InvalidPlant(f"{name} must be symmetric")


def is_hurwitz(M, margin=HURWITZ_MARGIN) -> bool:
    if M.size == 0:
        return True
    return bool(np.linalg.eigvals(M).real.max() < -margin)


def care_residual(A, B, Q, R, P) -> float:
    """Frobenius norm of the CARE residual for the (already discounted) ``A``."""
    BRB = B @ np.linalg.solve(R, B.T)
    return float(np.linalg.norm(A.T @ P + P @ A + Q - P @ BRB @ P))


def solve_lyapunov(A_cl, M) -> np.ndarray:
    """Solve ``A_cl' X + X A_cl + M = 0`` for a Hurwitz ``A_cl``."""
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if A_cl.shape != M.shape or A_cl.shape[0] != A_cl.shape[1]:
        raise DimensionMismatch(f"shapes {A_cl.shape} and {M.shape} are incompatible")
    if not is_hurwitz(A_cl):
        raise NotHurwitz("closed-loop matrix has an eigenvalue with real part >= -1e-10")
    X = linalg.solve_continuous_lyapunov(A_cl.T, -M)
    return _sym(X)


def _check_cond(M, what):
    c = np.linalg.cond(M)
    if not np.isfinite(c) or c > MAX_COND:
        raise IllConditioned(f"{what} has condition number {c:.3g}")


def solve_care_matrices(A, B, Q, R, *, newton_steps=8, rtol=1e-8):
    """Stabilizing CARE solution for ``A' P + P A + Q - P B R^-1 B' P = 0``.

    Returns ``(P, K)`` with ``K = R^-1 B' P``. The stable invariant subspace
    of the Hamiltonian gives an initial ``P`` that is refined with
    Newton-Kleinman steps until the relative residual is below ``rtol``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    _check_cond(R, "R")

    G = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -G], [-Q, -A.T]])
    T, Z, sdim = linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise NotStabilizable(f"Hamiltonian has {sdim} stable eigenvalues, expected {n}")
    U11, U21 = Z[:n, :n], Z[n:, :n]
    if np.linalg.matrix_rank(U11) < n:
        # no stabilizing solution: an unstable mode is uncontrollable
        raise NotStabilizable("stable invariant subspace is not a graph over the state space")
    _check_cond(U11, "stable-subspace basis")
    P = _sym(np.linalg.solve(U11.T, U21.T).T)

    def residual(P):
        return np.linalg.norm(A.T @ P + P @ A + Q - P @ G @ P)

    res = residual(P)
    for _ in range(newton_steps):
        if res <= 0.1 * rtol * max(1.0, np.linalg.norm(P)):
            break
        K = np.linalg.solve(R, B.T @ P)
        A_cl = A - B @ K
        if not is_hurwitz(A_cl, margin=0.0):
            break
        P_new = _sym(linalg.solve_continuous_lyapunov(A_cl.T, -(Q + K.T @ R @ K)))
        res_new = residual(P_new)
        if not res_new < res:
            break
        P, res = P_new, res_new

    if res > rtol * max(1.0, np.linalg.norm(P)):
        raise NotStabilizable(f"CARE residual {res:.3g} did not reach tolerance")
    K = np.linalg.solve(R, B.T @ P)
    if not is_hurwitz(A - B @ K):
        raise NotStabilizable("closed loop A - B K is not Hurwitz")
    return P, K


def solve_care(plant: PlantSpec) -> tuple[QuadraticValue, np.ndarray]:
    """Optimal value and gain ``K*`` of a (discounted) LQR plant."""
    P, K = solve_care_matrices(plant.A_discounted, plant.B, plant.Q, plant.R)
    return QuadraticValue(P, plant.x_goal), K


def value_of_linear_policy(plant: PlantSpec, K) -> QuadraticValue | None:
    """Value of the feedback ``u - u_goal = -K (x - x_goal)``.

    Returns None when the discounted closed loop is not Hurwitz, i.e. the
    policy has unbounded cost.
    """
    K = np.asarray(K, dtype=float).reshape(plant.m, plant.n)
    if not np.all(np.isfinite(K)):
        return None
    A_cl = plant.A_discounted - plant.B @ K
    if not is_hurwitz(A_cl):
        return None
    P = solve_lyapunov(A_cl, plant.Q + K.T @ plant.R @ K)
    return QuadraticValue(P, plant.x_goal)


def mean_value_gap(P_a, P_b, region_halfwidths, region_basis=None) -> float:
    """Average of ``V_a - V_b`` over the centered box with the given half-widths.

    Off-diagonal terms integrate to zero over a symmetric box, leaving
    ``sum_i (P_a - P_b)_ii s_i^2 / 3``. With ``region_basis`` ``M`` the region
    is ``M`` times the box and the difference is pulled back first.
    """
    if isinstance(P_a, QuadraticValue) and isinstance(P_b, QuadraticValue):
        if P_a.P.shape == P_b.P.shape and not np.allclose(P_a.center, P_b.center):
            raise DimensionMismatch("value functions must share a center")
    Pa = P_a.P if isinstance(P_a, QuadraticValue) else np.atleast_2d(np.asarray(P_a, float))
    Pb = P_b.P if isinstance(P_b, QuadraticValue) else np.atleast_2d(np.asarray(P_b, float))
    s = np.asarray(region_halfwidths, dtype=float).ravel()
    if Pa.shape != Pb.shape or Pa.shape != (s.size, s.size):
        raise DimensionMismatch(f"shapes {Pa.shape}, {Pb.shape} and {s.shape} disagree")
    diff = Pa - Pb
    if region_basis is not None:
        M = np.asarray(region_basis, dtype=float)
        diff = M.T @ diff @ M
    return float(np.sum(np.diag(diff) * s**2) / 3.0)


def plant_value_gap(plant: PlantSpec, P_a, P_b) -> float:
    """``mean_value_gap`` over the plant's own region."""
    return mean_value_gap(P_a, P_b, plant.region_halfwidths, plant.region_basis)

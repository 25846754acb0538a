"""Sparse orthonormal bases via L1 minimization on the Stiefel manifold.

Minimizes ``sum_i ||x_i||_1 + lam * sum_{i,k} (x_i' y_k)^2`` over matrices
``X`` with orthonormal columns, where the ``y_k`` are fixed orthonormal
vectors the result should avoid. Orthonormality is preserved exactly by
Cayley-transform curvilinear steps (Wen & Yin style); the L1 term is
smoothed with a Huber function whose width is shrunk in stages down to
``huber_width``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InfeasibleInit, InvalidPlant

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StiefelL1Config:
    lambda_orth: float = 2000.0
    max_iters: int = 5000
    step_tolerance: float = 1e-10
    repeated_sv_tolerance: float = 1e-6
    zero_sv_tolerance: float = 1e-9
    huber_width: float = 1e-8
    restarts: int = 4
    seed: int = 0
    confine_to_complement: bool = True

    def __post_init__(self):
        for name in ("lambda_orth", "max_iters", "step_tolerance", "repeated_sv_tolerance",
                     "zero_sv_tolerance", "huber_width"):
            if not getattr(self, name) > 0:
                raise InvalidPlant(f"{name} must be positive")
        if self.restarts < 0:
            raise InvalidPlant("restarts must be nonnegative")


@dataclass
class BasisResult:
    X: np.ndarray
    objective: float
    initial_objective: float
    history: list[float]
    iterations: int


def l1_objective(X, Y, lam) -> float:
    """Exact (unsmoothed) objective."""
    pen = 0.0 if Y.shape[1] == 0 else lam * float(np.sum((Y.T @ X) ** 2))
    return float(np.abs(X).sum()) + pen


def _smoothed(X, Y, lam, mu):
    a = np.abs(X)
    val = np.where(a <= mu, 0.5 * X**2 / mu + 0.5 * mu, a).sum()
    grad = np.clip(X / mu, -1.0, 1.0)
    if Y.shape[1]:
        YX = Y.T @ X
        val += lam * np.sum(YX**2)
        grad = grad + 2.0 * lam * (Y @ YX)
    return val, grad


def orthonormal_complement(Y, n) -> np.ndarray:
    """Orthonormal basis of the complement of span(Y) in R^n (pivoted QR)."""
    Y = np.asarray(Y, dtype=float).reshape(n, -1)
    k = Y.shape[1]
    if k == 0:
        return np.eye(n)
    Qf, Rf, _ = linalg.qr(Y, pivoting=True)
    rank = int(np.sum(np.abs(np.diag(Rf)) > 1e-10 * max(1.0, abs(Rf[0, 0]))))
    if rank != k:
        raise InfeasibleInit(f"fixed vectors have rank {rank}, expected {k}")
    comp = Qf[:, k:]
    if np.abs(Y.T @ comp).max(initial=0.0) > 1e-10:
        raise InfeasibleInit("complement is not orthogonal to the fixed vectors")
    return comp


def _cayley(X, W, tau):
    n = X.shape[0]
    I = np.eye(n)
    return np.linalg.solve(I + 0.5 * tau * W, (I - 0.5 * tau * W) @ X)


def _descend(X, Y, cfg, budget):
    """Monotone curvilinear search from X; returns (X, objective history, iterations).

    Only steps that lower the exact objective are accepted.
    """
    lam = cfg.lambda_orth
    f = l1_objective(X, Y, lam)
    history = [f]
    it = 0
    stages = max(2, int(round(np.log10(1e-1 / cfg.huber_width))) + 1)
    for mu in np.geomspace(1e-1, cfg.huber_width, stages):
        tau = 1.0
        stalled = 0
        stage_start = len(history)
        while it < budget:
            it += 1
            _, G = _smoothed(X, Y, lam, mu)
            if cfg.confine_to_complement and Y.shape[1]:
                # the curve then fixes span(Y) and X stays exactly orthogonal to it
                G = G - Y @ (Y.T @ G)
            W = G @ X.T - X @ G.T
            wnorm2 = 0.5 * np.sum(W * W)
            if wnorm2 < 1e-24:
                break
            step = min(tau, 1e3)
            accepted = False
            for _ in range(40):
                X_new = _cayley(X, W, step)
                f_new = l1_objective(X_new, Y, lam)
                if f_new <= f - 1e-4 * step * wnorm2 * min(1.0, mu) or (f_new < f and step < 1e-6):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                stalled += 1
                if stalled >= 2:
                    break
                tau = 1.0
                continue
            move = np.linalg.norm(X_new - X)
            X, f = X_new, f_new
            history.append(f)
            tau = 2.0 * step
            if move < cfg.step_tolerance:
                break
            window = 20
            if len(history) - stage_start > window and \
                    history[-window - 1] - f <= 1e-12 * max(1.0, f):
                break
    return X, history, it


def _polish(X, Y):
    """Remove residual overlap with span(Y) and snap X back to orthonormal columns."""
    if Y.shape[1]:
        X = X - Y @ (Y.T @ X)
    U, _, Vt = np.linalg.svd(X, full_matrices=False)
    return U @ Vt


def regularized_orthogonal_basis(fixed, count: int, cfg: StiefelL1Config | None = None,
                                 n: int | None = None) -> BasisResult:
    """``count`` sparse orthonormal vectors orthogonal to the columns of ``fixed``.

    ``fixed`` is an ``n x k`` matrix with orthonormal columns (``k`` may be 0,
    in which case ``n`` must be given). The returned objective never exceeds
    that of the feasible initialization.
    """
    cfg = cfg or StiefelL1Config()
    if fixed is None or np.size(fixed) == 0:
        if n is None:
            raise InvalidPlant("n is required when there are no fixed vectors")
        Y = np.zeros((n, 0))
    else:
        Y = np.asarray(fixed, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        n = Y.shape[0]
    if np.abs(Y.T @ Y - np.eye(Y.shape[1])).max(initial=0.0) > 1e-8:
        raise InfeasibleInit("fixed vectors must be orthonormal")
    if count < 0 or count + Y.shape[1] > n:
        raise InfeasibleInit(f"cannot place {count} vectors next to {Y.shape[1]} in R^{n}")
    if count == 0:
        return BasisResult(np.zeros((n, 0)), 0.0, 0.0, [0.0], 0)

    comp = orthonormal_complement(Y, n)
    X0 = comp[:, :count]
    lam = cfg.lambda_orth
    f0 = l1_objective(X0, Y, lam)

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, n, count, Y.shape[1]]))
    starts = [X0]
    for _ in range(cfg.restarts):
        Z = rng.standard_normal((comp.shape[1], count))
        Qz, Rz = np.linalg.qr(Z)
        starts.append(comp @ (Qz * np.sign(np.diag(Rz))))

    best = None
    total_iters = 0
    for k, start in enumerate(starts):
        X, history, iters = _descend(start.copy(), Y, cfg, cfg.max_iters)
        total_iters += iters
        X = _polish(X, Y)
        f = l1_objective(X, Y, lam)
        if k == 0:
            base_history = history
        if best is None or f < best[1] - 1e-12:
            best = (X, f)

    X, f = best
    if not f <= f0:
        log.debug("optimizer did not improve on the initialization (%.6g > %.6g)", f, f0)
        X, f = X0, f0
    return BasisResult(X, f, f0, base_history, total_iters)

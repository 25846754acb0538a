"""Linear state/input maps ``y = T_y (x - x_goal)``, ``v = T_v (u - u_goal)``.

``sparse_svd_map`` takes the maps from the SVD of the LQR gain, which turns
the linearized optimal policy into a diagonal one. Where the SVD leaves
freedom (null space of the gain, zero or repeated singular values) the free
basis vectors are chosen to be as sparse as possible. ``balanced_map`` is
the balanced-realization baseline.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .care import PlantSpec, solve_care, solve_lyapunov
from .errors import GramianSingular, InvalidPlant, OptimizerStalled, Singular
from .stiefel import StiefelL1Config, regularized_orthogonal_basis

log = logging.getLogger(__name__)

PROVENANCES = ("identity", "svd_sparse", "balanced")
MAX_COND = 1e12


@dataclass(frozen=True, eq=False)
class RepresentationMap:
    T_y: np.ndarray
    T_v: np.ndarray
    provenance: str = "identity"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise InvalidPlant(f"unknown provenance {self.provenance!r}")
        for name in ("T_y", "T_v"):
            T = np.atleast_2d(np.array(getattr(self, name), dtype=float))
            if T.shape[0] != T.shape[1]:
                raise Singular(f"{name} must be square")
            c = np.linalg.cond(T)
            if not np.isfinite(c) or c > MAX_COND:
                raise Singular(f"{name} has condition number {c:.3g}")
            T.setflags(write=False)
            object.__setattr__(self, name, T)
        if self.provenance == "svd_sparse":
            for name in ("T_y", "T_v"):
                T = getattr(self, name)
                if np.abs(T @ T.T - np.eye(T.shape[0])).max() > 1e-8:
                    raise Singular(f"{name} of an SVD map must be orthogonal")

    @classmethod
    def identity(cls, n: int, m: int) -> "RepresentationMap":
        return cls(np.eye(n), np.eye(m), "identity")

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "T_y": self.T_y.tolist(),
            "T_v": self.T_v.tolist(),
            "info": self.info,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RepresentationMap":
        return cls(np.array(data["T_y"]), np.array(data["T_v"]), data["provenance"],
                   data.get("info", {}))


REGION_RULES = ("box", "image")


def transform_plant(plant: PlantSpec, rmap: RepresentationMap, region: str = "image") -> PlantSpec:
    """Express ``plant`` in the mapped coordinates (goal moves to the origin).

    With ``region="box"`` the averaging region becomes the axis-aligned
    bounding box of the image of S under ``T_y``; with ``region="image"`` it
    is the image itself, so value errors stay comparable with the original
    representation.
    """
    if region not in REGION_RULES:
        raise InvalidPlant(f"unknown region rule {region!r}")
    Ty, Tv = rmap.T_y, rmap.T_v
    if Ty.shape != (plant.n, plant.n) or Tv.shape != (plant.m, plant.m):
        raise Singular("map dimensions do not match the plant")
    Ty_inv = np.linalg.inv(Ty)
    Tv_inv = np.linalg.inv(Tv)
    Q = Ty_inv.T @ plant.Q @ Ty_inv
    R = Tv_inv.T @ plant.R @ Tv_inv
    meta = dict(plant.meta)
    meta["representation"] = rmap.provenance
    basis = np.eye(plant.n) if plant.region_basis is None else plant.region_basis
    if region == "box":
        halfwidths, new_basis = np.abs(Ty @ basis) @ plant.region_halfwidths, None
    else:
        halfwidths, new_basis = plant.region_halfwidths, Ty @ basis
    return PlantSpec(
        A=Ty @ plant.A @ Ty_inv,
        B=Ty @ plant.B @ Tv_inv,
        Q=0.5 * (Q + Q.T),
        R=0.5 * (R + R.T),
        lambda_discount=plant.lambda_discount,
        x_goal=np.zeros(plant.n),
        u_goal=np.zeros(plant.m),
        region_halfwidths=halfwidths,
        region_basis=new_basis,
        meta=meta,
    )


def _canonical_sign(vectors):
    """Flip columns so each one's largest-magnitude entry is positive."""
    V = np.array(vectors, dtype=float)
    for j in range(V.shape[1]):
        i = int(np.argmax(np.abs(V[:, j])))
        if V[i, j] < 0:
            V[:, j] = -V[:, j]
    return V


def _polar(M):
    U, _, Vt = np.linalg.svd(M, full_matrices=False)
    return U @ Vt


def classify_singular_values(s, cfg: StiefelL1Config) -> dict:
    """Split singular values (descending) into zeros and clusters of equal nonzero values."""
    s = np.asarray(s, dtype=float)
    smax = float(s[0]) if s.size else 0.0
    zero = [i for i in range(s.size) if smax == 0.0 or s[i] <= cfg.zero_sv_tolerance * smax]
    nonzero = [i for i in range(s.size) if i not in zero]
    clusters = []
    for i in nonzero:
        if clusters and s[clusters[-1][-1]] - s[i] <= cfg.repeated_sv_tolerance * smax:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    cases = ["I"]
    if zero:
        cases.append("II")
    if any(len(c) > 1 for c in clusters):
        cases.append("III")
    return {
        "singular_values": s.tolist(),
        "zero": zero,
        "clusters": clusters,
        "repeated": [c for c in clusters if len(c) > 1],
        "cases": cases,
    }


def _sparse_block(U_all, cols, cfg, what):
    """Replace columns ``cols`` of orthogonal ``U_all`` by a sparse basis of their span."""
    others = [j for j in range(U_all.shape[1]) if j not in cols]
    res = regularized_orthogonal_basis(U_all[:, others], len(cols), cfg, n=U_all.shape[0])
    X = res.X
    if X.shape[1] and (np.abs(X.T @ X - np.eye(X.shape[1])).max() > 1e-8
                       or np.abs(U_all[:, others].T @ X).max(initial=0.0) > 1e-8):
        raise OptimizerStalled(f"{what}: optimizer returned an infeasible basis")
    return X, res


def sparse_svd_map(plant: PlantSpec, cfg: StiefelL1Config | None = None, *,
                   K_star=None) -> RepresentationMap:
    """SVD-based maps ``T_y = V'``, ``T_v = U'`` with sparse free directions.

    Every basis the SVD leaves undetermined is replaced by an L1-sparse
    orthonormal one: the null space of ``K*`` in state space (together with
    the state directions of zero singular values), the input directions of
    zero singular values, and each cluster of repeated nonzero singular
    values in input space.
    """
    cfg = cfg or StiefelL1Config()
    if K_star is None:
        _, K_star = solve_care(plant)
    K = np.asarray(K_star, dtype=float)
    m, n = K.shape
    U, s, Vt = np.linalg.svd(K, full_matrices=True)
    V = Vt.T
    record = classify_singular_values(s, cfg)
    zero, clusters = record["zero"], record["clusters"]
    nonzero = [i for c in clusters for i in c]
    stalled = []

    def regularize(M, cols, what):
        try:
            X, _ = _sparse_block(M, cols, cfg, what)
            return X
        except OptimizerStalled as exc:
            log.warning("%s; keeping the plain SVD basis", exc)
            stalled.append(what)
            return M[:, cols]

    U = U.copy()
    for c in record["repeated"]:
        U[:, c] = regularize(U, c, f"repeated cluster {c}")
    if len(zero) > 1:
        U[:, zero] = regularize(U, zero, "zero singular values")
    U = _canonical_sign(U)

    V_new = np.zeros((n, n))
    for c in clusters:
        sbar = float(np.mean(s[c]))
        block = K.T @ U[:, c] / sbar
        V_new[:, c] = _polar(block) if len(c) > 1 else block / np.linalg.norm(block)

    r = len(nonzero)
    null_count = n - r
    if null_count:
        Y = V_new[:, :r]
        if r:
            Y = _polar(Y)
            V_new[:, :r] = Y
        if null_count == 1 and r:
            null = _complement(Y)
        else:
            try:
                null, _ = _sparse_block(np.column_stack([Y, V[:, r:]]), list(range(r, n)), cfg,
                                        "null space")
            except OptimizerStalled as exc:
                log.warning("%s; keeping the plain SVD basis", exc)
                stalled.append("null space")
                null = V[:, r:]
        null = _canonical_sign(null)
        order = sorted(range(null_count), key=lambda j: (int(np.argmax(np.abs(null[:, j]))), j))
        V_new[:, r:] = null[:, order]

    T_y, T_v = V_new.T, U.T
    theta = T_v @ K @ T_y.T
    off = theta.copy()
    off[np.arange(m), np.arange(m)] = 0.0
    record["max_offdiag"] = float(np.abs(off).max())
    record["stalled"] = stalled
    if record["max_offdiag"] > 1e-6:
        log.warning("SVD map leaves off-diagonal gain entries of %.3g", record["max_offdiag"])
    return RepresentationMap(T_y, T_v, "svd_sparse", record)


def _complement(Y):
    n, k = Y.shape
    Qf, _ = np.linalg.qr(np.column_stack([Y, np.eye(n)]))
    return Qf[:, k:n]


def balanced_map(plant: PlantSpec) -> RepresentationMap:
    """State map balancing the LQR-stabilized triple ``(A - B K*, B, Q^1/2)``.

    Both Gramians of the transformed closed loop equal the diagonal matrix of
    Hankel singular values. Inputs are left unchanged.
    """
    _, K = solve_care(plant)
    A_cl = plant.A_discounted - plant.B @ K
    Wc = solve_lyapunov(A_cl.T, plant.B @ plant.B.T)
    Wo = solve_lyapunov(A_cl, plant.Q)
    try:
        Lc = linalg.cholesky(Wc, lower=True)
        Lo = linalg.cholesky(Wo, lower=True)
    except linalg.LinAlgError as exc:
        raise GramianSingular(f"Gramian is not positive definite: {exc}") from exc
    U, hsv, Vt = np.linalg.svd(Lo.T @ Lc)
    if hsv.min() <= 1e-12 * hsv.max():
        raise GramianSingular("Hankel singular values are numerically zero")
    T = np.diag(hsv**-0.5) @ U.T @ Lo.T
    # row signs: make each row's largest-magnitude entry positive
    signs = np.sign(T[np.arange(T.shape[0]), np.argmax(np.abs(T), axis=1)])
    T = signs[:, None] * T
    return RepresentationMap(T, np.eye(plant.m), "balanced",
                             {"hankel_singular_values": hsv.tolist()})


def derive_map(plant: PlantSpec, kind: str, cfg: StiefelL1Config | None = None) -> RepresentationMap:
    if kind == "identity":
        return RepresentationMap.identity(plant.n, plant.m)
    if kind == "svd_sparse":
        return sparse_svd_map(plant, cfg)
    if kind == "balanced":
        return balanced_map(plant)
    raise InvalidPlant(f"unknown map kind {kind!r}")

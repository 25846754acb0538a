"""Plant generators: randomized linear families and small nonlinear benchmarks."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .care import PlantSpec, solve_care_matrices
from .errors import ExhaustedRetries, IllConditioned, InvalidPlant, NotStabilizable
from .tabular import NonlinearSystem

log = logging.getLogger(__name__)

JITTER = 1e-9
MAX_RETRIES = 100


@dataclass(frozen=True)
class SampleConfig:
    strategy: str = "I"
    m: int = 2
    n: int = 4
    seed: int = 0
    scale: float = 1.0
    zero_sv_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", str(self.strategy).upper())
        if self.strategy not in ("I", "II"):
            raise InvalidPlant(f"unknown strategy {self.strategy!r}")
        if not self.n >= self.m >= 1:
            raise InvalidPlant(f"need n >= m >= 1, got ({self.m}, {self.n})")
        if self.strategy == "II" and self.m != self.n:
            raise InvalidPlant("strategy II builds a square gain, so m must equal n")
        if not 0 <= self.zero_sv_count < self.m:
            raise InvalidPlant("zero_sv_count must lie in [0, m)")
        if self.scale <= 0:
            raise InvalidPlant("scale must be positive")


def _rng(cfg: SampleConfig):
    # strategy and size are folded in so that one seed gives unrelated draws per cell
    tag = [cfg.seed & 0xFFFFFFFFFFFFFFFF, cfg.m, cfg.n, 1 if cfg.strategy == "I" else 2]
    return np.random.default_rng(np.random.SeedSequence(tag))


def sample_strategy_1(cfg: SampleConfig) -> PlantSpec:
    """Uniform [0, 1] entries for A, B and the cost factors, Q = Qs Qs', R = Rs Rs'."""
    if cfg.strategy != "I":
        raise InvalidPlant("sample_strategy_1 needs strategy I")
    rng = _rng(cfg)
    n, m = cfg.n, cfg.m
    for attempt in range(MAX_RETRIES):
        A = rng.uniform(0.0, 1.0, (n, n))
        B = rng.uniform(0.0, 1.0, (n, m))
        Qs = rng.uniform(0.0, 1.0, (n, n))
        Rs = rng.uniform(0.0, 1.0, (m, m))
        Q = Qs @ Qs.T + JITTER * np.eye(n)
        R = Rs @ Rs.T + JITTER * np.eye(m)
        Q, R = 0.5 * (Q + Q.T), 0.5 * (R + R.T)
        try:
            solve_care_matrices(A, B, Q, R)
        except (NotStabilizable, IllConditioned) as exc:
            log.info("strategy I seed %d draw %d rejected: %s", cfg.seed, attempt, exc)
            continue
        return PlantSpec(A, B, Q, R, meta={"strategy": "I", "seed": cfg.seed, "draws": attempt + 1})
    raise ExhaustedRetries(f"no stabilizable draw after {MAX_RETRIES} attempts")


def _haar_orthogonal(rng, k):
    Z = rng.standard_normal((k, k))
    Qm, Rm = np.linalg.qr(Z)
    return Qm * np.sign(np.diag(Rm))


def sample_strategy_2(cfg: SampleConfig) -> tuple[PlantSpec, np.ndarray]:
    """Inverse-LQR construction of a plant whose optimal gain is known.

    With ``P = c I`` and ``R = I`` the gain is ``K = B' c``, so choosing
    ``B = K' / c`` and ``Q = K' K - c (A + A')`` makes ``P`` solve the CARE.
    ``A`` is a Gaussian draw whose symmetric part is shifted down until
    ``Q`` is positive definite.
    """
    if cfg.strategy != "II":
        raise InvalidPlant("sample_strategy_2 needs strategy II")
    rng = _rng(cfg)
    n, c = cfg.n, cfg.scale
    for attempt in range(MAX_RETRIES):
        U = _haar_orthogonal(rng, n)
        V = _haar_orthogonal(rng, n)
        sv = np.full(n, c)
        if cfg.zero_sv_count:
            sv[n - cfg.zero_sv_count:] = 0.0
        K = U @ np.diag(sv) @ V.T
        B = K.T / c
        A0 = rng.standard_normal((n, n))
        sym, skew = 0.5 * (A0 + A0.T), 0.5 * (A0 - A0.T)
        slack = rng.uniform(0.0, 1.0)
        worst = np.linalg.eigvalsh(2 * c * sym - K.T @ K).max()
        shift = max(0.0, (worst + JITTER) / (2 * c)) + slack
        A = skew + sym - shift * np.eye(n)
        Q = K.T @ K - c * (A + A.T)
        Q = 0.5 * (Q + Q.T)
        if np.linalg.eigvalsh(Q).min() < JITTER:
            continue
        try:
            _, K_rec = solve_care_matrices(A, B, Q, np.eye(n))
        except (NotStabilizable, IllConditioned) as exc:
            log.info("strategy II seed %d draw %d rejected: %s", cfg.seed, attempt, exc)
            continue
        if np.abs(K_rec - K).max() > 1e-8:
            log.info("strategy II seed %d draw %d: round trip off by %.3g",
                     cfg.seed, attempt, np.abs(K_rec - K).max())
            continue
        K.setflags(write=False)
        plant = PlantSpec(A, B, Q, np.eye(n), meta={
            "strategy": "II", "seed": cfg.seed, "scale": c,
            "zero_sv_count": cfg.zero_sv_count, "draws": attempt + 1,
        })
        return plant, K
    raise ExhaustedRetries(f"no valid strategy II draw after {MAX_RETRIES} attempts")


def sample(cfg: SampleConfig) -> PlantSpec:
    if cfg.strategy == "I":
        return sample_strategy_1(cfg)
    return sample_strategy_2(cfg)[0]


# Nonlinear benchmarks. Every entry is a goal-equilibrium NonlinearSystem;
# the parameter dictionaries below are the documented catalog.

QUADROTOR = {"mass": 0.5, "arm": 0.15, "inertia": 0.005, "gravity": 9.81}
MANIPULATOR = {
    "m1": 1.0, "m2": 1.0, "l1": 1.0, "lc1": 0.5, "lc2": 0.5,
    "I1": 1.0 / 12.0, "I2": 1.0 / 12.0, "gravity": 9.81,
}
MANIPULATOR_GOAL = (0.2, -0.3)  # joint angles from upright (rad)


def _intro_system():
    def f(X, U):
        return X[:, ::-1] + U

    return NonlinearSystem(
        "intro", f, x_goal=[0.0, 0.0], u_goal=[0.0, 0.0],
        x_lower=[-1.0, -1.0], x_upper=[1.0, 1.0], u_lower=[-3.0, -3.0], u_upper=[3.0, 3.0],
        Q=np.eye(2), R=np.eye(2), lambda_discount=0.5,
        meta={"description": "xdot = (x2, x1) + u; decoupled by y = (x1 + x2, x1 - x2)",
              "dp": {"grid_points": 81, "action_levels": 41}},
    )


def _double_integrator():
    def f(X, U):
        return np.stack([X[:, 1], U[:, 0]], axis=1)

    return NonlinearSystem(
        "double_integrator", f, x_goal=[0.0, 0.0], u_goal=[0.0],
        x_lower=[-2.0, -2.0], x_upper=[2.0, 2.0], u_lower=[-2.0], u_upper=[2.0],
        Q=np.eye(2), R=np.eye(1), lambda_discount=0.5,
        meta={"description": "position/velocity double integrator",
              "dp": {"grid_points": 81, "action_levels": 41}},
    )


def _pendulum():
    def f(X, U):
        return np.stack([X[:, 1], np.sin(X[:, 0]) + U[:, 0]], axis=1)

    return NonlinearSystem(
        "pendulum", f, x_goal=[0.0, 0.0], u_goal=[0.0],
        x_lower=[-np.pi / 2, -4.0], x_upper=[np.pi / 2, 4.0], u_lower=[-3.0], u_upper=[3.0],
        Q=np.eye(2), R=np.eye(1), lambda_discount=1.0,
        meta={"description": "normalized inverted pendulum, angle from upright"},
    )


def _planar_quadrotor():
    p = QUADROTOR
    mass, arm, J, g = p["mass"], p["arm"], p["inertia"], p["gravity"]

    def f(X, U):
        theta = X[:, 1]
        F1, F2 = U[:, 0], U[:, 1]
        zdd = (F1 + F2) * np.cos(theta) / mass - g
        thdd = arm * (F1 - F2) / J
        return np.stack([X[:, 2], X[:, 3], zdd, thdd], axis=1)

    hover = mass * g / 2
    return NonlinearSystem(
        "planar_quadrotor", f, x_goal=[0.0, 0.0, 0.0, 0.0], u_goal=[hover, hover],
        x_lower=[-1.0, -0.5, -2.0, -4.0], x_upper=[1.0, 0.5, 2.0, 4.0],
        u_lower=[0.0, 0.0], u_upper=[2 * hover, 2 * hover],
        Q=np.diag([10.0, 10.0, 1.0, 1.0]), R=np.diag([1.0, 1.0]), lambda_discount=1.0,
        meta={"description": "states (z, theta, zdot, thetadot); inputs are the two rotor thrusts",
              "parameters": dict(p), "dp": {"grid_points": 81, "action_levels": 21}},
    )


def manipulator_gravity(q, p=MANIPULATOR):
    """Generalized gravity torques of the two-link arm (angles from upright)."""
    q = np.atleast_2d(q)
    g = p["gravity"]
    s1, s12 = np.sin(q[:, 0]), np.sin(q[:, 0] + q[:, 1])
    g1 = -(p["m1"] * p["lc1"] + p["m2"] * p["l1"]) * g * s1 - p["m2"] * p["lc2"] * g * s12
    g2 = -p["m2"] * p["lc2"] * g * s12
    return np.stack([g1, g2], axis=1)


def _two_link_manipulator(u_goal=None):
    p = MANIPULATOR
    m2, l1, lc1, lc2 = p["m2"], p["l1"], p["lc1"], p["lc2"]
    a = p["m1"] * lc1**2 + m2 * (l1**2 + lc2**2) + p["I1"] + p["I2"]
    b = m2 * l1 * lc2
    d = m2 * lc2**2 + p["I2"]

    def f(X, U):
        q1, q2, w1, w2 = X.T
        c2, s2 = np.cos(q2), np.sin(q2)
        M11, M12, M22 = a + 2 * b * c2, d + b * c2, d
        h1 = -b * s2 * (2 * w1 * w2 + w2**2)
        h2 = b * s2 * w1**2
        G = manipulator_gravity(X[:, :2], p)
        r1 = U[:, 0] - h1 - G[:, 0]
        r2 = U[:, 1] - h2 - G[:, 1]
        det = M11 * M22 - M12**2
        return np.stack([w1, w2, (M22 * r1 - M12 * r2) / det, (M11 * r2 - M12 * r1) / det], axis=1)

    goal = np.array([*MANIPULATOR_GOAL, 0.0, 0.0])
    if u_goal is None:
        u_goal = manipulator_gravity(goal[:2], p)[0]
    return NonlinearSystem(
        "two_link_manipulator", f, x_goal=goal, u_goal=u_goal,
        x_lower=goal - [0.6, 0.6, 3.0, 3.0], x_upper=goal + [0.6, 0.6, 3.0, 3.0],
        u_lower=[-30.0, -15.0], u_upper=[30.0, 15.0],
        Q=np.diag([10.0, 10.0, 1.0, 1.0]), R=np.diag([0.1, 0.1]), lambda_discount=1.0,
        meta={"description": "two-link arm near upright; u_goal cancels gravity at the goal",
              "parameters": dict(p), "goal_angles": list(MANIPULATOR_GOAL)},
    )


BENCHMARKS = {
    "intro": _intro_system,
    "double_integrator": _double_integrator,
    "pendulum": _pendulum,
    "planar_quadrotor": _planar_quadrotor,
    "two_link_manipulator": _two_link_manipulator,
}


def benchmark_systems() -> dict[str, NonlinearSystem]:
    """Fresh instances of every benchmark, keyed by name."""
    return {name: build() for name, build in BENCHMARKS.items()}


def benchmark(name: str) -> NonlinearSystem:
    try:
        return BENCHMARKS[name]()
    except KeyError:
        raise InvalidPlant(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None

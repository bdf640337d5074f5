"""Stackelberg negotiation model over a finite library of acceleration controllers.

Both cars move along fixed paths; each controller is a quadratic acceleration
profile over a short horizon.  A *follower* human responds noisily-rationally
to the robot's current plan, a *leader* human assumes the robot will
best-respond to it.  Observed human accelerations are matched to the closest
controller and the two role hypotheses are weighed by Bayes' rule.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .frenet import FrenetFrame

FOLLOWER = "f"
LEADER = "l"
ROLES = (FOLLOWER, LEADER)


@dataclass(frozen=True)
class AccelController:
    """a(tau) = c0 + c1*tau + c2*tau**2 for tau in [0, T]."""

    c0: float
    c1: float
    c2: float
    T: float = 2.0

    def __call__(self, tau):
        return self.c0 + self.c1 * tau + self.c2 * tau * tau

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([self.c0, self.c1, self.c2])

    def accel_range(self) -> tuple[float, float]:
        """Exact min/max over [0, T]: endpoints plus the vertex when interior."""
        cands = [self(0.0), self(self.T)]
        if self.c2 != 0.0:
            tv = -self.c1 / (2.0 * self.c2)
            if 0.0 < tv < self.T:
                cands.append(self(tv))
        return float(min(cands)), float(max(cands))


@dataclass(frozen=True)
class ControllerLibrary:
    controllers: tuple[AccelController, ...]
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "controllers", tuple(self.controllers))
        if len(self.controllers) < 2:
            raise ValueError("a controller library needs at least two controllers")

    def __len__(self) -> int:
        return len(self.controllers)

    def __getitem__(self, i) -> AccelController:
        return self.controllers[i]

    def __iter__(self):
        return iter(self.controllers)

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([c.coeffs for c in self.controllers])

    @property
    def horizon(self) -> float:
        return self.controllers[0].T

    def evaluate(self, tau) -> np.ndarray:
        """Accelerations of every controller at offsets ``tau``: shape (n, len(tau))."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        c = self.coeffs
        return c[:, :1] + c[:, 1:2] * tau + c[:, 2:3] * tau * tau

    def to_dict(self) -> dict:
        return {"seed": self.seed, "T": self.horizon, "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ControllerLibrary":
        T = data["T"]
        return cls(tuple(AccelController(*map(float, c), T=T) for c in data["coeffs"]), data.get("seed"))


class LibraryError(ValueError):
    pass


def sample_library(
    n: int,
    ranges: Sequence[tuple[float, float]] = ((-4.0, 3.0), (-2.0, 2.0), (-1.0, 1.0)),
    clamp: tuple[float, float] = (-6.0, 4.0),
    T: float = 2.0,
    seed: int = 0,
    max_attempts: int = 1000,
) -> ControllerLibrary:
    """Constant controllers 0, clamp min and clamp max, then uniform rejection samples.

    Gives up with :class:`LibraryError` after ``max_attempts * n`` rejected draws.
    """
    if n < 2:
        raise LibraryError("need n >= 2")
    lo_c, hi_c = clamp
    ctrls = [AccelController(c, 0.0, 0.0, T) for c in (0.0, lo_c, hi_c)][:n]
    rng = np.random.default_rng(seed)
    lows = np.array([r[0] for r in ranges], dtype=float)
    highs = np.array([r[1] for r in ranges], dtype=float)
    rejected = 0
    while len(ctrls) < n:
        c = AccelController(*rng.uniform(lows, highs).tolist(), T=T)
        a_min, a_max = c.accel_range()
        if a_min >= lo_c and a_max <= hi_c:
            ctrls.append(c)
            continue
        rejected += 1
        if rejected > max_attempts * n:
            raise LibraryError("coefficient ranges are infeasible for the clamp")
    return ControllerLibrary(tuple(ctrls), seed)


def fit_controller(offsets, accels, T: float) -> AccelController:
    """Least-squares quadratic through observed (offset, acceleration) pairs."""
    offsets = np.asarray(offsets, dtype=float)
    accels = np.asarray(accels, dtype=float)
    deg = min(2, len(offsets) - 1)
    if deg < 0:
        return AccelController(0.0, 0.0, 0.0, T)
    A = np.vander(offsets, deg + 1, increasing=True)
    coef = np.linalg.lstsq(A, accels, rcond=None)[0]
    coef = np.concatenate([coef, np.zeros(3 - len(coef))])
    return AccelController(*map(float, coef), T=T)


@dataclass(frozen=True)
class GameState:
    s_h: float
    v_h: float
    s_r: float
    v_r: float
    t: float = 0.0
    dt: float = 0.25

    def __post_init__(self):
        if self.v_h < 0 or self.v_r < 0:
            raise ValueError("speeds must be nonnegative")
        if not self.dt > 0:
            raise ValueError("game step must be positive")


@dataclass(frozen=True)
class GameGeometry:
    human_path: FrenetFrame
    robot_path: FrenetFrame


@dataclass(frozen=True)
class RewardWeights:
    progress: float = 1.0
    speed: float = 0.5
    effort: float = 0.5
    proximity: float = 10.0
    collision: float = 100.0
    target_speed: float = 8.0
    activation_distance: float = 8.0
    collision_distance: float = 4.0

    def __post_init__(self):
        if not self.activation_distance > self.collision_distance > 0:
            raise ValueError("need activation distance > collision distance > 0")


@dataclass(frozen=True)
class RewardConfig:
    human: RewardWeights = field(default_factory=RewardWeights)
    robot: RewardWeights = field(default_factory=RewardWeights)
    beta: float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("rationality beta must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RewardConfig":
        return cls(RewardWeights(**data["human"]), RewardWeights(**data["robot"]), data["beta"])


def stage_reward(w: RewardWeights, v, a, dist):
    """Progress, speed tracking, effort, a softplus proximity penalty and a
    linear penetration penalty inside the collision distance."""
    r = w.progress * v - w.speed * (v - w.target_speed) ** 2 - w.effort * np.abs(a)
    r = r - w.proximity * np.log1p(np.exp(w.activation_distance - dist))
    # a hinge keeps Q continuous in the state; an indicator makes the likelihood jumpy
    return r - w.collision * np.maximum(w.collision_distance - dist, 0.0)


def advance(s, v, a, dt):
    """Longitudinal step along the path; the speed stops at zero instead of reversing."""
    v_next = v + a * dt
    stopping = v_next < 0
    ds = np.where(stopping, v * v / np.where(stopping, -2.0 * a, 1.0), v * dt + 0.5 * a * dt * dt)
    return s + ds, np.maximum(v_next, 0.0)


def _distance(geometry: GameGeometry, s_h, s_r):
    ph = geometry.human_path.point_at(s_h)
    pr = geometry.robot_path.point_at(s_r)
    dx = ph[..., 0] - pr[..., 0]
    dy = ph[..., 1] - pr[..., 1]
    return np.sqrt(dx * dx + dy * dy)


def n_stages(T: float, dt: float) -> int:
    n = T / dt
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"game step {dt} does not divide horizon {T}")
    return int(round(n))


def rollout_q(
    state: GameState,
    pi_h: AccelController,
    pi_r: AccelController,
    cfg: RewardConfig,
    geometry: GameGeometry,
    agent: str = "human",
) -> float:
    """Undiscounted sum of one agent's stage rewards over stages 0..T/dt."""
    w = cfg.human if agent == "human" else cfg.robot
    s_h, v_h = np.float64(state.s_h), np.float64(state.v_h)
    s_r, v_r = np.float64(state.s_r), np.float64(state.v_r)
    q = np.float64(0.0)
    for n in range(n_stages(pi_h.T, state.dt) + 1):
        tau = np.float64(n * state.dt)
        a_h, a_r = pi_h(tau), pi_r(tau)
        dist = _distance(geometry, np.array([s_h]), np.array([s_r]))[0]
        if agent == "human":
            q = q + stage_reward(w, v_h, a_h, dist)
        else:
            q = q + stage_reward(w, v_r, a_r, dist)
        s_h, v_h = advance(s_h, v_h, a_h, state.dt)
        s_r, v_r = advance(s_r, v_r, a_r, state.dt)
    return float(q)


def _profiles(s0: float, v0: float, accels: np.ndarray, dt: float):
    """Stations and speeds at every stage for each row of ``accels``."""
    n, m = accels.shape
    s = np.empty((n, m))
    v = np.empty((n, m))
    s_cur = np.full(n, np.float64(s0))
    v_cur = np.full(n, np.float64(v0))
    for k in range(m):
        s[:, k], v[:, k] = s_cur, v_cur
        s_cur, v_cur = advance(s_cur, v_cur, accels[:, k], dt)
    return s, v


def q_matrices(
    state: GameState,
    human_ctrls: ControllerLibrary,
    robot_ctrls: ControllerLibrary,
    cfg: RewardConfig,
    geometry: GameGeometry,
    agents: Sequence[str] = ("human", "robot"),
) -> dict[str, np.ndarray]:
    """Q of each requested agent for every (human controller, robot controller) pair."""
    N = n_stages(human_ctrls.horizon, state.dt)
    tau = np.arange(N + 1) * state.dt
    a_h = human_ctrls.evaluate(tau)
    a_r = robot_ctrls.evaluate(tau)
    s_h, v_h = _profiles(state.s_h, state.v_h, a_h, state.dt)
    s_r, v_r = _profiles(state.s_r, state.v_r, a_r, state.dt)
    out = {a: np.zeros((len(human_ctrls), len(robot_ctrls))) for a in agents}
    for k in range(N + 1):
        dist = _distance(geometry, s_h[:, k][:, None], s_r[:, k][None, :])
        if "human" in out:
            out["human"] = out["human"] + stage_reward(cfg.human, v_h[:, k][:, None], a_h[:, k][:, None], dist)
        if "robot" in out:
            out["robot"] = out["robot"] + stage_reward(cfg.robot, v_r[:, k][None, :], a_r[:, k][None, :], dist)
    return out


def softmax(q, beta: float) -> np.ndarray:
    z = beta * np.asarray(q, dtype=float)
    z = z - z.max()
    p = np.exp(z)
    return p / p.sum()


def log_softmax(q, beta: float) -> np.ndarray:
    z = beta * np.asarray(q, dtype=float)
    z = z - z.max()
    return z - np.log(np.sum(np.exp(z)))


def follower_q(state, pi_r_g: AccelController, lib, cfg: RewardConfig, geometry) -> np.ndarray:
    plan = ControllerLibrary((pi_r_g, pi_r_g))
    return q_matrices(state, lib, plan, cfg, geometry, agents=("human",))["human"][:, 0]


def follower_distribution(state, pi_r_g: AccelController, lib, cfg: RewardConfig, geometry) -> np.ndarray:
    return softmax(follower_q(state, pi_r_g, lib, cfg, geometry), cfg.beta)


def leader_responses(state, lib, cfg: RewardConfig, geometry) -> tuple[np.ndarray, np.ndarray]:
    """Robot best response index per human controller and the human's Q against it."""
    q = q_matrices(state, lib, lib, cfg, geometry)
    best = np.argmax(q["robot"], axis=1)  # first maximum: lowest index
    return best, q["human"][np.arange(len(lib)), best]


def leader_distribution(state, lib, cfg: RewardConfig, geometry) -> np.ndarray:
    return softmax(leader_responses(state, lib, cfg, geometry)[1], cfg.beta)


@dataclass(frozen=True)
class ObservedControls:
    """Human accelerations sampled at times ``t``; offsets are taken from ``origin``."""

    t: np.ndarray
    a: np.ndarray
    origin: float

    def __post_init__(self):
        object.__setattr__(self, "t", np.atleast_1d(np.asarray(self.t, dtype=float)))
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, dtype=float)))
        if self.t.shape != self.a.shape or self.t.size == 0:
            raise ValueError("observations must be nonempty and aligned")

    @property
    def offsets(self) -> np.ndarray:
        return self.t - self.origin


def match_distances(xi: ObservedControls, lib: ControllerLibrary) -> np.ndarray:
    diff = lib.evaluate(xi.offsets) - xi.a[None, :]
    return np.sum(diff * diff, axis=1)


def best_match(xi: ObservedControls, lib: ControllerLibrary) -> int:
    return int(np.argmin(match_distances(xi, lib)))


def role_log_distributions(state, pi_r_g, lib, cfg, geometry) -> dict[str, np.ndarray]:
    return {
        FOLLOWER: log_softmax(follower_q(state, pi_r_g, lib, cfg, geometry), cfg.beta),
        LEADER: log_softmax(leader_responses(state, lib, cfg, geometry)[1], cfg.beta),
    }


def observation_likelihood(xi, theta: str, state, pi_r_g, lib, cfg, geometry) -> float:
    k = best_match(xi, lib)
    if theta == FOLLOWER:
        return float(follower_distribution(state, pi_r_g, lib, cfg, geometry)[k])
    if theta == LEADER:
        return float(leader_distribution(state, lib, cfg, geometry)[k])
    raise ValueError(f"unknown role {theta!r}")


@dataclass(frozen=True)
class RoleBelief:
    b_f: float = 0.5
    b_l: float = 0.5
    degenerate: bool = False

    def __post_init__(self):
        if min(self.b_f, self.b_l) < 0 or abs(self.b_f + self.b_l - 1.0) > 1e-12:
            raise ValueError(f"invalid belief ({self.b_f}, {self.b_l})")

    def as_array(self) -> np.ndarray:
        return np.array([self.b_f, self.b_l])


BELIEF_FLOOR = 1e-3


def _floored(p_f: float, floor: float) -> RoleBelief:
    # clipping into [floor, 1 - floor] floors both roles and stays normalized
    p_f = min(max(p_f, floor), 1.0 - floor)
    return RoleBelief(p_f, 1.0 - p_f)


def bayes_update(b: RoleBelief, lik_f: float, lik_l: float, floor: float = BELIEF_FLOOR) -> RoleBelief:
    """b'(theta) ~ Z(xi | theta) b(theta), renormalized and floored."""
    post = np.array([lik_f * b.b_f, lik_l * b.b_l])
    total = post.sum()
    if not total > 0:
        return RoleBelief(b.b_f, b.b_l, degenerate=True)
    return _floored(float(post[0] / total), floor)


def bayes_update_log(b: RoleBelief, loglik_f: float, loglik_l: float, floor: float = BELIEF_FLOOR) -> RoleBelief:
    """Same update from log-likelihoods, immune to underflow of both masses."""
    with np.errstate(divide="ignore"):
        lf = loglik_f + np.log(b.b_f)
        ll = loglik_l + np.log(b.b_l)
    if lf == -np.inf and ll == -np.inf:
        return RoleBelief(b.b_f, b.b_l, degenerate=True)
    # logistic of the log-odds
    with np.errstate(over="ignore"):
        p_f = float(1.0 / (1.0 + np.exp(ll - lf)))
    return _floored(p_f, floor)


def belief_update(b: RoleBelief, xi, state, pi_r_g, lib, cfg, geometry, floor: float = BELIEF_FLOOR, log_dists=None):
    """One Bayes step.  ``log_dists`` may carry precomputed role log-distributions at ``state``."""
    k = best_match(xi, lib)
    d = log_dists if log_dists is not None else role_log_distributions(state, pi_r_g, lib, cfg, geometry)
    return bayes_update_log(b, float(d[FOLLOWER][k]), float(d[LEADER][k]), floor)

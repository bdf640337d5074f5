"""Synthetic two-car interactions with ground-truth human roles.

Geometry: the robot drives along the x axis.  In the merge templates the
human approaches from the lower left along a ramp that joins the robot's
lane through a circular arc; the conflict point is the end of the arc.  The
human re-plans every ``replan`` seconds by drawing a controller from its role
model; the robot follows its own constant-acceleration plan and does not react.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .dynamics import wrap_angle
from .frenet import FrenetFrame, build_frame
from .game import (
    AccelController,
    ControllerLibrary,
    GameGeometry,
    GameState,
    ObservedControls,
    RoleBelief,
    advance,
    belief_update,
    follower_distribution,
    leader_distribution,
)
from .logio import InteractionLog

TEMPLATES = ("merge-yield", "merge-contest", "head-on", "car-follow")
GENERATORS = ("follower", "leader", "adversarial", "replay")

# merge-yield: the robot creeps toward the junction and a faster human should give way
_DEFAULTS = {
    "merge-yield": dict(v_r=1.5, v_h=8.0, d_r=8.0, offset=0.3, angle=35.0, radius=15.0, duration=12.0),
    "merge-contest": dict(v_r=8.0, v_h=8.0, d_r=45.0, offset=-0.3, angle=35.0, radius=15.0, duration=12.0),
    "head-on": dict(v_r=5.0, v_h=5.0, gap=40.0, lateral=4.0, duration=8.0),
    "car-follow": dict(v_r=6.0, v_h=9.0, gap=25.0, duration=10.0),
}
_COMMON = dict(replan=0.5, a_r=0.0, accel_noise=0.0, v_cap=11.0, beta=None)
_ROAD = 200.0  # half-length of the straight roads


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioTemplate:
    template: str
    role: str = "follower"
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ScenarioError(f"unknown template {self.template!r}; expected one of {TEMPLATES}")
        if self.role not in GENERATORS:
            raise ScenarioError(f"unknown human generator {self.role!r}; expected one of {GENERATORS}")
        unknown = set(self.params) - set(_DEFAULTS[self.template]) - set(_COMMON)
        if unknown:
            raise ScenarioError(f"unknown parameters for {self.template}: {sorted(unknown)}")

    def resolved(self) -> dict:
        return {**_COMMON, **_DEFAULTS[self.template], **self.params}

    def to_dict(self) -> dict:
        return {"template": self.template, "role": self.role, "seed": self.seed, "params": dict(self.params)}


def _line(a, b, step=1.0) -> np.ndarray:
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(1, int(math.ceil(np.hypot(*(b - a)) / step)))
    return a + np.linspace(0.0, 1.0, n + 1)[:, None] * (b - a)


def merge_path(angle_deg: float, radius: float, approach: float = 120.0) -> tuple[np.ndarray, float]:
    """Ramp joining the x axis; returns the polyline and the station of the junction."""
    th = math.radians(angle_deg)
    if not 0 < th < math.pi / 2:
        raise ScenarioError("merge angle must lie in (0, 90) degrees")
    u = np.array([math.cos(th), math.sin(th)])
    tl = radius * math.tan(th / 2)
    a = -tl * u
    centre = a + radius * np.array([math.sin(th), -math.cos(th)])
    n_arc = max(4, int(math.ceil(radius * th / 0.5)))
    ang = np.linspace(th + math.pi / 2, math.pi / 2, n_arc + 1)
    arc = centre + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    ramp = _line(-(approach + tl) * u, a)
    tail = _line(arc[-1], (_ROAD, 0.0))
    pts = np.vstack([ramp[:-1], arc, tail[1:]])
    frame = build_frame(pts)
    junction = float(frame.stations[len(ramp) - 1 + n_arc])
    return pts, junction


@dataclass
class _World:
    robot: FrenetFrame
    human: FrenetFrame
    s_r: float
    s_h: float
    p: dict

    @property
    def geometry(self) -> GameGeometry:
        return GameGeometry(self.human, self.robot)


def _adversarial_lead(v0: float, t: float, a: float, v_cap: float) -> float:
    """Distance covered accelerating at ``a`` from ``v0`` up to ``v_cap`` within ``t``."""
    t_acc = min(t, max(0.0, (v_cap - v0) / a)) if a > 0 else 0.0
    v1 = v0 + a * t_acc
    return v0 * t_acc + 0.5 * a * t_acc**2 + v1 * (t - t_acc)


def _world(tpl: ScenarioTemplate, cfg: RunConfig) -> _World:
    p = tpl.resolved()
    robot_path = np.array([[-_ROAD, 0.0], [_ROAD, 0.0]])
    if p["v_r"] < 0 or p["v_h"] < 0:
        raise ScenarioError("initial speeds must be nonnegative")
    if tpl.template.startswith("merge"):
        pts, junction = merge_path(p["angle"], p["radius"])
        human = build_frame(pts)
        x_junction = float(human.point_at(junction)[0])
        t_r = p["d_r"] / max(p["v_r"], 1e-9)
        if tpl.role == "adversarial":
            d_h = _adversarial_lead(p["v_h"], t_r, cfg.library.clamp[1], p["v_cap"])
        else:
            d_h = p["v_h"] * (t_r + p["offset"])
        s_h = junction - d_h
        if s_h < 0:
            raise ScenarioError("human start lies before the ramp; reduce d_r or speeds")
        return _World(build_frame(robot_path), human, x_junction - p["d_r"] + _ROAD, s_h, p)
    if tpl.template == "head-on":
        if p["gap"] <= 0:
            raise ScenarioError("gap must be positive")
        hp = np.array([[_ROAD, p["lateral"]], [-_ROAD, p["lateral"]]])
        return _World(build_frame(robot_path), build_frame(hp), _ROAD - p["gap"] / 2, _ROAD - p["gap"] / 2, p)
    if p["gap"] <= 0:
        raise ScenarioError("gap must be positive")
    return _World(build_frame(robot_path), build_frame(robot_path), _ROAD, _ROAD - p["gap"], p)


def _pose(frame: FrenetFrame, s: float) -> tuple[float, float, float]:
    return frame.pose_at(s)


def _choose(role, world, state, plan, lib, cfg, rng, beta):
    reward = cfg.game.reward if beta is None else type(cfg.game.reward)(cfg.game.reward.human, cfg.game.reward.robot, beta)
    if role == "follower":
        p = follower_distribution(state, plan, lib, reward, world.geometry)
    else:
        p = leader_distribution(state, lib, reward, world.geometry)
    return lib[int(rng.choice(len(lib), p=p))]


def synth_scenario(tpl: ScenarioTemplate, cfg: RunConfig, lib: ControllerLibrary | None = None) -> InteractionLog:
    lib = lib if lib is not None else cfg.build_library()
    world = _world(tpl, cfg)
    p = world.p
    rng = np.random.default_rng(tpl.seed)
    dt = cfg.sensor_period
    n = int(round(p["duration"] / dt)) + 1
    replan_every = max(1, int(round(p["replan"] / dt)))
    T, gdt = cfg.game.T, cfg.game.dt
    plan = AccelController(p["a_r"], 0.0, 0.0, T)
    a_lo, a_hi = cfg.library.clamp
    s_r, v_r = world.s_r, float(p["v_r"])
    s_h, v_h = world.s_h, float(p["v_h"])
    ctrl, t_plan = None, 0.0
    t = np.arange(n) * dt
    robot = np.empty((n, 4))
    human = np.empty((n, 4))
    u_r = np.zeros((n, 2))
    u_h = np.zeros((n, 2))
    preds = []
    taus = np.arange(int(round(T / gdt)) + 1) * gdt
    for i in range(n):
        if i % replan_every == 0 and tpl.role in ("follower", "leader"):
            state = GameState(s_h, v_h, s_r, v_r, t[i], gdt)
            ctrl, t_plan = _choose(tpl.role, world, state, plan, lib, cfg, rng, p["beta"]), t[i]
        if tpl.role in ("follower", "leader"):
            a_cmd = float(ctrl(t[i] - t_plan))
        elif tpl.role == "adversarial":
            a_cmd = min(a_hi, max(0.0, (p["v_cap"] - v_h) / dt))
        else:
            a_cmd = 0.0
        if p["accel_noise"] > 0:
            a_cmd += float(rng.normal(0.0, p["accel_noise"]))
        a_cmd = min(max(a_cmd, a_lo), a_hi)
        robot[i] = (*_pose(world.robot, s_r), v_r)
        human[i] = (*_pose(world.human, s_h), v_h)
        ps = s_h + v_h * taus
        pts = world.human.point_at(ps)
        hd = world.human.heading_at(ps)
        preds.append(np.column_stack([t[i] + taus, pts[:, 0], pts[:, 1], hd, np.full(len(taus), v_h)]))
        s_r2, v_r2 = advance(s_r, v_r, p["a_r"], dt)
        s_h2, v_h2 = advance(s_h, v_h, a_cmd, dt)
        u_r[i] = ((v_r2 - v_r) / dt, 0.0)
        yaw = wrap_angle(float(world.human.heading_at(s_h2)) - human[i, 2]) / dt
        u_h[i] = ((v_h2 - v_h) / dt, yaw)
        s_r, v_r, s_h, v_h = float(s_r2), float(v_r2), float(s_h2), float(v_h2)
    meta = {"template": tpl.to_dict(), "config_digest": cfg.digest()}
    return InteractionLog(
        t, robot, human, u_r, u_h, preds, world.robot.points, world.human.points,
        dt, cfg.verification_period, tpl.role, meta,
    )


_JITTER = {
    "merge-yield": dict(v_r=(1.0, 2.0), v_h=(7.0, 9.0), d_r=(6.0, 10.0), offset=(0.0, 0.6)),
    "merge-contest": dict(v_r=(7.0, 9.0), v_h=(7.0, 9.0), d_r=(40.0, 50.0), offset=(-0.6, 0.0)),
    "head-on": dict(v_r=(4.0, 6.0), v_h=(4.0, 6.0), gap=(35.0, 45.0), lateral=(3.5, 5.0)),
    "car-follow": dict(v_r=(5.0, 7.0), v_h=(8.0, 10.0), gap=(20.0, 30.0)),
}


def suite_templates(template: str, n: int, seed: int = 0, role: str = "follower", **fixed) -> list[ScenarioTemplate]:
    """``n`` templates with geometry drawn uniformly from per-template ranges."""
    if template not in TEMPLATES:
        raise ScenarioError(f"unknown template {template!r}")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        params = {key: round(float(rng.uniform(*rg)), 3) for key, rg in _JITTER[template].items()}
        params.update(fixed)
        out.append(ScenarioTemplate(template, role, seed * 1000 + k, params))
    return out


def role_trial(
    tpl: ScenarioTemplate,
    cfg: RunConfig,
    lib: ControllerLibrary,
    n_updates: int = 10,
    beta: float = 5.0,
) -> list[float]:
    """Belief in the follower role after each of ``n_updates`` windows.

    Each window the human draws a controller from its true role model at the
    window-start state; the observation is that controller sampled at the
    sensor rate over the window, and the state then advances by the window.
    """
    if tpl.role not in ("follower", "leader"):
        raise ScenarioError("role trials need a follower or leader generator")
    world = _world(tpl, cfg)
    rng = np.random.default_rng(tpl.seed)
    reward = type(cfg.game.reward)(cfg.game.reward.human, cfg.game.reward.robot, beta)
    W, dt = cfg.game.observation_window, cfg.sensor_period
    offsets = np.arange(int(round(W / dt))) * dt
    plan = AccelController(world.p["a_r"], 0.0, 0.0, cfg.game.T)
    s_h, v_h, s_r, v_r = world.s_h, float(world.p["v_h"]), world.s_r, float(world.p["v_r"])
    b = RoleBelief(*cfg.prior)
    trace = []
    for k in range(n_updates):
        state = GameState(s_h, v_h, s_r, v_r, k * W, cfg.game.dt)
        ctrl = _choose(tpl.role, world, state, plan, lib, cfg, rng, beta)
        xi = ObservedControls(offsets, ctrl(offsets), 0.0)
        b = belief_update(b, xi, state, plan, lib, reward, world.geometry, cfg.belief_floor)
        trace.append(b.b_f)
        for tau in offsets:
            s_h, v_h = advance(s_h, v_h, ctrl(tau), dt)
            s_r, v_r = advance(s_r, v_r, plan(tau), dt)
    return trace

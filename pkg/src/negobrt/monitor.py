"""Runtime safety monitor: replay an interaction, check tube membership, override on breach."""

from __future__ import annotations

import logging
import math
import time
from typing import Iterable, Sequence

import numpy as np

from .bank import Bank, BoundBucket, CompositeBRT, expected_probs, select_brt
from .config import RunConfig
from .dynamics import ControlBounds, RelativeState, RobotControl, VehicleParams, bicycle_step, extremal_hamiltonian, wrap_angle
from .frenet import PathError, PredictedTrajectory, build_frame, estimate_bounds, project_pose
from .game import (
    ControllerLibrary,
    GameGeometry,
    GameState,
    ObservedControls,
    RoleBelief,
    bayes_update_log,
    best_match,
    fit_controller,
    role_log_distributions,
)
from .grid import ValueFunction, gradient_at, interpolate
from .logio import InteractionLog, ModeResult, ReplayReport, SafetyDecision

log = logging.getLogger(__name__)

MODES = ("full", "prediction", "negotiation")
DANGEROUS_TTC = 2.0


def relative_state(robot, human) -> RelativeState:
    """Human pose expressed in the robot's body frame; rows are (x, y, psi, v)."""
    xr, yr, pr, vr = (float(v) for v in robot)
    xh, yh, ph, vh = (float(v) for v in human)
    dx, dy = xh - xr, yh - yr
    c, s = math.cos(pr), math.sin(pr)
    return RelativeState(c * dx + s * dy, -s * dx + c * dy, wrap_angle(ph - pr), vr, vh)


def lookup(vf: ValueFunction, state) -> tuple[float | None, bool]:
    """(value, out_of_domain).

    Relative positions beyond the grid's extent are outside every tube (the
    tube is supported on the grid), so they return ``(None, False)``.  Any
    other coordinate outside the grid (a speed) cannot be queried and returns
    ``(None, True)``.
    """
    g = vf.grid
    s = state.as_array() if isinstance(state, RelativeState) else np.asarray(state, dtype=float)
    for k in (0, 1):
        if not g.lower[k] <= s[k] <= g.upper[k]:
            return None, False
    for k in range(2, g.ndim):
        if not g.periodic[k] and not g.lower[k] - 1e-9 <= s[k] <= g.upper[k] + 1e-9:
            return None, True
    return interpolate(vf, s, "clamp"), False


def _vf(tube) -> ValueFunction:
    return tube.vf if isinstance(tube, CompositeBRT) else tube


def verify_step(robot, human, tube, t: float = 0.0, mode: str = "full") -> SafetyDecision:
    """Membership check of the current relative state; out-of-domain counts as breach."""
    value, ood = lookup(_vf(tube), relative_state(robot, human))
    breach = ood or (value is not None and value < 0.0)
    return SafetyDecision(float(t), mode, bool(breach), value, ood)


def safety_control(vf: ValueFunction, state, bounds: ControlBounds, params: VehicleParams) -> RobotControl:
    """Maximizing control of the Hamiltonian at the interpolated gradient."""
    s = state.as_array() if isinstance(state, RelativeState) else np.asarray(state, dtype=float)
    grad = gradient_at(vf, s, "clamp")
    if np.linalg.norm(grad) < 1e-9:
        return RobotControl(bounds.a_r[0], 0.0)
    return extremal_hamiltonian(s, grad, bounds, params)[1]


def _velocity(row) -> np.ndarray:
    return row[3] * np.array([math.cos(row[2]), math.sin(row[2])])


def ttc(p, v, radius: float) -> float:
    """Earliest t >= 0 with |p + v t| <= radius under constant relative velocity."""
    p, v = np.asarray(p, float), np.asarray(v, float)
    c = float(p @ p) - radius * radius
    if c <= 0:
        return 0.0
    a = float(v @ v)
    b = 2.0 * float(p @ v)
    if a == 0.0 or b >= 0.0:
        return math.inf
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        # grazing contact lost to rounding
        if disc > -1e-12 * b * b:
            disc = 0.0
        else:
            return math.inf
    return (-b - math.sqrt(disc)) / (2.0 * a)


def min_ttc_arrays(robot: np.ndarray, human: np.ndarray, radius: float) -> float:
    best = math.inf
    for r, h in zip(robot, human):
        best = min(best, ttc(h[:2] - r[:2], _velocity(h) - _velocity(r), radius))
    return best


def min_ttc(log_: InteractionLog, radius: float) -> float:
    return min_ttc_arrays(log_.robot, log_.human, radius)


def _breach_metrics(t, robot, human) -> dict:
    dv = _velocity(human) - _velocity(robot)
    return {
        "t": float(t),
        "rel_speed": float(np.hypot(*dv)),
        "rel_distance": float(math.hypot(human[0] - robot[0], human[1] - robot[1])),
    }


class GameView:
    """Per-record game states, robot plans and cached role distributions for one log."""

    def __init__(self, log_: InteractionLog, lib: ControllerLibrary, cfg: RunConfig):
        self.log = log_
        self.lib = lib
        self.cfg = cfg
        self.geometry = GameGeometry(build_frame(log_.human_path), build_frame(log_.robot_path))
        self._dists: dict[int, dict | None] = {}

    def state(self, i: int) -> GameState | None:
        corridor = self.cfg.game.corridor
        try:
            s_h = project_pose(self.geometry.human_path, self.log.human[i, :3], corridor)[0]
            s_r = project_pose(self.geometry.robot_path, self.log.robot[i, :3], corridor)[0]
        except PathError:
            return None
        return GameState(s_h, self.log.human[i, 3], s_r, self.log.robot[i, 3], float(self.log.t[i]), self.cfg.game.dt)

    def plan(self, i: int):
        """Robot plan at record ``i``: quadratic fit to its logged accelerations over the horizon."""
        t = self.log.t
        sel = (t >= t[i]) & (t < t[i] + self.cfg.game.T - 1e-9)
        return fit_controller(t[sel] - t[i], self.log.u_r[sel, 0], self.cfg.game.T)

    def log_dists(self, i: int):
        if i not in self._dists:
            st = self.state(i)
            self._dists[i] = None if st is None else role_log_distributions(
                st, self.plan(i), self.lib, self.cfg.game.reward, self.geometry
            )
        return self._dists[i]


def _verification_steps(t: np.ndarray, period: float) -> np.ndarray:
    """Record indices of verification instants: the first record at or after each multiple of ``period``."""
    flags = np.zeros(len(t), dtype=bool)
    nxt = t[0]
    for i, ti in enumerate(t):
        if ti >= nxt - 1e-9:
            flags[i] = True
            while nxt <= ti + 1e-9:
                nxt += period
    return flags


def run_replay(
    log_: InteractionLog,
    bank: Bank,
    lib: ControllerLibrary,
    cfg: RunConfig,
    modes: Sequence[str] = MODES,
    log_id: str = "",
    full_vf: ValueFunction | None = None,
) -> ReplayReport:
    """Replay ``log_`` once per mode.  ``full_vf`` overrides the bank's full-bound tube."""
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise ValueError(f"unknown modes {unknown}; expected a subset of {MODES}")
    report = ReplayReport(log_id, {}, min_ttc(log_, cfg.ttc_radius), cfg.digest(), log_.role)
    report.assumptions = cfg.assumptions()
    if not modes:
        return report
    view = GameView(log_, lib, cfg)
    verify = _verification_steps(log_.t, log_.verification_period)
    for mode in modes:
        start = time.perf_counter()
        report.modes[mode] = _replay_mode(mode, log_, bank, lib, cfg, view, verify, full_vf)
        report.timing[mode] = time.perf_counter() - start
    return report


def _replay_mode(mode, log_, bank, lib, cfg, view, verify, full_vf) -> ModeResult:
    res = ModeResult(mode)
    full = full_vf if full_vf is not None else bank.full
    n = len(log_)
    n_win = int(round(cfg.game.observation_window / log_.sensor_period))
    belief = RoleBelief(*cfg.prior)
    robot = log_.robot[0].copy()
    executed = np.empty_like(log_.robot)
    overridden = False
    vf = full
    for i in range(n):
        human = log_.human[i]
        t = float(log_.t[i])
        if not overridden:
            robot = log_.robot[i].copy()
        executed[i] = robot
        if mode == "negotiation" and i >= n_win:
            j = i - n_win
            dists = view.log_dists(j)
            if dists is not None:
                xi = ObservedControls(log_.t[j:i], log_.u_h[j:i, 0], float(log_.t[j]))
                k = best_match(xi, lib)
                belief = bayes_update_log(belief, float(dists["f"][k]), float(dists["l"][k]), cfg.belief_floor)
                res.belief_trace.append([t, belief.b_f])
        if verify[i]:
            vf = _mode_tube(mode, i, log_, bank, lib, cfg, view, belief, full, res)
            dec = verify_step(robot, human, vf, t, mode)
            if dec.breach and not overridden:
                overridden = True
                res.breached = True
                res.first_breach = _breach_metrics(t, robot, human)
        if overridden and i + 1 < n:
            rel = relative_state(robot, human)
            value, ood = lookup(vf, rel)
            if value is None:
                u = RobotControl(cfg.bounds.a_r[0], 0.0)
            else:
                u = safety_control(vf, rel, cfg.bounds, cfg.vehicle)
            if verify[i]:
                dec.override = (u.a_r, u.delta_f)
            pose, speed = bicycle_step(robot[:3], robot[3], u, cfg.vehicle, float(log_.t[i + 1] - t))
            robot = np.array([*pose, speed])
        if verify[i]:
            res.decisions.append(dec)
    res.min_ttc = min_ttc_arrays(executed, log_.human, cfg.ttc_radius)
    return res


def _mode_tube(mode, i, log_, bank, lib, cfg, view, belief, full, res) -> ValueFunction:
    t = float(log_.t[i])
    if mode == "full":
        return full
    if mode == "prediction":
        pred = log_.predictions[i]
        try:
            hb = estimate_bounds(PredictedTrajectory.from_samples(pred), view.geometry.human_path, cfg.error_model, cfg.game.corridor)
        except (PathError, ValueError):
            res.bucket_trace.append([t, ["full"], 1.0])
            return full
        want = BoundBucket.enclosing(*hb.a_h, bank.q)
        got, vf = bank.covering(want)
        res.bucket_trace.append([t, [got.key if got else "full"], 1.0])
        return vf if got is not None else full
    dists = view.log_dists(i)
    if dists is None:
        res.bucket_trace.append([t, ["full"], 1.0])
        return full
    probs = expected_probs(belief, np.exp(dists["f"]), np.exp(dists["l"]))
    comp = select_brt(bank, lib, probs, cfg.delta)
    res.bucket_trace.append([t, [b.key for b in comp.buckets], comp.P])
    return comp.vf


def compare_modes(reports: Iterable[ReplayReport], modes: Sequence[str] = MODES) -> dict:
    """Breach counts and breach-time metrics per mode over a suite of reports."""
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    table = {"n": len(reports), "modes": {}}
    for m in modes:
        hits = [r for r in reports if m in r.modes and r.modes[m].breached]
        ttcs = [r.min_ttc_log for r in hits if math.isfinite(r.min_ttc_log)]
        table["modes"][m] = {
            "breaches": len(hits),
            "mean_rel_speed": _mean([r.modes[m].first_breach["rel_speed"] for r in hits]),
            "mean_rel_distance": _mean([r.modes[m].first_breach["rel_distance"] for r in hits]),
            "mean_min_ttc": _mean(ttcs),
            "dangerous": sum(r.min_ttc_log < DANGEROUS_TTC for r in hits),
        }
    counts = [table["modes"][m]["breaches"] for m in MODES if m in table["modes"]]
    table["ordering_holds"] = all(a >= b for a, b in zip(counts, counts[1:])) if len(counts) == 3 else None
    if "full" in table["modes"] and "negotiation" in table["modes"]:
        table["full_exceeds_negotiation"] = table["modes"]["full"]["breaches"] > table["modes"]["negotiation"]["breaches"]
    return table


def _mean(xs) -> float | None:
    return float(np.mean(xs)) if xs else None

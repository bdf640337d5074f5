"""Relative robot/human dynamics and their extremal Hamiltonian.

State ``s = (x_rel, y_rel, psi_rel, v_r, v_h)``: the human car's position in
the robot's body frame (x along the robot heading), relative heading and the
two speeds.  The robot is a kinematic bicycle (acceleration, front steering);
the human is an extended unicycle (acceleration, yaw rate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class VehicleParams:
    l_f: float = 1.5
    l_r: float = 1.5

    def __post_init__(self):
        if not (self.l_f > 0 and self.l_r > 0):
            raise ValueError("axle lengths must be positive")


@dataclass(frozen=True)
class RelativeState:
    x_rel: float
    y_rel: float
    psi_rel: float
    v_r: float
    v_h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_rel, self.y_rel, self.psi_rel, self.v_r, self.v_h])

    @classmethod
    def from_array(cls, s) -> "RelativeState":
        return cls(*(float(v) for v in s))


@dataclass(frozen=True)
class RobotControl:
    a_r: float
    delta_f: float


@dataclass(frozen=True)
class HumanControl:
    a_h: float
    omega_h: float


def _interval(pair, name):
    lo, hi = (float(v) for v in pair)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ValueError(f"{name} interval {pair} must be finite with min <= max")
    return lo, hi


@dataclass(frozen=True)
class ControlBounds:
    """Robot control set U and human disturbance set D = D_a x D_omega."""

    a_r: tuple[float, float] = (-6.0, 3.0)
    delta_f: tuple[float, float] = (-0.5, 0.5)
    a_h: tuple[float, float] = (-6.0, 4.0)
    omega_h: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        for name in ("a_r", "delta_f", "a_h", "omega_h"):
            object.__setattr__(self, name, _interval(getattr(self, name), name))
        if max(abs(self.delta_f[0]), abs(self.delta_f[1])) >= math.pi / 2:
            raise ValueError("steering bound must stay inside (-pi/2, pi/2)")

    def with_human(self, a_h=None, omega_h=None) -> "ControlBounds":
        return ControlBounds(
            self.a_r,
            self.delta_f,
            self.a_h if a_h is None else a_h,
            self.omega_h if omega_h is None else omega_h,
        )

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("a_r", "delta_f", "a_h", "omega_h")}

    @classmethod
    def from_dict(cls, data: dict) -> "ControlBounds":
        return cls(**{k: tuple(v) for k, v in data.items()})


def slip_angle(delta_f, params: VehicleParams):
    """Rear-axle slip angle beta_r = atan(l_r / (l_r + l_f) * tan(delta_f))."""
    d = np.asarray(delta_f, dtype=float)
    if np.any(np.abs(d) >= math.pi / 2):
        raise ValueError("|delta_f| must be below pi/2")
    beta = np.arctan(params.l_r / (params.l_r + params.l_f) * np.tan(d))
    return float(beta) if beta.ndim == 0 else beta


def steering_from_slip(beta, params: VehicleParams):
    return np.arctan(np.tan(beta) * (params.l_r + params.l_f) / params.l_r)


def relative_dynamics(state, u_r: RobotControl, u_h: HumanControl, params: VehicleParams) -> np.ndarray:
    x, y, psi, vr, vh = np.asarray(
        state.as_array() if isinstance(state, RelativeState) else state, dtype=float
    )
    beta = slip_angle(u_r.delta_f, params)
    sb, cb = math.sin(beta), math.cos(beta)
    yaw_r = vr / params.l_r * sb
    return np.array(
        [
            yaw_r * y + vh * math.cos(psi) - vr * cb,
            -yaw_r * x + vh * math.sin(psi) - vr * sb,
            u_h.omega_h - yaw_r,
            u_r.a_r,
            u_h.a_h,
        ]
    )


def _bang(coef, lo, hi, maximize: bool):
    """Endpoint optimizer of ``coef * u`` over [lo, hi]; zero coefficient -> midpoint."""
    pos = hi if maximize else lo
    neg = lo if maximize else hi
    return np.where(coef > 0, pos, np.where(coef < 0, neg, 0.5 * (lo + hi)))


def _best_slip(cc, cs, beta_lo, beta_hi):
    """Maximize cc*cos(b) + cs*sin(b) over b in [beta_lo, beta_hi].

    Candidates are both endpoints and the stationary angle atan2(cs, cc)
    when it lies inside the interval.  Returns (beta*, max value).
    """
    phi = np.arctan2(cs, cc)
    inside = (phi >= beta_lo) & (phi <= beta_hi)
    v_phi = np.where(inside, np.hypot(cc, cs), -np.inf)
    v_lo = cc * math.cos(beta_lo) + cs * math.sin(beta_lo)
    v_hi = cc * math.cos(beta_hi) + cs * math.sin(beta_hi)
    best = np.where(v_phi >= np.maximum(v_lo, v_hi), phi, np.where(v_lo >= v_hi, beta_lo, beta_hi))
    return best, np.maximum(v_phi, np.maximum(v_lo, v_hi))


def hamiltonian_terms(coords, p, bounds: ControlBounds, params: VehicleParams):
    """Vectorized min_d max_u p . f and its optimizers.

    ``coords`` and ``p`` are sequences of five broadcastable arrays.
    Returns ``(H, a_r, delta_f, a_h, omega_h)``.
    """
    x, y, psi, vr, vh = coords
    p1, p2, p3, p4, p5 = p
    beta_lo = slip_angle(bounds.delta_f[0], params)
    beta_hi = slip_angle(bounds.delta_f[1], params)
    # p . f = C_c cos(beta) + C_s sin(beta) + terms free of beta
    cc = -p1 * vr
    cs = vr * (p1 * y - p2 * x - p3) / params.l_r - p2 * vr
    beta, steer_val = _best_slip(cc, cs, beta_lo, beta_hi)
    a_r = _bang(p4, *bounds.a_r, maximize=True)
    a_h = _bang(p5, *bounds.a_h, maximize=False)
    om = _bang(p3, *bounds.omega_h, maximize=False)
    ham = p1 * vh * np.cos(psi) + p2 * vh * np.sin(psi) + p4 * a_r + p5 * a_h + p3 * om + steer_val
    return ham, a_r, steering_from_slip(beta, params), a_h, om


def extremal_hamiltonian(state, costate, bounds: ControlBounds, params: VehicleParams):
    """Closed-form ``min_d max_u costate . f(s, u, d)`` at a single state."""
    s = state.as_array() if isinstance(state, RelativeState) else np.asarray(state, dtype=float)
    p = np.asarray(costate, dtype=float)
    ham, a_r, delta, a_h, om = hamiltonian_terms(tuple(s), tuple(p), bounds, params)
    return float(ham), RobotControl(float(a_r), float(delta)), HumanControl(float(a_h), float(om))


def _absmax(pair) -> float:
    return max(abs(pair[0]), abs(pair[1]))


@dataclass
class RelativeDynamics:
    """Solver adapter for the five-dimensional relative system."""

    params: VehicleParams = field(default_factory=VehicleParams)
    bounds: ControlBounds = field(default_factory=ControlBounds)
    ndim: int = 5

    def hamiltonian(self, coords, p):
        return hamiltonian_terms(coords, p, self.bounds, self.params)[0]

    def dissipation(self, coords, bounds: ControlBounds | None = None) -> list:
        """Per-node bound on |f_i| over the admissible control and disturbance sets."""
        b = bounds or self.bounds
        x, y, _, vr, vh = coords
        sb = max(abs(math.sin(slip_angle(d, self.params))) for d in b.delta_f)
        vr, vh = np.abs(vr), np.abs(vh)
        yaw = vr / self.params.l_r * sb
        return [
            yaw * np.abs(y) + vh + vr,
            yaw * np.abs(x) + vh + vr * sb,
            _absmax(b.omega_h) + yaw,
            np.full_like(vr, _absmax(b.a_r)),
            np.full_like(vh, _absmax(b.a_h)),
        ]

    steering_samples: int = 5

    def optimal_control(self, state, costate) -> RobotControl:
        return extremal_hamiltonian(state, costate, self.bounds, self.params)[1]

    def control_samples(self) -> list[tuple[float, float]]:
        """Bang-bang acceleration times evenly spaced steering angles (0 included when admissible)."""
        lo, hi = self.bounds.delta_f
        steer = set(np.linspace(lo, hi, self.steering_samples).tolist())
        if lo <= 0.0 <= hi:
            steer.add(0.0)
        return [(a, d) for a in sorted(set(self.bounds.a_r)) for d in sorted(steer)]

    def drift(self, coords, u) -> list:
        """Dynamics with the disturbance set to zero."""
        x, y, psi, vr, vh = coords
        a_r, delta = u
        beta = slip_angle(delta, self.params)
        sb, cb = math.sin(beta), math.cos(beta)
        yaw = vr / self.params.l_r * sb
        return [
            yaw * y + vh * np.cos(psi) - vr * cb,
            -yaw * x + vh * np.sin(psi) - vr * sb,
            -yaw,
            np.full_like(vr, a_r),
            np.zeros_like(vh),
        ]

    def disturbance_box(self) -> list[tuple[int, float, float]]:
        """Additive disturbance channels: yaw rate on psi_rel, acceleration on v_h."""
        return [(2, *self.bounds.omega_h), (4, *self.bounds.a_h)]

    def disturbance_samples(self, a_step: float) -> list[tuple[float, float]]:
        """(omega_h, a_h) pairs: yaw-rate endpoints and zero, accelerations on a fixed lattice.

        Accelerations are the bound endpoints plus every multiple of
        ``a_step`` strictly inside, so nested lattice-aligned bounds get nested
        sample sets.  Extremes come first, which helps the solver prune.
        """
        lo, hi = self.bounds.a_h
        inner = np.arange(math.floor(lo / a_step) + 1, math.ceil(hi / a_step)) * a_step
        acc = sorted({lo, hi, *(float(a) for a in inner if lo < a < hi)}, key=lambda a: (-abs(a - 0.5 * (lo + hi)), -a))
        w_lo, w_hi = self.bounds.omega_h
        om = [0.0] if w_lo <= 0.0 <= w_hi else []
        om += [w for w in (w_lo, w_hi) if w not in om]
        return [(w, a) for a in acc for w in om]

    def flow_tables(self, grid, dt: float, n_sub: int, a_step: float) -> dict:
        """Exact one-step motion of both cars, tabulated on the grid's speed and heading nodes."""
        t = dt * np.arange(1, n_sub + 1) / n_sub
        v_r = grid.axes[3]
        controls = self.control_samples()
        r_px = np.empty((len(v_r), len(controls), n_sub))
        r_py = np.empty_like(r_px)
        r_theta = np.empty((len(v_r), len(controls)))
        r_v = np.empty_like(r_theta)
        for j, (a, delta) in enumerate(controls):
            beta = slip_angle(delta, self.params)
            kappa = math.sin(beta) / self.params.l_r
            dist = travelled(v_r[:, None], a, t[None, :])
            if kappa == 0.0:
                r_px[:, j] = dist * math.cos(beta)
                r_py[:, j] = dist * math.sin(beta)
            else:
                r_px[:, j] = (np.sin(kappa * dist + beta) - math.sin(beta)) / kappa
                r_py[:, j] = (math.cos(beta) - np.cos(kappa * dist + beta)) / kappa
            r_theta[:, j] = kappa * dist[:, -1]
            r_v[:, j] = np.maximum(v_r + a * dt, 0.0)
        psi, v_h = grid.axes[2], grid.axes[4]
        dist_samples = self.disturbance_samples(a_step)
        h_px = np.empty((len(psi), len(v_h), len(dist_samples), n_sub))
        h_py = np.empty_like(h_px)
        h_v = np.empty((len(v_h), len(dist_samples)))
        h_dpsi = np.empty(len(dist_samples))
        for j, (om, a) in enumerate(dist_samples):
            dx, dy = unicycle_displacement(psi[:, None, None], v_h[None, :, None], a, om, t[None, None, :])
            h_px[:, :, j] = dx
            h_py[:, :, j] = dy
            h_v[:, j] = np.maximum(v_h + a * dt, 0.0)
            h_dpsi[j] = om * dt
        return dict(r_theta=r_theta, r_px=r_px, r_py=r_py, r_v=r_v, h_px=h_px, h_py=h_py, h_v=h_v, h_dpsi=h_dpsi)


@dataclass
class DoubleIntegrator:
    """x' = v, v' = u with |u| <= u_max; the controller maximizes (avoids)."""

    u_max: float = 1.0
    ndim: int = 2

    def hamiltonian(self, coords, p):
        _, v = coords
        return p[0] * v + self.u_max * np.abs(p[1])

    def dissipation(self, coords, bounds=None) -> list:
        _, v = coords
        return [np.abs(v), self.u_max]

    def control_samples(self):
        return [-self.u_max, 0.0, self.u_max]

    def drift(self, coords, u):
        _, v = coords
        return [v, np.full_like(v, u)]

    def disturbance_box(self):
        return []

    def flow(self, coords, u, d, t):
        """Exact state after ``t`` under constant control ``u``."""
        x, v = coords
        return [x + v * t + 0.5 * u * t * t, v + u * t]


@dataclass
class ZeroDynamics:
    ndim: int

    def hamiltonian(self, coords, p):
        return np.zeros(np.broadcast_shapes(*(np.shape(c) for c in coords), *(np.shape(q) for q in p)))

    def dissipation(self, coords, bounds=None) -> list:
        return [0.0] * self.ndim

    def control_samples(self):
        return [None]

    def drift(self, coords, u):
        return [np.zeros_like(c) for c in coords]

    def disturbance_box(self):
        return []

    def flow(self, coords, u, d, t):
        return [np.asarray(c, dtype=float) for c in coords]


def bicycle_step(pose, speed: float, u: RobotControl, params: VehicleParams, dt: float):
    """Advance a kinematic bicycle (x, y, psi) and speed by ``dt`` (explicit Euler)."""
    x, y, psi = pose
    beta = slip_angle(u.delta_f, params)
    x += speed * math.cos(psi + beta) * dt
    y += speed * math.sin(psi + beta) * dt
    psi += speed / params.l_r * math.sin(beta) * dt
    speed = max(0.0, speed + u.a_r * dt)
    return (x, y, wrap_angle(psi)), speed


def travelled(v0, a: float, t):
    """Path length after ``t`` at constant acceleration, stopping (not reversing) at zero speed."""
    v0 = np.asarray(v0, dtype=float)
    t = np.asarray(t, dtype=float)
    if a >= 0.0:
        return v0 * t + 0.5 * a * t * t
    t_stop = v0 / -a
    tt = np.minimum(t, t_stop)
    return v0 * tt + 0.5 * a * tt * tt


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def unicycle_displacement(psi0, v0, a: float, omega: float, t):
    """Displacement of a unicycle with constant yaw rate and acceleration (speed floored at zero).

    Gauss-Legendre quadrature of ``v(s) (cos, sin)(psi0 + omega s)`` over the
    moving part of ``[0, t]``; the integrand is a polynomial times a slowly
    varying sinusoid, so 16 nodes are exact to rounding at these step sizes.
    """
    psi0, v0, t = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (psi0, v0, t)))
    end = t if a >= 0.0 else np.minimum(t, v0 / -a)
    s = 0.5 * end[..., None] * (_GL_X + 1.0)
    speed = v0[..., None] + a * s
    ang = psi0[..., None] + omega * s
    half = 0.5 * end
    return (
        half * np.sum(_GL_W * speed * np.cos(ang), axis=-1),
        half * np.sum(_GL_W * speed * np.sin(ang), axis=-1),
    )


def wrap_angle(a):
    """Wrap angles to [-pi, pi)."""
    return (a + math.pi) % (2 * math.pi) - math.pi

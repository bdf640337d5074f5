"""Explicit level-set solver for backward-reachable tubes.

The value function is propagated backward from ``V(s, 0) = l(s)`` and
frozen below the terminal cost each step (``V <- min(V, l)``), so that
``{V(., tau) < 0}`` is the set of states from which the disturbance can force
the system into ``{l <= 0}`` within ``|tau|`` seconds.

Three schemes share the driver:

* ``characteristic`` (default): the dynamic-programming backup
  ``V(s) <- min(l(s), max_u min_d min(c(s, u, d), I[V](phi_dt(s, u, d))))``
  where ``phi_dt`` is the exact flow with inputs held for one step, ``c`` the
  smallest terminal cost met along it and ``I`` multilinear interpolation.
  Controls and disturbances are sampled; disturbance accelerations lie on a
  fixed lattice so nested bounds give nested tubes.  Few long steps keep the
  interpolation smearing, which erodes the tube, small.
* ``semi-lagrangian``: the same backup with an Euler foot point,
  ``I[V](s + dt f(s, u, d))``.  The disturbance enters additively on single
  coordinates, so its minimum over the box is computed exactly.
* ``lax-friedrichs``: first-order local Lax-Friedrichs finite differences
  under a CFL-limited step, optionally with two-stage TVD time stepping.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import _characteristic, _semilag
from .grid import Grid, ValueFunction, interpolate

log = logging.getLogger(__name__)

# axis-0 slab width; bounds the size of per-step temporaries on large grids
_CHUNK_NODES = 1 << 20


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class TargetSpec:
    """Collision disc of radius ``r_coll`` in the first two (position) dims."""

    r_coll: float = 3.0

    def __post_init__(self):
        if not self.r_coll > 0:
            raise ValueError("collision radius must be positive")


SCHEMES = ("characteristic", "semi-lagrangian", "lax-friedrichs")


@dataclass(frozen=True)
class NumericsConfig:
    cfl_number: float = 0.9
    time_order: int = 1
    scheme: str = "characteristic"
    tau: float = -3.0
    checkpoint_stride: int = 0
    max_step: float = 0.5
    substep: float = 0.05
    disturbance_step: float = 0.5

    def __post_init__(self):
        if not 0 < self.cfl_number <= 1:
            raise ValueError("cfl number must lie in (0, 1]")
        if self.time_order not in (1, 2):
            raise ValueError("time_order must be 1 or 2")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unsupported scheme {self.scheme!r}")
        if self.tau > 0:
            raise ValueError("horizon tau must be nonpositive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if not (self.substep > 0 and self.disturbance_step > 0):
            raise ValueError("substep and disturbance_step must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def initial_level_set(grid: Grid, target: TargetSpec) -> ValueFunction:
    x, y = grid.broadcast_axes()[:2]
    l = np.sqrt(x**2 + y**2) - target.r_coll
    return ValueFunction(grid, np.broadcast_to(l, grid.shape).copy(), 0.0, {"r_coll": target.r_coll})


def membership(vf: ValueFunction, state, policy: str = "error") -> bool:
    return interpolate(vf, state, policy) < 0.0


class _Stepper:
    def __init__(self, grid: Grid, dynamics, terminal: np.ndarray, bounds=None):
        self.grid = grid
        self.dynamics = dynamics
        self.terminal = terminal
        self.coords = grid.broadcast_axes()
        n0 = grid.shape[0]
        per_slab = max(1, grid.size // n0)
        self.chunk = max(1, min(n0, _CHUNK_NODES // per_slab))
        self.alpha = {}
        rate = 0.0
        for a in range(0, n0, self.chunk):
            b = min(n0, a + self.chunk)
            coords = [self.coords[0][a:b]] + self.coords[1:]
            alpha = [np.asarray(x, dtype=float) for x in dynamics.dissipation(coords, bounds)]
            if any(np.any(x < 0) for x in alpha):
                raise ValueError("dissipation coefficients must be nonnegative")
            self.alpha[a] = alpha
            total = sum(x / h for x, h in zip(alpha, grid.spacing))
            rate = max(rate, float(np.max(total)))
        self.rate_bound = rate

    def rate(self, v: np.ndarray) -> np.ndarray:
        """dV/d(-t) = H(s, p_avg) + sum_i alpha_i (D+ - D-)/2 on every node."""
        g = self.grid
        n0 = g.shape[0]
        out = np.empty_like(v)
        for a in range(0, n0, self.chunk):
            b = min(n0, a + self.chunk)
            idx = np.arange(a - 1, b + 1)
            idx = np.mod(idx, n0) if g.periodic[0] else np.clip(idx, 0, n0 - 1)
            slab = v[idx]
            d = np.diff(slab, axis=0) / g.spacing[0]
            bwd, fwd = d[:-1].copy(), d[1:].copy()
            if not g.periodic[0]:
                if a == 0:
                    bwd[0] = fwd[0]
                if b == n0:
                    fwd[-1] = bwd[-1]
            core = slab[1:-1]
            alpha = self.alpha[a]
            p = [0.5 * (bwd + fwd)]
            diss = alpha[0] * 0.5 * (fwd - bwd)
            del d, bwd, fwd
            for k in range(1, g.ndim):
                bk, fk = _diffs(core, g, k)
                p.append(0.5 * (bk + fk))
                diss = diss + alpha[k] * 0.5 * (fk - bk)
                del bk, fk
            coords = [self.coords[0][a:b]] + self.coords[1:]
            out[a:b] = self.dynamics.hamiltonian(coords, p) + diss
        return out

    def euler(self, v: np.ndarray, dt: float) -> np.ndarray:
        return np.minimum(v + dt * self.rate(v), self.terminal)

    def step(self, v: np.ndarray, dt: float, order: int) -> np.ndarray:
        if order == 1:
            return self.euler(v, dt)
        v1 = self.euler(v, dt)
        v2 = self.euler(v1, dt)
        return np.minimum(0.5 * (v + v2), self.terminal)


class _SemiLagrangian:
    def __init__(self, grid: Grid, dynamics, terminal: np.ndarray):
        self.grid = grid
        self.dynamics = dynamics
        self.terminal = terminal.ravel()
        self.samples = list(dynamics.control_samples())
        box = list(dynamics.disturbance_box())
        self.ddims = np.array([b[0] for b in box], dtype=np.int64)
        self.dlo = np.array([b[1] for b in box], dtype=float)
        self.dhi = np.array([b[2] for b in box], dtype=float)
        self.shape = np.array(grid.shape, dtype=np.int64)
        self.chunk = _CHUNK_NODES

    def check_step(self, dt: float) -> None:
        for k, lo, hi in zip(self.ddims, self.dlo, self.dhi):
            if (hi - lo) * dt / self.grid.spacing[k] + 2 > _semilag.MAX_SPAN:
                raise ValueError("disturbance shift spans too many cells; reduce max_step")

    def coords(self, a: int, b: int) -> list[np.ndarray]:
        g = self.grid
        flat = np.arange(a, b, dtype=np.int64)
        return [g.lower[k] + ((flat // g.strides[k]) % g.shape[k]) * g.spacing[k] for k in range(g.ndim)]

    def step(self, v: np.ndarray, dt: float, order: int) -> np.ndarray:
        g = self.grid
        flat = np.ascontiguousarray(v.ravel())
        out = np.empty(g.size)
        dlo, dhi = self.dlo * dt, self.dhi * dt
        for a in range(0, g.size, self.chunk):
            b = min(g.size, a + self.chunk)
            coords = self.coords(a, b)
            best = np.full(b - a, -np.inf)
            buf = np.empty(b - a)
            for u in self.samples:
                rate = self.dynamics.drift(coords, u)
                foot = np.empty((g.ndim, b - a))
                for k in range(g.ndim):
                    foot[k] = coords[k] + dt * rate[k]
                _semilag.box_min_interp(
                    flat, self.shape, g.strides, g.lower, g.spacing, g.periodic,
                    foot, self.ddims, dlo, dhi, buf,
                )
                np.maximum(best, buf, out=best)
            out[a:b] = np.minimum(best, self.terminal[a:b])
        return out.reshape(g.shape)


class _Characteristic:
    """Backup along exact one-step trajectories (see module docstring)."""

    def __init__(self, grid: Grid, dynamics, terminal: np.ndarray, numerics: NumericsConfig, r_coll: float | None):
        self.grid = grid
        self.dynamics = dynamics
        self.terminal = np.ascontiguousarray(terminal.ravel())
        self.numerics = numerics
        self.r_coll = r_coll
        self.tabulated = hasattr(dynamics, "flow_tables")
        if self.tabulated and grid.ndim != 5:
            raise ValueError("tabulated characteristic backup needs the five-dimensional relative grid")
        self._tables = {}
        self._args = (
            np.array(grid.shape, dtype=np.int64), np.array(grid.strides, dtype=np.int64),
            np.array(grid.lower, dtype=float), np.array(grid.spacing, dtype=float),
            np.array(grid.periodic, dtype=np.bool_),
        )
        self.first_u = np.zeros(grid.size, dtype=np.int64)

    def n_sub(self, dt: float) -> int:
        return max(1, math.ceil(dt / self.numerics.substep - 1e-9))

    def tables(self, dt: float) -> dict:
        key = round(dt, 12)
        if key not in self._tables:
            self._tables[key] = self.dynamics.flow_tables(self.grid, dt, self.n_sub(dt), self.numerics.disturbance_step)
        return self._tables[key]

    def step(self, v: np.ndarray, dt: float, order: int) -> np.ndarray:
        flat = np.ascontiguousarray(v.ravel())
        out = np.empty(self.grid.size)
        if self.tabulated:
            tb = self.tables(dt)
            _characteristic.pair_backup(
                flat, self.terminal, *self._args,
                tb["r_theta"], tb["r_px"], tb["r_py"], tb["r_v"],
                tb["h_px"], tb["h_py"], tb["h_v"], tb["h_dpsi"],
                -1.0 if self.r_coll is None else float(self.r_coll), self.first_u, out,
            )
        else:
            out = self._generic(flat, dt)
        return out.reshape(self.grid.shape)

    def _interp(self, values: np.ndarray, pts: list) -> np.ndarray:
        buf = np.empty(pts[0].size)
        _characteristic.interp_points(values, *self._args, np.ascontiguousarray(np.stack(pts)), buf)
        return buf

    def _generic(self, flat: np.ndarray, dt: float) -> np.ndarray:
        """Vectorized backup for small systems exposing ``flow(coords, u, d, t)``."""
        g = self.grid
        coords = [np.ravel(c) for c in np.meshgrid(*g.axes, indexing="ij")]
        n = self.n_sub(dt)
        disturbances = getattr(self.dynamics, "disturbance_samples", lambda step: [None])(self.numerics.disturbance_step)
        best = np.full(g.size, -np.inf)
        for u in self.dynamics.control_samples():
            worst = np.full(g.size, np.inf)
            for d in disturbances:
                for k in range(1, n + 1):
                    pts = self.dynamics.flow(coords, u, d, dt * k / n)
                    np.minimum(worst, self._interp(self.terminal, pts), out=worst)
                np.minimum(worst, self._interp(flat, pts), out=worst)
            np.maximum(best, worst, out=best)
        return np.minimum(best, self.terminal)


def _uniform_step(labels: Sequence[float], tau: float, dt_max: float) -> tuple[float, int]:
    """Largest step no longer than ``dt_max`` that divides the horizon and lands on every label."""
    span = -tau
    if span == 0:
        return 0.0, 0
    n0 = max(1, math.ceil(span / dt_max - 1e-12))
    for n in range(n0, 64 * n0 + 1):
        dt = span / n
        if all(abs(t / dt - round(t / dt)) < 1e-7 for t in labels):
            return dt, n
    raise ValueError("snapshot times are not commensurate with the horizon; choose multiples of a common step")


def _diffs(v, grid: Grid, k: int):
    h = grid.spacing[k]
    if grid.periodic[k]:
        return (v - np.roll(v, 1, axis=k)) / h, (np.roll(v, -1, axis=k) - v) / h
    d = np.diff(v, axis=k) / h
    bwd = np.concatenate([np.take(d, [0], axis=k), d], axis=k)
    fwd = np.concatenate([d, np.take(d, [-1], axis=k)], axis=k)
    return bwd, fwd


def solve_brt_snapshots(
    grid: Grid,
    dynamics,
    target,
    numerics: NumericsConfig,
    times: Sequence[float] = (),
    dissipation_bounds=None,
) -> list[ValueFunction]:
    """Solve to ``numerics.tau``, returning value functions at each requested time.

    ``times`` are nonpositive labels within ``[tau, 0]``; the final horizon is
    always included.  The dynamic-programming schemes use one step size that
    divides every label; Lax-Friedrichs splits each segment between labels
    into equal steps no longer than the CFL limit.  Snapshots land exactly.
    ``dissipation_bounds`` (Lax-Friedrichs only) replaces the dynamics' own
    control/disturbance sets when sizing the dissipation and the time step; a
    family of solves sharing it has identical numerics, which keeps their
    tubes nested.
    """
    if isinstance(target, TargetSpec):
        terminal = initial_level_set(grid, target).values
    elif isinstance(target, ValueFunction):
        terminal = target.values
    else:
        terminal = np.asarray(target, dtype=float).reshape(grid.shape)
    terminal = np.array(terminal, dtype=float)
    labels = sorted({float(t) for t in times} | {numerics.tau}, reverse=True)
    if any(t > 0 or t < numerics.tau for t in labels):
        raise ValueError(f"snapshot times must lie in [{numerics.tau}, 0]")
    uniform = numerics.scheme != "lax-friedrichs"
    if numerics.scheme == "characteristic":
        stepper = _Characteristic(grid, dynamics, terminal, numerics, target.r_coll if isinstance(target, TargetSpec) else None)
    elif numerics.scheme == "semi-lagrangian":
        stepper = _SemiLagrangian(grid, dynamics, terminal)
    else:
        stepper = _Stepper(grid, dynamics, terminal, dissipation_bounds)
    if uniform:
        # one step size for the whole solve keeps the backup operator fixed, so V only decreases with horizon
        dt_max, _ = _uniform_step(labels, numerics.tau, numerics.max_step)
        rate_bound = None
        if isinstance(stepper, _SemiLagrangian) and dt_max > 0:
            stepper.check_step(dt_max)
    else:
        rate_bound = stepper.rate_bound
        dt_max = math.inf if rate_bound == 0 else numerics.cfl_number / rate_bound
    start = time.perf_counter()
    v = terminal.copy()
    t_now, step_index = 0.0, 0
    snaps = []
    for label in labels:
        span = t_now - label
        if span <= 0:
            n = 0
        elif uniform:
            n = max(1, round(span / dt_max))
        else:
            n = max(1, math.ceil(span / dt_max - 1e-12))
        for _ in range(n):
            v = stepper.step(v, span / n, numerics.time_order)
            step_index += 1
            if not np.all(np.isfinite(v)):
                bad = np.unravel_index(np.flatnonzero(~np.isfinite(v))[0], grid.shape)
                raise SolverError(f"non-finite value at step {step_index}, node {tuple(int(i) for i in bad)}")
            if numerics.checkpoint_stride and step_index % numerics.checkpoint_stride == 0:
                log.debug("step %d, t=%.4f, min V=%.4f", step_index, t_now - span, float(v.min()))
        t_now = label
        meta = {
            "numerics": numerics.to_dict(),
            "rate_bound": rate_bound,
            "steps": step_index,
            "dt_max": dt_max if math.isfinite(dt_max) else None,
            "wall_time": time.perf_counter() - start,
        }
        snaps.append(ValueFunction(grid, v.copy(), label if label != 0 else 0.0, meta))
    return snaps


def solve_brt(grid: Grid, dynamics, target, numerics: NumericsConfig, dissipation_bounds=None) -> ValueFunction:
    return solve_brt_snapshots(grid, dynamics, target, numerics, (), dissipation_bounds)[-1]

"""Frenet frame along a predicted path and first-layer human control bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import wrap_angle


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class FrenetFrame:
    points: np.ndarray  # (n, 2)
    stations: np.ndarray  # cumulative arc length
    tangents: np.ndarray  # (n, 2) unit
    curvature: np.ndarray  # signed, 1/m

    @property
    def length(self) -> float:
        return float(self.stations[-1])

    def heading_at(self, s) -> np.ndarray:
        """Heading of the segment containing station ``s``."""
        seg = self._segment(s)
        d = self.points[seg + 1] - self.points[seg]
        return np.arctan2(d[..., 1], d[..., 0])

    def curvature_at(self, s):
        return np.interp(s, self.stations, self.curvature)

    def _segment(self, s):
        seg = np.searchsorted(self.stations, s, side="right") - 1
        return np.clip(seg, 0, len(self.stations) - 2)

    def point_at(self, s) -> np.ndarray:
        """Cartesian point at station ``s``; linear extrapolation past either end."""
        s = np.asarray(s, dtype=float)
        seg = self._segment(s)
        p0 = self.points[seg]
        d = self.points[seg + 1] - p0
        seg_len = self.stations[seg + 1] - self.stations[seg]
        t = (s - self.stations[seg]) / seg_len
        return p0 + t[..., None] * d

    def pose_at(self, s: float, d: float = 0.0) -> tuple[float, float, float]:
        p = self.point_at(s)
        psi = float(self.heading_at(s))
        return float(p[0] - d * math.sin(psi)), float(p[1] + d * math.cos(psi)), psi


def build_frame(path) -> FrenetFrame:
    pts = np.asarray(path, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise PathError("path needs at least two 2D points")
    if not np.all(np.isfinite(pts)):
        raise PathError("path has non-finite coordinates")
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(seg_len <= 1e-6):
        raise PathError("path has repeated consecutive points")
    stations = np.concatenate([[0.0], np.cumsum(seg_len)])
    if len(pts) == 2:
        t = seg / seg_len[:, None]
        return FrenetFrame(pts, stations, np.vstack([t, t]), np.zeros(2))
    tang = np.empty_like(pts)
    tang[1:-1] = pts[2:] - pts[:-2]
    tang[0] = seg[0]
    tang[-1] = seg[-1]
    tang /= np.hypot(tang[:, 0], tang[:, 1])[:, None]
    # turning of the segment headings at each vertex over the mean segment length
    theta = np.unwrap(np.arctan2(seg[:, 1], seg[:, 0]))
    kappa = np.empty(len(pts))
    kappa[1:-1] = np.diff(theta) / (0.5 * (seg_len[1:] + seg_len[:-1]))
    kappa[0] = kappa[1]
    kappa[-1] = kappa[-2]
    return FrenetFrame(pts, stations, tang, kappa)


def project_pose(frame: FrenetFrame, pose, corridor: float = 10.0) -> tuple[float, float, float]:
    """Nearest-point projection to (station, signed lateral offset, heading error)."""
    x, y, psi = pose
    p = np.array([x, y], dtype=float)
    a = frame.points[:-1]
    d = frame.points[1:] - a
    seg_len2 = np.sum(d * d, axis=1)
    t = np.clip(np.sum((p - a) * d, axis=1) / seg_len2, 0.0, 1.0)
    proj = a + t[:, None] * d
    dist = np.hypot(proj[:, 0] - p[0], proj[:, 1] - p[1])
    # ties resolve to the smallest station; argmin returns the first segment
    k = int(np.argmin(dist))
    if dist[k] > corridor:
        raise PathError(f"pose is {dist[k]:.2f} m from the path (corridor {corridor} m)")
    s = frame.stations[k] + t[k] * math.sqrt(seg_len2[k])
    heading = math.atan2(d[k, 1], d[k, 0])
    rel = p - proj[k]
    # signed distance; at a vertex the offset is not normal to either segment
    cross = math.cos(heading) * rel[1] - math.sin(heading) * rel[0]
    lateral = math.copysign(float(dist[k]), cross)
    return float(s), float(lateral), float(wrap_angle(psi - heading))


@dataclass(frozen=True)
class PredictedTrajectory:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, k), dtype=float) for k in ("t", "x", "y", "psi", "v")]
        for k, arr in zip(("t", "x", "y", "psi", "v"), arrays):
            object.__setattr__(self, k, arr)
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise ValueError("trajectory fields must be equal-length 1D arrays")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        if np.any(self.v < 0):
            raise ValueError("trajectory speeds must be nonnegative")

    @classmethod
    def from_samples(cls, samples) -> "PredictedTrajectory":
        arr = np.asarray(samples, dtype=float).reshape(-1, 5)
        return cls(*arr.T)


@dataclass(frozen=True)
class PredictionErrorModel:
    sigma_a: float = 1.0
    sigma_omega: float = 0.05
    k: float = 2.0

    def __post_init__(self):
        if min(self.sigma_a, self.sigma_omega, self.k) < 0:
            raise ValueError("error model parameters must be nonnegative")


@dataclass(frozen=True)
class HumanBounds:
    a_h: tuple[float, float]
    omega_h: tuple[float, float]


def estimate_bounds(
    traj: PredictedTrajectory, frame: FrenetFrame, err: PredictionErrorModel, corridor: float = 10.0
) -> HumanBounds:
    """Acceleration and yaw-rate bounds for the human from its predicted motion.

    The along-path acceleration range comes from finite differences of the
    predicted speed.  The yaw-rate bound is zero in the path frame; the
    Cartesian unicycle additionally needs ``|kappa| * v`` to follow the
    curved reference, so that is added on both sides.
    """
    if len(traj.t) < 2:
        raise ValueError("need at least two predicted samples")
    acc = np.diff(traj.v) / np.diff(traj.t)
    a_margin = err.k * err.sigma_a
    path_rate = 0.0
    for x, y, psi, v in zip(traj.x, traj.y, traj.psi, traj.v):
        s, _, _ = project_pose(frame, (x, y, psi), corridor)
        path_rate = max(path_rate, abs(float(frame.curvature_at(s))) * v)
    w = err.k * err.sigma_omega + path_rate
    return HumanBounds((float(acc.min() - a_margin), float(acc.max() + a_margin)), (-w, w))

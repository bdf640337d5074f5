"""Dense rectangular grids and gridded value functions.

Values are stored as a row-major numpy array shaped like the grid.  Periodic
dimensions (angles) exclude their upper bound: a periodic dimension with
``count`` nodes over ``[lower, upper)`` has spacing ``(upper - lower) / count``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"HJVF"
FORMAT_VERSION = 1


class GridError(ValueError):
    pass


class OutOfDomainError(GridError):
    pass


@dataclass(frozen=True)
class DimSpec:
    lower: float
    upper: float
    count: int
    periodic: bool = False

    def validate(self) -> None:
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise GridError(f"non-finite bounds {self.lower}, {self.upper}")
        if self.count < 3:
            raise GridError(f"node count must be >= 3, got {self.count}")
        if self.lower >= self.upper:
            raise GridError(f"lower bound {self.lower} must be below upper {self.upper}")

    @property
    def spacing(self) -> float:
        if self.periodic:
            return (self.upper - self.lower) / self.count
        return (self.upper - self.lower) / (self.count - 1)

    @property
    def period(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class GridSpec:
    dims: tuple[DimSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))

    @classmethod
    def from_lists(cls, lower, upper, counts, periodic=None) -> "GridSpec":
        periodic = periodic or [False] * len(counts)
        return cls(
            tuple(
                DimSpec(float(lo), float(hi), int(n), bool(p))
                for lo, hi, n, p in zip(lower, upper, counts, periodic)
            )
        )

    def to_dict(self) -> dict:
        return {
            "lower": [d.lower for d in self.dims],
            "upper": [d.upper for d in self.dims],
            "counts": [d.count for d in self.dims],
            "periodic": [d.periodic for d in self.dims],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls.from_lists(data["lower"], data["upper"], data["counts"], data.get("periodic"))


class Grid:
    """Uniform tensor-product grid built from a validated :class:`GridSpec`."""

    def __init__(self, spec: GridSpec):
        if not spec.dims:
            raise GridError("grid needs at least one dimension")
        for d in spec.dims:
            d.validate()
        self.spec = spec
        self.ndim = len(spec.dims)
        self.shape = tuple(d.count for d in spec.dims)
        self.size = int(np.prod(self.shape))
        self.lower = np.array([d.lower for d in spec.dims])
        self.upper = np.array([d.upper for d in spec.dims])
        self.spacing = np.array([d.spacing for d in spec.dims])
        self.periodic = np.array([d.periodic for d in spec.dims], dtype=bool)
        # row-major strides in elements
        self.strides = np.array(
            [int(np.prod(self.shape[k + 1 :])) for k in range(self.ndim)], dtype=np.int64
        )
        self.axes = [d.lower + np.arange(d.count) * d.spacing for d in spec.dims]

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and self.spec == other.spec

    def __hash__(self) -> int:
        return hash(self.spec)

    def node(self, index: Sequence[int]) -> np.ndarray:
        index = self.check_index(index)
        return self.lower + np.asarray(index) * self.spacing

    def check_index(self, index: Sequence[int]) -> tuple[int, ...]:
        index = tuple(int(i) for i in index)
        if len(index) != self.ndim or any(not 0 <= i < n for i, n in zip(index, self.shape)):
            raise GridError(f"node index {index} outside grid shape {self.shape}")
        return index

    def broadcast_axes(self) -> list[np.ndarray]:
        """Coordinate arrays shaped to broadcast against the value array."""
        out = []
        for k, ax in enumerate(self.axes):
            shape = [1] * self.ndim
            shape[k] = ax.size
            out.append(ax.reshape(shape))
        return out

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (size, ndim), row-major order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def wrap(self, points: np.ndarray) -> np.ndarray:
        points = np.array(points, dtype=float, copy=True)
        for k in np.flatnonzero(self.periodic):
            lo, period = self.lower[k], self.spec.dims[k].period
            points[..., k] = lo + np.mod(points[..., k] - lo, period)
        return points

    def in_bounds(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Mask of points inside the non-periodic extent."""
        points = np.atleast_2d(points)
        ok = np.ones(points.shape[0], dtype=bool)
        for k in range(self.ndim):
            if self.periodic[k]:
                continue
            ok &= (points[:, k] >= self.lower[k] - tol) & (points[:, k] <= self.upper[k] + tol)
        return ok


def build_grid(spec: GridSpec) -> Grid:
    return Grid(spec)


@dataclass
class ValueFunction:
    """Gridded value function ``V(s, tau)``; the BRT is ``{V < 0}``."""

    grid: Grid
    values: np.ndarray
    tau: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size != self.grid.size:
            raise GridError(f"expected {self.grid.size} values, got {values.size}")
        values = values.reshape(self.grid.shape)
        if self.tau > 0:
            raise GridError(f"tau must be nonpositive, got {self.tau}")
        if not np.all(np.isfinite(values)):
            raise GridError("value function contains non-finite entries")
        values.setflags(write=False)
        self.values = values

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()


def _cell_coords(grid: Grid, points: np.ndarray, policy: str):
    """Lower-corner indices and fractional offsets for each point."""
    points = grid.wrap(np.atleast_2d(np.asarray(points, dtype=float)))
    if points.shape[1] != grid.ndim:
        raise GridError(f"expected {grid.ndim}-dimensional states, got {points.shape[1]}")
    if not np.all(np.isfinite(points)):
        raise GridError("non-finite query state")
    outside = ~grid.in_bounds(points)
    if outside.any() and policy == "error":
        bad = points[np.flatnonzero(outside)[0]]
        raise OutOfDomainError(f"state {bad.tolist()} outside grid bounds")
    rel = (points - grid.lower) / grid.spacing
    # snap rounding noise so queries at nodes return stored values exactly
    near = np.round(rel)
    rel = np.where(np.abs(rel - near) < 1e-9, near, rel)
    lo = np.empty(points.shape, dtype=np.int64)
    frac = np.empty(points.shape)
    for k, n in enumerate(grid.shape):
        if grid.periodic[k]:
            i = np.floor(rel[:, k])
            frac[:, k] = rel[:, k] - i
            lo[:, k] = np.mod(i.astype(np.int64), n)
        else:
            r = np.clip(rel[:, k], 0.0, n - 1)
            i = np.minimum(np.floor(r), n - 2)
            frac[:, k] = r - i
            lo[:, k] = i.astype(np.int64)
    return lo, frac, outside


def interpolate_many(vf: ValueFunction, points, policy: str = "error"):
    """Multilinear interpolation at many states.

    ``policy`` is ``"error"`` (raise on a non-periodic out-of-range coordinate)
    or ``"clamp"``, which clamps to the grid and also returns the boolean
    out-of-domain flags.
    """
    if policy not in ("error", "clamp"):
        raise GridError(f"unknown out-of-domain policy {policy!r}")
    grid = vf.grid
    lo, frac, outside = _cell_coords(grid, points, policy)
    flat = vf.flat
    out = np.zeros(lo.shape[0])
    for corner in range(1 << grid.ndim):
        weight = np.ones(lo.shape[0])
        offset = np.zeros(lo.shape[0], dtype=np.int64)
        for k, n in enumerate(grid.shape):
            bit = (corner >> (grid.ndim - 1 - k)) & 1
            idx = lo[:, k] + bit
            if grid.periodic[k]:
                idx = np.mod(idx, n)
            weight = weight * (frac[:, k] if bit else 1.0 - frac[:, k])
            offset += idx * grid.strides[k]
        out += weight * flat[offset]
    if policy == "clamp":
        return out, outside
    return out


def interpolate(vf: ValueFunction, state, policy: str = "error") -> float:
    res = interpolate_many(vf, np.asarray(state, dtype=float)[None, :], policy)
    if policy == "clamp":
        return float(res[0][0])
    return float(res[0])


def one_sided_diffs(values: np.ndarray, grid: Grid, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Backward and forward first differences along ``dim`` for the whole array.

    Non-periodic boundaries repeat the adjacent interior slope (linear
    extrapolation of the boundary); periodic dimensions wrap.
    """
    h = grid.spacing[dim]
    if grid.periodic[dim]:
        fwd = (np.roll(values, -1, axis=dim) - values) / h
        bwd = (values - np.roll(values, 1, axis=dim)) / h
        return bwd, fwd
    d = np.diff(values, axis=dim) / h
    first = np.take(d, [0], axis=dim)
    last = np.take(d, [-1], axis=dim)
    bwd = np.concatenate([first, d], axis=dim)
    fwd = np.concatenate([d, last], axis=dim)
    return bwd, fwd


def one_sided_derivatives(vf: ValueFunction, index: Sequence[int], dim: int) -> tuple[float, float]:
    """(left slope, right slope) of ``vf`` at a single node along ``dim``."""
    grid = vf.grid
    index = grid.check_index(index)
    if not 0 <= dim < grid.ndim:
        raise GridError(f"dimension {dim} out of range")
    v = vf.values
    n, h, i = grid.shape[dim], grid.spacing[dim], index[dim]

    def at(j):
        idx = list(index)
        idx[dim] = j
        return v[tuple(idx)]

    if grid.periodic[dim]:
        return (at(i) - at((i - 1) % n)) / h, (at((i + 1) % n) - at(i)) / h
    if i == 0:
        s = (at(1) - at(0)) / h
        return s, s
    if i == n - 1:
        s = (at(i) - at(i - 1)) / h
        return s, s
    return (at(i) - at(i - 1)) / h, (at(i + 1) - at(i)) / h


def gradient_at(vf: ValueFunction, state, policy: str = "clamp") -> np.ndarray:
    """Central-difference gradient of the interpolant at an off-grid state."""
    grid = vf.grid
    state = np.asarray(state, dtype=float)
    grad = np.zeros(grid.ndim)
    for k in range(grid.ndim):
        h = grid.spacing[k]
        plus, minus = state.copy(), state.copy()
        plus[k] += h
        minus[k] -= h
        if not grid.periodic[k]:
            plus[k] = min(plus[k], grid.upper[k])
            minus[k] = max(minus[k], grid.lower[k])
        width = plus[k] - minus[k]
        if width <= 0:
            continue
        vp = interpolate(vf, plus, policy)
        vm = interpolate(vf, minus, policy)
        grad[k] = (vp - vm) / width
    return grad


# --- portable file format -------------------------------------------------

_HEAD = struct.Struct("<4sII")
_DIM = struct.Struct("<ddIB")
_TAU = struct.Struct("<d")


def save_value_function(vf: ValueFunction, path) -> Path:
    """Write the binary value-function file and its JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = vf.grid
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, FORMAT_VERSION, grid.ndim))
        for d in grid.spec.dims:
            fh.write(_DIM.pack(d.lower, d.upper, d.count, int(d.periodic)))
        fh.write(_TAU.pack(vf.tau))
        fh.write(np.ascontiguousarray(vf.flat, dtype="<f4").tobytes())
    sidecar = {
        "format": "hjvf",
        "version": FORMAT_VERSION,
        "grid": grid.spec.to_dict(),
        "tau": vf.tau,
        "dtype": "float32-le",
        "meta": vf.meta,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def load_value_function(path) -> ValueFunction:
    path = Path(path)
    data = path.read_bytes()
    magic, version, ndim = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise GridError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise GridError(f"{path}: unsupported version {version}")
    off = _HEAD.size
    dims = []
    for _ in range(ndim):
        lo, hi, n, per = _DIM.unpack_from(data, off)
        off += _DIM.size
        dims.append(DimSpec(lo, hi, n, bool(per)))
    (tau,) = _TAU.unpack_from(data, off)
    off += _TAU.size
    grid = Grid(GridSpec(tuple(dims)))
    values = np.frombuffer(data, dtype="<f4", count=grid.size, offset=off).astype(float)
    meta = {}
    sidecar = path.with_suffix(path.suffix + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text()).get("meta", {})
    return ValueFunction(grid, values, tau, meta)

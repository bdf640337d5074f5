"""Offline bank of tubes keyed by quantized human acceleration bounds.

Online, controllers are ranked by their expected probability under the role
belief and the tubes of their buckets are unioned until the accumulated
probability reaches the confidence level ``delta``.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dynamics import ControlBounds, RelativeDynamics, VehicleParams
from .game import AccelController, ControllerLibrary, RoleBelief
from .grid import Grid, ValueFunction, interpolate, load_value_function, save_value_function
from .hji import NumericsConfig, SolverError, TargetSpec, solve_brt

INDEX_VERSION = 1


class BankError(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class BoundBucket:
    """Interval ``[k_lo * q, k_hi * q]`` on an acceleration lattice of step ``q``."""

    k_lo: int
    k_hi: int
    q: float

    def __post_init__(self):
        if self.k_lo > self.k_hi:
            raise ValueError("bucket lower index exceeds upper")
        if not self.q > 0:
            raise ValueError("lattice step must be positive")

    @property
    def lo(self) -> float:
        return self.k_lo * self.q

    @property
    def hi(self) -> float:
        return self.k_hi * self.q

    @property
    def interval(self) -> tuple[float, float]:
        return self.lo, self.hi

    def covers(self, other: "BoundBucket") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    @property
    def key(self) -> str:
        return f"{self.lo:+.3f}_{self.hi:+.3f}"

    @classmethod
    def enclosing(cls, lo: float, hi: float, q: float) -> "BoundBucket":
        """Smallest lattice interval containing ``[lo, hi]``."""
        return cls(math.floor(lo / q), math.ceil(hi / q), q)


def bucket_of(pi: AccelController, q: float) -> BoundBucket:
    return BoundBucket.enclosing(*pi.accel_range(), q)


@dataclass(frozen=True)
class SolveInputs:
    """Everything but the human acceleration bound needed to solve one tube."""

    grid: Grid
    params: VehicleParams
    bounds: ControlBounds  # a_h here is the full-range bound
    target: TargetSpec
    numerics: NumericsConfig
    steering_samples: int = 5

    def dynamics(self, a_h=None) -> RelativeDynamics:
        return RelativeDynamics(self.params, self.bounds.with_human(a_h=a_h), 5, self.steering_samples)

    def manifest(self) -> dict:
        return {
            "grid": self.grid.spec.to_dict(),
            "params": {"l_f": self.params.l_f, "l_r": self.params.l_r},
            "bounds": self.bounds.to_dict(),
            "r_coll": self.target.r_coll,
            "numerics": self.numerics.to_dict(),
            "steering_samples": self.steering_samples,
        }

    def digest(self) -> str:
        return digest_of(self.manifest())


def digest_of(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def solve_for_bound(inputs: SolveInputs, a_h: tuple[float, float]) -> ValueFunction:
    vf = solve_brt(inputs.grid, inputs.dynamics(a_h), inputs.target, inputs.numerics)
    vf.meta["a_h"] = list(a_h)
    vf.meta["solve_digest"] = inputs.digest()
    return vf


@dataclass
class BankEntry:
    bucket: BoundBucket
    vf: ValueFunction


@dataclass
class Bank:
    """Bucket entries plus the full-range tube, all solved with one shared yaw-rate bound."""

    entries: dict[BoundBucket, BankEntry]
    full: ValueFunction
    inputs_manifest: dict
    q: float
    _unions: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.entries:
            raise BankError("bank has no entries")
        self.entries = dict(sorted(self.entries.items()))

    @property
    def grid(self) -> Grid:
        return self.full.grid

    @property
    def buckets(self) -> list[BoundBucket]:
        return list(self.entries)

    def entry(self, bucket: BoundBucket) -> BankEntry:
        try:
            return self.entries[bucket]
        except KeyError:
            raise BankError(f"bucket [{bucket.lo}, {bucket.hi}] not in bank") from None

    def covering(self, bucket: BoundBucket) -> tuple[BoundBucket | None, ValueFunction]:
        """Narrowest entry whose bucket contains ``bucket``; the full tube if none does."""
        best = None
        for b in self.entries:
            if b.covers(bucket) and (best is None or (b.hi - b.lo, b) < (best.hi - best.lo, best)):
                best = b
        if best is None:
            return None, self.full
        return best, self.entries[best].vf

    def resolve(self, bucket: BoundBucket) -> BoundBucket:
        """The bucket itself when banked, else the narrowest banked bucket covering it."""
        if bucket in self.entries:
            return bucket
        best, _ = self.covering(bucket)
        if best is None:
            raise BankError(f"no bank entry covers [{bucket.lo}, {bucket.hi}]")
        return best

    def union(self, buckets: Sequence[BoundBucket]) -> ValueFunction:
        """Elementwise min over the given entries, cached by bucket set."""
        key = tuple(sorted(set(buckets)))
        if not key:
            raise BankError("empty union")
        hit = self._unions.get(key)
        if hit is not None:
            return hit
        vals = None
        for b in key:
            v = self.entry(b).vf.values
            vals = v.copy() if vals is None else np.minimum(vals, v, out=vals)
        vf = ValueFunction(self.grid, vals, self.full.tau, {"buckets": [b.key for b in key]})
        if len(self._unions) >= 64:
            self._unions.pop(next(iter(self._unions)))
        self._unions[key] = vf
        return vf

    # persistence
    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        index = {
            "version": INDEX_VERSION,
            "q": self.q,
            "solve": self.inputs_manifest,
            "solve_digest": digest_of(self.inputs_manifest),
            "full": "full.hjvf",
            "entries": [],
        }
        save_value_function(self.full, d / "full.hjvf")
        for b, e in self.entries.items():
            name = f"bucket_{b.key}.hjvf"
            save_value_function(e.vf, d / name)
            index["entries"].append({"k_lo": b.k_lo, "k_hi": b.k_hi, "lo": b.lo, "hi": b.hi, "file": name})
        (d / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))
        return d

    @classmethod
    def load(cls, directory) -> "Bank":
        d = Path(directory)
        idx_path = d / "index.json"
        if not idx_path.exists():
            raise BankError(f"{d}: missing index.json")
        index = json.loads(idx_path.read_text())
        if index.get("version") != INDEX_VERSION:
            raise BankError(f"{d}: unsupported bank index version {index.get('version')}")
        q = float(index["q"])
        entries = {}
        for rec in index["entries"]:
            b = BoundBucket(int(rec["k_lo"]), int(rec["k_hi"]), q)
            entries[b] = BankEntry(b, load_value_function(d / rec["file"]))
        full = load_value_function(d / index["full"])
        return cls(entries, full, index["solve"], q)


def _solve_bucket(args):
    inputs, bucket = args
    try:
        return bucket, solve_for_bound(inputs, bucket.interval)
    except (SolverError, ValueError) as exc:
        raise BankError(f"solve failed for bucket [{bucket.lo}, {bucket.hi}]: {exc}") from exc


def library_buckets(lib: ControllerLibrary, q: float) -> list[BoundBucket]:
    return sorted({bucket_of(c, q) for c in lib})


def build_bank(
    lib: ControllerLibrary,
    q: float,
    inputs: SolveInputs,
    extra_buckets: Iterable[BoundBucket] = (),
    workers: int = 1,
    progress=None,
) -> Bank:
    """Solve one tube per distinct bucket of ``lib`` (plus ``extra_buckets``) and the full tube."""
    buckets = sorted(set(library_buckets(lib, q)) | {replace(b, q=q) for b in extra_buckets})
    full_bucket = BoundBucket.enclosing(*inputs.bounds.a_h, q)
    if full_bucket.interval != inputs.bounds.a_h:
        raise BankError(f"full human bound {inputs.bounds.a_h} is not aligned to lattice step {q}")
    outside = [b for b in buckets if not full_bucket.covers(b)]
    if outside:
        raise BankError(f"bucket [{outside[0].lo}, {outside[0].hi}] exceeds the full human bound")
    jobs = [(inputs, b) for b in buckets]
    if full_bucket not in buckets:
        jobs.append((inputs, full_bucket))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_solve_bucket, jobs))
    else:
        results = []
        for i, job in enumerate(jobs):
            results.append(_solve_bucket(job))
            if progress:
                progress(i + 1, len(jobs))
    solved = dict(results)
    full = solved[full_bucket]
    entries = {b: BankEntry(b, solved[b]) for b in buckets}
    return Bank(entries, full, inputs.manifest(), q)


def expected_probs(b: RoleBelief, p_follower, p_leader) -> np.ndarray:
    pf = np.asarray(p_follower, dtype=float)
    pl = np.asarray(p_leader, dtype=float)
    if pf.shape != pl.shape or pf.ndim != 1:
        raise ValueError("follower and leader distributions must be equal-length vectors")
    return b.b_f * pf + b.b_l * pl


@dataclass(frozen=True)
class CompositeBRT:
    buckets: tuple[BoundBucket, ...]  # in inclusion order
    controllers: tuple[int, ...]  # controller indices consumed
    vf: ValueFunction
    P: float


def selection_order(probs) -> np.ndarray:
    """Indices by descending probability; stable so ties keep the lower index first."""
    return np.argsort(-np.asarray(probs, dtype=float), kind="stable")


def select_brt(bank: Bank, lib: ControllerLibrary, probs, delta: float) -> CompositeBRT:
    if not 0.0 <= delta <= 1.0:
        raise ValueError("confidence delta must lie in [0, 1]")
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (len(lib),):
        raise ValueError("one probability per controller required")
    if not bank.entries:
        raise BankError("empty bank")
    included: list[BoundBucket] = []
    consumed = []
    P = 0.0
    for i in selection_order(probs):
        consumed.append(int(i))
        b = bank.resolve(bucket_of(lib[i], bank.q))
        if b not in included:
            included.append(b)
        P += float(probs[i])
        # slack absorbs summation rounding (0.6 + 0.3 < 0.9 in binary);
        # delta = 1 means the whole bound, so it never stops early
        if P >= delta - 1e-12 and delta < 1.0:
            break
    return CompositeBRT(tuple(included), tuple(consumed), bank.union(included), min(P, 1.0))


def contains(composite: CompositeBRT, state, policy: str = "error") -> bool:
    s = state.as_array() if hasattr(state, "as_array") else state
    return interpolate(composite.vf, s, policy) < 0.0

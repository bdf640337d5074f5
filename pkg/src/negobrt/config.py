"""Run configuration: every knob shared by solve, replay, suite and synth."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .bank import SolveInputs
from .dynamics import ControlBounds, VehicleParams
from .frenet import PredictionErrorModel
from .game import ControllerLibrary, RewardConfig, RewardWeights, n_stages, sample_library
from .grid import DimSpec, GridSpec, build_grid
from .hji import NumericsConfig, TargetSpec

CONFIG_VERSION = 1


def default_grid() -> GridSpec:
    # x_rel, y_rel (m), psi_rel (rad, periodic), v_r, v_h (m/s)
    return GridSpec(
        (
            DimSpec(-20.0, 20.0, 21),
            DimSpec(-20.0, 20.0, 21),
            DimSpec(-math.pi, math.pi, 12, True),
            DimSpec(0.0, 12.0, 7),
            DimSpec(0.0, 12.0, 7),
        )
    )


@dataclass(frozen=True)
class LibraryConfig:
    n: int = 200
    ranges: tuple = ((-4.0, 3.0), (-1.0, 1.0), (-0.5, 0.5))
    clamp: tuple = (-6.0, 4.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ranges", tuple(tuple(map(float, r)) for r in self.ranges))
        object.__setattr__(self, "clamp", tuple(map(float, self.clamp)))
        if self.n < 2:
            raise ValueError("library needs n >= 2")
        if len(self.ranges) != 3 or any(lo > hi for lo, hi in self.ranges):
            raise ValueError("library ranges must be three (lo, hi) pairs")
        if self.clamp[0] > self.clamp[1]:
            raise ValueError("clamp must be (min, max)")


@dataclass(frozen=True)
class GameConfig:
    T: float = 2.0
    dt: float = 0.25
    reward: RewardConfig = field(default_factory=RewardConfig)
    observation_window: float = 2.0
    corridor: float = 10.0

    def __post_init__(self):
        n_stages(self.T, self.dt)
        if not 0 < self.observation_window:
            raise ValueError("observation window must be positive")


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = field(default_factory=default_grid)
    r_coll: float = 3.0
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    bounds: ControlBounds = field(default_factory=ControlBounds)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    steering_samples: int = 3
    error_model: PredictionErrorModel = field(default_factory=PredictionErrorModel)
    library: LibraryConfig = field(default_factory=LibraryConfig)
    game: GameConfig = field(default_factory=GameConfig)
    delta: float = 0.9
    lattice_q: float = 0.5
    sensor_period: float = 0.04
    verification_period: float = 0.1
    prior: tuple = (0.5, 0.5)
    belief_floor: float = 1e-3
    ttc_radius: float = 3.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "prior", tuple(map(float, self.prior)))
        build_grid(self.grid)
        TargetSpec(self.r_coll)
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if not self.lattice_q > 0:
            raise ValueError("lattice step must be positive")
        ratio = self.lattice_q / self.numerics.disturbance_step
        if abs(ratio - round(ratio)) > 1e-9:
            # bucket endpoints must be solver acceleration samples, or nested buckets stop giving nested tubes
            raise ValueError("lattice step must be a multiple of the solver's disturbance step")
        if not 0 < self.sensor_period <= self.verification_period:
            raise ValueError("need 0 < sensor period <= verification period")
        if len(self.prior) != 2 or min(self.prior) < 0 or abs(sum(self.prior) - 1) > 1e-12:
            raise ValueError("prior must be two probabilities summing to 1")
        if not 0 <= self.belief_floor < 0.5:
            raise ValueError("belief floor must lie in [0, 0.5)")
        if self.steering_samples < 1:
            raise ValueError("need at least one steering sample")
        lo, hi = self.bounds.a_h
        if lo > self.library.clamp[0] or hi < self.library.clamp[1]:
            raise ValueError("full human acceleration bound must cover the library clamp")

    # serialization
    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        d["version"] = CONFIG_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {version}")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        kw = dict(d)
        if "grid" in d:
            kw["grid"] = GridSpec.from_dict(d["grid"])
        if "vehicle" in d:
            kw["vehicle"] = VehicleParams(**d["vehicle"])
        if "bounds" in d:
            kw["bounds"] = ControlBounds.from_dict(d["bounds"])
        if "numerics" in d:
            kw["numerics"] = NumericsConfig(**d["numerics"])
        if "error_model" in d:
            kw["error_model"] = PredictionErrorModel(**d["error_model"])
        if "library" in d:
            kw["library"] = LibraryConfig(**d["library"])
        if "game" in d:
            g = dict(d["game"])
            if "reward" in g:
                r = g["reward"]
                g["reward"] = RewardConfig(RewardWeights(**r["human"]), RewardWeights(**r["robot"]), r["beta"])
            kw["game"] = GameConfig(**g)
        if "prior" in d:
            kw["prior"] = tuple(d["prior"])
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def assumptions(self) -> dict:
        """Defaults that results depend on but that are choices rather than measurements."""
        return {
            "robot_a_r": list(self.bounds.a_r),
            "robot_delta_f": list(self.bounds.delta_f),
            "collision_disc_radius": self.r_coll,
            "distance_reference": "center-to-center",
            "path_frame": "cartesian relative state; path curvature widens the yaw-rate bound",
        }

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    # derived objects
    def build_library(self) -> ControllerLibrary:
        lc = self.library
        return sample_library(lc.n, lc.ranges, lc.clamp, self.game.T, lc.seed)

    def solve_inputs(self) -> SolveInputs:
        return SolveInputs(
            build_grid(self.grid), self.vehicle, self.bounds, TargetSpec(self.r_coll),
            self.numerics, self.steering_samples,
        )

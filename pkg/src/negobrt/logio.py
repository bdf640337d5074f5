"""Line-delimited JSON formats for interaction logs and replay reports.

A log file holds one header object followed by one object per sensor
record.  A report file holds a header, one summary object per mode and one
object per verification decision.  Every file carries ``schema_version``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_SCHEMA = "negobrt.interaction-log"
REPORT_SCHEMA = "negobrt.replay-report"
SCHEMA_VERSION = 1

_VEC4 = ("robot", "human")
_VEC2 = ("u_r", "u_h")


class SchemaError(ValueError):
    """Raised with every problem found; ``problems`` lists them individually."""

    def __init__(self, path, problems: list[str]):
        self.problems = problems
        head = f"{path}: {len(problems)} schema problem(s)"
        super().__init__(head + "\n  " + "\n  ".join(problems[:50]))


@dataclass
class InteractionLog:
    """Two-car trajectory sampled at the sensor period.

    ``robot`` and ``human`` rows are (x, y, psi, v); ``u_r`` is (a_r, delta_f),
    ``u_h`` is (a_h, omega_h).  ``predictions[i]`` holds the predicted human
    trajectory at record ``i`` as rows (t, x, y, psi, v) in absolute time.
    """

    t: np.ndarray
    robot: np.ndarray
    human: np.ndarray
    u_r: np.ndarray
    u_h: np.ndarray
    predictions: list
    robot_path: np.ndarray
    human_path: np.ndarray
    sensor_period: float
    verification_period: float
    role: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        problems = validate_arrays(self)
        if problems:
            raise SchemaError("<log>", problems)

    def __len__(self) -> int:
        return len(self.t)


def validate_arrays(log: InteractionLog) -> list[str]:
    problems = []
    n = len(log.t)
    if n == 0:
        problems.append("log has no records")
    for name, width in (("robot", 4), ("human", 4), ("u_r", 2), ("u_h", 2)):
        arr = np.asarray(getattr(log, name), dtype=float)
        setattr(log, name, arr)
        if arr.shape != (n, width):
            problems.append(f"{name}: expected shape ({n}, {width}), got {arr.shape}")
        elif not np.all(np.isfinite(arr)):
            problems.append(f"{name}: non-finite values at records {np.flatnonzero(~np.isfinite(arr).all(1))[:5].tolist()}")
    log.t = np.asarray(log.t, dtype=float)
    bad = np.flatnonzero(np.diff(log.t) <= 0)
    if bad.size:
        problems.append(f"timestamps not strictly increasing at record {int(bad[0]) + 1}")
    if len(log.predictions) != n:
        problems.append(f"expected {n} prediction entries, got {len(log.predictions)}")
    if not (log.sensor_period > 0 and log.verification_period > 0):
        problems.append("sensor and verification periods must be positive")
    elif log.sensor_period > log.verification_period:
        problems.append("sensor period exceeds verification period")
    for name in _VEC4:
        arr = getattr(log, name)
        if n and arr.shape == (n, 4) and np.any(arr[:, 3] < 0):
            problems.append(f"{name}: negative speed at record {int(np.flatnonzero(arr[:, 3] < 0)[0])}")
    return problems


def _header(log: InteractionLog) -> dict:
    return {
        "schema": LOG_SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "sensor_period": log.sensor_period,
        "verification_period": log.verification_period,
        "role": log.role,
        "robot_path": np.asarray(log.robot_path).tolist(),
        "human_path": np.asarray(log.human_path).tolist(),
        "meta": log.meta,
    }


def dumps_log(log: InteractionLog) -> str:
    lines = [json.dumps(_header(log), sort_keys=True)]
    for i in range(len(log)):
        rec = {
            "t": float(log.t[i]),
            "robot": log.robot[i].tolist(),
            "human": log.human[i].tolist(),
            "u_r": log.u_r[i].tolist(),
            "u_h": log.u_h[i].tolist(),
            "pred": np.asarray(log.predictions[i]).tolist(),
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


def save_log(log: InteractionLog, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_log(log))
    return path


def _number_list(value, width, where, problems):
    if not isinstance(value, list) or len(value) != width:
        problems.append(f"{where}: expected a list of {width} numbers")
        return None
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in value):
        problems.append(f"{where}: entries must be finite numbers")
        return None
    return [float(v) for v in value]


def load_log(path) -> InteractionLog:
    path = Path(path)
    lines = path.read_text().splitlines()
    problems: list[str] = []
    if not lines:
        raise SchemaError(path, ["empty file"])
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(path, [f"line 1: invalid JSON ({exc.msg})"]) from None
    if head.get("schema") != LOG_SCHEMA:
        problems.append(f"line 1: schema must be {LOG_SCHEMA!r}")
    if head.get("schema_version") != SCHEMA_VERSION:
        problems.append(f"line 1: unsupported schema_version {head.get('schema_version')!r}")
    for key in ("sensor_period", "verification_period", "robot_path", "human_path"):
        if key not in head:
            problems.append(f"line 1: missing header field {key!r}")
    cols = {k: [] for k in ("t", "robot", "human", "u_r", "u_h", "pred")}
    for lineno, line in enumerate(lines[1:], start=2):
        idx = lineno - 2
        if not line.strip():
            continue
        where = f"line {lineno} (record {idx})"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append(f"{where}: invalid JSON ({exc.msg})")
            continue
        if not isinstance(rec, dict):
            problems.append(f"{where}: record must be an object")
            continue
        missing = [k for k in cols if k not in rec]
        for k in missing:
            problems.append(f"{where}: missing field {k!r}")
        if missing:
            continue
        t = rec["t"]
        if not isinstance(t, (int, float)) or isinstance(t, bool) or not math.isfinite(t):
            problems.append(f"{where}: field 't' must be a finite number")
            continue
        vals = {k: _number_list(rec[k], 4, f"{where} field {k!r}", problems) for k in _VEC4}
        vals.update({k: _number_list(rec[k], 2, f"{where} field {k!r}", problems) for k in _VEC2})
        pred = rec["pred"]
        if not isinstance(pred, list) or any(_number_list(row, 5, f"{where} field 'pred'", problems) is None for row in pred):
            if not isinstance(pred, list):
                problems.append(f"{where}: field 'pred' must be a list of [t, x, y, psi, v] rows")
            continue
        if any(v is None for v in vals.values()):
            continue
        if cols["t"] and t <= cols["t"][-1]:
            problems.append(f"{where}: timestamp {t} not after previous {cols['t'][-1]}")
        cols["t"].append(float(t))
        for k in (*_VEC4, *_VEC2):
            cols[k].append(vals[k])
        cols["pred"].append(np.asarray(pred, dtype=float).reshape(-1, 5))
    if not cols["t"] and not problems:
        problems.append("log has no records")
    if problems:
        raise SchemaError(path, problems)
    try:
        return InteractionLog(
            np.array(cols["t"]),
            np.array(cols["robot"]),
            np.array(cols["human"]),
            np.array(cols["u_r"]),
            np.array(cols["u_h"]),
            cols["pred"],
            np.asarray(head["robot_path"], dtype=float),
            np.asarray(head["human_path"], dtype=float),
            float(head["sensor_period"]),
            float(head["verification_period"]),
            head.get("role"),
            head.get("meta", {}),
        )
    except SchemaError as exc:
        raise SchemaError(path, exc.problems) from None


# --- reports ------------------------------------------------------------------


def _num(x):
    """JSON has no infinity; unbounded values are written as null."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _unnum(x):
    return math.inf if x is None else float(x)


@dataclass
class SafetyDecision:
    t: float
    mode: str
    breach: bool
    value: float | None  # interpolated tube value, None when beyond the grid's position extent
    out_of_domain: bool = False
    override: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        return {
            "kind": "decision",
            "t": self.t,
            "mode": self.mode,
            "breach": self.breach,
            "value": _num(self.value),
            "out_of_domain": self.out_of_domain,
            "override": None if self.override is None else list(self.override),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SafetyDecision":
        ov = d.get("override")
        return cls(d["t"], d["mode"], d["breach"], d["value"], d["out_of_domain"], None if ov is None else tuple(ov))


@dataclass
class ModeResult:
    mode: str
    breached: bool = False
    first_breach: dict | None = None  # t, rel_speed, rel_distance
    min_ttc: float = math.inf  # on the executed trajectory
    decisions: list = field(default_factory=list)
    belief_trace: list = field(default_factory=list)  # [t, b_f]
    bucket_trace: list = field(default_factory=list)  # [t, [bucket keys], P]

    def summary(self) -> dict:
        return {
            "kind": "mode",
            "mode": self.mode,
            "breached": self.breached,
            "first_breach": self.first_breach,
            "min_ttc": _num(self.min_ttc),
            "n_decisions": len(self.decisions),
            "belief_trace": self.belief_trace,
            "bucket_trace": self.bucket_trace,
        }


@dataclass
class ReplayReport:
    log_id: str
    modes: dict = field(default_factory=dict)
    min_ttc_log: float = math.inf
    config_digest: str = ""
    role: str | None = None
    timing: dict = field(default_factory=dict)  # wall-clock stats, never serialized
    assumptions: dict = field(default_factory=dict)  # unstated modeling choices the results depend on

    @property
    def dangerous(self) -> bool:
        return self.min_ttc_log < 2.0


def dumps_report(report: ReplayReport) -> str:
    head = {
        "schema": REPORT_SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "log_id": report.log_id,
        "config_digest": report.config_digest,
        "role": report.role,
        "min_ttc_log": _num(report.min_ttc_log),
        "modes": list(report.modes),
        "assumptions": report.assumptions,
    }
    lines = [json.dumps(head, sort_keys=True)]
    for res in report.modes.values():
        lines.append(json.dumps(res.summary(), sort_keys=True))
    for res in report.modes.values():
        lines.extend(json.dumps(d.to_dict(), sort_keys=True) for d in res.decisions)
    return "\n".join(lines) + "\n"


def save_report(report: ReplayReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_report(report))
    return path


def load_report(path) -> ReplayReport:
    path = Path(path)
    lines = path.read_text().splitlines()
    try:
        objs = [json.loads(l) for l in lines if l.strip()]
    except json.JSONDecodeError as exc:
        raise SchemaError(path, [f"invalid JSON ({exc.msg})"]) from None
    if not objs or objs[0].get("schema") != REPORT_SCHEMA:
        raise SchemaError(path, ["line 1: not a replay report"])
    head = objs[0]
    if head.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(path, [f"line 1: unsupported schema_version {head.get('schema_version')!r}"])
    rep = ReplayReport(head["log_id"], {}, _unnum(head["min_ttc_log"]), head["config_digest"], head.get("role"))
    rep.assumptions = head.get("assumptions", {})
    for o in objs[1:]:
        if o.get("kind") == "mode":
            rep.modes[o["mode"]] = ModeResult(
                o["mode"], o["breached"], o["first_breach"], _unnum(o["min_ttc"]), [],
                o["belief_trace"], o["bucket_trace"],
            )
        elif o.get("kind") == "decision":
            rep.modes[o["mode"]].decisions.append(SafetyDecision.from_dict(o))
    return rep

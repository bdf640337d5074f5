"""Glue between configuration, offline bank solving, synthesis and replay."""

from __future__ import annotations

import hashlib
import json
import platform
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .bank import Bank, BoundBucket, build_bank
from .config import RunConfig
from .frenet import PathError, PredictedTrajectory, build_frame, estimate_bounds
from .game import ControllerLibrary
from .logio import InteractionLog, ReplayReport, dumps_report, save_log, save_report
from .monitor import MODES, compare_modes, run_replay
from .synth import ScenarioTemplate, synth_scenario


def prediction_buckets(cfg: RunConfig, logs: Iterable[InteractionLog] = ()) -> set[BoundBucket]:
    """Lattice buckets the prediction mode will ask for.

    Always includes the bucket of a constant-speed prediction (zero
    acceleration widened by the error model), plus every bucket implied by the
    predictions stored in ``logs``.
    """
    q, err = cfg.lattice_q, cfg.error_model
    margin = err.k * err.sigma_a
    out = {BoundBucket.enclosing(-margin, margin, q)}
    lo_full, hi_full = cfg.bounds.a_h
    for lg in logs:
        frame = build_frame(lg.human_path)
        for pred in lg.predictions:
            try:
                hb = estimate_bounds(PredictedTrajectory.from_samples(pred), frame, err, cfg.game.corridor)
            except (PathError, ValueError):
                continue
            lo, hi = max(hb.a_h[0], lo_full), min(hb.a_h[1], hi_full)
            if lo <= hi:
                out.add(BoundBucket.enclosing(lo, hi, q))
    return out


def solve_bank(cfg: RunConfig, logs: Iterable[InteractionLog] = (), workers: int = 1, progress=None) -> Bank:
    lib = cfg.build_library()
    return build_bank(lib, cfg.lattice_q, cfg.solve_inputs(), prediction_buckets(cfg, logs), workers, progress)


def check_bank(bank: Bank, cfg: RunConfig) -> None:
    """Refuse a bank solved with different numerics, grid or bounds than ``cfg``."""
    want = cfg.solve_inputs().manifest()
    if json.loads(json.dumps(want)) != bank.inputs_manifest:
        raise ValueError("bank was solved with a different configuration (grid, bounds or numerics)")
    if abs(bank.q - cfg.lattice_q) > 1e-12:
        raise ValueError(f"bank lattice step {bank.q} differs from config {cfg.lattice_q}")


@dataclass
class SuiteResult:
    templates: list
    logs: list
    reports: list
    table: dict


def run_suite(
    cfg: RunConfig,
    bank: Bank,
    templates: Sequence[ScenarioTemplate],
    modes: Sequence[str] = MODES,
    lib: ControllerLibrary | None = None,
) -> SuiteResult:
    lib = lib if lib is not None else cfg.build_library()
    logs, reports = [], []
    for k, tpl in enumerate(templates):
        lg = synth_scenario(tpl, cfg, lib)
        logs.append(lg)
        reports.append(run_replay(lg, bank, lib, cfg, modes, log_id=f"{tpl.template}-{k:03d}"))
    table = compare_modes(reports, modes) if reports else {"n": 0, "modes": {}}
    return SuiteResult(list(templates), logs, reports, table)


def write_suite(result: SuiteResult, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for tpl, lg, rep in zip(result.templates, result.logs, result.reports):
        written.append(save_log(lg, out / "logs" / f"{rep.log_id}.jsonl"))
        written.append(save_report(rep, out / "reports" / f"{rep.log_id}.jsonl"))
    summary = out / "summary.json"
    summary.write_text(json.dumps(result.table, indent=2, sort_keys=True) + "\n")
    written.append(summary)
    return written


def suite_digest(result: SuiteResult) -> str:
    h = hashlib.sha256()
    for rep in result.reports:
        h.update(dumps_report(rep).encode())
    return h.hexdigest()


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, argv: Sequence[str], cfg: RunConfig | None, outputs: Iterable[Path], extra=None) -> Path:
    import numba

    manifest = {
        "command": command,
        "argv": list(argv),
        "config_digest": None if cfg is None else cfg.digest(),
        "config": None if cfg is None else cfg.to_dict(),
        "versions": {
            "negobrt": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "numba": numba.__version__,
        },
        "platform": sys.platform,
        "outputs": {str(Path(p).relative_to(out)) if Path(p).is_relative_to(out) else str(p): file_digest(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def replay_reports(logs: Sequence[InteractionLog], bank: Bank, lib, cfg: RunConfig, modes=MODES) -> list[ReplayReport]:
    return [run_replay(lg, bank, lib, cfg, modes, log_id=f"log-{k:03d}") for k, lg in enumerate(logs)]

"""Command-line driver: solve, replay, suite, infer, slice, synth."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bank import Bank, BankError
from .config import RunConfig
from .grid import GridError, ValueFunction, build_grid, interpolate_many, load_value_function
from .hji import SolverError, TargetSpec, initial_level_set
from .logio import SchemaError, load_log, save_log, save_report
from .monitor import MODES, GameView, run_replay
from .game import RoleBelief, ObservedControls, bayes_update_log, best_match
from .synth import GENERATORS, TEMPLATES, ScenarioTemplate, suite_templates, synth_scenario
from . import pipeline

OUT_ENV = "NEGOBRT_OUT"
DIM_NAMES = ("x_rel", "y_rel", "psi_rel", "v_r", "v_h")

log = logging.getLogger("negobrt")


class CliError(Exception):
    pass


def _out_dir(arg) -> Path:
    return Path(arg or os.environ.get(OUT_ENV, "negobrt-out"))


def _config(path) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def _overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "delta", None) is not None:
        cfg = cfg.with_(delta=args.delta)
    return cfg


def _modes(text: str) -> list[str]:
    modes = [m for m in text.split(",") if m] if text else []
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise CliError(f"unknown mode(s) {bad}; choose from {','.join(MODES)}")
    return modes


def _load_bank(path, cfg: RunConfig) -> Bank:
    bank = Bank.load(path)
    pipeline.check_bank(bank, cfg)
    return bank


def cmd_solve(args) -> int:
    cfg = _config(args.config)
    out = _out_dir(args.out)
    logs = [load_log(p) for p in args.logs]
    progress = (lambda i, n: log.info("solved %d/%d", i, n)) if args.verbose else None
    bank = pipeline.solve_bank(cfg, logs, args.workers, progress)
    bank_dir = bank.save(out / "bank")
    files = sorted(p for p in bank_dir.iterdir() if p.is_file())
    pipeline.write_manifest(out, "solve", sys.argv[1:], cfg, files, {"buckets": [b.key for b in bank.buckets]})
    print(f"bank with {len(bank.entries)} entries written to {bank_dir}")
    return 0


def cmd_replay(args) -> int:
    cfg = _overrides(_config(args.config), args)
    bank = _load_bank(args.bank, cfg)
    lg = load_log(args.log)
    lib = cfg.build_library()
    rep = run_replay(lg, bank, lib, cfg, _modes(args.modes), log_id=Path(args.log).stem)
    out = Path(args.out) if args.out else _out_dir(None) / f"{Path(args.log).stem}.report.jsonl"
    save_report(rep, out)
    pipeline.write_manifest(out.parent, "replay", sys.argv[1:], cfg, [out], {"timing": rep.timing})
    for m, res in rep.modes.items():
        print(f"{m:12s} breach={res.breached} first={res.first_breach}")
    return 0


def cmd_suite(args) -> int:
    cfg = _overrides(_config(args.config), args)
    out = _out_dir(args.out)
    templates = suite_templates(args.template, args.n, args.seed, args.role)
    modes = _modes(args.modes)
    if args.bank:
        bank = _load_bank(args.bank, cfg)
    else:
        bank = pipeline.solve_bank(cfg)
        bank.save(out / "bank")
    result = pipeline.run_suite(cfg, bank, templates, modes)
    files = pipeline.write_suite(result, out)
    pipeline.write_manifest(out, "suite", sys.argv[1:], cfg, files, {"seed": args.seed, "report_digest": pipeline.suite_digest(result)})
    print(json.dumps(result.table, indent=2, sort_keys=True))
    return 0


def cmd_infer(args) -> int:
    cfg = _config(args.config)
    lg = load_log(args.log)
    lib = cfg.build_library()
    view = GameView(lg, lib, cfg)
    n_win = int(round(cfg.game.observation_window / lg.sensor_period))
    b = RoleBelief(*cfg.prior)
    rows = []
    for i in range(n_win, len(lg)):
        j = i - n_win
        d = view.log_dists(j)
        if d is None:
            continue
        xi = ObservedControls(lg.t[j:i], lg.u_h[j:i, 0], float(lg.t[j]))
        k = best_match(xi, lib)
        b = bayes_update_log(b, float(d["f"][k]), float(d["l"][k]), cfg.belief_floor)
        rows.append({"t": float(lg.t[i]), "match": k, "b_f": b.b_f, "b_l": b.b_l})
    text = "\n".join(json.dumps(r, sort_keys=True) for r in rows) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        pipeline.write_manifest(Path(args.out).parent, "infer", sys.argv[1:], cfg, [Path(args.out)])
    else:
        sys.stdout.write(text)
    return 0


def _parse_fixed(items, grid) -> dict[int, float]:
    fixed = {}
    for item in items:
        name, _, val = item.partition("=")
        if name not in DIM_NAMES[: grid.ndim] or not val:
            raise CliError(f"bad --at entry {item!r}; use name=value with name in {DIM_NAMES[:grid.ndim]}")
        fixed[DIM_NAMES.index(name)] = float(val)
    return fixed


def slice_values(vf: ValueFunction, dims: tuple[int, int], fixed: dict[int, float]) -> np.ndarray:
    """Values on the node lattice of ``dims`` with every other coordinate fixed (interpolated)."""
    g = vf.grid
    a, b = dims
    missing = [k for k in range(g.ndim) if k not in dims and k not in fixed]
    if missing:
        raise CliError(f"fix every other coordinate; missing {[DIM_NAMES[k] for k in missing]}")
    A, B = np.meshgrid(g.axes[a], g.axes[b], indexing="ij")
    pts = np.zeros((A.size, g.ndim))
    for k, v in fixed.items():
        pts[:, k] = v
    pts[:, a] = A.ravel()
    pts[:, b] = B.ravel()
    return interpolate_many(vf, pts, "error").reshape(A.shape)


def write_pgm(values: np.ndarray, path: Path) -> None:
    """Binary graymap: black where V < 0, white elsewhere; rows follow the first slice dim."""
    img = np.where(values < 0, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def cmd_slice(args) -> int:
    if args.terminal:
        cfg = _config(args.config)
        vf = initial_level_set(build_grid(cfg.grid), TargetSpec(cfg.r_coll))
    elif args.vf:
        vf = load_value_function(args.vf)
    else:
        raise CliError("give a value-function file or --terminal")
    g = vf.grid
    dims = tuple(DIM_NAMES.index(d) if d in DIM_NAMES else int(d) for d in args.dims)
    if len(set(dims)) != 2 or not all(0 <= d < g.ndim for d in dims):
        raise CliError("--dims needs two distinct grid dimensions")
    vals = slice_values(vf, dims, _parse_fixed(args.at, g))
    out = Path(args.out) if args.out else _out_dir(None) / "slice.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    header = (
        f"rows: {DIM_NAMES[dims[0]]} = {g.axes[dims[0]].tolist()}\n"
        f"cols: {DIM_NAMES[dims[1]]} = {g.axes[dims[1]].tolist()}"
    )
    np.savetxt(out, vals, delimiter=",", fmt="%.9g", header=header)
    written = [out]
    if args.pgm:
        write_pgm(vals, Path(args.pgm))
        written.append(Path(args.pgm))
    pipeline.write_manifest(out.parent, "slice", sys.argv[1:], _config(args.config) if args.terminal else None, written)
    print(f"slice {vals.shape[0]}x{vals.shape[1]} written to {out}")
    return 0


def cmd_synth(args) -> int:
    cfg = _config(args.config)
    out = _out_dir(args.out)
    lib = cfg.build_library()
    if args.n == 1:
        templates = [ScenarioTemplate(args.template, args.role, args.seed, _params(args.param))]
    else:
        templates = suite_templates(args.template, args.n, args.seed, args.role, **_params(args.param))
    files = []
    for k, tpl in enumerate(templates):
        files.append(save_log(synth_scenario(tpl, cfg, lib), out / f"{tpl.template}-{k:03d}.jsonl"))
    pipeline.write_manifest(out, "synth", sys.argv[1:], cfg, files, {"templates": [t.to_dict() for t in templates]})
    print(f"{len(files)} log(s) written to {out}")
    return 0


def _params(items) -> dict:
    params = {}
    for item in items or []:
        name, _, val = item.partition("=")
        try:
            params[name] = float(val)
        except ValueError:
            raise CliError(f"bad --param {item!r}; use name=number") from None
    return params


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="negobrt", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="run configuration JSON (defaults when omitted)")
        if out:
            sp.add_argument("--out", help=f"output path (default from ${OUT_ENV} or ./negobrt-out)")

    sp = sub.add_parser("solve", help="solve the tube bank and the full-bound tube")
    common(sp)
    sp.add_argument("--logs", nargs="*", default=[], help="logs whose prediction bounds should be banked")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("replay", help="replay a log under the chosen monitor modes")
    common(sp)
    sp.add_argument("--bank", required=True)
    sp.add_argument("--log", required=True)
    sp.add_argument("--modes", default=",".join(MODES))
    sp.add_argument("--delta", type=float)
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("suite", help="synthesize, replay and compare a batch of scenarios")
    common(sp)
    sp.add_argument("--bank", help="precomputed bank directory (solved when omitted)")
    sp.add_argument("--template", choices=TEMPLATES, default="merge-yield")
    sp.add_argument("--role", choices=GENERATORS, default="follower")
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--modes", default=",".join(MODES))
    sp.add_argument("--delta", type=float)
    sp.set_defaults(func=cmd_suite)

    sp = sub.add_parser("infer", help="role-belief trace for a log")
    common(sp)
    sp.add_argument("--log", required=True)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("slice", help="export a 2D slice of a value function as CSV (+ optional PGM)")
    common(sp)
    sp.add_argument("--vf", help="value-function file")
    sp.add_argument("--terminal", action="store_true", help="slice the collision level set of the config grid")
    sp.add_argument("--dims", nargs=2, default=["x_rel", "y_rel"])
    sp.add_argument("--at", nargs="*", default=[], help="fixed coordinates, e.g. psi_rel=0 v_r=5 v_h=5")
    sp.add_argument("--pgm", help="also write a sign(V) graymap here")
    sp.set_defaults(func=cmd_slice)

    sp = sub.add_parser("synth", help="generate synthetic interaction logs")
    common(sp)
    sp.add_argument("--template", choices=TEMPLATES, default="merge-yield")
    sp.add_argument("--role", choices=GENERATORS, default="follower")
    sp.add_argument("--n", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--param", nargs="*", help="template parameter overrides, name=value")
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, SchemaError, GridError, BankError, SolverError, ValueError, OSError) as exc:
        print(f"negobrt {args.command}: error: {exc}", file=sys.stderr)
        return 2

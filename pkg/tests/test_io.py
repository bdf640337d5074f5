import json
import math

import numpy as np
import pytest

from negobrt.config import LibraryConfig, RunConfig
from negobrt.hji import NumericsConfig
from negobrt.logio import (
    InteractionLog,
    ModeResult,
    ReplayReport,
    SafetyDecision,
    SchemaError,
    dumps_log,
    dumps_report,
    load_log,
    load_report,
    save_log,
    save_report,
)
from negobrt.synth import ScenarioError, ScenarioTemplate, suite_templates, synth_scenario


@pytest.fixture(scope="module")
def cfg():
    return RunConfig(library=LibraryConfig(n=12))


@pytest.fixture(scope="module")
def synth_log(cfg):
    return synth_scenario(ScenarioTemplate("merge-yield", "follower", 4), cfg)


# ---- logs ----------------------------------------------------------------


def test_log_round_trip(tmp_path, synth_log):
    p = save_log(synth_log, tmp_path / "a.jsonl")
    back = load_log(p)
    for k in ("t", "robot", "human", "u_r", "u_h"):
        assert np.array_equal(getattr(back, k), getattr(synth_log, k))
    assert all(np.array_equal(a, b) for a, b in zip(back.predictions, synth_log.predictions))
    assert back.role == "follower" and back.meta == json.loads(json.dumps(synth_log.meta))
    assert dumps_log(back) == dumps_log(synth_log)


def test_log_header_fields(tmp_path, synth_log):
    head = json.loads(dumps_log(synth_log).splitlines()[0])
    assert head["schema"] == "negobrt.interaction-log" and head["schema_version"] == 1


def _corrupt(tmp_path, synth_log, fn):
    lines = dumps_log(synth_log).splitlines()
    lines = fn(lines)
    p = tmp_path / "bad.jsonl"
    p.write_text("\n".join(lines) + "\n")
    return p


def _edit_record(i, **changes):
    def fn(lines):
        rec = json.loads(lines[i])
        rec.update(changes)
        lines[i] = json.dumps(rec)
        return lines

    return fn


@pytest.mark.parametrize(
    "fn, needle",
    [
        (lambda ls: ls[:1], "no records"),
        (lambda ls: ["{not json"] + ls[1:], "invalid JSON"),
        (_edit_record(0, schema_version=7), "schema_version"),
        (_edit_record(3, robot=[0, 0, 0]), "robot"),
        (_edit_record(3, t=-1.0), "timestamp"),
        (_edit_record(3, human=[0, 0, 0, None]), "finite"),
        (_edit_record(3, pred=[[0, 1]]), "pred"),
        (lambda ls: ls[:3] + ["[]"] + ls[4:], "object"),
    ],
)
def test_log_schema_errors(tmp_path, synth_log, fn, needle):
    with pytest.raises(SchemaError) as exc:
        load_log(_corrupt(tmp_path, synth_log, fn))
    assert any(needle in pr for pr in exc.value.problems)


def test_log_reports_every_problem(tmp_path, synth_log):
    def fn(lines):
        for i in (2, 5, 9):
            rec = json.loads(lines[i])
            rec["u_h"] = "x"
            lines[i] = json.dumps(rec)
        return lines

    with pytest.raises(SchemaError) as exc:
        load_log(_corrupt(tmp_path, synth_log, fn))
    assert len(exc.value.problems) == 3


def test_log_array_validation():
    n = 3
    args = dict(
        t=np.arange(n) * 0.1, robot=np.zeros((n, 4)), human=np.zeros((n, 4)), u_r=np.zeros((n, 2)), u_h=np.zeros((n, 2)),
        predictions=[np.zeros((0, 5))] * n, robot_path=np.zeros((2, 2)), human_path=np.zeros((2, 2)),
        sensor_period=0.1, verification_period=0.1,
    )
    InteractionLog(**args)
    bad = dict(args, human=np.array([[0, 0, 0, -1.0]] * n))
    with pytest.raises(SchemaError):
        InteractionLog(**bad)
    with pytest.raises(SchemaError):
        InteractionLog(**dict(args, sensor_period=0.2))
    with pytest.raises(SchemaError):
        InteractionLog(**dict(args, t=np.array([0.0, 0.0, 0.1])))


# ---- reports -------------------------------------------------------------


def _report():
    res = ModeResult("full", True, {"t": 1.0, "rel_speed": 2.0, "rel_distance": 9.5}, math.inf)
    res.decisions = [SafetyDecision(0.9, "full", False, 0.5), SafetyDecision(1.0, "full", True, -0.1, False, (-6.0, 0.1))]
    res.belief_trace = [[1.0, 0.5]]
    res.bucket_trace = [[1.0, ["full"], 1.0]]
    nego = ModeResult("negotiation", False, None, 3.5, [SafetyDecision(1.0, "negotiation", False, None)])
    rep = ReplayReport("x", {"full": res, "negotiation": nego}, math.inf, "abc", "follower", {"full": 0.1})
    rep.assumptions = RunConfig().assumptions()
    return rep


def test_report_round_trip(tmp_path):
    rep = _report()
    back = load_report(save_report(rep, tmp_path / "r.jsonl"))
    assert dumps_report(back) == dumps_report(rep)
    assert back.modes["full"].decisions[1].override == (-6.0, 0.1)
    assert back.min_ttc_log == math.inf and back.modes["negotiation"].min_ttc == 3.5
    assert back.assumptions == RunConfig().assumptions()
    # wall-clock timing never reaches the file
    assert "timing" not in (tmp_path / "r.jsonl").read_text()


def test_report_rejects_other_files(tmp_path):
    p = tmp_path / "r.jsonl"
    p.write_text(json.dumps({"schema": "other"}) + "\n")
    with pytest.raises(SchemaError):
        load_report(p)


# ---- config --------------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = RunConfig(delta=0.8, lattice_q=1.0, numerics=NumericsConfig(disturbance_step=1.0), prior=[0.3, 0.7])
    back = RunConfig.load(cfg.save(tmp_path / "c.json"))
    assert back == cfg and back.digest() == cfg.digest()
    assert RunConfig().digest() != cfg.digest()


@pytest.mark.parametrize(
    "kw",
    [
        dict(delta=1.5),
        dict(lattice_q=0.0),
        dict(lattice_q=0.75),
        dict(prior=(0.6, 0.6)),
        dict(belief_floor=0.5),
        dict(sensor_period=0.2),
        dict(steering_samples=0),
        dict(r_coll=0.0),
        dict(library=LibraryConfig(clamp=(-8.0, 4.0))),
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        RunConfig(**kw)


def test_config_from_dict_errors():
    d = RunConfig().to_dict()
    with pytest.raises(ValueError):
        RunConfig.from_dict({**d, "version": 2})
    with pytest.raises(ValueError):
        RunConfig.from_dict({**d, "bogus": 1})


# ---- synthesis -----------------------------------------------------------


def test_synth_deterministic(cfg):
    tpl = ScenarioTemplate("merge-yield", "follower", 9)
    assert dumps_log(synth_scenario(tpl, cfg)) == dumps_log(synth_scenario(tpl, cfg))


@pytest.mark.parametrize("template", ["merge-yield", "merge-contest", "head-on", "car-follow"])
@pytest.mark.parametrize("role", ["follower", "leader", "adversarial", "replay"])
def test_synth_templates_produce_valid_logs(cfg, template, role):
    lg = synth_scenario(ScenarioTemplate(template, role, 1, {"duration": 2.0}), cfg)
    assert len(lg) == 51 and lg.role == role
    assert np.all(lg.human[:, 3] <= 11.0 + 1e-9)
    assert np.all(lg.u_h[:, 0] >= -6 - 1e-9) and np.all(lg.u_h[:, 0] <= 4 + 1e-9)


def test_synth_rejects_bad_templates(cfg):
    with pytest.raises(ScenarioError):
        ScenarioTemplate("merge-yield", "follower", 0, {"bogus": 1.0})
    with pytest.raises(ScenarioError):
        ScenarioTemplate("roundabout", "follower", 0)
    with pytest.raises(ScenarioError):
        synth_scenario(ScenarioTemplate("merge-yield", "follower", 0, {"d_r": 100.0, "v_r": 0.5}), cfg)


def test_suite_templates_seeding():
    a = suite_templates("merge-yield", 4, seed=3, role="follower", v_h=8.0)
    assert [t.seed for t in a] == [3000, 3001, 3002, 3003]
    assert all(t.params["v_h"] == 8.0 for t in a)
    assert a == suite_templates("merge-yield", 4, seed=3, role="follower", v_h=8.0)

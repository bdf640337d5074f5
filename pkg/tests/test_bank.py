import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negobrt.bank import (
    Bank,
    BankError,
    BoundBucket,
    SolveInputs,
    build_bank,
    bucket_of,
    contains,
    expected_probs,
    library_buckets,
    select_brt,
    selection_order,
)
from negobrt.dynamics import ControlBounds, VehicleParams
from negobrt.game import AccelController, ControllerLibrary, RoleBelief, sample_library
from negobrt.grid import DimSpec, GridSpec, build_grid, interpolate
from negobrt.hji import NumericsConfig, TargetSpec


def small_inputs(a_h=(-2.0, 2.0)):
    g = build_grid(
        GridSpec(
            (
                DimSpec(-12, 12, 9),
                DimSpec(-12, 12, 9),
                DimSpec(-math.pi, math.pi, 8, True),
                DimSpec(0, 10, 5),
                DimSpec(0, 10, 5),
            )
        )
    )
    return SolveInputs(
        g,
        VehicleParams(),
        ControlBounds(a_h=a_h),
        TargetSpec(3.0),
        NumericsConfig(tau=-1.0, disturbance_step=1.0),
        steering_samples=3,
    )


# the three constants of the trace example followed by a controller spanning [-1, 1]
LIB = ControllerLibrary(
    (AccelController(-1, 0, 0), AccelController(0, 0, 0), AccelController(1, 0, 0), AccelController(-1, 1, 0))
)


@pytest.fixture(scope="module")
def bank():
    return build_bank(LIB, 1.0, small_inputs())


# ---- buckets -------------------------------------------------------------


@pytest.mark.parametrize("q", [0.25, 0.5, 1.0])
def test_bucket_of_vertex_example(q):
    b = bucket_of(AccelController(0.0, -2.0, 1.0, 2.0), q)
    assert b.interval == (-1.0, 0.0)


def test_bucket_of_constant():
    b = bucket_of(AccelController(0.3, 0, 0), 0.5)
    assert b.interval == (0.0, 0.5)
    assert bucket_of(AccelController(1.0, 0, 0), 0.5).interval == (1.0, 1.0)


def test_bucket_contains_dense_range():
    lib = sample_library(100, seed=8)
    tau = np.linspace(0, 2, 1001)
    for c in lib:
        a = c(tau)
        for q in (0.5, 1.0):
            b = bucket_of(c, q)
            assert b.lo <= a.min() + 1e-12 and a.max() - 1e-12 <= b.hi
            assert b.hi - b.lo <= (a.max() - a.min()) + 2 * q + 1e-9


def test_bucket_validation_and_covers():
    with pytest.raises(ValueError):
        BoundBucket(2, 1, 1.0)
    with pytest.raises(ValueError):
        BoundBucket(0, 1, 0.0)
    outer, inner = BoundBucket(-3, 3, 0.5), BoundBucket(-1, 2, 0.5)
    assert outer.covers(inner) and not inner.covers(outer)
    assert outer.key == "-1.500_+1.500"


def test_library_dedup():
    lib = ControllerLibrary((AccelController(-1, 0, 0), AccelController(0, 0, 0), AccelController(1, 0, 0)))
    assert [b.interval for b in library_buckets(lib, 1.0)] == [(-1.0, -1.0), (0.0, 0.0), (1.0, 1.0)]
    same = ControllerLibrary((AccelController(0.0, 1.0, 0.0), AccelController(2.0, -1.0, 0.0)))
    assert len(library_buckets(same, 1.0)) == 1
    assert len(library_buckets(sample_library(200), 0.5)) <= (10 / 0.5) ** 2


# ---- building ------------------------------------------------------------


def test_build_dedups_and_keeps_full(bank):
    assert [b.interval for b in bank.buckets] == [(-1.0, -1.0), (-1.0, 1.0), (0.0, 0.0), (1.0, 1.0)]
    assert bank.full.meta["a_h"] == [-2.0, 2.0]
    for b, e in bank.entries.items():
        assert e.vf.meta["a_h"] == list(b.interval)


def test_nested_buckets_give_nested_tubes(bank):
    wide = bank.entry(BoundBucket(-1, 1, 1.0)).vf.values
    for k in (-1, 0, 1):
        assert np.all(wide <= bank.entry(BoundBucket(k, k, 1.0)).vf.values)
    assert np.all(bank.full.values <= wide)


def test_build_rejects_misaligned_or_outside():
    with pytest.raises(BankError):
        build_bank(LIB, 1.0, small_inputs((-1.5, 2.0)))
    with pytest.raises(BankError):
        build_bank(LIB, 1.0, small_inputs((0.0, 2.0)))


def test_covering_and_resolve(bank):
    b, vf = bank.covering(BoundBucket(0, 1, 1.0))
    assert b == BoundBucket(-1, 1, 1.0) and vf is bank.entries[b].vf
    assert bank.covering(BoundBucket(-2, 0, 1.0)) == (None, bank.full)
    assert bank.resolve(BoundBucket(0, 0, 1.0)) == BoundBucket(0, 0, 1.0)
    with pytest.raises(BankError):
        bank.resolve(BoundBucket(-2, 0, 1.0))
    with pytest.raises(BankError):
        bank.entry(BoundBucket(5, 5, 1.0))


def test_union_is_elementwise_min_and_cached(bank):
    keys = [BoundBucket(-1, -1, 1.0), BoundBucket(1, 1, 1.0)]
    u = bank.union(keys)
    want = np.minimum(bank.entries[keys[0]].vf.values, bank.entries[keys[1]].vf.values)
    assert np.array_equal(u.values, want)
    assert bank.union(keys[::-1]) is u
    with pytest.raises(BankError):
        bank.union([])


def test_save_load_round_trip(bank, tmp_path):
    bank.save(tmp_path / "b")
    back = Bank.load(tmp_path / "b")
    assert back.buckets == bank.buckets and back.q == bank.q
    assert back.inputs_manifest == json.loads(json.dumps(bank.inputs_manifest))
    for b in bank.buckets:
        assert np.array_equal(back.entries[b].vf.values, bank.entries[b].vf.values.astype("<f4").astype(float))
    with pytest.raises(BankError):
        Bank.load(tmp_path / "missing")
    idx = tmp_path / "b" / "index.json"
    data = json.loads(idx.read_text())
    data["version"] = 99
    idx.write_text(json.dumps(data))
    with pytest.raises(BankError):
        Bank.load(tmp_path / "b")


# ---- selection -----------------------------------------------------------


def test_expected_probs_examples():
    pf, pl = np.array([0.5, 0.5]), np.array([0.1, 0.9])
    assert expected_probs(RoleBelief(1.0, 0.0), pf, pl).tolist() == pf.tolist()
    assert expected_probs(RoleBelief(0.7, 0.3), pf, pl)[0] == pytest.approx(0.38, abs=1e-15)
    with pytest.raises(ValueError):
        expected_probs(RoleBelief(), [0.5, 0.5], [1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1))
def test_expected_probs_normalized(seed, b_f):
    rng = np.random.default_rng(seed)
    pf, pl = rng.dirichlet(np.ones(20)), rng.dirichlet(np.ones(20))
    assert abs(expected_probs(RoleBelief(b_f, 1 - b_f), pf, pl).sum() - 1) <= 1e-12


def test_selection_order_is_stable():
    assert selection_order([0.2, 0.4, 0.2, 0.2]).tolist() == [1, 0, 2, 3]


def test_trace_example(bank):
    lib3 = ControllerLibrary(LIB.controllers[:3])
    comp = select_brt(bank, lib3, [0.6, 0.3, 0.1], 0.9)
    assert comp.controllers == (0, 1)
    assert comp.buckets == (BoundBucket(-1, -1, 1.0), BoundBucket(0, 0, 1.0))
    assert comp.P == pytest.approx(0.9)


def test_delta_zero_takes_top_only(bank):
    comp = select_brt(bank, LIB, [0.1, 0.2, 0.3, 0.4], 0.0)
    assert comp.controllers == (3,) and comp.buckets == (BoundBucket(-1, 1, 1.0),)


def test_delta_one_is_whole_bank(bank):
    comp = select_brt(bank, LIB, [0.25, 0.25, 0.25, 0.25], 1.0)
    assert len(comp.controllers) == 4
    want = np.min(np.stack([e.vf.values for e in bank.entries.values()]), axis=0)
    assert np.array_equal(comp.vf.values, want)


def test_probability_counts_per_controller(bank):
    # two controllers share a bucket; both probabilities accumulate
    lib = ControllerLibrary((AccelController(0, 0, 0), AccelController(0.0, 0.0, 0.0, 2.0), AccelController(1, 0, 0)))
    comp = select_brt(bank, lib, [0.45, 0.45, 0.1], 0.9)
    assert comp.controllers == (0, 1) and comp.buckets == (BoundBucket(0, 0, 1.0),)


def test_delta_monotone_on_random_probs(bank):
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = rng.dirichlet(np.ones(4))
        d1, d2 = sorted(rng.uniform(0, 1, 2))
        a, b = select_brt(bank, LIB, p, d1), select_brt(bank, LIB, p, d2)
        assert set(a.buckets) <= set(b.buckets)
        assert np.all(b.vf.values <= a.vf.values)
        assert np.all(bank.full.values <= a.vf.values)


def test_select_validation(bank):
    with pytest.raises(ValueError):
        select_brt(bank, LIB, [0.25] * 4, 1.5)
    with pytest.raises(ValueError):
        select_brt(bank, LIB, [0.5, 0.5], 0.5)


def test_contains_matches_entry_disjunction(bank):
    comp = select_brt(bank, LIB, [0.5, 0.1, 0.3, 0.1], 0.8)
    g = bank.grid
    rng = np.random.default_rng(2)
    pts = rng.uniform(g.lower, g.upper, size=(1000, 5))
    pts[:, 2] = rng.uniform(-math.pi, math.pi, 1000)
    vfs = [bank.entries[b].vf for b in comp.buckets]
    hits = 0
    for s in pts:
        got = contains(comp, s)
        # min of interpolants differs from interpolated min off the nodes, so
        # compare against the min of the entries' node values interpolated jointly
        want = interpolate(comp.vf, s) < 0
        assert got == want
        # membership in any single entry implies membership in the union
        if any(interpolate(v, s) < 0 for v in vfs):
            assert got
        hits += got
    assert 0 < hits < 1000
    for node in g.nodes()[::97]:
        assert contains(comp, node) == any(interpolate(v, node) < 0 for v in vfs)

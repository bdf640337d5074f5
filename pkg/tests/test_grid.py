import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negobrt.grid import (
    DimSpec,
    GridError,
    GridSpec,
    OutOfDomainError,
    ValueFunction,
    build_grid,
    gradient_at,
    interpolate,
    interpolate_many,
    load_value_function,
    one_sided_derivatives,
    save_value_function,
)


def test_nodes_1d():
    g = build_grid(GridSpec((DimSpec(0.0, 1.0, 3),)))
    assert g.axes[0].tolist() == [0.0, 0.5, 1.0]
    assert g.node([1]).tolist() == [0.5]


def test_periodic_2d():
    g = build_grid(GridSpec((DimSpec(-1.0, 1.0, 5), DimSpec(0.0, 2 * math.pi, 8, True))))
    assert g.size == 40
    assert g.nodes().shape == (40, 2)
    assert g.spacing[1] == pytest.approx(2 * math.pi / 8)
    assert g.wrap(np.array([[0.0, 2 * math.pi + 0.1]]))[0, 1] == pytest.approx(0.1)


@pytest.mark.parametrize(
    "dim",
    [DimSpec(0.0, 1.0, 2), DimSpec(1.0, 1.0, 5), DimSpec(2.0, 1.0, 5), DimSpec(0.0, math.inf, 5)],
)
def test_invalid_specs(dim):
    with pytest.raises(GridError):
        build_grid(GridSpec((dim,)))


def test_value_function_validation():
    g = build_grid(GridSpec((DimSpec(0.0, 1.0, 3),)))
    with pytest.raises(GridError):
        ValueFunction(g, [1.0, 2.0])
    with pytest.raises(GridError):
        ValueFunction(g, [1.0, 2.0, 3.0], tau=0.5)
    with pytest.raises(GridError):
        ValueFunction(g, [1.0, np.nan, 3.0])
    vf = ValueFunction(g, [1.0, 2.0, 3.0], tau=-1.0)
    with pytest.raises(ValueError):
        vf.values[0] = 5.0


def test_midpoint():
    g = build_grid(GridSpec((DimSpec(0.0, 1.0, 3),)))
    vf = ValueFunction(g, [1.0, 3.0, 0.0])
    assert interpolate(vf, [0.25]) == 2.0


def _grid3():
    return build_grid(GridSpec.from_lists([-1, 0, -math.pi], [2, 1, math.pi], [4, 5, 6], [False, False, True]))


def test_node_exactness():
    g = _grid3()
    rng = np.random.default_rng(0)
    vf = ValueFunction(g, rng.normal(size=g.size))
    got = interpolate_many(vf, g.nodes())
    assert np.array_equal(got, vf.flat)


def _brute(vf, s):
    """Independent multilinear weights: sum over the 2^n corners of the enclosing cell."""
    g = vf.grid
    s = g.wrap(np.asarray(s, float)[None])[0]
    base, fr = [], []
    for k in range(g.ndim):
        r = (s[k] - g.lower[k]) / g.spacing[k]
        i = min(int(math.floor(r)), g.shape[k] - 1 if g.periodic[k] else g.shape[k] - 2)
        base.append(i)
        fr.append(r - i)
    total = 0.0
    for corner in itertools.product((0, 1), repeat=g.ndim):
        w = 1.0
        idx = []
        for k, c in enumerate(corner):
            w *= fr[k] if c else 1 - fr[k]
            j = base[k] + c
            idx.append(j % g.shape[k] if g.periodic[k] else j)
        total += w * vf.values[tuple(idx)]
    return total


def test_random_3d_matches_barycentric_oracle():
    g = _grid3()
    rng = np.random.default_rng(1)
    vf = ValueFunction(g, rng.normal(size=g.size))
    pts = rng.uniform(g.lower, g.upper, size=(200, 3))
    got = interpolate_many(vf, pts)
    want = np.array([_brute(vf, p) for p in pts])
    assert np.max(np.abs(got - want)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.tuples(st.floats(-1, 2), st.floats(0, 1), st.floats(-10, 10)), st.integers(0, 1000))
def test_convexity_and_periodic_continuity(s, seed):
    g = _grid3()
    vf = ValueFunction(g, np.random.default_rng(seed).normal(size=g.size))
    v = interpolate(vf, s)
    assert interpolate(vf, (s[0], s[1], s[2] + 2 * math.pi)) == pytest.approx(v, abs=1e-12)
    # bound by the enclosing nodes
    lo = [min(int((s[k] - g.lower[k]) // g.spacing[k]), g.shape[k] - 2) for k in (0, 1)]
    p = (s[2] - g.lower[2]) / g.spacing[2]
    ip = int(math.floor(p)) % g.shape[2]
    corners = [vf.values[lo[0] + a, lo[1] + b, (ip + c) % g.shape[2]] for a in (0, 1) for b in (0, 1) for c in (0, 1)]
    assert min(corners) - 1e-12 <= v <= max(corners) + 1e-12


def test_out_of_domain_policies():
    g = _grid3()
    vf = ValueFunction(g, np.zeros(g.size))
    with pytest.raises(OutOfDomainError):
        interpolate(vf, [5.0, 0.5, 0.0])
    val, flag = interpolate_many(vf, [[5.0, 0.5, 0.0], [0.0, 0.5, 0.0]], "clamp")
    assert flag.tolist() == [True, False]
    with pytest.raises(GridError):
        interpolate(vf, [0.0, 0.5, 0.0], "extrapolate")


def test_derivatives_linear_and_constant():
    g = build_grid(GridSpec.from_lists([0.0], [4.0], [9]))
    lin = ValueFunction(g, 2 * g.axes[0])
    const = ValueFunction(g, np.full(9, 3.0))
    for i in range(9):
        left, right = one_sided_derivatives(lin, [i], 0)
        assert left == pytest.approx(2.0, abs=1e-12) and right == pytest.approx(2.0, abs=1e-12)
        assert one_sided_derivatives(const, [i], 0) == (0.0, 0.0)


def test_derivatives_quadratic_by_hand():
    # x = 0, 0.5, 1, 1.5, 2 ; v = x^2 = 0, .25, 1, 2.25, 4
    g = build_grid(GridSpec.from_lists([0.0], [2.0], [5]))
    vf = ValueFunction(g, g.axes[0] ** 2)
    assert one_sided_derivatives(vf, [2], 0) == pytest.approx((1.5, 2.5))
    # boundary repeats the adjacent slope
    assert one_sided_derivatives(vf, [0], 0) == pytest.approx((0.5, 0.5))
    assert one_sided_derivatives(vf, [4], 0) == pytest.approx((3.5, 3.5))


def test_derivatives_periodic_wrap_and_index_check():
    g = build_grid(GridSpec((DimSpec(0.0, 2 * math.pi, 8, True),)))
    vf = ValueFunction(g, np.arange(8.0))
    h = g.spacing[0]
    assert one_sided_derivatives(vf, [0], 0) == pytest.approx((-7 / h, 1 / h))
    with pytest.raises(GridError):
        one_sided_derivatives(vf, [8], 0)


def test_gradient_on_linear_field():
    g = build_grid(GridSpec.from_lists([-1, -1], [1, 1], [11, 11]))
    X, Y = g.broadcast_axes()
    vf = ValueFunction(g, (3 * X - 2 * Y + 0 * (X + Y)))
    assert gradient_at(vf, [0.13, -0.4]) == pytest.approx([3.0, -2.0], abs=1e-12)


def test_file_round_trip(tmp_path):
    g = _grid3()
    vals = np.random.default_rng(2).normal(size=g.size)
    vf = ValueFunction(g, vals, tau=-1.5, meta={"bucket": "x"})
    p = save_value_function(vf, tmp_path / "v.hjvf")
    raw = p.read_bytes()
    assert raw[:4] == b"HJVF"
    back = load_value_function(p)
    assert back.grid == g and back.tau == -1.5 and back.meta == {"bucket": "x"}
    assert np.array_equal(back.flat, vals.astype("<f4").astype(float))


def test_file_bad_magic(tmp_path):
    p = tmp_path / "bad.hjvf"
    p.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(GridError):
        load_value_function(p)

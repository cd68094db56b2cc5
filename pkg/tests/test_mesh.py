import math

import numpy as np
import pytest

from semictl.mesh import (
    PRIMAL,
    MeshFn,
    Region,
    RegionMismatch,
    boundary,
    build_mesh,
    dual,
    integral,
    inner,
    norm,
    normal_and_trace,
)


def test_smallest_mesh():
    m = build_mesh(1, 1)
    assert m.h == 0.5
    np.testing.assert_array_equal(m.points(PRIMAL), [[0.5]])


def test_counts_2d():
    m = build_mesh(2, 3)
    assert m.size(PRIMAL) == 9
    assert m.size(dual(0)) == 12
    assert m.size(boundary(0)) == 6


def test_counts_3d():
    m = build_mesh(3, 2)
    assert m.size(PRIMAL) == 8
    assert m.h == pytest.approx(1 / 3)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("N", [1, 2, 5, 15])
def test_cardinalities(n, N):
    m = build_mesh(n, N)
    assert m.h * (N + 1) == pytest.approx(1.0)
    assert m.size(PRIMAL) == N**n
    for i in range(n):
        assert m.size(dual(i)) == (N + 1) * N ** (n - 1)
        assert m.size(boundary(i)) == 2 * N ** (n - 1)


def test_dual_coordinates_are_half_integer():
    m = build_mesh(2, 3)
    xs = m.axis_coords(dual(1), 1)
    np.testing.assert_allclose(xs / m.h, np.arange(4) + 0.5)
    np.testing.assert_allclose(m.axis_coords(dual(1), 0) / m.h, [1, 2, 3])


def test_boundary_coordinates():
    m = build_mesh(2, 3)
    np.testing.assert_array_equal(m.axis_coords(boundary(0), 0), [0.0, 1.0])


@pytest.mark.parametrize("n,N", [(0, 1), (1, 0), (-1, 3)])
def test_rejects_degenerate(n, N):
    with pytest.raises(ValueError):
        build_mesh(n, N)


def test_integral_examples():
    m1 = build_mesh(1, 1)
    assert integral(MeshFn(m1, PRIMAL, [2.0])) == 1.0
    m2 = build_mesh(2, 3)
    assert integral(m2.full(1.0)) == pytest.approx(9 / 16)
    assert integral(m2.full(1.0, boundary(0))) == pytest.approx(6 / 4)


def test_integral_over_subregion():
    m = build_mesh(1, 3)
    f = m.full(1.0)
    assert integral(f, Region((0.3,), (0.8,))) == pytest.approx(2 * 0.25)


def test_mixed_regions_rejected():
    m = build_mesh(2, 3)
    with pytest.raises(RegionMismatch):
        m.zeros(PRIMAL) + m.zeros(dual(0))
    with pytest.raises(RegionMismatch):
        m.zeros(PRIMAL) * build_mesh(2, 4).zeros(PRIMAL)


def test_meshfn_is_immutable():
    f = build_mesh(1, 3).zeros()
    with pytest.raises(ValueError):
        f.values[0] = 1.0
    with pytest.raises(AttributeError):
        f.loc = dual(0)


def test_meshfn_length_checked():
    with pytest.raises(ValueError):
        MeshFn(build_mesh(2, 3), PRIMAL, np.zeros(8))


def test_norm_examples():
    m = build_mesh(1, 1)
    one = MeshFn(m, PRIMAL, [1.0])
    assert norm(build_mesh(2, 3).full(-3.0), math.inf) == 3.0
    assert norm(one, 2) == pytest.approx(math.sqrt(0.5))
    assert norm(one, 2, "W1p") == pytest.approx(math.sqrt(4.5))


def test_norm_rejects_bad_exponent():
    with pytest.raises(ValueError):
        norm(build_mesh(1, 2).full(1.0), 0.5)
    with pytest.raises(ValueError):
        norm(build_mesh(1, 2).full(1.0), 2, "H2")


def test_inner_is_integral_of_product(rng):
    m = build_mesh(2, 4)
    u = MeshFn(m, PRIMAL, rng.standard_normal(16))
    v = MeshFn(m, PRIMAL, rng.standard_normal(16))
    assert inner(u, v) == pytest.approx(m.h**2 * np.dot(u.flat, v.flat))


def test_trace_endpoints():
    m = build_mesh(1, 1)
    nu, tr = normal_and_trace(MeshFn(m, dual(0), [3.0, 7.0]))
    np.testing.assert_array_equal(nu.values, [-1.0, 1.0])
    np.testing.assert_array_equal(tr.values, [3.0, 7.0])


def test_trace_of_constant():
    m = build_mesh(3, 3)
    nu, tr = normal_and_trace(m.full(2.5, dual(2)))
    assert tr.loc == boundary(2)
    np.testing.assert_array_equal(tr.values, 2.5)
    assert set(np.unique(nu.values)) == {-1.0, 1.0}


def test_trace_needs_dual():
    with pytest.raises(RegionMismatch):
        normal_and_trace(build_mesh(2, 2).zeros(PRIMAL))


def test_region_validation():
    with pytest.raises(ValueError):
        Region((0.5,), (0.5,))
    inner_box = Region((0.4, 0.4), (0.6, 0.6))
    outer_box = Region((0.2, 0.2), (0.8, 0.8))
    assert inner_box.strictly_inside(outer_box)
    assert not outer_box.strictly_inside(inner_box)


def test_restrict_zeroes_outside():
    m = build_mesh(1, 3)
    f = m.full(1.0).restrict(Region((0.3,), (0.6,)))
    np.testing.assert_array_equal(f.values, [0.0, 1.0, 0.0])

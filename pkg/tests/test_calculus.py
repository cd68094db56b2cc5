import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semictl.calculus import (
    adjoint_drift,
    average,
    diff,
    drift_operator,
    laplacian_gamma,
    reg_gamma,
    stencil,
)
from semictl.identities import IDENTITY_NAMES, identity_residuals
from semictl.mesh import PRIMAL, MeshFn, RegionMismatch, build_mesh, dual, inner


def pointwise_diff(values, i, h):
    """Oracle: pad with zeros along axis i and take half-step differences by slicing."""
    pad = [(0, 0)] * values.ndim
    pad[i] = (1, 1)
    ext = np.pad(values, pad)
    hi = np.take(ext, range(1, ext.shape[i]), axis=i)
    lo = np.take(ext, range(0, ext.shape[i] - 1), axis=i)
    return (hi - lo) / h


def pointwise_dual_diff(values, i, h):
    hi = np.take(values, range(1, values.shape[i]), axis=i)
    lo = np.take(values, range(0, values.shape[i] - 1), axis=i)
    return (hi - lo) / h


def test_diff_single_point():
    m = build_mesh(1, 1)
    d = diff(MeshFn(m, PRIMAL, [1.0]), 0)
    assert d.loc == dual(0)
    np.testing.assert_array_equal(d.values, [2.0, -2.0])


def test_average_single_point():
    m = build_mesh(1, 1)
    np.testing.assert_array_equal(average(MeshFn(m, PRIMAL, [1.0]), 0).values, [0.5, 0.5])


def test_constants_on_dual():
    m = build_mesh(2, 4)
    c = m.full(3.0, dual(1))
    np.testing.assert_array_equal(diff(c, 1).values, 0.0)
    np.testing.assert_allclose(average(c, 1).values, 3.0)


def test_linear_function_interior():
    m = build_mesh(2, 5)
    f = m.sample(lambda x, y: y)
    d = diff(f, 1).values[:, 1:-1]
    np.testing.assert_allclose(d, 1.0, rtol=0, atol=1e-12)
    a = average(f, 1).values[:, 1:-1]
    np.testing.assert_allclose(a, m.coords(dual(1))[1][:, 1:-1], atol=1e-15)


@given(n=st.integers(1, 3), N=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_diff_matches_slicing_oracle(n, N, seed):
    rng = np.random.default_rng(seed)
    m = build_mesh(n, N)
    u = MeshFn(m, PRIMAL, rng.standard_normal(m.size(PRIMAL)))
    for i in range(n):
        np.testing.assert_allclose(diff(u, i).values, pointwise_diff(u.values, i, m.h), atol=1e-12)
        v = MeshFn(m, dual(i), rng.standard_normal(m.size(dual(i))))
        np.testing.assert_allclose(diff(v, i).values, pointwise_dual_diff(v.values, i, m.h), atol=1e-12)


@given(n=st.integers(1, 3), N=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_transpose_relations(n, N, seed):
    m = build_mesh(n, N)
    for i in range(n):
        D_pd = stencil(m, "D", i, PRIMAL).toarray()
        D_dp = stencil(m, "D", i, dual(i)).toarray()
        A_pd = stencil(m, "A", i, PRIMAL).toarray()
        A_dp = stencil(m, "A", i, dual(i)).toarray()
        np.testing.assert_allclose(D_pd.T, -D_dp, atol=0)
        np.testing.assert_allclose(A_pd.T, A_dp, atol=0)
        # A_i D_i = D_i A_i on primal functions
        np.testing.assert_allclose(A_dp @ D_pd, D_dp @ A_pd, atol=1e-9)


def test_region_algebra():
    m = build_mesh(2, 3)
    with pytest.raises(RegionMismatch):
        diff(m.zeros(dual(0)), 1)
    with pytest.raises(ValueError):
        diff(m.zeros(), 2)


def test_laplacian_single_point():
    m = build_mesh(1, 1)
    out = laplacian_gamma(MeshFn(m, PRIMAL, [1.0]), [m.full(1.0, dual(0))])
    np.testing.assert_allclose(out.values, [-8.0])


def test_laplacian_of_zero():
    m = build_mesh(2, 4)
    gam = [m.full(1.0, dual(i)) for i in range(2)]
    np.testing.assert_array_equal(laplacian_gamma(m.zeros(), gam).values, 0.0)


def test_checkerboard_eigenfunction():
    m = build_mesh(2, 7)
    idx = np.arange(1, 8)
    psi = np.diag((-1.0) ** idx)
    f = MeshFn(m, PRIMAL, psi)
    gam = [m.full(1.0, dual(i)) for i in range(2)]
    out = laplacian_gamma(f, gam)
    np.testing.assert_allclose(out.values, -(4 / m.h**2) * psi, atol=1e-10)


def test_laplacian_rejects_nonpositive_gamma():
    m = build_mesh(1, 3)
    with pytest.raises(ValueError):
        laplacian_gamma(m.zeros(), [m.full(0.0, dual(0))])


def _coefficients(m, rng):
    gam = [m.sample(lambda *x: 1.0 + 0.5 * np.sin(3 * x[0] + i), dual(i)) for i in range(m.n)]
    a1 = [MeshFn(m, PRIMAL, rng.standard_normal(m.size(PRIMAL))) for _ in range(m.n)]
    a2 = MeshFn(m, PRIMAL, rng.standard_normal(m.size(PRIMAL)))
    return gam, a1, a2


def test_drift_reduces_to_laplacian(rng):
    m = build_mesh(2, 5)
    gam, _, _ = _coefficients(m, rng)
    y = MeshFn(m, PRIMAL, rng.standard_normal(25))
    np.testing.assert_allclose(drift_operator(m, gam)(y).values, laplacian_gamma(y, gam).values, atol=1e-10)


def test_drift_laplacian_plus_constant(rng):
    m = build_mesh(2, 4)
    gam = [m.full(1.0, dual(i)) for i in range(2)]
    op = drift_operator(m, gam, a2=m.full(2.5))
    lap = drift_operator(m, gam)
    np.testing.assert_allclose(op.toarray(), lap.toarray() + 2.5 * np.eye(16))


@pytest.mark.parametrize("n,N", [(1, 6), (2, 5), (3, 3)])
def test_drift_matches_composition(n, N, rng):
    m = build_mesh(n, N)
    gam, a1, a2 = _coefficients(m, rng)
    op = drift_operator(m, gam, a1, a2)
    for _ in range(5):
        y = MeshFn(m, PRIMAL, rng.standard_normal(m.size(PRIMAL)))
        direct = laplacian_gamma(y, gam) + a2 * y
        for i in range(n):
            direct = direct + average(diff(a1[i] * y, i), i)
        np.testing.assert_allclose(op(y).values, direct.values, atol=1e-12 * np.abs(direct.values).max())


@pytest.mark.parametrize("n,N", [(1, 6), (2, 5), (3, 3)])
def test_drift_transpose_is_adjoint(n, N, rng):
    m = build_mesh(n, N)
    gam, a1, a2 = _coefficients(m, rng)
    op = drift_operator(m, gam, a1, a2)
    for _ in range(5):
        y = MeshFn(m, PRIMAL, rng.standard_normal(m.size(PRIMAL)))
        z = MeshFn(m, PRIMAL, rng.standard_normal(m.size(PRIMAL)))
        lhs = inner(op(y), z)
        rhs = inner(y, adjoint_drift(z, gam, a1, a2))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
        np.testing.assert_allclose(op.T(z).values, adjoint_drift(z, gam, a1, a2).values, atol=1e-9)


def test_reg_gamma_constants():
    m = build_mesh(2, 4)
    assert reg_gamma([m.full(1.0, dual(i)) for i in range(2)]) == pytest.approx(2.0)
    assert reg_gamma([m.full(2.0, dual(i)) for i in range(2)]) == pytest.approx(2.5)


def test_reg_gamma_brute_force():
    m = build_mesh(2, 5)
    gam = [m.sample(lambda *x, i=i: 1.0 + x[i], dual(i)) for i in range(2)]
    prim = [m.sample(lambda *x, i=i: 1.0 + x[i]) for i in range(2)]
    # oracle: D_j gamma_j of 1 + x_j is exactly 1 at every primal node
    expected = max(float(np.max(g.values + 1 / g.values + 2.0)) for g in prim)
    assert reg_gamma(gam, prim) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_identity_suite(n, rng):
    N = {1: 15, 2: 9, 3: 5}[n]
    res = identity_residuals(build_mesh(n, N), rng, trials=3)
    assert set(res) == set(IDENTITY_NAMES)
    assert max(res.values()) <= 1e-12, res


@given(n=st.integers(1, 3), N=st.integers(1, 15), seed=st.integers(0, 2**32 - 1))
def test_identity_suite_property(n, N, seed):
    if n == 3 and N > 8:
        N = 8
    res = identity_residuals(build_mesh(n, N), np.random.default_rng(seed))
    assert max(res.values()) <= 1e-12

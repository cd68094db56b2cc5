import math

import numpy as np
import pytest

from semictl.mesh import PRIMAL, MeshFn, Region, build_mesh, dual
from semictl.sampling import bump_mixture, random_coefficients, random_controls, stream
from semictl.solver import (
    CFLViolation,
    Coefficients,
    ControlPair,
    duality_gap,
    energy_profile,
    solve_backward,
    solve_forward,
)
from semictl.tree import AdaptedProcess, ScenarioTree

G0 = Region((0.2, 0.2), (0.7, 0.7))


def stable_tree(coeffs, K, fraction=0.9):
    return ScenarioTree(K, K * fraction * coeffs.max_stable_dt())


def test_zero_data_stays_zero():
    m = build_mesh(2, 5)
    co = Coefficients.heat(m)
    tree = stable_tree(co, 4)
    y = solve_forward(m.zeros(), ControlPair.zero(tree, m, G0), co, tree)
    assert not y.data.any()


@pytest.mark.parametrize("scheme", ["explicit", "implicit"])
def test_eigenvector_decay(scheme):
    m = build_mesh(2, 6)
    co = Coefficients.heat(m)
    tree = stable_tree(co, 6)
    mu, vecs = np.linalg.eigh(co.drift.toarray())
    y0 = MeshFn(m, PRIMAL, vecs[:, 3])
    y = solve_forward(y0, None, co, tree, scheme)
    step = 1 + tree.dt * mu[3] if scheme == "explicit" else 1 / (1 - tree.dt * mu[3])
    np.testing.assert_allclose(y.mean(tree.K), step**tree.K * y0.flat, atol=1e-13)


def test_noise_control_has_zero_mean(rng):
    m = build_mesh(2, 5)
    co = Coefficients.from_functions(m, lambda x, y: 1 + x * y, a2=lambda x, y: np.sin(x + y))
    tree = stable_tree(co, 5)
    y0 = MeshFn(m, PRIMAL, rng.standard_normal(25))
    v = AdaptedProcess(tree, m, last=tree.K - 1, data=rng.standard_normal((31, 25)))
    ctl = ControlPair(AdaptedProcess(tree, m, last=tree.K - 1), v, G0)
    y = solve_forward(y0, ctl, co, tree)
    # oracle: deterministic recursion without v
    det = y0.flat.copy()
    A = co.drift.toarray()
    for _ in range(tree.K):
        det = det + tree.dt * A @ det
    np.testing.assert_allclose(y.mean(tree.K), det, atol=1e-12)


def test_cfl_violation_reports_bound():
    m = build_mesh(2, 7)
    co = Coefficients.heat(m)
    with pytest.raises(CFLViolation, match="stability bound"):
        solve_forward(m.zeros(), None, co, ScenarioTree(4, 1.0))
    # the implicit scheme has no step restriction
    solve_forward(m.zeros(), None, co, ScenarioTree(4, 1.0), "implicit")


def test_control_support_enforced(rng):
    m = build_mesh(2, 5)
    tree = ScenarioTree(2, 0.01)
    u = AdaptedProcess(tree, m, last=1, data=np.ones((3, 25)))
    with pytest.raises(ValueError, match="outside G_0"):
        ControlPair(u, AdaptedProcess(tree, m, last=1), G0)
    ctl = ControlPair.projected(u, AdaptedProcess(tree, m, last=1), G0)
    assert not ctl.u.data[:, ~ctl.mask].any()


def test_backward_deterministic_terminal():
    m = build_mesh(2, 5)
    co = Coefficients.from_functions(m, lambda x, y: 1 + x, a2=lambda x, y: x - y, a3=lambda x, y: 2 + x)
    tree = stable_tree(co, 4)
    zT = bump_mixture(m, np.random.default_rng(3))
    b = solve_backward(zT, co, tree)
    assert np.abs(b.Z.data).max() == 0.0
    z = zT.flat
    At = co.drift.toarray().T
    for _ in range(tree.K):
        z = z + tree.dt * At @ z
    np.testing.assert_allclose(b.z.level(0)[0], z, atol=1e-12)


def test_backward_without_drift_is_conditional_mean(rng):
    m = build_mesh(1, 4)
    # gamma is positive by contract; 1e-300 makes the drift vanish in floating point
    co = Coefficients(m, (m.full(1e-300, dual(0)),))
    tree = ScenarioTree(3, 0.3)
    zT = rng.standard_normal((8, 4))
    b = solve_backward(zT, co, tree)
    for k in range(3):
        np.testing.assert_allclose(b.z.level(k), zT.reshape(2**k, -1, 4).mean(axis=1), atol=1e-15)


def test_hand_recursion_small_tree():
    # n=1, N=1: A = -8 (gamma=1, h=1/2); a3 = 0.5; dt = 0.05
    m = build_mesh(1, 1)
    co = Coefficients(m, (m.full(1.0, dual(0)),), a3=m.full(0.5))
    tree = ScenarioTree(2, 0.1)
    leaves = np.array([[1.0], [2.0], [3.0], [5.0]])
    b = solve_backward(leaves, co, tree)
    dt, sq = 0.05, math.sqrt(0.05)
    # level 1, node 0: children 1, 2 -> m = 1.5, Z = -0.5/sq
    m10, Z10 = 1.5, -0.5 / sq
    m11, Z11 = 4.0, -1.0 / sq
    z10 = m10 + dt * (-8 * m10 + 0.5 * Z10)
    z11 = m11 + dt * (-8 * m11 + 0.5 * Z11)
    np.testing.assert_allclose(b.z.level(1)[:, 0], [z10, z11], rtol=1e-14)
    np.testing.assert_allclose(b.Z.level(1)[:, 0], [Z10, Z11], rtol=1e-14)
    m0, Z0 = (z10 + z11) / 2, (z10 - z11) / (2 * sq)
    np.testing.assert_allclose(b.z.level(0)[0, 0], m0 + dt * (-8 * m0 + 0.5 * Z0), rtol=1e-14)


@pytest.mark.parametrize("scheme", ["explicit", "implicit"])
@pytest.mark.parametrize("N,K", [(1, 2), (3, 3), (2, 3)])
def test_adjointness_by_assembly(scheme, N, K):
    rng = np.random.default_rng(N * 10 + K)
    m = build_mesh(1, N)
    co = random_coefficients(m, rng)
    tree = stable_tree(co, K) if scheme == "explicit" else ScenarioTree(K, 0.2)
    g0 = Region((0.3,), (0.8,))
    mask = m.mask(PRIMAL, g0).ravel()
    d, inner_nodes = N, 2**K - 1
    n_in = d + 2 * inner_nodes * d
    h, dt = m.h, tree.dt

    def forward(x):
        y0 = MeshFn(m, PRIMAL, x[:d])
        u = AdaptedProcess(tree, m, last=K - 1, data=x[d : d + inner_nodes * d].reshape(inner_nodes, d) * mask)
        v = AdaptedProcess(tree, m, last=K - 1, data=x[d + inner_nodes * d :].reshape(inner_nodes, d))
        return solve_forward(y0, ControlPair(u, v, g0), co, tree, scheme).level(K).ravel()

    def backward(zT):
        b = solve_backward(zT.reshape(2**K, d), co, tree, scheme)
        return np.concatenate([b.z.level(0)[0], (b.m.data * mask).ravel(), b.Z.data.ravel()])

    F = np.column_stack([forward(e) for e in np.eye(n_in)])
    G = np.column_stack([backward(e) for e in np.eye(2**K * d)])
    # weights of the inner products on the input and output spaces
    level_w = np.concatenate([np.full(2**k, 2.0**-k) for k in range(K)])
    w_in = np.concatenate([[h] * d, dt * h * np.repeat(level_w, d), dt * h * np.repeat(level_w, d)])
    w_in[d : d + inner_nodes * d] *= np.tile(mask, inner_nodes)
    w_out = np.full(2**K * d, h * 2.0**-K)
    np.testing.assert_allclose((w_out[:, None] * F).T, w_in[:, None] * G, atol=1e-12)


@pytest.mark.parametrize("scheme", ["explicit", "implicit"])
def test_duality_gap_random_instances(scheme):
    m = build_mesh(2, 7)
    for cell in range(5):
        rng = stream(11, cell)
        co = random_coefficients(m, rng)
        tree = stable_tree(co, 6) if scheme == "explicit" else ScenarioTree(6, 0.1)
        ctl = random_controls(tree, m, G0, rng)
        y0 = MeshFn(m, PRIMAL, rng.standard_normal(49))
        zT = rng.standard_normal((64, 49))
        gap, scale = duality_gap(y0, zT, ctl, co, tree, scheme)
        assert abs(gap) <= 1e-10 * scale


def test_duality_gap_deterministic_uncontrolled():
    m = build_mesh(2, 7)
    co = Coefficients.heat(m)
    tree = stable_tree(co, 5)
    idx = np.arange(1, 8)
    psi = MeshFn(m, PRIMAL, np.diag((-1.0) ** idx))
    gap, scale = duality_gap(psi, psi, None, co, tree)
    assert abs(gap) <= 1e-14 * max(scale, 1e-300) + 1e-300


def test_no_read_ahead(rng):
    m = build_mesh(2, 5)
    co = random_coefficients(m, rng)
    tree = stable_tree(co, 5)
    ctl = random_controls(tree, m, G0, rng)
    y0 = MeshFn(m, PRIMAL, rng.standard_normal(25))
    base = solve_forward(y0, ctl, co, tree)
    j = 3
    ctl.v.level(j)[:] += 5.0
    ctl.u.level(j)[:] += 5.0 * ctl.mask
    bumped = solve_forward(y0, ctl, co, tree)
    for k in range(j + 1):
        np.testing.assert_array_equal(base.level(k), bumped.level(k))
    assert not np.allclose(base.level(j + 1), bumped.level(j + 1))


def test_energy_bound_uniform_in_h():
    # backward energy estimate: E|z_k|^2 <= exp(c (T - t_k)) E|z_T|^2 with
    # c = sum max|a1|^2 / min gamma + 2 max a2^+ + max a3^2
    worst = []
    for N in (7, 11, 15):
        m = build_mesh(2, N)
        rng = stream(5, N)
        co = random_coefficients(m, stream(5, 0), strength=0.5)
        gmin = min(g.values.min() for g in co.gamma)
        c = (
            sum(np.abs(a.values).max() ** 2 for a in co.a1) / gmin
            + 2 * max(co.a2.values.max(), 0)
            + np.abs(co.a3.values).max() ** 2
        )
        tree = ScenarioTree(6, 0.2)
        ratio = 0.0
        for _ in range(5):
            shape = bump_mixture(m, rng).flat
            zT = np.outer(1 + 0.5 * rng.standard_normal(64), shape)
            e = energy_profile(solve_backward(zT, co, tree, "implicit").z)
            ratio = max(ratio, e.max() / e[-1])
        assert ratio <= math.exp(c * tree.T)
        worst.append(ratio)
    assert max(worst) <= 2 * min(worst)

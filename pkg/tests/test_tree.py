import itertools
import math

import numpy as np
import pytest

from semictl.mesh import PRIMAL, MeshFn, build_mesh, integral
from semictl.tree import (
    AdaptedProcess,
    BudgetExceeded,
    ScenarioTree,
    expectation,
    martingale_parts,
    split_children,
)


def paths(K):
    """Oracle: enumerate +-1 increment paths in the tree's child order (+ first)."""
    return list(itertools.product((1, -1), repeat=K))


def test_level_weights():
    tree = ScenarioTree(4, 1.0)
    for k in range(5):
        assert tree.width(k) * tree.weight(k) == 1.0
    assert tree.n_slots == 31


def test_brownian_matches_enumeration():
    tree = ScenarioTree(3, 0.75)
    expected = [math.sqrt(0.25) * sum(p) for p in paths(3)]
    np.testing.assert_allclose(tree.brownian(3), expected)


def test_constant_process_expectation():
    m = build_mesh(2, 3)
    tree = ScenarioTree(3, 1.0)
    p = AdaptedProcess.deterministic(tree, m.full(2.0))
    assert expectation(p, 3, integral) == pytest.approx(2.0 * 9 * m.h**2)


def test_brownian_has_zero_mean():
    m = build_mesh(1, 1)
    tree = ScenarioTree(5, 1.0)
    p = AdaptedProcess(tree, m)
    for k in range(6):
        p.set_level(k, tree.brownian(k)[:, None])
    for k in range(6):
        assert expectation(p, k, lambda f: float(f.values[0])) == pytest.approx(0.0, abs=1e-15)


def test_hand_set_leaves():
    m = build_mesh(1, 1)
    tree = ScenarioTree(2, 1.0)
    p = AdaptedProcess(tree, m)
    p.set_level(2, np.array([[1.0], [2.0], [4.0], [8.0]]))
    assert expectation(p, 2, lambda f: float(f.values[0])) == pytest.approx(15 / 4)


def test_expectation_level_checked():
    tree = ScenarioTree(2, 1.0)
    p = AdaptedProcess(tree, build_mesh(1, 1))
    with pytest.raises(ValueError):
        expectation(p, 3, integral)


def test_martingale_parts_examples():
    m, Z = martingale_parts(3.0, 1.0, 0.25)
    assert (m, Z) == (2.0, 2.0)
    m, Z = martingale_parts(np.ones(3), np.ones(3), 0.1)
    np.testing.assert_array_equal(Z, 0.0)


def test_martingale_reconstruction_and_increment(rng):
    dt = 0.04
    zp, zm = rng.standard_normal(5), rng.standard_normal(5)
    m, Z = martingale_parts(zp, zm, dt)
    np.testing.assert_allclose(m + Z * math.sqrt(dt), zp, atol=1e-15)
    np.testing.assert_allclose(m - Z * math.sqrt(dt), zm, atol=1e-15)
    # E_k[z_{k+1} dB_k] over both branches
    cond = 0.5 * (zp * math.sqrt(dt) + zm * (-math.sqrt(dt)))
    np.testing.assert_allclose(cond, Z * dt, atol=1e-15)


@pytest.mark.parametrize("K", [1, 2, 3, 4])
def test_ito_isometry(K, rng):
    tree = ScenarioTree(K, 1.0)
    g = rng.standard_normal(2**K - 1)  # one scalar per non-leaf node, adapted by construction
    total = np.zeros(1)
    for k in range(K):
        gk = g[2**k - 1 : 2 ** (k + 1) - 1]
        total = np.repeat(total + 0, 2) + np.repeat(gk, 2) * tree.increments(k)
    lhs = np.mean(total**2)
    rhs = sum(tree.dt * np.mean(g[2**k - 1 : 2 ** (k + 1) - 1] ** 2) for k in range(K))
    assert lhs == pytest.approx(rhs, rel=1e-13)


@pytest.mark.parametrize("K", [1, 2, 3, 4])
def test_square_identity(K, rng):
    # E|z_{k+1}|^2 - E|z_k|^2 = E[2 z_k (m_k - z_k)] + E|m_k - z_k|^2 + dt E|Z_k|^2
    tree = ScenarioTree(K, 0.5)
    m = build_mesh(1, 3)
    z = AdaptedProcess(tree, m)
    z.data[:] = rng.standard_normal(z.data.shape)
    for k in range(K):
        mk, Zk = split_children(z.level(k + 1), tree.dt)
        zk = z.level(k)
        lhs = z.energy(k + 1) - z.energy(k)
        w = m.h / 2**k
        rhs = w * np.sum(2 * zk * (mk - zk) + (mk - zk) ** 2 + tree.dt * Zk**2)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-14)


def test_adapted_storage_layout():
    tree = ScenarioTree(3, 1.0)
    p = AdaptedProcess(tree, build_mesh(1, 2))
    assert p.data.shape == (15, 2)
    p.level(2)[:] = 7.0
    np.testing.assert_array_equal(p.data[3:7], 7.0)
    assert np.count_nonzero(p.data) == 8


def test_budget_guard():
    tree = ScenarioTree(20, 1.0)
    with pytest.raises(BudgetExceeded, match="MiB"):
        AdaptedProcess(tree, build_mesh(2, 31))
    with pytest.raises(BudgetExceeded):
        AdaptedProcess(ScenarioTree(4, 1.0), build_mesh(1, 3), budget_bytes=100)


def test_tree_validation():
    with pytest.raises(ValueError):
        ScenarioTree(0, 1.0)
    with pytest.raises(ValueError):
        ScenarioTree(3, -1.0)


def test_process_arithmetic(rng):
    tree = ScenarioTree(2, 1.0)
    m = build_mesh(1, 2)
    a = AdaptedProcess(tree, m, data=rng.standard_normal((7, 2)))
    b = AdaptedProcess(tree, m, data=rng.standard_normal((7, 2)))
    np.testing.assert_allclose((a + b - a).data, b.data)
    with pytest.raises(ValueError):
        a + AdaptedProcess(tree, m, last=1)
    assert a.scaled(2.0).energy(2) == pytest.approx(4 * a.energy(2))


def test_node_view():
    tree = ScenarioTree(1, 1.0)
    m = build_mesh(1, 2)
    p = AdaptedProcess.deterministic(tree, MeshFn(m, PRIMAL, [1.0, 2.0]))
    assert p.node(1, 1).values.tolist() == [1.0, 2.0]

"""Residuals of the discrete product rules and summation-by-parts formulas.

Every check draws random functions on the closed mesh (primal values plus
explicit boundary values along the axis under test) and returns the max
absolute residual of one identity.  ``identity_residuals`` runs them all and
is shared by the test-suite and the ``calculus-selftest`` subcommand.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from semictl.calculus import average, diff
from semictl.mesh import PRIMAL, Mesh, MeshFn, boundary, dual, integral, normal_and_trace

__all__ = ["IDENTITY_NAMES", "identity_residuals", "random_closure"]


def random_closure(mesh: Mesh, i: int, rng: np.random.Generator) -> tuple[MeshFn, MeshFn]:
    """Random primal values and random values on ``d_i M``."""
    u = MeshFn(mesh, PRIMAL, rng.standard_normal(mesh.size(PRIMAL)))
    b = MeshFn(mesh, boundary(i), rng.standard_normal(mesh.size(boundary(i))))
    return u, b


def _max(f: MeshFn) -> float:
    return float(np.max(np.abs(f.values)))


def _product_diff(mesh, i, rng):
    (u, bu), (v, bv) = random_closure(mesh, i, rng), random_closure(mesh, i, rng)
    lhs = diff(u * v, i, bu * bv)
    rhs = diff(u, i, bu) * average(v, i, bv) + average(u, i, bu) * diff(v, i, bv)
    return _max(lhs - rhs)


def _product_average(mesh, i, rng):
    (u, bu), (v, bv) = random_closure(mesh, i, rng), random_closure(mesh, i, rng)
    lhs = average(u * v, i, bu * bv)
    rhs = average(u, i, bu) * average(v, i, bv) + (mesh.h**2 / 4) * diff(u, i, bu) * diff(v, i, bv)
    return _max(lhs - rhs)


def _average_minus_diff(mesh, i, rng):
    u, bu = random_closure(mesh, i, rng)
    rhs = average(average(u, i, bu), i) - (mesh.h**2 / 4) * diff(diff(u, i, bu), i)
    return _max(u - rhs)


def _square_diff(mesh, i, rng):
    u, bu = random_closure(mesh, i, rng)
    return _max(diff(u * u, i, bu * bu) - 2 * diff(u, i, bu) * average(u, i, bu))


def _square_average(mesh, i, rng):
    u, bu = random_closure(mesh, i, rng)
    lhs = average(u * u, i, bu * bu)
    rhs = average(u, i, bu) ** 2 + (mesh.h**2 / 4) * diff(u, i, bu) ** 2
    return _max(lhs - rhs)


def _inequality_average(mesh, i, rng):
    # residual is the amount by which A(u^2) >= |Au|^2 fails (0 when it holds)
    u, bu = random_closure(mesh, i, rng)
    gap = average(u * u, i, bu * bu) - average(u, i, bu) ** 2
    return float(max(0.0, -gap.values.min()))


def _inequality_diff(mesh, i, rng):
    u, bu = random_closure(mesh, i, rng)
    gap = average(u * u, i, bu * bu) - (mesh.h**2 / 4) * diff(u, i, bu) ** 2
    return float(max(0.0, -gap.values.min()))


def _sbp_diff(mesh, i, rng):
    u, bu = random_closure(mesh, i, rng)
    v = MeshFn(mesh, dual(i), rng.standard_normal(mesh.size(dual(i))))
    nu, tr = normal_and_trace(v)
    lhs = integral(u * diff(v, i))
    rhs = -integral(v * diff(u, i, bu)) + integral(bu * tr * nu)
    return abs(lhs - rhs)


def _sbp_average(mesh, i, rng):
    u, bu = random_closure(mesh, i, rng)
    v = MeshFn(mesh, dual(i), rng.standard_normal(mesh.size(dual(i))))
    _, tr = normal_and_trace(v)
    lhs = integral(u * average(v, i))
    rhs = integral(v * average(u, i, bu)) - (mesh.h / 2) * integral(bu * tr)
    return abs(lhs - rhs)


_CHECKS: dict[str, Callable] = {
    "product_diff": _product_diff,
    "product_average": _product_average,
    "average_minus_diff": _average_minus_diff,
    "square_diff": _square_diff,
    "square_average": _square_average,
    "inequality_average": _inequality_average,
    "inequality_diff": _inequality_diff,
    "sbp_diff": _sbp_diff,
    "sbp_average": _sbp_average,
}

IDENTITY_NAMES = tuple(_CHECKS)


def identity_residuals(mesh: Mesh, rng: np.random.Generator, trials: int = 1) -> dict[str, float]:
    """Max residual of every identity over ``trials`` draws and all axes."""
    worst = dict.fromkeys(_CHECKS, 0.0)
    for _ in range(trials):
        for i in range(mesh.n):
            for name, check in _CHECKS.items():
                worst[name] = max(worst[name], check(mesh, i, rng))
    return worst

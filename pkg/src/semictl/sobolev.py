"""Discrete Sobolev ratio, its h-uniform supremum, and the product bounds behind it.

For ``u`` vanishing on the boundary the ratio is
``||u||_{L^{p*}_h} / ||u||_{W^{1,p}_h}`` with the admissible exponents

* ``1 <= p < n`` and ``1/p* = 1/p - 1/n``, or
* ``p = n`` and ``p <= p* < inf``.

The supremum over ``u`` is approached by maximizing ``log`` of the ratio with
L-BFGS from smooth random probes.  Free variables are the interior values,
so the zero boundary is built in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from semictl.calculus import stencil
from semictl.mesh import PRIMAL, Mesh, MeshFn, build_mesh, dual, norm
from semictl.sampling import bump_mixture, stream

__all__ = [
    "validate_case",
    "sobolev_ratio",
    "log_ratio_and_grad",
    "maximize_ratio",
    "SobolevRow",
    "sobolev_constant_sweep",
    "product_bound",
    "loomis_whitney_check",
    "loomis_whitney_trials",
]


def validate_case(n: int, p: float, p_star: float):
    if n < 2:
        raise ValueError(f"the Sobolev inequality is stated for n > 1, got n = {n}")
    if not 1 <= p <= n:
        raise ValueError(f"p must lie in [1, n] = [1, {n}], got {p}")
    if p < n:
        expected = n * p / (n - p)
        if not math.isclose(p_star, expected, rel_tol=1e-12):
            raise ValueError(f"for p < n the exponent must be p* = np/(n-p) = {expected}, got {p_star}")
    elif not (p <= p_star < math.inf):
        raise ValueError(f"for p = n the exponent must satisfy {p} <= p* < inf, got {p_star}")


def sobolev_ratio(u: MeshFn, p: float, p_star: float) -> float:
    """``||u||_{p*} / ||u||_{W^{1,p}}`` for primal ``u`` extended by zero."""
    validate_case(u.mesh.n, p, p_star)
    if u.loc != PRIMAL:
        raise ValueError("u must be a primal function")
    if not np.any(u.values):
        raise ValueError("u must not vanish identically")
    return norm(u, p_star) / norm(u, p, "W1p")


def _power_grad(x: np.ndarray, q: float) -> np.ndarray:
    """Derivative of ``|x|^q / q``; at ``x = 0`` the subgradient ``0`` is used."""
    return np.sign(x) * np.abs(x) ** (q - 1)


def log_ratio_and_grad(mesh: Mesh, x: np.ndarray, p: float, p_star: float):
    """``log`` of the ratio at interior values ``x`` and its gradient in ``x``."""
    vol = mesh.measure(PRIMAL)
    top = vol * np.sum(np.abs(x) ** p_star)
    g_top = vol * _power_grad(x, p_star) / top
    bottom = vol * np.sum(np.abs(x) ** p)
    g_bottom = vol * _power_grad(x, p)
    for i in range(mesh.n):
        D = stencil(mesh, "D", i, PRIMAL).matrix
        Du = D @ x
        bottom += vol * np.sum(np.abs(Du) ** p)
        g_bottom = g_bottom + vol * (D.T @ _power_grad(Du, p))
    value = math.log(top) / p_star - math.log(bottom) / p
    return value, g_top - g_bottom / bottom


def maximize_ratio(u0: MeshFn, p: float, p_star: float, steps: int) -> tuple[float, MeshFn]:
    """L-BFGS ascent on ``log`` of the ratio from ``u0``; returns the best attained ratio and its maximizer."""
    validate_case(u0.mesh.n, p, p_star)
    mesh = u0.mesh
    start = sobolev_ratio(u0, p, p_star)
    if steps <= 0:
        return start, u0
    # normalize so the iterates stay O(1)
    x0 = u0.flat / np.abs(u0.flat).max()

    def objective(x):
        v, g = log_ratio_and_grad(mesh, x, p, p_star)
        return -v, -g

    res = minimize(objective, x0, jac=True, method="L-BFGS-B", options={"maxiter": steps})
    best = MeshFn(mesh, PRIMAL, res.x)
    if not np.any(res.x):
        return start, u0
    found = sobolev_ratio(best, p, p_star)
    return (found, best) if found > start else (start, u0)


@dataclass(frozen=True)
class SobolevRow:
    h: float
    p: float
    p_star: float
    max_ratio: float
    best_probe_ratio: float
    probes: int
    ascent_steps: int


def sobolev_constant_sweep(
    n: int,
    p: float,
    p_star: float,
    hs: Sequence[float],
    probes: int,
    ascent: int,
    seed: int = 0,
) -> list[SobolevRow]:
    """Maximized ratio per mesh size.

    Probe ``j`` draws from ``stream(seed, j)`` on every mesh, so the same
    continuous starting fields are used for every ``h``.
    """
    validate_case(n, p, p_star)
    if probes < 1:
        raise ValueError("need at least one probe")
    rows = []
    for h in hs:
        N = round(1 / h) - 1
        if N < 1 or abs(1 / (N + 1) - h) > 1e-12:
            raise ValueError(f"h={h} is not of the form 1/(N+1)")
        mesh = build_mesh(n, N)
        starts = [bump_mixture(mesh, stream(seed, j)) for j in range(probes)]
        probe_ratios = [sobolev_ratio(u, p, p_star) for u in starts]
        best = max(maximize_ratio(u, p, p_star, ascent)[0] for u in starts)
        rows.append(SobolevRow(mesh.h, p, p_star, best, max(probe_ratios), probes, ascent))
    return rows


def product_bound(u: MeshFn) -> tuple[float, float]:
    """Both sides of ``||u||_{n/(n-1)} <= prod_i ||D_i u||_{L^1(M*_i)}^{1/n}``."""
    n = u.mesh.n
    if n < 2:
        raise ValueError("the product bound needs n >= 2")
    lhs = norm(u, n / (n - 1))
    rhs = 1.0
    for i in range(n):
        rhs *= norm(MeshFn(u.mesh, dual(i), stencil(u.mesh, "D", i, PRIMAL).matrix @ u.flat), 1) ** (1.0 / n)
    return lhs, rhs


def loomis_whitney_check(fs: Sequence[np.ndarray], h: float) -> tuple[float, float]:
    """Both sides of ``||prod_i f_i(x without x_i)||_{L^1(M)} <= prod_i ||f_i||_{L^{n-1}(N_i)}``.

    ``fs[i]`` has ``n - 1`` axes (the primal axes other than ``i``, in order);
    ``N_i`` carries the measure ``h^(n-1)``.
    """
    n = len(fs)
    if n < 2:
        raise ValueError("the inequality needs n >= 2")
    full = 1.0
    for i, f in enumerate(fs):
        f = np.asarray(f, dtype=float)
        if f.ndim != n - 1:
            raise ValueError(f"f_{i} must have {n - 1} axes, got {f.ndim}")
        if np.any(f < 0):
            raise ValueError(f"f_{i} must be non-negative")
        full = full * np.expand_dims(f, axis=i)
    lhs = float(h**n * np.sum(full))
    q = n - 1
    rhs = 1.0
    for f in fs:
        rhs *= float((h ** (n - 1) * np.sum(np.asarray(f) ** q)) ** (1.0 / q))
    return lhs, rhs


def loomis_whitney_trials(n: int, N: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Relative slack ``(rhs - lhs) / rhs`` on random non-negative families (log-normal entries)."""
    h = 1.0 / (N + 1)
    slack = np.empty(trials)
    for t in range(trials):
        fs = [np.exp(rng.standard_normal((N,) * (n - 1))) for _ in range(n)]
        lhs, rhs = loomis_whitney_check(fs, h)
        slack[t] = (rhs - lhs) / rhs
    return slack

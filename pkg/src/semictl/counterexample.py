"""The checkerboard eigenmode that no off-diagonal control can reach.

On a square mesh the diagonal function ``psi(x_i, x_j) = (-1)^i`` for
``i == j`` (zero elsewhere and on the boundary) satisfies
``sum_i D_i^2 psi = -(4/h^2) psi``.  For the pure heat drift, the pairing
``E<psi, y_k>`` then obeys a closed scalar recursion that involves neither
the interior control (supported off the diagonal) nor the diffusion
control (zero mean on the tree), so it decays like ``exp(-4T/h^2)`` whatever
the controls are.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from semictl.calculus import laplacian_gamma
from semictl.mesh import PRIMAL, Mesh, MeshFn, Region, dual, inner
from semictl.solver import Coefficients, ControlPair, solve_forward
from semictl.tree import ScenarioTree

__all__ = [
    "CheckerboardMode",
    "ModeResult",
    "FactorRow",
    "build_checkerboard",
    "verify_eigen",
    "check_off_diagonal",
    "discrete_factor",
    "continuous_factor",
    "uncontrollable_mode_experiment",
    "factor_convergence",
]


@dataclass(frozen=True)
class CheckerboardMode:
    psi: MeshFn

    @property
    def mesh(self) -> Mesh:
        return self.psi.mesh

    @property
    def eigenvalue(self) -> float:
        return -4.0 / self.mesh.h**2


@dataclass(frozen=True)
class ModeResult:
    measured: float
    predicted: float
    deviation: float  # |measured - predicted| / |predicted|
    pairing_scale: float  # ||psi|| ||E y_K||, the rounding scale of the pairing


@dataclass(frozen=True)
class FactorRow:
    K: int
    discrete: float
    continuous: float
    rel_error: float
    observed_order: float  # nan for the first row


def build_checkerboard(mesh: Mesh) -> CheckerboardMode:
    if mesh.n != 2:
        raise ValueError(f"the checkerboard mode is defined for n = 2, got n = {mesh.n}")
    idx = np.arange(1, mesh.N + 1)
    return CheckerboardMode(MeshFn(mesh, PRIMAL, np.diag((-1.0) ** idx)))


def verify_eigen(mode: CheckerboardMode) -> float:
    """Max abs residual of ``sum D_i^2 psi + (4/h^2) psi``."""
    mesh = mode.mesh
    ones = [mesh.full(1.0, dual(i)) for i in range(mesh.n)]
    res = laplacian_gamma(mode.psi, ones) - mode.eigenvalue * mode.psi
    return float(np.abs(res.values).max())


def check_off_diagonal(mesh: Mesh, g0: Region):
    """Refuse observation/control boxes that contain a diagonal node."""
    x, y = mesh.coords(PRIMAL)
    inside = mesh.mask(PRIMAL, g0)
    hits = inside & np.eye(mesh.N, dtype=bool)
    if hits.any():
        i = int(np.argmax(hits.diagonal())) + 1
        raise ValueError(
            f"G_0 box {g0.lo}-{g0.hi} contains the diagonal node ({i}, {i}); "
            "the mode is only invisible to controls supported off the diagonal"
        )


def discrete_factor(tree: ScenarioTree, h: float, scheme: str = "explicit") -> float:
    """``(1 - 4 dt/h^2)^K`` (explicit) or ``(1 + 4 dt/h^2)^-K`` (implicit)."""
    c = 4.0 * tree.dt / h**2
    if scheme == "explicit":
        return math.copysign(1.0, 1 - c) ** tree.K * math.exp(tree.K * math.log(abs(1 - c)))
    return math.exp(-tree.K * math.log1p(c))


def continuous_factor(T: float, h: float) -> float:
    return math.exp(-4.0 * T / h**2)


def uncontrollable_mode_experiment(
    y0: MeshFn,
    ctl: Optional[ControlPair],
    tree: ScenarioTree,
    scheme: str = "explicit",
) -> ModeResult:
    """Compare ``E<psi, y_K>`` under the heat drift with its control-free prediction."""
    mesh = y0.mesh
    mode = build_checkerboard(mesh)
    if ctl is not None:
        check_off_diagonal(mesh, ctl.g0)
    coeffs = Coefficients.heat(mesh)
    y = solve_forward(y0, ctl, coeffs, tree, scheme)
    mean_K = MeshFn(mesh, PRIMAL, y.mean(tree.K))
    measured = inner(mode.psi, mean_K)
    predicted = discrete_factor(tree, mesh.h, scheme) * inner(mode.psi, y0)
    diff = abs(measured - predicted)
    deviation = diff / abs(predicted) if predicted != 0 else (0.0 if diff == 0 else math.inf)
    scale = math.sqrt(inner(mode.psi, mode.psi) * inner(mean_K, mean_K))
    return ModeResult(measured, predicted, deviation, scale)


def factor_convergence(T: float, h: float, Ks: Sequence[int]) -> list[FactorRow]:
    """Relative error of the explicit factor against ``exp(-4T/h^2)`` under K-doubling."""
    target = continuous_factor(T, h)
    rows: list[FactorRow] = []
    for K in Ks:
        disc = discrete_factor(ScenarioTree(K, T), h)
        err = abs(disc - target) / target
        order = math.nan if not rows else math.log(rows[-1].rel_error / err) / math.log(K / rows[-1].K)
        rows.append(FactorRow(K, disc, target, err, order))
    return rows

"""Penalized HUM synthesis of phi-null controls.

For terminal data ``z_T`` on the leaves, the backward solve gives pairing
variables ``(m, Z)`` and the controls ``u = -chi m``, ``v = -Z``.  With
``N z_T`` the terminal state reached from ``y0 = 0`` under these controls,
the discrete duality identity gives

    <-N z_T, z_T> = sum dt E|Z|^2 + sum dt E|chi m|^2,

so the dual functional

    J(z_T) = 1/2 <-N z_T, z_T> + phi/2 E|z_T|^2 - <y0, z_0>

is an exactly quadratic, strictly convex function of ``z_T``.  Its
minimizer solves ``(phi I - N) z_T = y_K^free`` which is handled by
conjugate gradients; at the optimum the controlled state satisfies
``y_K = phi z_T``.

Leaf families are arrays of shape ``(2**K, |M|)``; the inner product on
them is ``E<a, b> = h^n 2^-K sum a*b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from semictl.mesh import PRIMAL, MeshFn, Region, inner
from semictl.solver import (
    BackwardPair,
    Coefficients,
    ControlPair,
    duality_terms,
    solve_backward,
    solve_forward,
)
from semictl.tree import AdaptedProcess, ScenarioTree

__all__ = [
    "PHI_RATES",
    "HumConfig",
    "HumProblem",
    "HumSolution",
    "ControllabilityReport",
    "DualityBroken",
    "CGStagnation",
    "hum_functional",
    "hum_gradient",
    "solve_hum",
    "verify_controllability",
]

PHI_RATES = ("h2", "exp_sqrt")


class DualityBroken(RuntimeError):
    """The forward/backward pair is no longer an exact adjoint pair."""


class CGStagnation(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class HumConfig:
    """Penalty rate and solver settings.

    ``phi_rate`` is ``"h2"`` (``phi = h^2``) or ``"exp_sqrt"``
    (``phi = exp(-phi_c / sqrt(h))``).  Both are positive, non-decreasing and
    decay slower than ``exp(-kappa/h)`` for every ``kappa > 0``.
    """

    phi_rate: str = "h2"
    phi_c: float = 1.0
    cg_tol: float = 1e-10
    cg_max_iter: int = 5000
    method: str = "cg"
    seed: int = 0

    def __post_init__(self):
        if self.phi_rate not in PHI_RATES:
            raise ValueError(f"unknown phi rate {self.phi_rate!r}; choose from {PHI_RATES}")
        if self.phi_c <= 0:
            raise ValueError("phi_c must be positive")
        if not 0 < self.cg_tol < 1:
            raise ValueError("cg_tol must lie in (0, 1)")
        if self.cg_max_iter < 1:
            raise ValueError("cg_max_iter must be positive")
        if self.method not in ("cg", "cr"):
            raise ValueError(f"unknown method {self.method!r}; choose 'cg' or 'cr'")

    def phi(self, h: float) -> float:
        if self.phi_rate == "h2":
            return h**2
        return math.exp(-self.phi_c / math.sqrt(h))


class HumProblem:
    """Tree-level linear maps shared by the HUM and observability computations."""

    def __init__(self, coeffs: Coefficients, tree: ScenarioTree, g0: Region, scheme: str = "explicit"):
        self.coeffs = coeffs
        self.tree = tree
        self.g0 = g0
        self.scheme = scheme
        self.mesh = coeffs.mesh
        self.mask = self.mesh.mask(PRIMAL, g0).ravel()
        self.leaf_shape = (2**tree.K, self.mesh.size(PRIMAL))
        self.leaf_weight = self.mesh.measure(PRIMAL) * 2.0**-tree.K

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(self.leaf_weight * np.sum(a * b))

    def backward(self, z_T: np.ndarray) -> BackwardPair:
        return solve_backward(z_T, self.coeffs, self.tree, self.scheme)

    def controls(self, back: BackwardPair) -> ControlPair:
        u = AdaptedProcess(self.tree, self.mesh, last=self.tree.K - 1, data=-back.m.data * self.mask)
        v = AdaptedProcess(self.tree, self.mesh, last=self.tree.K - 1, data=-back.Z.data)
        return ControlPair(u, v, self.g0)

    def forward(self, y0: MeshFn, ctl: Optional[ControlPair]) -> AdaptedProcess:
        return solve_forward(y0, ctl, self.coeffs, self.tree, self.scheme)

    def observed_energy(self, back: BackwardPair) -> tuple[float, float]:
        """``sum dt E|Z|^2`` and ``sum dt E|chi m|^2``."""
        return back.Z.time_energy(), back.m.time_energy(self.mask)

    def gramian(self, z_T: np.ndarray) -> np.ndarray:
        """``-N z_T``: minus the terminal state driven from rest by the HUM controls."""
        back = self.backward(z_T)
        y = self.forward(self.mesh.zeros(), self.controls(back))
        return -y.level(self.tree.K)

    def free_terminal(self, y0: MeshFn) -> np.ndarray:
        """Uncontrolled terminal state; also the E-adjoint of ``z_T -> z_0``."""
        return self.forward(y0, None).level(self.tree.K).copy()

    def initial_adjoint(self, z_T: np.ndarray) -> np.ndarray:
        return self.backward(z_T).z.level(0)[0].copy()


@dataclass
class HumSolution:
    z_T: np.ndarray
    controls: ControlPair
    y: AdaptedProcess
    phi: float
    cost: float
    terminal_energy: float
    iterations: int
    residual_history: list[float]
    true_residual: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def optimality_residual(self) -> float:
        """``||y_K - phi z_T|| / ||phi z_T||`` in the leaf inner product."""
        yK = self.y.level(self.y.tree.K)
        num = np.linalg.norm(yK - self.phi * self.z_T)
        den = np.linalg.norm(self.phi * self.z_T)
        return float(num / den) if den > 0 else float(num)


@dataclass(frozen=True)
class ControllabilityReport:
    control_cost: float
    terminal_energy: float
    initial_energy: float
    phi: float
    cost_ratio: float
    terminal_ratio: float
    passed: Optional[bool] = None
    margins: Optional[dict] = None


def _leaves(problem: HumProblem, z_T) -> np.ndarray:
    z = np.asarray(z_T, dtype=float)
    if z.shape != problem.leaf_shape:
        raise ValueError(f"terminal data shape {z.shape} != {problem.leaf_shape}")
    return z


def hum_functional(problem: HumProblem, z_T: np.ndarray, y0: MeshFn, cfg: HumConfig) -> float:
    z_T = _leaves(problem, z_T)
    back = problem.backward(z_T)
    obs_Z, obs_m = problem.observed_energy(back)
    phi = cfg.phi(problem.mesh.h)
    return 0.5 * obs_Z + 0.5 * obs_m + 0.5 * phi * problem.inner(z_T, z_T) - inner(
        y0, MeshFn(problem.mesh, PRIMAL, back.z.level(0)[0])
    )


def hum_gradient(
    problem: HumProblem, z_T: np.ndarray, y0: MeshFn, cfg: HumConfig, gap_tol: float = 1e-9
) -> np.ndarray:
    """``phi z_T - y_K`` with ``y_K`` driven from ``y0`` by the controls of ``z_T``.

    The gradient is taken with respect to the leaf inner product.  Raises
    :class:`DualityBroken` when the duality identity fails on this run.
    """
    z_T = _leaves(problem, z_T)
    back = problem.backward(z_T)
    ctl = problem.controls(back)
    y = problem.forward(y0, ctl)
    terms = duality_terms(y, back, ctl)
    gap = terms["terminal"] - terms["initial"] - terms["u"] - terms["v"]
    scale = max(abs(v) for v in terms.values())
    if abs(gap) > gap_tol * max(scale, 1e-300) and scale > 0:
        raise DualityBroken(f"duality gap {gap:.3e} exceeds {gap_tol:g} x {scale:.3e}")
    return cfg.phi(problem.mesh.h) * z_T - y.level(problem.tree.K)


def _krylov(apply, b: np.ndarray, phi: float, cfg: HumConfig):
    """CG (or conjugate residuals) on ``apply x = b``; relative stop on ``||r|| <= tol ||phi x||``."""
    x = np.zeros_like(b)
    r = b.copy()
    history = [float(np.linalg.norm(r))]
    if history[0] == 0:
        return x, history, 0
    p = r.copy()
    if cfg.method == "cg":
        rr = float(np.vdot(r, r))
        for it in range(1, cfg.cg_max_iter + 1):
            Ap = apply(p)
            alpha = rr / float(np.vdot(p, Ap))
            x += alpha * p
            r -= alpha * Ap
            rr_new = float(np.vdot(r, r))
            history.append(math.sqrt(rr_new))
            if history[-1] <= cfg.cg_tol * phi * np.linalg.norm(x):
                return x, history, it
            p = r + (rr_new / rr) * p
            rr = rr_new
    else:
        Ar = apply(r)
        Ap = Ar.copy()
        rAr = float(np.vdot(r, Ar))
        for it in range(1, cfg.cg_max_iter + 1):
            alpha = rAr / float(np.vdot(Ap, Ap))
            x += alpha * p
            r -= alpha * Ap
            history.append(float(np.linalg.norm(r)))
            if history[-1] <= cfg.cg_tol * phi * np.linalg.norm(x):
                return x, history, it
            Ar = apply(r)
            rAr_new = float(np.vdot(r, Ar))
            beta = rAr_new / rAr
            p = r + beta * p
            Ap = Ar + beta * Ap
            rAr = rAr_new
    raise CGStagnation(
        f"{cfg.method} did not reach tol {cfg.cg_tol:g} in {cfg.cg_max_iter} iterations "
        f"(last residual {history[-1]:.3e})",
        history,
    )


def solve_hum(problem: HumProblem, y0: MeshFn, cfg: HumConfig) -> HumSolution:
    """Minimize the penalized dual functional and return the optimal controls."""
    phi = cfg.phi(problem.mesh.h)
    b = problem.free_terminal(y0)

    def apply(x):
        return phi * x + problem.gramian(x)

    z_T, history, iters = _krylov(apply, b, phi, cfg)
    back = problem.backward(z_T)
    ctl = problem.controls(back)
    y = problem.forward(y0, ctl)
    yK = y.level(problem.tree.K)
    true_res = float(np.linalg.norm(yK - phi * z_T))
    scale = float(np.linalg.norm(phi * z_T))
    if true_res > 10 * cfg.cg_tol * scale and true_res > 0:
        raise CGStagnation(
            f"true residual {true_res:.3e} exceeds 10 x tol x ||phi z_T|| = {10 * cfg.cg_tol * scale:.3e}",
            history,
        )
    obs_Z, obs_m = problem.observed_energy(back)
    return HumSolution(
        z_T=z_T,
        controls=ctl,
        y=y,
        phi=phi,
        cost=obs_Z + obs_m,
        terminal_energy=y.energy(problem.tree.K),
        iterations=iters,
        residual_history=history,
        true_residual=true_res,
        method=cfg.method,
    )


def verify_controllability(
    sol: HumSolution,
    y0: MeshFn,
    cost_bound: Optional[float] = None,
    terminal_bound: Optional[float] = None,
) -> ControllabilityReport:
    """Cost and terminal energy relative to ``E|y0|^2``; optional calibrated bounds decide pass/fail."""
    tree = sol.y.tree
    u_cost = sol.controls.u.time_energy(sol.controls.mask)
    v_cost = sol.controls.v.time_energy()
    e0 = inner(y0, y0)
    cost = u_cost + v_cost
    terminal = sol.y.energy(tree.K)
    if e0 == 0:
        return ControllabilityReport(cost, terminal, 0.0, sol.phi, 0.0, 0.0, cost == 0 and terminal == 0)
    cost_ratio = cost / e0
    terminal_ratio = terminal / (sol.phi * e0)
    passed, margins = None, None
    if cost_bound is not None or terminal_bound is not None:
        margins = {}
        passed = True
        if cost_bound is not None:
            margins["cost"] = cost_bound - cost_ratio
            passed &= cost_ratio <= cost_bound
        if terminal_bound is not None:
            margins["terminal"] = terminal_bound - terminal_ratio
            passed &= terminal_ratio <= terminal_bound
    return ControllabilityReport(cost, terminal, e0, sol.phi, cost_ratio, terminal_ratio, passed, margins)

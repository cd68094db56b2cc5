"""Both sides of the weighted Carleman inequality on manufactured solutions.

Any adapted ``w`` with zero boundary values solves

    dw + sum_i D_i(gamma_i D_i w) dt = f dt + g dB

for the ``f`` and ``g`` recovered node by node from the tree.  The two sides
are evaluated with ``s = tau theta(t_k)`` on tree levels, the exponential
factor ``exp(2 s phi)`` and the positive polynomial factor
``q = exp(lam psi)`` in place of ``phi``:

    lhs = sum_i E int s q e^{2s phi} |D_i w|^2
        + sum_i E int s q e^{2s phi} |A_i D_i w|^2
        + E int s^3 q^3 e^{2s phi} |w|^2

    rhs = E int_{G0} s^3 q^3 e^{2s phi} |w|^2 + E int e^{2s phi} |f|^2
        + E int s^2 e^{2s phi} |g|^2
        + h^-2 E |e^{s phi} w|^2 at t = 0 and at t = T

Time integrals use the left rectangle rule over levels ``0..K-1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from semictl.calculus import stencil
from semictl.mesh import PRIMAL, Mesh, MeshFn, Region, build_mesh, dual
from semictl.sampling import bump_mixture, random_coefficients, stream
from semictl.tree import AdaptedProcess, ScenarioTree, split_children
from semictl.weights import CarlemanParams, SmallnessViolation, WeightField, build_psi, s_of_t

__all__ = [
    "CarlemanTerms",
    "CarlemanRow",
    "CarlemanReport",
    "SweepConfig",
    "manufacture_rhs",
    "carleman_sides",
    "random_manufactured",
    "carleman_cell",
    "carleman_sweep",
]

LHS_KEYS = ("grad", "avg_grad", "zero")
RHS_KEYS = ("observation", "f", "g", "boundary_0", "boundary_T")


@dataclass(frozen=True)
class CarlemanTerms:
    """All weighted terms for one manufactured solution."""

    lhs_terms: dict
    rhs_terms: dict

    @property
    def lhs(self) -> float:
        return float(sum(self.lhs_terms.values()))

    @property
    def rhs(self) -> float:
        return float(sum(self.rhs_terms.values()))

    @property
    def ratio(self) -> float:
        if self.rhs > 0:
            return self.lhs / self.rhs
        return math.nan if self.lhs == 0 else math.inf

    def scaled(self, alpha: float) -> "CarlemanTerms":
        a2 = alpha * alpha
        return CarlemanTerms({k: a2 * v for k, v in self.lhs_terms.items()},
                             {k: a2 * v for k, v in self.rhs_terms.items()})


@dataclass(frozen=True)
class CarlemanRow:
    h: float
    tau: float
    lam: float
    smallness: float
    samples: int
    max_ratio: float
    mean_ratio: float
    worst: Optional[CarlemanTerms]


@dataclass
class CarlemanReport:
    rows: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.rows

    def variation(self) -> float:
        """``max / min`` of the per-cell maximal ratio."""
        vals = [r.max_ratio for r in self.rows]
        if not vals:
            return math.nan
        return max(vals) / min(vals)


def _laplacian(mesh: Mesh, gamma: Sequence[MeshFn]) -> sp.csr_matrix:
    L = sp.csr_matrix((mesh.size(PRIMAL), mesh.size(PRIMAL)))
    for i, g in enumerate(gamma):
        D = stencil(mesh, "D", i, PRIMAL).matrix
        Dt = stencil(mesh, "D", i, dual(i)).matrix
        L = L + Dt @ sp.diags(g.flat) @ D
    return L.tocsr()


def manufacture_rhs(w: AdaptedProcess, gamma: Sequence[MeshFn], tree: ScenarioTree):
    """Drift ``f`` and diffusion ``g`` (levels ``0..K-1``) such that ``w`` solves the backward-type equation.

    ``w_{k+1} = w_k + dt (f_k - sum D(gamma D w_k)) +- sqrt(dt) g_k`` holds on both branches.
    """
    if w.loc != PRIMAL or w.last != tree.K:
        raise ValueError("w must be a primal state process on levels 0..K")
    L = _laplacian(w.mesh, gamma)
    f = AdaptedProcess(tree, w.mesh, last=tree.K - 1)
    g = AdaptedProcess(tree, w.mesh, last=tree.K - 1)
    for k in range(tree.K):
        m, Z = split_children(w.level(k + 1), tree.dt)
        wk = w.level(k)
        f.set_level(k, (m - wk) / tree.dt + (L @ wk.T).T)
        g.set_level(k, Z)
    return f, g


@dataclass(frozen=True, eq=False)
class _WeightTables:
    """Per-level weight arrays on the primal and dual node sets."""

    s: np.ndarray
    exp_primal: np.ndarray  # (K+1, |M|): exp(2 s_k phi)
    exp_dual: list  # per axis, (K+1, |M*_i|)
    q_primal: np.ndarray
    q_dual: list


def _tables(field_: WeightField, params: CarlemanParams, tree: ScenarioTree) -> _WeightTables:
    mesh = field_.mesh
    s = np.array([float(s_of_t(t, params)) for t in tree.times()])

    def on(loc):
        phi = mesh.sample(lambda *x: field_.phi(params.lam, params.K, *x), loc).flat
        q = mesh.sample(lambda *x: field_.weight_poly(params.lam, *x), loc).flat
        return np.exp(2.0 * s[:, None] * phi[None, :]), q

    e_p, q_p = on(PRIMAL)
    duals = [on(dual(i)) for i in range(mesh.n)]
    return _WeightTables(s, e_p, [d[0] for d in duals], q_p, [d[1] for d in duals])


def carleman_sides(
    w: AdaptedProcess,
    f: AdaptedProcess,
    g: AdaptedProcess,
    field_: WeightField,
    params: CarlemanParams,
    g0: Region,
    eps: float = 1.0,
    tables: Optional[_WeightTables] = None,
) -> CarlemanTerms:
    mesh, tree = w.mesh, w.tree
    field_.check_params(params)
    if params.T != tree.T:
        raise ValueError(f"weight horizon {params.T} differs from tree horizon {tree.T}")
    small = params.smallness(mesh.h)
    if small > eps:
        raise SmallnessViolation(
            f"tau h max(theta) = {small:.4g} exceeds {eps}; need h <= {eps / (params.tau * params.theta_max):.4g}"
        )
    tb = tables if tables is not None else _tables(field_, params, tree)
    vol = mesh.measure(PRIMAL)
    mask = mesh.mask(PRIMAL, g0).ravel()
    dt = tree.dt

    lhs = dict.fromkeys(LHS_KEYS, 0.0)
    rhs = dict.fromkeys(RHS_KEYS, 0.0)
    for k in range(tree.K):
        p = tree.weight(k)
        s = tb.s[k]
        wk, fk, gk = w.level(k), f.level(k), g.level(k)
        e = tb.exp_primal[k]
        cubic = s**3 * tb.q_primal**3 * e
        zero = cubic * wk**2
        lhs["zero"] += dt * p * vol * zero.sum()
        rhs["observation"] += dt * p * vol * zero[:, mask].sum()
        rhs["f"] += dt * p * vol * (e * fk**2).sum()
        rhs["g"] += dt * p * vol * (s**2 * e * gk**2).sum()
        for i in range(mesh.n):
            D = stencil(mesh, "D", i, PRIMAL).matrix
            A = stencil(mesh, "A", i, dual(i)).matrix
            Dw = (D @ wk.T).T
            ADw = (A @ Dw.T).T
            lhs["grad"] += dt * p * vol * (s * tb.q_dual[i] * tb.exp_dual[i][k] * Dw**2).sum()
            lhs["avg_grad"] += dt * p * vol * (s * tb.q_primal * e * ADw**2).sum()
    for key, k in (("boundary_0", 0), ("boundary_T", tree.K)):
        rhs[key] = vol * tree.weight(k) * (tb.exp_primal[k] * w.level(k) ** 2).sum() / mesh.h**2
    return CarlemanTerms({k: float(v) for k, v in lhs.items()}, {k: float(v) for k, v in rhs.items()})


def random_manufactured(tree: ScenarioTree, mesh: Mesh, rng: np.random.Generator, terms: int = 3) -> AdaptedProcess:
    """Sum of smooth spatial bump mixtures times adapted scalar paths.

    Each scalar path is ``a + b t + c B_t + d sin(2 pi t / T)`` on the tree.
    All random parameters are continuous, so the same stream gives the same
    continuous field on every mesh.
    """
    w = AdaptedProcess(tree, mesh)
    for _ in range(terms):
        shape = bump_mixture(mesh, rng).flat
        a, b, c, d = rng.standard_normal(4)
        for k in range(tree.K + 1):
            t = k * tree.dt
            path = a + b * t / tree.T + c * tree.brownian(k) + d * math.sin(2 * math.pi * t / tree.T)
            w.level(k)[:] += np.outer(path, shape)
    return w


@dataclass(frozen=True)
class SweepConfig:
    hs: tuple = (1 / 8, 1 / 12, 1 / 16)
    tau_factors: tuple = (1.0, 2.0)
    lam: float = 1.0
    delta: float = 0.45
    T: float = 1.0
    K: int = 8
    samples: int = 50
    eps: float = 1.0
    g0: Region = Region((0.2, 0.2), (0.8, 0.8))
    g1: Region = Region((0.4, 0.4), (0.6, 0.6))
    seed: int = 0

    def __post_init__(self):
        if self.samples < 0:
            raise ValueError("samples must be non-negative")
        for h in self.hs:
            N = round(1 / h) - 1
            if N < 1 or abs(1 / (N + 1) - h) > 1e-12:
                raise ValueError(f"h={h} is not of the form 1/(N+1)")
        if not self.g1.strictly_inside(self.g0):
            raise ValueError("G_1 must lie strictly inside G_0")

    @property
    def n(self) -> int:
        return self.g0.dim

    @property
    def tau_ref(self) -> float:
        return self.T + self.T**2


def carleman_cell(cfg: SweepConfig, h: float, tau: float, cell: int = 0) -> CarlemanRow:
    """Max and mean ratio over ``cfg.samples`` manufactured solutions on one (h, tau) cell.

    Sample ``j`` draws from ``stream(seed, 0, j)``, independently of the cell,
    so every cell sees the same continuous fields.
    """
    mesh = build_mesh(cfg.n, round(1 / h) - 1)
    tree = ScenarioTree(cfg.K, cfg.T)
    tree.check_budget(mesh.size(PRIMAL), copies=3)
    field_ = build_psi(mesh, cfg.g1)
    params = CarlemanParams(lam=cfg.lam, tau=tau, delta=cfg.delta, K=field_.default_K(), T=cfg.T)
    small = params.smallness(mesh.h)
    if small > cfg.eps:
        raise SmallnessViolation(f"cell h={h}, tau={tau}: tau h max(theta) = {small:.4g} exceeds {cfg.eps}")
    gamma = random_coefficients(mesh, stream(cfg.seed, 1)).gamma
    tb = _tables(field_, params, tree)
    best, ratios = None, []
    for j in range(cfg.samples):
        w = random_manufactured(tree, mesh, stream(cfg.seed, 0, j))
        f, g = manufacture_rhs(w, gamma, tree)
        terms = carleman_sides(w, f, g, field_, params, cfg.g0, cfg.eps, tb)
        ratios.append(terms.ratio)
        if best is None or terms.ratio > best.ratio:
            best = terms
    mx = max(ratios) if ratios else math.nan
    mean = float(np.mean(ratios)) if ratios else math.nan
    return CarlemanRow(mesh.h, tau, cfg.lam, small, cfg.samples, mx, mean, best)


def carleman_sweep(cfg: SweepConfig) -> CarlemanReport:
    """One row per (h, tau) cell; an empty sample set gives an empty report."""
    report = CarlemanReport()
    if cfg.samples == 0:
        return report
    for a in cfg.tau_factors:
        for h in cfg.hs:
            report.rows.append(carleman_cell(cfg, h, a * cfg.tau_ref))
    return report

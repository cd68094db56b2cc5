"""Forward controlled system and its exact discrete adjoint on a scenario tree.

Forward (explicit Euler-Maruyama, per branch)::

    y_{k+1} = y_k + dt (A y_k + chi u_k) + (a3 y_k + v_k) dB_k

Forward (implicit drift, ``B = (I - dt A)^{-1}``)::

    y_{k+1} = B [y_k + dt chi u_k + (a3 y_k + v_k) dB_k]

The backward recursion is defined as the transpose of the forward one, so
that the discrete duality identity telescopes exactly.  With
``m = (z+ + z-)/2`` and ``Z = (z+ - z-)/(2 sqrt(dt))``:

* explicit: ``z_k = m + dt (A^T m + a3 Z)``, controls pair with ``(m, Z)``;
* implicit: ``z_k = B^T m + dt a3 B^T Z``, controls pair with ``(B^T m, B^T Z)``.

:class:`BackwardPair` stores the pairing variables in ``m`` and ``Z``.
Level arrays have one row per tree node and one column per primal node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from semictl.calculus import Stencil, drift_operator
from semictl.mesh import PRIMAL, Mesh, MeshFn, Region, dual
from semictl.tree import AdaptedProcess, ScenarioTree, split_children

__all__ = [
    "SCHEMES",
    "CFLViolation",
    "Coefficients",
    "ControlPair",
    "BackwardPair",
    "solve_forward",
    "solve_backward",
    "duality_terms",
    "duality_gap",
    "energy_profile",
]

SCHEMES = ("explicit", "implicit")


class CFLViolation(ValueError):
    """The explicit step is too large for the drift operator."""


@dataclass(eq=False)
class Coefficients:
    """Deterministic, time-constant coefficients of the drift and diffusion.

    ``gamma[i]`` lives on the dual mesh of axis ``i``; ``a1``, ``a2`` and
    ``a3`` are primal.  Missing lower-order terms are zero.
    """

    mesh: Mesh
    gamma: tuple[MeshFn, ...]
    a1: Optional[tuple[MeshFn, ...]] = None
    a2: Optional[MeshFn] = None
    a3: Optional[MeshFn] = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.gamma = tuple(self.gamma)
        if self.a1 is not None:
            self.a1 = tuple(self.a1)
        # drift_operator validates the regions and the sign of gamma
        self._cache["drift"] = drift_operator(self.mesh, self.gamma, self.a1, self.a2)
        if self.a3 is not None and self.a3.loc != PRIMAL:
            raise ValueError(f"a3 must be primal, got {self.a3.loc}")

    @classmethod
    def heat(cls, mesh: Mesh, gamma: float = 1.0) -> "Coefficients":
        return cls(mesh, tuple(mesh.full(gamma, dual(i)) for i in range(mesh.n)))

    @classmethod
    def from_functions(
        cls,
        mesh: Mesh,
        gamma: Union[Callable, Sequence[Callable]],
        a1: Optional[Sequence[Callable]] = None,
        a2: Optional[Callable] = None,
        a3: Optional[Callable] = None,
    ) -> "Coefficients":
        """Sample coefficient functions ``f(x_1, ..., x_n)`` on their node sets."""
        gam_fns = [gamma] * mesh.n if callable(gamma) else list(gamma)
        return cls(
            mesh,
            tuple(mesh.sample(g, dual(i)) for i, g in enumerate(gam_fns)),
            None if a1 is None else tuple(mesh.sample(a) for a in a1),
            None if a2 is None else mesh.sample(a2),
            None if a3 is None else mesh.sample(a3),
        )

    @property
    def drift(self) -> Stencil:
        return self._cache["drift"]

    @property
    def a3_flat(self) -> np.ndarray:
        if self.a3 is None:
            return np.zeros(self.mesh.size(PRIMAL))
        return self.a3.flat

    def max_stable_dt(self) -> float:
        """Largest explicit step with ``dt (2 sum max gamma_i / h^2 + sum max|a1_i|/h + max|a2|) <= 1``."""
        h = self.mesh.h
        rate = 2.0 * sum(float(g.values.max()) for g in self.gamma) / h**2
        if self.a1 is not None:
            rate += sum(float(np.abs(a.values).max()) for a in self.a1) / h
        if self.a2 is not None:
            rate += float(np.abs(self.a2.values).max())
        return 1.0 / rate

    def implicit_factor(self, dt: float):
        """Cached sparse LU of ``I - dt A`` and of its transpose."""
        key = ("lu", dt)
        if key not in self._cache:
            A = self.drift.matrix
            M = (sp.identity(A.shape[0], format="csc") - dt * A).tocsc()
            self._cache[key] = (splu(M), splu(M.T.tocsc()))
        return self._cache[key]


@dataclass
class ControlPair:
    """Interior control ``u`` (supported in ``G_0``) and diffusion control ``v``.

    Both are adapted processes on levels ``0..K-1``.
    """

    u: AdaptedProcess
    v: AdaptedProcess
    g0: Region

    def __post_init__(self):
        for name, p in (("u", self.u), ("v", self.v)):
            if p.last != p.tree.K - 1 or p.loc != PRIMAL:
                raise ValueError(f"{name} must be primal on levels 0..K-1")
        mask = self.mask
        if np.any(self.u.data[:, ~mask] != 0):
            raise ValueError("u must vanish outside G_0")

    @property
    def mask(self) -> np.ndarray:
        return self.u.mesh.mask(PRIMAL, self.g0).ravel()

    @classmethod
    def zero(cls, tree: ScenarioTree, mesh: Mesh, g0: Region) -> "ControlPair":
        K = tree.K
        return cls(AdaptedProcess(tree, mesh, last=K - 1), AdaptedProcess(tree, mesh, last=K - 1), g0)

    @classmethod
    def projected(cls, u: AdaptedProcess, v: AdaptedProcess, g0: Region) -> "ControlPair":
        """Zero ``u`` outside ``G_0`` and build the pair."""
        mask = u.mesh.mask(PRIMAL, g0).ravel()
        return cls(AdaptedProcess(u.tree, u.mesh, u.loc, u.last, u.data * mask), v, g0)


@dataclass
class BackwardPair:
    """Backward solution: ``z`` on levels ``0..K``, pairing variables ``m``, ``Z`` on ``0..K-1``."""

    z: AdaptedProcess
    m: AdaptedProcess
    Z: AdaptedProcess
    scheme: str


def _check_scheme(scheme: str):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")


def _check_cfl(coeffs: Coefficients, tree: ScenarioTree, scheme: str):
    if scheme == "explicit":
        dt_max = coeffs.max_stable_dt()
        if tree.dt > dt_max * (1 + 1e-12):
            raise CFLViolation(
                f"explicit step dt={tree.dt:.4g} exceeds the stability bound {dt_max:.4g}; "
                f"use K >= {math.ceil(tree.T / dt_max)} or the implicit scheme"
            )


def _apply(matrix: sp.csr_matrix, rows: np.ndarray) -> np.ndarray:
    """Apply a primal operator to every row of a level array."""
    return (matrix @ rows.T).T


def _solve(lu, rows: np.ndarray) -> np.ndarray:
    return lu.solve(np.ascontiguousarray(rows.T)).T


def solve_forward(
    y0: MeshFn,
    ctl: Optional[ControlPair],
    coeffs: Coefficients,
    tree: ScenarioTree,
    scheme: str = "explicit",
) -> AdaptedProcess:
    """Propagate ``y0`` through the tree; ``ctl=None`` means no control."""
    _check_scheme(scheme)
    _check_cfl(coeffs, tree, scheme)
    if y0.mesh != coeffs.mesh or y0.loc != PRIMAL:
        raise ValueError("y0 must be a primal function on the coefficient mesh")
    if ctl is not None and (ctl.u.tree != tree or ctl.u.mesh != coeffs.mesh):
        raise ValueError("controls live on a different tree or mesh")
    A = coeffs.drift.matrix
    a3 = coeffs.a3_flat
    dt, sq = tree.dt, tree.sqrt_dt
    lu = coeffs.implicit_factor(dt)[0] if scheme == "implicit" else None
    y = AdaptedProcess(tree, coeffs.mesh)
    y.set_level(0, y0.flat)
    for k in range(tree.K):
        Y = y.level(k)
        base = Y + dt * _apply(A, Y) if lu is None else Y.copy()
        noise = a3 * Y
        if ctl is not None:
            base = base + dt * ctl.u.level(k)
            noise = noise + ctl.v.level(k)
        nxt = y.level(k + 1)
        nxt[0::2] = base + sq * noise
        nxt[1::2] = base - sq * noise
        if lu is not None:
            nxt[:] = _solve(lu, nxt)
    return y


def solve_backward(
    z_T: Union[MeshFn, np.ndarray],
    coeffs: Coefficients,
    tree: ScenarioTree,
    scheme: str = "explicit",
) -> BackwardPair:
    """Exact adjoint of :func:`solve_forward` for terminal data on the leaves.

    ``z_T`` is either a deterministic primal function or an array of shape
    ``(2**K, |M|)`` with one row per leaf.
    """
    _check_scheme(scheme)
    _check_cfl(coeffs, tree, scheme)
    mesh = coeffs.mesh
    leaves = 2**tree.K
    if isinstance(z_T, MeshFn):
        z_T = np.broadcast_to(z_T.flat, (leaves, mesh.size(PRIMAL)))
    z_T = np.asarray(z_T, dtype=float)
    if z_T.shape != (leaves, mesh.size(PRIMAL)):
        raise ValueError(f"terminal data shape {z_T.shape} != {(leaves, mesh.size(PRIMAL))}")
    At = coeffs.drift.matrix.T.tocsr()
    a3 = coeffs.a3_flat
    dt = tree.dt
    luT = coeffs.implicit_factor(dt)[1] if scheme == "implicit" else None
    z = AdaptedProcess(tree, mesh)
    m = AdaptedProcess(tree, mesh, last=tree.K - 1)
    Z = AdaptedProcess(tree, mesh, last=tree.K - 1)
    z.set_level(tree.K, z_T)
    for k in range(tree.K - 1, -1, -1):
        mk, Zk = split_children(z.level(k + 1), dt)
        if luT is None:
            zk = mk + dt * (_apply(At, mk) + a3 * Zk)
        else:
            mk, Zk = _solve(luT, mk), _solve(luT, Zk)
            zk = mk + dt * a3 * Zk
        m.set_level(k, mk)
        Z.set_level(k, Zk)
        z.set_level(k, zk)
    return BackwardPair(z, m, Z, scheme)


def duality_terms(y: AdaptedProcess, back: BackwardPair, ctl: Optional[ControlPair]) -> dict[str, float]:
    """The four terms of the discrete duality identity."""
    tree = y.tree
    K = tree.K
    terminal = y.pairing(back.z, K)
    initial = y.pairing(back.z, 0)
    u_term = v_term = 0.0
    if ctl is not None:
        u_term = tree.dt * sum(ctl.u.pairing(back.m, k, ctl.mask) for k in range(K))
        v_term = tree.dt * sum(ctl.v.pairing(back.Z, k) for k in range(K))
    return {"terminal": terminal, "initial": initial, "u": u_term, "v": v_term}


def duality_gap(
    y0: MeshFn,
    z_T: Union[MeshFn, np.ndarray],
    ctl: Optional[ControlPair],
    coeffs: Coefficients,
    tree: ScenarioTree,
    scheme: str = "explicit",
) -> tuple[float, float]:
    """``E<y_K, z_T> - E<y_0, z_0> - sum dt E[<u, m>_{G_0} + <v, Z>]`` and the scale of its terms."""
    y = solve_forward(y0, ctl, coeffs, tree, scheme)
    back = solve_backward(z_T, coeffs, tree, scheme)
    t = duality_terms(y, back, ctl)
    gap = t["terminal"] - t["initial"] - t["u"] - t["v"]
    scale = max(abs(v) for v in t.values())
    return gap, scale


def energy_profile(p: AdaptedProcess) -> np.ndarray:
    """``E ||X_k||^2`` for every stored level."""
    return np.array([p.energy(k) for k in range(p.last + 1)])

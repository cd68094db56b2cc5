"""Difference and average operators between primal and dual meshes.

``D_i u(x) = (u(x + h/2 e_i) - u(x - h/2 e_i)) / h`` and
``A_i u(x) = (u(x + h/2 e_i) + u(x - h/2 e_i)) / 2``.

Applied to a primal function the result lives on ``M*_i``; applied to a
function on ``M*_i`` the result lives on ``M``.  Primal functions are
extended by zero to ``d_i M`` unless explicit boundary values are passed.

All operators are sparse matrices assembled by Kronecker products and cached
per mesh.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from semictl.mesh import PRIMAL, Loc, Mesh, MeshFn, RegionMismatch, boundary, dual

__all__ = [
    "Stencil",
    "stencil",
    "diff",
    "average",
    "laplacian_gamma",
    "drift_operator",
    "adjoint_drift",
    "reg_gamma",
]


@dataclass(frozen=True, eq=False)
class Stencil:
    """Sparse linear map between two node sets of the same mesh."""

    mesh: Mesh
    matrix: sp.csr_matrix
    source: Loc
    target: Loc

    def __post_init__(self):
        expected = (self.mesh.size(self.target), self.mesh.size(self.source))
        if self.matrix.shape != expected:
            raise ValueError(f"stencil shape {self.matrix.shape} does not match {expected}")

    def __call__(self, f: MeshFn) -> MeshFn:
        if f.loc != self.source or f.mesh != self.mesh:
            raise RegionMismatch(f"stencil expects {self.source}, got {f.loc}")
        return MeshFn(self.mesh, self.target, self.matrix @ f.flat)

    def __matmul__(self, other: "Stencil") -> "Stencil":
        if other.target != self.source:
            raise RegionMismatch(f"cannot compose {self.source} <- {other.target}")
        return Stencil(self.mesh, (self.matrix @ other.matrix).tocsr(), other.source, self.target)

    def __add__(self, other: "Stencil") -> "Stencil":
        if (other.source, other.target) != (self.source, self.target):
            raise RegionMismatch("cannot add stencils between different node sets")
        return Stencil(self.mesh, (self.matrix + other.matrix).tocsr(), self.source, self.target)

    @property
    def T(self) -> "Stencil":
        return Stencil(self.mesh, self.matrix.T.tocsr(), self.target, self.source)

    def scaled_by(self, f: MeshFn) -> "Stencil":
        """``f * (self u)``, pointwise multiplication on the target set."""
        if f.loc != self.target:
            raise RegionMismatch(f"multiplier on {f.loc}, stencil target {self.target}")
        return Stencil(self.mesh, (sp.diags(f.flat) @ self.matrix).tocsr(), self.source, self.target)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def _one_d(N: int, h: float, op: str, to_dual: bool) -> sp.csr_matrix:
    if op == "D":
        lo, hi = -1.0 / h, 1.0 / h
    else:
        lo, hi = 0.5, 0.5
    if to_dual:
        # dual node j+1/2 sees primal j (left, 0 at j=0) and j+1 (right, 0 at j=N)
        m = sp.diags([np.full(N, hi), np.full(N, lo)], [0, -1], shape=(N + 1, N))
    else:
        m = sp.diags([np.full(N, lo), np.full(N, hi)], [0, 1], shape=(N, N + 1))
    return m.tocsr()


@lru_cache(maxsize=256)
def stencil(mesh: Mesh, op: str, i: int, source: Loc) -> Stencil:
    """Sparse ``D_i`` (``op='D'``) or ``A_i`` (``op='A'``) acting on ``source``."""
    if op not in ("D", "A"):
        raise ValueError(f"unknown operator {op!r}")
    mesh._check_axis(i)
    if source == PRIMAL:
        target, to_dual = dual(i), True
    elif source == dual(i):
        target, to_dual = PRIMAL, False
    else:
        raise RegionMismatch(f"{op}_{i} is not defined on {source}")
    eye = sp.identity(mesh.N, format="csr")
    factors = [eye] * mesh.n
    factors[i] = _one_d(mesh.N, mesh.h, op, to_dual)
    mat = factors[0]
    for fac in factors[1:]:
        mat = sp.kron(mat, fac, format="csr")
    return Stencil(mesh, mat.tocsr(), source, target)


def _apply(f: MeshFn, i: int, op: str, bnd: Optional[MeshFn]) -> MeshFn:
    out = stencil(f.mesh, op, i, f.loc)(f)
    if bnd is None:
        return out
    if f.loc != PRIMAL:
        raise RegionMismatch("boundary values only apply to primal inputs")
    if bnd.loc != boundary(i):
        raise RegionMismatch(f"boundary values must live on {boundary(i)}, got {bnd.loc}")
    h = f.mesh.h
    lo_w, hi_w = (-1.0 / h, 1.0 / h) if op == "D" else (0.5, 0.5)
    vals = np.array(out.values)
    first = [slice(None)] * f.mesh.n
    last = [slice(None)] * f.mesh.n
    first[i], last[i] = 0, -1
    vals[tuple(first)] += lo_w * np.take(bnd.values, 0, axis=i)
    vals[tuple(last)] += hi_w * np.take(bnd.values, 1, axis=i)
    return MeshFn(f.mesh, out.loc, vals)


def diff(f: MeshFn, i: int, boundary_values: Optional[MeshFn] = None) -> MeshFn:
    """``D_i f``; primal input is zero-extended unless ``boundary_values`` is given."""
    return _apply(f, i, "D", boundary_values)


def average(f: MeshFn, i: int, boundary_values: Optional[MeshFn] = None) -> MeshFn:
    """``A_i f``; same region algebra as :func:`diff`."""
    return _apply(f, i, "A", boundary_values)


def _check_gamma(mesh: Mesh, gamma: Sequence[MeshFn]):
    if len(gamma) != mesh.n:
        raise ValueError(f"need {mesh.n} diffusion coefficients, got {len(gamma)}")
    for i, g in enumerate(gamma):
        if g.loc != dual(i):
            raise RegionMismatch(f"gamma_{i} must live on {dual(i)}, got {g.loc}")
        if np.any(g.values <= 0):
            raise ValueError(f"gamma_{i} must be positive")


def laplacian_gamma(f: MeshFn, gamma: Sequence[MeshFn]) -> MeshFn:
    """``sum_i D_i(gamma_i D_i f)`` with zero Dirichlet extension."""
    _check_gamma(f.mesh, gamma)
    total = f.mesh.zeros(PRIMAL)
    for i, g in enumerate(gamma):
        total = total + diff(g * diff(f, i), i)
    return total


def drift_operator(
    mesh: Mesh,
    gamma: Sequence[MeshFn],
    a1: Optional[Sequence[MeshFn]] = None,
    a2: Optional[MeshFn] = None,
) -> Stencil:
    """Primal-to-primal matrix of ``sum D_i(gamma_i D_i y) + sum A_i D_i(a1_i y) + a2 y``."""
    _check_gamma(mesh, gamma)
    mat = sp.csr_matrix((mesh.size(PRIMAL), mesh.size(PRIMAL)))
    for i, g in enumerate(gamma):
        D_pd = stencil(mesh, "D", i, PRIMAL)
        D_dp = stencil(mesh, "D", i, dual(i))
        mat = mat + D_dp.matrix @ sp.diags(g.flat) @ D_pd.matrix
    if a1 is not None:
        if len(a1) != mesh.n:
            raise ValueError(f"need {mesh.n} advection coefficients, got {len(a1)}")
        for i, a in enumerate(a1):
            if a.loc != PRIMAL:
                raise RegionMismatch(f"a1_{i} must be primal, got {a.loc}")
            AD = stencil(mesh, "A", i, dual(i)).matrix @ stencil(mesh, "D", i, PRIMAL).matrix
            mat = mat + AD @ sp.diags(a.flat)
    if a2 is not None:
        if a2.loc != PRIMAL:
            raise RegionMismatch(f"a2 must be primal, got {a2.loc}")
        mat = mat + sp.diags(a2.flat)
    return Stencil(mesh, sp.csr_matrix(mat), PRIMAL, PRIMAL)


def adjoint_drift(
    z: MeshFn,
    gamma: Sequence[MeshFn],
    a1: Optional[Sequence[MeshFn]] = None,
    a2: Optional[MeshFn] = None,
) -> MeshFn:
    """``sum D_i(gamma_i D_i z) - sum a1_i A_i D_i z + a2 z`` evaluated by composition.

    This is the formal adjoint of :func:`drift_operator` obtained by summation
    by parts; it is kept separate from the matrix so the two can be compared.
    """
    out = laplacian_gamma(z, gamma)
    if a1 is not None:
        for i, a in enumerate(a1):
            out = out - a * average(diff(z, i), i)
    if a2 is not None:
        out = out + a2 * z
    return out


def reg_gamma(gamma: Sequence[MeshFn], gamma_primal: Optional[Sequence[MeshFn]] = None) -> float:
    """Discrete ``reg(gamma) = max(gamma_i + 1/gamma_i + sum_j |D_j gamma_j|^2)``.

    ``D_j gamma_j`` maps the dual samples onto the primal mesh, so the maximum
    is taken over primal nodes.  Primal samples of ``gamma_i`` are used when
    given, otherwise ``A_i gamma_i`` stands in for them.
    """
    mesh = gamma[0].mesh
    _check_gamma(mesh, gamma)
    grad_sq = sum(diff(g, j).values ** 2 for j, g in enumerate(gamma))
    if gamma_primal is None:
        gamma_primal = [average(g, i) for i, g in enumerate(gamma)]
    best = -np.inf
    for g in gamma_primal:
        if np.any(g.values <= 0):
            raise ValueError("gamma must be positive")
        best = max(best, float(np.max(g.values + 1.0 / g.values + grad_sq)))
    return best

"""Uniform meshes on the unit cube and the grid functions that live on them.

A mesh of dimension ``n`` with ``N`` interior points per axis has spacing
``h = 1/(N+1)``.  Three kinds of node sets are used:

* the primal mesh ``M``: points ``i*h`` with ``i in {1..N}^n``;
* the dual mesh ``M*_i``: the primal mesh shifted by ``h/2`` along axis ``i``,
  so axis ``i`` carries the ``N+1`` half-integer points ``(j + 1/2) h``;
* the boundary ``d_i M``: points whose axis-``i`` coordinate is 0 or 1.

Grid functions are stored as n-dimensional arrays in C order, i.e. the
flattened index is lexicographic in the integer multi-index.  Coordinates
are computed from indices on demand and never stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "Loc",
    "PRIMAL",
    "dual",
    "boundary",
    "Mesh",
    "MeshFn",
    "Region",
    "RegionMismatch",
    "build_mesh",
    "integral",
    "inner",
    "norm",
    "normal_and_trace",
]


class RegionMismatch(ValueError):
    """Raised when grid functions from different node sets are combined."""


@dataclass(frozen=True)
class Loc:
    """Tag naming a node set: ``primal``, ``dual`` (axis i) or ``boundary`` (axis i)."""

    kind: str
    axis: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("primal", "dual", "boundary"):
            raise ValueError(f"unknown node set kind {self.kind!r}")
        if (self.kind == "primal") != (self.axis is None):
            raise ValueError("primal takes no axis; dual/boundary require one")

    def __str__(self):
        return self.kind if self.axis is None else f"{self.kind}({self.axis})"


PRIMAL = Loc("primal")


def dual(i: int) -> Loc:
    return Loc("dual", i)


def boundary(i: int) -> Loc:
    return Loc("boundary", i)


@dataclass(frozen=True)
class Mesh:
    n: int
    N: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"dimension n must be a positive integer, got {self.n}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")

    @property
    def h(self) -> float:
        return 1.0 / (self.N + 1)

    def _check_axis(self, i: int):
        if not 0 <= i < self.n:
            raise ValueError(f"axis {i} out of range for n={self.n}")

    def shape(self, loc: Loc) -> tuple[int, ...]:
        if loc.kind == "primal":
            return (self.N,) * self.n
        self._check_axis(loc.axis)
        extent = self.N + 1 if loc.kind == "dual" else 2
        return tuple(extent if k == loc.axis else self.N for k in range(self.n))

    def size(self, loc: Loc) -> int:
        return math.prod(self.shape(loc))

    def axis_coords(self, loc: Loc, k: int) -> np.ndarray:
        """1-D coordinates of ``loc`` along axis ``k``."""
        h = self.h
        if loc.kind == "primal" or loc.axis != k:
            return h * np.arange(1, self.N + 1)
        if loc.kind == "dual":
            return h * (np.arange(self.N + 1) + 0.5)
        return np.array([0.0, 1.0])

    def coords(self, loc: Loc) -> tuple[np.ndarray, ...]:
        axes = [self.axis_coords(loc, k) for k in range(self.n)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def points(self, loc: Loc) -> np.ndarray:
        """Node coordinates as an array of shape ``(size, n)`` in storage order."""
        return np.stack([c.ravel() for c in self.coords(loc)], axis=1)

    def sample(self, func: Callable[..., np.ndarray], loc: Loc = PRIMAL) -> "MeshFn":
        """Evaluate ``func(x_1, ..., x_n)`` (vectorised) at the nodes of ``loc``."""
        values = np.broadcast_to(func(*self.coords(loc)), self.shape(loc))
        return MeshFn(self, loc, np.array(values, dtype=float))

    def zeros(self, loc: Loc = PRIMAL) -> "MeshFn":
        return MeshFn(self, loc, np.zeros(self.shape(loc)))

    def full(self, value: float, loc: Loc = PRIMAL) -> "MeshFn":
        return MeshFn(self, loc, np.full(self.shape(loc), float(value)))

    def mask(self, loc: Loc, region: Optional["Region"] = None) -> np.ndarray:
        if region is None:
            return np.ones(self.shape(loc), dtype=bool)
        return region.contains(*self.coords(loc))

    def measure(self, loc: Loc) -> float:
        """Weight of one node in the discrete integral over ``loc``."""
        return self.h ** (self.n - 1 if loc.kind == "boundary" else self.n)


def build_mesh(n: int, N: int) -> Mesh:
    return Mesh(n, N)


@dataclass(frozen=True)
class Region:
    """Open axis-aligned box ``prod_k (lo_k, hi_k)`` used to select observation sets."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("lo and hi must be non-empty and of equal length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"empty box: lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @classmethod
    def whole(cls, n: int) -> "Region":
        # slightly larger than the cube so every primal/dual node is inside
        return cls((-1.0,) * n, (2.0,) * n)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lo) + np.array(self.hi))

    def contains(self, *x: np.ndarray) -> np.ndarray:
        if len(x) != self.dim:
            raise ValueError(f"box of dimension {self.dim} queried with {len(x)} coordinates")
        inside = np.ones(np.broadcast(*x).shape, dtype=bool)
        for xk, a, b in zip(x, self.lo, self.hi):
            inside &= (xk > a) & (xk < b)
        return inside

    def strictly_inside(self, other: "Region") -> bool:
        """True when the closure of ``self`` lies in the open box ``other``."""
        return all(o_lo < a and b < o_hi for a, b, o_lo, o_hi in zip(self.lo, self.hi, other.lo, other.hi))


class MeshFn:
    """A real function on one node set of a mesh.

    Values are kept as a read-only array shaped like the node set.  Arithmetic
    is allowed with scalars and with functions on the same node set only.
    """

    __slots__ = ("mesh", "loc", "values")

    def __init__(self, mesh: Mesh, loc: Loc, values):
        shape = mesh.shape(loc)
        arr = np.array(values, dtype=float)
        if arr.size != math.prod(shape):
            raise ValueError(f"{arr.size} values given for {loc} with {math.prod(shape)} nodes")
        arr = arr.reshape(shape)
        arr.setflags(write=False)
        object.__setattr__(self, "mesh", mesh)
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("MeshFn is immutable")

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"MeshFn(n={self.mesh.n}, N={self.mesh.N}, loc={self.loc})"

    def _other(self, other):
        if isinstance(other, MeshFn):
            if other.mesh != self.mesh or other.loc != self.loc:
                raise RegionMismatch(f"cannot combine {self.loc} on {self.mesh} with {other.loc} on {other.mesh}")
            return other.values
        return other

    def _new(self, values) -> "MeshFn":
        return MeshFn(self.mesh, self.loc, values)

    def __add__(self, other):
        return self._new(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._new(self.values - self._other(other))

    def __rsub__(self, other):
        return self._new(self._other(other) - self.values)

    def __mul__(self, other):
        return self._new(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._new(self.values / self._other(other))

    def __neg__(self):
        return self._new(-self.values)

    def __pow__(self, p):
        return self._new(self.values**p)

    def __abs__(self):
        return self._new(np.abs(self.values))

    def restrict(self, region: Region) -> "MeshFn":
        """Zero the values outside ``region``."""
        return self._new(np.where(self.mesh.mask(self.loc, region), self.values, 0.0))


def integral(f: MeshFn, sub: Optional[Region] = None) -> float:
    """Discrete integral: ``h^n * sum`` on primal/dual sets, ``h^(n-1) * sum`` on a boundary."""
    values = f.values if sub is None else f.values[f.mesh.mask(f.loc, sub)]
    return float(f.mesh.measure(f.loc) * np.sum(values))


def inner(u: MeshFn, v: MeshFn, sub: Optional[Region] = None) -> float:
    return integral(u * v, sub)


def norm(f: MeshFn, p: float = 2, kind: str = "Lp") -> float:
    """``L^p_h`` norm on the node set of ``f``, or ``W^{1,p}_h`` norm of a primal ``f``.

    For ``W1p`` the function is extended by zero to the boundary before the
    differences ``D_i f`` are taken.
    """
    if not (p == math.inf or p >= 1):
        raise ValueError(f"norm exponent must be >= 1 or inf, got {p}")
    if kind == "Lp":
        a = np.abs(f.values)
        if p == math.inf:
            return float(a.max())
        return float((f.mesh.measure(f.loc) * np.sum(a**p)) ** (1.0 / p))
    if kind == "W1p":
        if f.loc != PRIMAL:
            raise RegionMismatch("W1p norm is defined for primal functions")
        from semictl.calculus import diff

        grads = [norm(diff(f, i), p) for i in range(f.mesh.n)]
        if p == math.inf:
            return norm(f, p) + max(grads)
        return float((norm(f, p) ** p + sum(g**p for g in grads)) ** (1.0 / p))
    raise ValueError(f"unknown norm kind {kind!r}")


def normal_and_trace(f: MeshFn) -> tuple[MeshFn, MeshFn]:
    """Exterior normal ``nu_i`` and trace ``t_r^i(f)`` on ``d_i M`` for ``f`` on ``M*_i``.

    At ``x_i = 0`` the normal is -1 and the trace takes the first dual node;
    at ``x_i = 1`` the normal is +1 and the trace takes the last dual node.
    """
    if f.loc.kind != "dual":
        raise RegionMismatch(f"trace needs a dual function, got {f.loc}")
    i = f.loc.axis
    mesh = f.mesh
    first = np.take(f.values, [0], axis=i)
    last = np.take(f.values, [-1], axis=i)
    trace = np.concatenate([first, last], axis=i)
    nu_1d = np.array([-1.0, 1.0]).reshape([2 if k == i else 1 for k in range(mesh.n)])
    nu = np.broadcast_to(nu_1d, mesh.shape(boundary(i)))
    return MeshFn(mesh, boundary(i), nu), MeshFn(mesh, boundary(i), trace)

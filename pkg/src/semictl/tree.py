"""Binary scenario tree standing in for the Brownian filtration.

Level ``k`` of the tree (``0 <= k <= K``) has ``2**k`` nodes, each with
probability ``2**-k``.  Node ``j`` at level ``k`` has children ``2j`` (increment
``+sqrt(dt)``) and ``2j + 1`` (increment ``-sqrt(dt)``) at level ``k + 1``.
Expectations and conditional expectations are therefore exact finite sums.

An adapted process stores one grid function per node in a single flat array
of ``2**(K+1) - 1`` slots; level ``k`` occupies slots ``2**k - 1 .. 2**(k+1) - 2``.
Adaptedness is structural: the value at a node is indexed by that node only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from semictl.mesh import PRIMAL, Loc, Mesh, MeshFn

__all__ = [
    "BudgetExceeded",
    "ScenarioTree",
    "AdaptedProcess",
    "expectation",
    "martingale_parts",
    "DEFAULT_BUDGET_BYTES",
]

DEFAULT_BUDGET_BYTES = 2 * 1024**3


class BudgetExceeded(RuntimeError):
    """A requested tree/mesh combination does not fit in the memory budget."""


@dataclass(frozen=True)
class ScenarioTree:
    K: int
    T: float

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def sqrt_dt(self) -> float:
        return math.sqrt(self.dt)

    @property
    def n_slots(self) -> int:
        return 2 ** (self.K + 1) - 1

    def width(self, k: int) -> int:
        self._check_level(k)
        return 2**k

    def weight(self, k: int) -> float:
        return 2.0**-k

    def offset(self, k: int) -> int:
        return 2**k - 1

    def _check_level(self, k: int):
        if not 0 <= k <= self.K:
            raise ValueError(f"level {k} outside 0..{self.K}")

    def increments(self, k: int) -> np.ndarray:
        """``dB`` on the edges from level ``k`` to ``k + 1``, indexed by child node."""
        if not 0 <= k < self.K:
            raise ValueError(f"no increments leave level {k}")
        inc = np.empty(2 ** (k + 1))
        inc[0::2] = self.sqrt_dt
        inc[1::2] = -self.sqrt_dt
        return inc

    def brownian(self, k: int) -> np.ndarray:
        """``B(t_k)`` at every node of level ``k`` (sum of increments along the path)."""
        self._check_level(k)
        b = np.zeros(1)
        for lev in range(k):
            b = np.repeat(b, 2) + self.increments(lev)
        return b

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.K + 1)

    def check_budget(self, nodes_per_slot: int, budget_bytes: int = DEFAULT_BUDGET_BYTES, copies: int = 1):
        need = copies * self.n_slots * nodes_per_slot * 8
        if need > budget_bytes:
            raise BudgetExceeded(
                f"K={self.K} with {nodes_per_slot} nodes per slot needs {need / 2**20:.1f} MiB, "
                f"budget is {budget_bytes / 2**20:.1f} MiB"
            )


class AdaptedProcess:
    """Grid-function-valued process on levels ``0..last`` of a scenario tree.

    ``last`` is ``K`` for states and ``K - 1`` for integrands such as controls
    or the martingale density.  Level arrays are views of shape
    ``(2**k, node_count)`` into the flat slot array.
    """

    def __init__(self, tree: ScenarioTree, mesh: Mesh, loc: Loc = PRIMAL, last: Optional[int] = None,
                 data: Optional[np.ndarray] = None, budget_bytes: int = DEFAULT_BUDGET_BYTES):
        self.tree = tree
        self.mesh = mesh
        self.loc = loc
        self.last = tree.K if last is None else int(last)
        if not 0 <= self.last <= tree.K:
            raise ValueError(f"last level {self.last} outside 0..{tree.K}")
        width = mesh.size(loc)
        slots = 2 ** (self.last + 1) - 1
        if data is None:
            tree.check_budget(width, budget_bytes)
            data = np.zeros((slots, width))
        elif data.shape != (slots, width):
            raise ValueError(f"data shape {data.shape} != {(slots, width)}")
        self.data = data

    @classmethod
    def like(cls, other: "AdaptedProcess", last: Optional[int] = None) -> "AdaptedProcess":
        return cls(other.tree, other.mesh, other.loc, other.last if last is None else last)

    @classmethod
    def deterministic(cls, tree: ScenarioTree, f: MeshFn, last: Optional[int] = None) -> "AdaptedProcess":
        """The process equal to ``f`` at every node."""
        p = cls(tree, f.mesh, f.loc, last)
        p.data[:] = f.flat
        return p

    @property
    def node_count(self) -> int:
        return self.data.shape[1]

    def level(self, k: int) -> np.ndarray:
        if not 0 <= k <= self.last:
            raise ValueError(f"level {k} outside 0..{self.last}")
        return self.data[2**k - 1 : 2 ** (k + 1) - 1]

    def set_level(self, k: int, values: np.ndarray):
        self.level(k)[:] = values

    def node(self, k: int, j: int) -> MeshFn:
        return MeshFn(self.mesh, self.loc, self.level(k)[j])

    def copy(self) -> "AdaptedProcess":
        return AdaptedProcess(self.tree, self.mesh, self.loc, self.last, self.data.copy())

    def scaled(self, alpha: float) -> "AdaptedProcess":
        return AdaptedProcess(self.tree, self.mesh, self.loc, self.last, alpha * self.data)

    def __add__(self, other: "AdaptedProcess") -> "AdaptedProcess":
        self._compatible(other)
        return AdaptedProcess(self.tree, self.mesh, self.loc, self.last, self.data + other.data)

    def __sub__(self, other: "AdaptedProcess") -> "AdaptedProcess":
        self._compatible(other)
        return AdaptedProcess(self.tree, self.mesh, self.loc, self.last, self.data - other.data)

    def _compatible(self, other: "AdaptedProcess"):
        if (other.tree, other.mesh, other.loc, other.last) != (self.tree, self.mesh, self.loc, self.last):
            raise ValueError("processes live on different trees, meshes or level ranges")

    def mean(self, k: int) -> np.ndarray:
        """``E[X_k]`` as a flat grid function."""
        return self.level(k).mean(axis=0)

    def energy(self, k: int, mask: Optional[np.ndarray] = None) -> float:
        """``E ||X_k||^2`` in ``L^2_h`` (optionally restricted to a node mask)."""
        vals = self.level(k) if mask is None else self.level(k)[:, mask.ravel()]
        return float(self.mesh.measure(self.loc) * np.sum(vals**2) / 2**k)

    def pairing(self, other: "AdaptedProcess", k: int, mask: Optional[np.ndarray] = None) -> float:
        """``E <X_k, Y_k>`` in ``L^2_h``."""
        a, b = self.level(k), other.level(k)
        if mask is not None:
            a, b = a[:, mask.ravel()], b[:, mask.ravel()]
        return float(self.mesh.measure(self.loc) * np.sum(a * b) / 2**k)

    def time_energy(self, mask: Optional[np.ndarray] = None, levels: Optional[range] = None) -> float:
        """Left-rectangle ``sum_k dt E ||X_k||^2`` over ``levels`` (default all stored levels)."""
        levels = range(self.last + 1) if levels is None else levels
        return self.tree.dt * sum(self.energy(k, mask) for k in levels)


def expectation(p: AdaptedProcess, k: int, functional: Callable[[MeshFn], float]) -> float:
    """``sum_j 2**-k functional(p at node j)`` over the nodes of level ``k``."""
    if not 0 <= k <= p.last:
        raise ValueError(f"level {k} outside 0..{p.last}")
    w = p.tree.weight(k)
    return float(sum(w * functional(p.node(k, j)) for j in range(2**k)))


def martingale_parts(z_plus, z_minus, dt: float):
    """Exact split of a two-point continuation into mean and density.

    ``m = (z+ + z-)/2`` and ``Z = (z+ - z-)/(2 sqrt(dt))`` so that
    ``z+- = m +- Z sqrt(dt)``.
    """
    z_plus = np.asarray(z_plus, dtype=float)
    z_minus = np.asarray(z_minus, dtype=float)
    m = 0.5 * (z_plus + z_minus)
    Z = (z_plus - z_minus) / (2.0 * math.sqrt(dt))
    return m, Z


def split_children(level_values: np.ndarray, dt: float):
    """``martingale_parts`` for a whole level: rows ``2j`` and ``2j+1`` are the children of ``j``."""
    return martingale_parts(level_values[0::2], level_values[1::2], dt)

"""Carleman weight functions and h-convergence checks of their discrete derivatives.

The weight is ``r(x, t) = exp(s(t) phi(x))`` with

    phi(x)   = exp(lam * psi(x)) - exp(lam * K)        (negative)
    theta(t) = 1 / ((t + delta T) (T + delta T - t))
    s(t)     = tau * theta(t)

and ``rho = 1/r``.  ``psi`` is the quadratic bump ``C0 - |x - x0|^2`` centred
in the inner observation box, with ``C0 = 1 + n`` so that ``psi > 0`` on the
closed cube.

Products such as ``r(x) rho(x + sigma)`` are evaluated as
``exp(s (phi(x) - phi(x + sigma)))`` so large ``s |phi|`` does not overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from semictl.mesh import PRIMAL, Loc, Mesh, MeshFn, Region

__all__ = [
    "CarlemanParams",
    "WeightField",
    "SmallnessViolation",
    "build_psi",
    "theta",
    "theta_prime",
    "s_of_t",
    "RateRow",
    "verify_weight_rates",
    "calibrate_epsilon",
    "RATE_IDENTITIES",
]


class SmallnessViolation(ValueError):
    """``tau * h * max(theta)`` exceeds the admissible bound."""


@dataclass(frozen=True)
class CarlemanParams:
    lam: float = 1.0
    tau: float = 1.0
    delta: float = 0.25
    K: float = 3.1
    T: float = 1.0

    def __post_init__(self):
        if self.lam < 1:
            raise ValueError(f"lambda must be >= 1, got {self.lam}")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if not 0 < self.delta < 0.5:
            raise ValueError(f"delta must lie in (0, 1/2), got {self.delta}")
        if self.T <= 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def theta_max(self) -> float:
        return 1.0 / (self.T**2 * self.delta * (1 + self.delta))

    @property
    def theta_min(self) -> float:
        return 4.0 / (self.T**2 * (1 + 2 * self.delta) ** 2)

    def smallness(self, h: float) -> float:
        """The quantity ``tau * h * max theta`` that must stay below epsilon."""
        return self.tau * h * self.theta_max


def theta(t, delta: float, T: float):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > T):
        raise ValueError(f"t must lie in [0, {T}]")
    return 1.0 / ((t + delta * T) * (T + delta * T - t))


def theta_prime(t, delta: float, T: float):
    """Closed form ``2 (t - T/2) theta(t)^2``."""
    return 2.0 * (np.asarray(t, dtype=float) - T / 2) * theta(t, delta, T) ** 2


def s_of_t(t, params: CarlemanParams):
    return params.tau * theta(t, params.delta, params.T)


@dataclass(frozen=True)
class WeightField:
    """``psi = c0 - |x - center|^2`` on a given mesh, plus the assumption margins.

    ``grad_margin`` is ``min |grad psi|`` over primal samples outside the inner
    box; ``normal_margin`` is ``-max d_nu psi`` over the one-cell layers next
    to every face.  Both must be positive.
    """

    mesh: Mesh
    center: tuple[float, ...]
    c0: float
    grad_margin: float
    normal_margin: float

    # evaluators take coordinates as separate arrays, like Mesh.sample

    def psi(self, *x):
        return self.c0 - sum((xk - ck) ** 2 for xk, ck in zip(x, self.center))

    def grad_psi(self, k: int, *x):
        return -2.0 * (x[k] - self.center[k])

    def hess_psi(self, k: int, j: int, *x):
        return np.full(np.broadcast(*x).shape, -2.0 if k == j else 0.0)

    @property
    def psi_max(self) -> float:
        return self.c0

    def default_K(self, pad: float = 0.1) -> float:
        return self.c0 + pad

    def check_params(self, params: CarlemanParams):
        if params.K <= self.psi_max:
            raise ValueError(f"K={params.K} must exceed max psi={self.psi_max}")

    def phi(self, lam: float, K: float, *x):
        return np.exp(lam * self.psi(*x)) - math.exp(lam * K)

    def weight_poly(self, lam: float, *x):
        """Positive polynomial factor ``exp(lam psi)`` standing in for ``phi`` in the Carleman terms."""
        return np.exp(lam * self.psi(*x))

    def dphi(self, lam: float, k: int, *x):
        return lam * self.grad_psi(k, *x) * np.exp(lam * self.psi(*x))

    def ddphi(self, lam: float, k: int, j: int, *x):
        e = np.exp(lam * self.psi(*x))
        return (lam**2 * self.grad_psi(k, *x) * self.grad_psi(j, *x) + lam * self.hess_psi(k, j, *x)) * e

    def sample_psi(self, loc: Loc = PRIMAL) -> MeshFn:
        return self.mesh.sample(self.psi, loc)

    def sample_phi(self, params: CarlemanParams, loc: Loc = PRIMAL) -> MeshFn:
        return self.mesh.sample(lambda *x: self.phi(params.lam, params.K, *x), loc)

    def r(self, params: CarlemanParams, t: float, loc: Loc = PRIMAL) -> MeshFn:
        s = float(s_of_t(t, params))
        return self.mesh.sample(lambda *x: np.exp(s * self.phi(params.lam, params.K, *x)), loc)

    def rho(self, params: CarlemanParams, t: float, loc: Loc = PRIMAL) -> MeshFn:
        s = float(s_of_t(t, params))
        return self.mesh.sample(lambda *x: np.exp(-s * self.phi(params.lam, params.K, *x)), loc)


def build_psi(mesh: Mesh, g1: Region, c0: Optional[float] = None) -> WeightField:
    """Quadratic bump centred in ``g1`` with its assumption margins on ``mesh``."""
    n = mesh.n
    if g1.dim != n:
        raise ValueError(f"box dimension {g1.dim} does not match mesh dimension {n}")
    center = tuple(float(c) for c in g1.center)
    if any(c <= 0 or c >= 1 for c in center):
        raise ValueError(f"centre {center} is not interior to the unit cube")
    if not g1.strictly_inside(Region((0.0,) * n, (1.0,) * n)):
        raise ValueError("G_1 must lie strictly inside the unit cube")
    c0 = float(1 + n) if c0 is None else float(c0)

    x = mesh.coords(PRIMAL)
    grad_norm = 2.0 * np.sqrt(sum((xk - ck) ** 2 for xk, ck in zip(x, center)))
    outside = ~g1.contains(*x)
    grad_margin = float(grad_norm[outside].min()) if outside.any() else math.inf

    # d_nu psi on the layer {x_k in {0, h}} (normal -e_k) and {x_k in {1-h, 1}} (normal +e_k)
    h = mesh.h
    worst = -math.inf
    interior = mesh.axis_coords(PRIMAL, 0)
    for k in range(n):
        for layer, sign in (((0.0, h), -1.0), ((1.0 - h, 1.0), 1.0)):
            axes = [np.asarray(layer) if j == k else interior for j in range(n)]
            pts = np.meshgrid(*axes, indexing="ij")
            d_nu = sign * (-2.0) * (pts[k] - center[k])
            worst = max(worst, float(d_nu.max()))
    field = WeightField(mesh, center, c0, grad_margin, -worst)
    if field.grad_margin <= 0 or field.normal_margin <= 0:
        raise ValueError(
            f"psi violates the weight assumption: grad margin {field.grad_margin}, normal margin {field.normal_margin}"
        )
    return field


# --- h-convergence of discrete operators applied to the weight -------------
#
# A discrete operator acting on rho is a finite sum of shifts, stored as
# {offset (tuple of half-steps per axis): coefficient}.  Offsets are in
# units of h/2 so that A_i and D_i compose exactly.


def _shift_op(n: int, i: int, op: str, h: float) -> dict:
    plus = tuple(1 if k == i else 0 for k in range(n))
    minus = tuple(-1 if k == i else 0 for k in range(n))
    if op == "D":
        return {plus: 1.0 / h, minus: -1.0 / h}
    return {plus: 0.5, minus: 0.5}


def _compose(a: dict, b: dict) -> dict:
    out: dict = {}
    for oa, ca in a.items():
        for ob, cb in b.items():
            o = tuple(p + q for p, q in zip(oa, ob))
            out[o] = out.get(o, 0.0) + ca * cb
    return out


def _chain(n: int, h: float, ops: Sequence[tuple[str, int]]) -> dict:
    st = {(0,) * n: 1.0}
    for op, i in ops:
        st = _compose(_shift_op(n, i, op, h), st)
    return st


def _apply_shifts(st: dict, g: Callable, x: np.ndarray, h: float) -> np.ndarray:
    """``sum_sigma c_sigma g(x + sigma h/2)``; ``x`` has shape ``(m, n)``."""
    total = np.zeros(len(x))
    for off, c in st.items():
        total += c * g(x + 0.5 * h * np.asarray(off, dtype=float))
    return total


@dataclass(frozen=True)
class _Identity:
    name: str
    s_power: int
    discrete: Callable  # (field, params, s, h, x) -> values
    exact: Callable  # (field, params, s, x) -> values


def _phi_at(field: WeightField, params: CarlemanParams):
    return lambda y: field.phi(params.lam, params.K, *y.T)


def _r_op_rho(field, params, s, h, x, ops):
    """``r(x) * (ops rho)(x)`` evaluated stably."""
    phi = _phi_at(field, params)
    base = phi(x)
    st = _chain(field.mesh.n, h, ops)
    return _apply_shifts(st, lambda y: np.exp(s * (base - phi(y))), x, h)


def _make_identities(n: int) -> list[_Identity]:
    i, j = 0, (1 if n > 1 else 0)
    ids = [
        _Identity(
            "r*rho",
            0,
            lambda f, p, s, h, x: _r_op_rho(f, p, s, h, x, []),
            lambda f, p, s, x: np.ones(len(x)),
        ),
        _Identity(
            f"r*A{i}D{i}rho",
            1,
            lambda f, p, s, h, x: _r_op_rho(f, p, s, h, x, [("D", i), ("A", i)]),
            lambda f, p, s, x: -s * f.dphi(p.lam, i, *x.T),
        ),
        _Identity(
            f"r*D{i}rho",
            1,
            # half-step difference, i.e. the probe point is treated as a dual node
            lambda f, p, s, h, x: _r_op_rho(f, p, s, h, x, [("D", i)]),
            lambda f, p, s, x: -s * f.dphi(p.lam, i, *x.T),
        ),
        _Identity(
            f"r*D{i}D{i}rho",
            2,
            lambda f, p, s, h, x: _r_op_rho(f, p, s, h, x, [("D", i), ("D", i)]),
            lambda f, p, s, x: s**2 * f.dphi(p.lam, i, *x.T) ** 2 - s * f.ddphi(p.lam, i, i, *x.T),
        ),
        _Identity(
            f"r*A{i}A{i}rho",
            0,
            lambda f, p, s, h, x: _r_op_rho(f, p, s, h, x, [("A", i), ("A", i)]),
            lambda f, p, s, x: np.ones(len(x)),
        ),
        _Identity(
            f"r*A{j}D{j}A{i}D{i}rho",
            2,
            lambda f, p, s, h, x: _r_op_rho(f, p, s, h, x, [("D", i), ("A", i), ("D", j), ("A", j)]),
            lambda f, p, s, x: s**2 * f.dphi(p.lam, i, *x.T) * f.dphi(p.lam, j, *x.T)
            - s * f.ddphi(p.lam, i, j, *x.T),
        ),
        _Identity(
            f"r^2*(A{i}D{i}rho)(A{j}D{j}rho)",
            2,
            lambda f, p, s, h, x: _r_op_rho(f, p, s, h, x, [("D", i), ("A", i)])
            * _r_op_rho(f, p, s, h, x, [("D", j), ("A", j)]),
            lambda f, p, s, x: s**2 * f.dphi(p.lam, i, *x.T) * f.dphi(p.lam, j, *x.T),
        ),
        _Identity(
            f"A{i}D{i}(r*A{j}D{j}rho)",
            1,
            lambda f, p, s, h, x: _outer_AD(f, p, s, h, x, i, j),
            lambda f, p, s, x: -s * f.ddphi(p.lam, i, j, *x.T),
        ),
    ]
    return ids


def _outer_AD(field, params, s, h, x, i, j):
    st = _chain(field.mesh.n, h, [("D", i), ("A", i)])
    inner = lambda y: _r_op_rho(field, params, s, h, y, [("D", j), ("A", j)])
    return _apply_shifts(st, inner, x, h)


RATE_IDENTITIES = [ident.name for ident in _make_identities(2)]


@dataclass(frozen=True)
class RateRow:
    identity: str
    h: float
    error: float
    observed_order: float  # nan on the coarsest mesh


def verify_weight_rates(
    field: WeightField,
    params: CarlemanParams,
    h0: float,
    levels: int = 3,
    t: Optional[float] = None,
    eps: float = 1.0,
    probes: Optional[np.ndarray] = None,
) -> list[RateRow]:
    """Errors of discrete-vs-continuous weight identities on ``h0, h0/2, ...``.

    The error is the max over probe points of ``|discrete - continuous|``
    divided by ``s^p`` with ``p`` the predicted power of ``s``.  Probe points
    default to the primal nodes of ``field.mesh``; for dyadic ``h0`` they are
    nodes of every mesh in the sequence.
    """
    field.check_params(params)
    if params.smallness(h0) > eps:
        raise SmallnessViolation(
            f"tau*h*max(theta) = {params.smallness(h0):.3g} > {eps}; need h <= {eps / (params.tau * params.theta_max):.3g}"
        )
    t = params.T / 2 if t is None else t
    s = float(s_of_t(t, params))
    x = field.mesh.points(PRIMAL) if probes is None else np.atleast_2d(probes)
    rows = []
    for ident in _make_identities(field.mesh.n):
        exact = ident.exact(field, params, s, x)
        prev = None
        for lev in range(levels):
            h = h0 / 2**lev
            err = float(np.max(np.abs(ident.discrete(field, params, s, h, x) - exact))) / s**ident.s_power
            order = math.nan if prev is None else _order(prev, err)
            rows.append(RateRow(ident.name, h, err, order))
            prev = err
    return rows


def _order(coarse: float, fine: float) -> float:
    # exact identities (error at rounding level) report order inf
    if fine <= 1e-13 * max(1.0, coarse) or coarse == 0:
        return math.inf
    return math.log2(coarse / fine)


def calibrate_epsilon(
    field: WeightField,
    base: CarlemanParams,
    h0: float,
    taus: Iterable[float],
    min_order: float = 1.7,
    levels: int = 3,
) -> float:
    """Largest ``tau*h0*max(theta)`` over ``taus`` for which every identity shows order >= ``min_order``."""
    best = 0.0
    for tau in sorted(taus):
        params = CarlemanParams(base.lam, tau, base.delta, base.K, base.T)
        rows = verify_weight_rates(field, params, h0, levels, eps=math.inf)
        finite = [r.observed_order for r in rows if not math.isnan(r.observed_order)]
        if all(o >= min_order for o in finite):
            best = max(best, params.smallness(h0))
    return best

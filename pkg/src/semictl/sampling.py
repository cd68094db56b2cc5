"""Deterministic random streams and random test objects.

Every random draw derives from one 64-bit seed.  A stream is identified by
a tuple of non-negative integers ``(experiment, cell, probe, ...)`` which is
passed as the ``spawn_key`` of a :class:`numpy.random.SeedSequence`; two
streams with different keys are statistically independent and a stream is
reproducible from ``(seed, key)`` alone, independently of how many other
streams were drawn before it.
"""

from __future__ import annotations

import zlib
from typing import Optional

import numpy as np

from semictl.mesh import PRIMAL, Mesh, MeshFn, Region
from semictl.solver import Coefficients, ControlPair
from semictl.tree import AdaptedProcess, ScenarioTree

__all__ = [
    "stream",
    "experiment_id",
    "random_coefficients",
    "random_process",
    "random_controls",
    "bump_mixture",
]


def experiment_id(name: str) -> int:
    """Stable integer tag for an experiment name (CRC32)."""
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, *key: int) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


def random_coefficients(mesh: Mesh, rng: np.random.Generator, strength: float = 1.0) -> Coefficients:
    """Smooth random coefficients with ``gamma`` in ``[0.5, 1.5]`` and bounded lower-order terms."""
    n = mesh.n
    freq = rng.uniform(1.0, 3.0, size=(n + 3, n))
    phase = rng.uniform(0, 2 * np.pi, size=n + 3)

    def wave(j):
        return lambda *x: np.sin(sum(f * xk for f, xk in zip(freq[j], x)) + phase[j])

    gamma = [lambda *x, j=i: 1.0 + 0.5 * wave(j)(*x) for i in range(n)]
    a1 = [lambda *x, j=i: strength * wave(j)(*x) for i in range(n)]
    return Coefficients.from_functions(
        mesh,
        gamma,
        a1,
        lambda *x: strength * wave(n)(*x),
        lambda *x: strength * wave(n + 1)(*x),
    )


def random_process(tree: ScenarioTree, mesh: Mesh, rng: np.random.Generator, last: Optional[int] = None) -> AdaptedProcess:
    """Independent standard normal values at every node."""
    p = AdaptedProcess(tree, mesh, last=last)
    p.data[:] = rng.standard_normal(p.data.shape)
    return p


def random_controls(tree: ScenarioTree, mesh: Mesh, g0: Region, rng: np.random.Generator) -> ControlPair:
    u = random_process(tree, mesh, rng, last=tree.K - 1)
    v = random_process(tree, mesh, rng, last=tree.K - 1)
    return ControlPair.projected(u, v, g0)


def bump_mixture(mesh: Mesh, rng: np.random.Generator, bumps: int = 3, width: float = 0.15) -> MeshFn:
    """Sum of Gaussian bumps with random centres, widths and signs, times a vanishing envelope.

    The envelope ``prod x_k (1 - x_k)`` keeps the function continuous up to a
    zero boundary, and the parameters do not depend on ``h``.
    """
    n = mesh.n
    centres = rng.uniform(0.15, 0.85, size=(bumps, n))
    widths = width * rng.uniform(0.7, 1.5, size=bumps)
    amps = rng.standard_normal(bumps)

    def f(*x):
        env = np.prod([4 * xk * (1 - xk) for xk in x], axis=0)
        total = sum(
            a * np.exp(-sum((xk - c) ** 2 for xk, c in zip(x, ctr)) / (2 * w**2))
            for a, ctr, w in zip(amps, centres, widths)
        )
        return env * total

    return mesh.sample(f, PRIMAL)

"""One runner per CLI subcommand.

Each runner takes a resolved config dict and returns a :class:`Result` made
of a summary, CSV tables, plot columns and named property checks.  All
randomness derives from ``cfg["seed"]``: experiment-level streams are keyed
by ``(experiment_id(name), ...)``, library sweeps key their probes by index.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from semictl.carleman import SweepConfig, carleman_cell
from semictl.config import ConfigError
from semictl.counterexample import (
    build_checkerboard,
    check_off_diagonal,
    factor_convergence,
    uncontrollable_mode_experiment,
    verify_eigen,
)
from semictl.hum import HumConfig, HumProblem, hum_functional, hum_gradient, solve_hum, verify_controllability
from semictl.identities import identity_residuals
from semictl.mesh import PRIMAL, Mesh, MeshFn, Region, build_mesh
from semictl.observability import estimate_constant, polarization_error, random_terminal
from semictl.sampling import bump_mixture, experiment_id, random_controls, stream
from semictl.sobolev import loomis_whitney_trials, product_bound, sobolev_constant_sweep, validate_case
from semictl.solver import Coefficients, energy_profile
from semictl.tree import ScenarioTree
from semictl.weights import CarlemanParams, SmallnessViolation, build_psi, verify_weight_rates

__all__ = ["Result", "RUNNERS", "run_experiment"]


@dataclass
class Result:
    summary: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    plots: dict = field(default_factory=dict)  # name -> (header, rows)
    checks: dict = field(default_factory=dict)  # name -> bool
    empty: bool = False

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _map(fn: Callable, items, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _region(box, n: int, name: str) -> Region:
    if len(box[0]) != n:
        raise ConfigError(name, f"box has dimension {len(box[0])}, expected {n}")
    return Region(tuple(box[0]), tuple(box[1]))


def _N_of(h: float, name: str) -> int:
    N = round(1 / h) - 1
    if N < 1 or abs(1 / (N + 1) - h) > 1e-12:
        raise ConfigError(name, f"h={h} is not of the form 1/(N+1)")
    return N


def _budget(tree: ScenarioTree, nodes: int, cfg: dict, copies: int):
    tree.check_budget(nodes, int(cfg["budget_mb"] * 2**20), copies)


def _positive(cfg: dict, *keys):
    for k in keys:
        v = cfg[k]
        vals = v if isinstance(v, list) else [v]
        if not vals or any(x is not None and x <= 0 for x in vals):
            raise ConfigError(k, f"must be positive, got {v!r}")


def _variation(vals) -> float:
    return max(vals) / min(vals) if vals and min(vals) > 0 else math.inf


# --- calculus-selftest -------------------------------------------------------


def calculus_selftest(cfg: dict, threads: int = 1) -> Result:
    _positive(cfg, "ns", "Ns", "trials")
    eid = experiment_id("calculus-selftest")
    cells = [(n, N) for n in cfg["ns"] for N in cfg["Ns"]]

    def run(cell):
        n, N = cell
        return identity_residuals(build_mesh(n, N), stream(cfg["seed"], eid, n, N), cfg["trials"])

    results = _map(run, cells, threads)
    rows, worst = [], {}
    for (n, N), res in zip(cells, results):
        for name, val in res.items():
            rows.append((n, N, name, val))
            worst[name] = max(worst.get(name, 0.0), val)
    return Result(
        summary={"max_residual": worst, "functions_per_cell": cfg["trials"]},
        tables={"identities": (("n", "N", "identity", "max_residual"), rows)},
        checks={"identities": max(worst.values()) <= cfg["tol"]},
    )


# --- weights-rates -----------------------------------------------------------


def weights_rates(cfg: dict, threads: int = 1) -> Result:
    n = cfg["n"]
    fld = build_psi(build_mesh(n, cfg["N_probe"]), _region(cfg["g1"], n, "g1"))
    try:
        params = CarlemanParams(cfg["lam"], cfg["tau"], cfg["delta"], fld.default_K(), cfg["T"])
        rows = verify_weight_rates(fld, params, cfg["h0"], cfg["levels"], eps=cfg["eps"])
    except SmallnessViolation as exc:
        raise ConfigError("h0", str(exc)) from None
    except ValueError as exc:
        raise ConfigError(None, str(exc)) from None
    orders = [r.observed_order for r in rows if math.isfinite(r.observed_order)]
    ok = all(cfg["order_min"] <= o <= cfg["order_max"] for o in orders)
    exact = sorted({r.identity for r in rows if r.observed_order == math.inf})
    return Result(
        summary={
            "smallness": params.smallness(cfg["h0"]),
            "order_range": [min(orders), max(orders)] if orders else None,
            "exact_identities": exact,
        },
        tables={"rates": (("identity", "h", "error", "observed_order"),
                          [(r.identity, r.h, r.error, r.observed_order) for r in rows])},
        checks={"orders": ok and bool(orders)},
    )


# --- counterexample ----------------------------------------------------------


def counterexample(cfg: dict, threads: int = 1) -> Result:
    _positive(cfg, "N", "K", "T", "dt_fraction", "conv_T", "conv_h", "conv_Ks")
    mesh = build_mesh(2, cfg["N"])
    g0 = _region(cfg["g0"], 2, "g0")
    try:
        check_off_diagonal(mesh, g0)
    except ValueError as exc:
        raise ConfigError("g0", str(exc)) from None
    co = Coefficients.heat(mesh)
    # T, when given, overrides the step fraction
    T = cfg["T"] if cfg["T"] is not None else cfg["K"] * cfg["dt_fraction"] * co.max_stable_dt()
    tree = ScenarioTree(cfg["K"], T)
    if cfg["scheme"] == "explicit" and tree.dt > co.max_stable_dt():
        raise ConfigError(
            "T" if cfg["T"] is not None else "dt_fraction",
            f"dt = {tree.dt:.3e} violates the explicit stability bound {co.max_stable_dt():.3e}",
        )
    _budget(tree, mesh.size(PRIMAL), cfg, copies=3)
    mode = build_checkerboard(mesh)
    eig = verify_eigen(mode)
    eid = experiment_id("counterexample")
    free = uncontrollable_mode_experiment(mode.psi, None, tree, cfg["scheme"])
    rows = [(-1, free.measured, free.predicted, free.deviation, 0.0)]

    def trial(t):
        ctl = random_controls(tree, mesh, g0, stream(cfg["seed"], eid, t))
        return uncontrollable_mode_experiment(mode.psi, ctl, tree, cfg["scheme"])

    for t, res in enumerate(_map(trial, range(cfg["trials"]), threads)):
        rows.append((t, res.measured, res.predicted, res.deviation, abs(res.measured - free.measured) / abs(free.measured)))
    conv = factor_convergence(cfg["conv_T"], cfg["conv_h"], cfg["conv_Ks"])
    orders = [r.observed_order for r in conv[1:]]
    tol = cfg["tol"]
    return Result(
        summary={
            "eigen_residual": eig,
            "eigenvalue": mode.eigenvalue,
            "max_deviation": max(r[3] for r in rows),
            "max_control_effect": max(r[4] for r in rows),
            "observed_orders": orders,
            "dt": tree.dt,
        },
        tables={
            "invariance": (("trial", "measured", "predicted", "deviation", "rel_change_vs_free"), rows),
            "factor_convergence": (("K", "discrete", "continuous", "rel_error", "observed_order"),
                                   [(r.K, r.discrete, r.continuous, r.rel_error, r.observed_order) for r in conv]),
        },
        plots={"factor_convergence": (("K", "rel_error"), [(r.K, r.rel_error) for r in conv])},
        checks={
            "eigen_residual": eig <= 1e-12,
            "control_invariance": all(r[3] <= tol and r[4] <= tol for r in rows),
            "factor_order": bool(orders) and all(abs(o - 1) <= cfg["order_tol"] for o in orders),
        },
    )


# --- carleman-sweep ----------------------------------------------------------


def carleman_sweep(cfg: dict, threads: int = 1) -> Result:
    _positive(cfg, "hs", "tau_factors", "T", "K", "eps")
    if cfg["samples"] < 0:
        raise ConfigError("samples", "must be non-negative")
    for h in cfg["hs"]:
        _N_of(h, "hs")
    g0, g1 = _region(cfg["g0"], len(cfg["g0"][0]), "g0"), _region(cfg["g1"], len(cfg["g0"][0]), "g1")
    try:
        sc = SweepConfig(tuple(cfg["hs"]), tuple(cfg["tau_factors"]), cfg["lam"], cfg["delta"], cfg["T"],
                         cfg["K"], cfg["samples"], cfg["eps"], g0, g1, cfg["seed"])
    except ValueError as exc:
        raise ConfigError("g1" if "G_1" in str(exc) else None, str(exc)) from None
    if sc.samples == 0:
        return Result(summary={"cells": 0}, empty=True)
    finest = build_mesh(sc.n, _N_of(min(sc.hs), "hs"))
    _budget(ScenarioTree(sc.K, sc.T), finest.size(PRIMAL), cfg, copies=3)
    cells = [(a * sc.tau_ref, h) for a in sc.tau_factors for h in sc.hs]

    def run(cell):
        tau, h = cell
        try:
            return carleman_cell(sc, h, tau)
        except SmallnessViolation as exc:
            raise ConfigError("tau_factors", str(exc)) from None

    rows = _map(run, cells, threads)
    maxima = [r.max_ratio for r in rows]
    var = _variation(maxima)
    table = [(r.h, r.tau, r.lam, r.smallness, r.samples, r.max_ratio, r.mean_ratio) for r in rows]
    terms = []
    for r in rows:
        t = r.worst
        terms.append((r.h, r.tau, *[t.lhs_terms[k] for k in sorted(t.lhs_terms)],
                      *[t.rhs_terms[k] for k in sorted(t.rhs_terms)]))
    t0 = rows[0].worst
    return Result(
        summary={"max_ratio": max(maxima), "variation": var, "tau_ref": sc.tau_ref},
        tables={
            "carleman": (("h", "tau", "lam", "smallness", "samples", "max_ratio", "mean_ratio"), table),
            "worst_terms": (("h", "tau", *["lhs_" + k for k in sorted(t0.lhs_terms)],
                             *["rhs_" + k for k in sorted(t0.rhs_terms)]), terms),
        },
        plots={"carleman": (("h", "tau", "max_ratio"), [(r.h, r.tau, r.max_ratio) for r in rows])},
        checks={
            "finite": all(math.isfinite(m) and m > 0 for m in maxima),
            "uniform_constant": var <= cfg["max_variation"],
        },
    )


# --- observability and hum ---------------------------------------------------


def _problem(cfg: dict, N: int, T) -> HumProblem:
    n = cfg["n"]
    mesh = build_mesh(n, N)
    g0 = _region(cfg["g0"], n, "g0")
    co = Coefficients.heat(mesh, cfg["gamma"])
    if T is None:
        if cfg["scheme"] == "implicit":
            raise ConfigError("T", "the implicit scheme needs an explicit horizon T")
        T = cfg["K"] * 0.9 * co.max_stable_dt()
    tree = ScenarioTree(cfg["K"], T)
    if cfg["scheme"] == "explicit" and tree.dt > co.max_stable_dt():
        raise ConfigError(
            "T", f"dt = {tree.dt:.3e} violates the explicit stability bound {co.max_stable_dt():.3e} at N={N}; "
            "use a smaller T, a larger K or scheme 'implicit'"
        )
    _budget(tree, mesh.size(PRIMAL), cfg, copies=6)
    return HumProblem(co, tree, g0, cfg["scheme"])


def observability(cfg: dict, threads: int = 1) -> Result:
    _positive(cfg, "Ns", "K", "T", "gamma", "phi_c", "probes", "block_size")
    hc = HumConfig(phi_rate=cfg["phi_rate"], phi_c=cfg["phi_c"])
    eid = experiment_id("observability")
    problems = [_problem(cfg, N, cfg["T"]) for N in cfg["Ns"]]

    def run(pb):
        N = pb.mesh.N
        phi = hc.phi(pb.mesh.h)
        row = estimate_constant(pb, phi, cfg["probes"], cfg["ascent"], stream(cfg["seed"], eid, N), cfg["block_size"])
        rng = stream(cfg["seed"], eid, N, 1)
        polar = max(
            (polarization_error(pb, random_terminal(pb, rng), rng.standard_normal(pb.leaf_shape), phi)
             for _ in range(cfg["polar_trials"])),
            default=0.0,
        )
        return row, polar

    out = _map(run, problems, threads)
    rows = [r for r, _ in out]
    polar = max(p for _, p in out)
    var = _variation([r.C_est for r in rows])
    return Result(
        summary={"variation": var, "max_polarization_error": polar},
        tables={"observability": (("h", "phi", "C_est", "best_probe_ratio", "probes", "ascent_steps"),
                                  [(r.h, r.phi, r.C_est, r.best_probe_ratio, r.probes, r.ascent_steps) for r in rows])},
        plots={"observability": (("h", "C_est"), [(r.h, r.C_est) for r in rows])},
        checks={"uniform_constant": var <= cfg["max_variation"], "polarization": polar <= cfg["polar_tol"]},
    )


def _initial(cfg: dict, mesh: Mesh) -> MeshFn:
    if cfg["y0"] == "bumps":
        # the bump parameters do not depend on h, so every mesh sees the same field
        return bump_mixture(mesh, stream(cfg["seed"], experiment_id("hum"), 0))

    def sines(*x):
        base = np.prod([np.sin(np.pi * xk) for xk in x], axis=0)
        return base + 0.5 * base * 2 * np.cos(np.pi * x[0])

    return mesh.sample(sines)


def _probe_checks(pb: HumProblem, y0: MeshFn, hc: HumConfig, cfg: dict) -> dict:
    rng = stream(cfg["seed"], experiment_id("hum"), 1)
    phi = hc.phi(pb.mesh.h)
    sym, spd = 0.0, math.inf
    for _ in range(3):
        a, b = rng.standard_normal(pb.leaf_shape), rng.standard_normal(pb.leaf_shape)
        Ha, Hb = phi * a + pb.gramian(a), phi * b + pb.gramian(b)
        lhs, rhs = pb.inner(Ha, b), pb.inner(a, Hb)
        sym = max(sym, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
        spd = min(spd, pb.inner(Ha, a) / (phi * pb.inner(a, a)))
    z = rng.standard_normal(pb.leaf_shape)
    g = hum_gradient(pb, z, y0, hc)
    grad = 0.0
    for _ in range(2):
        d = rng.standard_normal(pb.leaf_shape)
        eps = 1e-3
        fd = (hum_functional(pb, z + eps * d, y0, hc) - hum_functional(pb, z - eps * d, y0, hc)) / (2 * eps)
        grad = max(grad, abs(fd - pb.inner(g, d)) / abs(pb.inner(g, d)))
    return {"symmetry": sym, "spd_ratio": spd, "gradient": grad}


def hum(cfg: dict, threads: int = 1) -> Result:
    _positive(cfg, "n", "N", "K", "T", "gamma", "phi_c", "cg_tol", "cg_max_iter")
    if cfg["sweep_Ns"] and cfg["T"] is None:
        raise ConfigError("T", "an h-sweep needs a fixed horizon T")
    try:
        hc = HumConfig(cfg["phi_rate"], cfg["phi_c"], cfg["cg_tol"], cfg["cg_max_iter"], cfg["method"], cfg["seed"])
    except ValueError as exc:
        raise ConfigError(None, str(exc)) from None
    pb = _problem(cfg, cfg["N"], cfg["T"])
    y0 = _initial(cfg, pb.mesh)
    sol = solve_hum(pb, y0, hc)
    rep = verify_controllability(sol, y0)
    probes = _probe_checks(pb, y0, hc, cfg)
    tol = cfg["probe_tol"]
    summary = {
        "h": pb.mesh.h,
        "T": pb.tree.T,
        "phi": sol.phi,
        "cost_ratio": rep.cost_ratio,
        "terminal_ratio": rep.terminal_ratio,
        "optimality_residual": sol.optimality_residual,
        "iterations": sol.iterations,
        "true_residual": sol.true_residual,
        "probes": probes,
    }
    checks = {
        "optimality": sol.optimality_residual <= cfg["optimality_tol"],
        "symmetry": probes["symmetry"] <= tol,
        "positive_definite": probes["spd_ratio"] >= 1 - tol,
        "gradient": probes["gradient"] <= cfg["grad_tol"],
    }
    energy = energy_profile(sol.y)
    result = Result(
        summary=summary,
        tables={"residuals": (("iteration", "residual"), list(enumerate(sol.residual_history)))},
        plots={
            "residuals": (("iteration", "residual"), list(enumerate(sol.residual_history))),
            "energy": (("t", "energy"), list(zip(pb.tree.times(), energy))),
        },
        checks=checks,
    )
    if cfg["sweep_Ns"]:

        def run(N):
            p = _problem(cfg, N, cfg["T"])
            y = _initial(cfg, p.mesh)
            s = solve_hum(p, y, hc)
            r = verify_controllability(s, y)
            return (N, p.mesh.h, s.phi, r.cost_ratio, r.terminal_ratio, s.iterations)

        rows = _map(run, cfg["sweep_Ns"], threads)
        cv, tv = _variation([r[3] for r in rows]), _variation([r[4] for r in rows])
        summary["sweep"] = {"cost_variation": cv, "terminal_variation": tv}
        result.tables["sweep"] = (("N", "h", "phi", "cost_ratio", "terminal_ratio", "iterations"), rows)
        result.plots["sweep"] = (("h", "cost_ratio", "terminal_ratio"), [(r[1], r[3], r[4]) for r in rows])
        checks["cost_uniform"] = cv <= cfg["max_variation"]
        checks["terminal_uniform"] = tv <= cfg["max_variation"]
    return result


# --- sobolev -----------------------------------------------------------------


def sobolev(cfg: dict, threads: int = 1) -> Result:
    _positive(cfg, "hs", "probes", "lw_N")
    try:
        validate_case(cfg["n"], cfg["p"], cfg["p_star"])
    except ValueError as exc:
        raise ConfigError("n" if cfg["n"] < 2 else "p_star", str(exc)) from None
    for h in cfg["hs"]:
        _N_of(h, "hs")
    rows = _map(
        lambda h: sobolev_constant_sweep(cfg["n"], cfg["p"], cfg["p_star"], [h], cfg["probes"], cfg["ascent"],
                                         cfg["seed"])[0],
        cfg["hs"],
        threads,
    )
    var = _variation([r.max_ratio for r in rows])
    eid = experiment_id("sobolev")
    bound_rows, bound_ok = [], True
    for h in cfg["hs"]:
        mesh = build_mesh(cfg["n"], _N_of(h, "hs"))
        worst = -math.inf
        for j in range(cfg["bound_probes"]):
            rng = stream(cfg["seed"], eid, 1, j)
            for u in (bump_mixture(mesh, rng), MeshFn(mesh, PRIMAL, rng.standard_normal(mesh.shape(PRIMAL)))):
                lhs, rhs = product_bound(u)
                worst = max(worst, lhs / rhs)
        bound_ok &= worst <= 1 + 1e-12
        bound_rows.append((mesh.h, worst))
    lw_rows, lw_ok = [], True
    for n in cfg["lw_ns"]:
        slack = loomis_whitney_trials(n, cfg["lw_N"], cfg["lw_trials"], stream(cfg["seed"], eid, 2, n))
        lw_ok &= bool(slack.min() >= -1e-12)
        lw_rows.append((n, cfg["lw_trials"], float(slack.min()), float(slack.max())))
    return Result(
        summary={"variation": var, "max_ratio": max(r.max_ratio for r in rows)},
        tables={
            "sobolev": (("h", "p", "p_star", "max_ratio", "best_probe_ratio"),
                        [(r.h, r.p, r.p_star, r.max_ratio, r.best_probe_ratio) for r in rows]),
            "product_bound": (("h", "max_lhs_over_rhs"), bound_rows),
            "loomis_whitney": (("n", "trials", "min_slack", "max_slack"), lw_rows),
        },
        plots={"sobolev": (("h", "max_ratio"), [(r.h, r.max_ratio) for r in rows])},
        checks={
            "uniform_constant": var <= cfg["max_variation"],
            "product_bound": bound_ok,
            "loomis_whitney": lw_ok and bool(lw_rows),
        },
    )


RUNNERS = {
    "calculus-selftest": calculus_selftest,
    "weights-rates": weights_rates,
    "counterexample": counterexample,
    "carleman-sweep": carleman_sweep,
    "observability": observability,
    "hum": hum,
    "sobolev": sobolev,
}


def run_experiment(sub: str, cfg: dict, threads: int = 1) -> Result:
    return RUNNERS[sub](cfg, threads)

"""The ten acceptance criteria at their stated tolerances and time limits.

Each test prints one ``criterion N: PASS/FAIL`` line; the lines are also
collected into the terminal summary.
"""

import time

from conftest import ACCEPTANCE_LINES
from semictl.cli import EXIT_OK, run
from semictl.config import resolve
from semictl.experiments import run_experiment
from semictl.mesh import PRIMAL, MeshFn, Region, build_mesh
from semictl.sampling import experiment_id, random_coefficients, random_controls, stream
from semictl.solver import duality_gap
from semictl.tree import ScenarioTree


def report(number: int, title: str, ok: bool, elapsed: float, limit, detail: str):
    timely = limit is None or elapsed < limit
    budget = f"{elapsed:.1f}s" if limit is None else f"{elapsed:.1f}s of {limit:.0f}s"
    line = f"criterion {number}: {'PASS' if ok and timely else 'FAIL'}  {title}  [{detail}; {budget}]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
    assert timely, line


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def test_criterion_1_identity_suite():
    res, dt = timed(lambda: run_experiment("calculus-selftest", resolve("calculus-selftest")))
    worst = max(res.summary["max_residual"].values())
    report(1, "discrete calculus identities", res.checks["identities"] and worst <= 1e-12, dt, 10,
           f"max residual {worst:.2e} over n in (1,2,3), N in (2,7,15), 100 functions per cell")


def test_criterion_2_duality_gap():
    def body():
        m = build_mesh(2, 7)
        g0 = Region((0.2, 0.2), (0.7, 0.7))
        worst = 0.0
        for scheme in ("explicit", "implicit"):
            for cell in range(20):
                rng = stream(0, experiment_id("duality"), cell)
                co = random_coefficients(m, rng)
                T = 8 * 0.9 * co.max_stable_dt() if scheme == "explicit" else 0.1
                tree = ScenarioTree(8, T)
                ctl = random_controls(tree, m, g0, rng)
                y0 = MeshFn(m, PRIMAL, rng.standard_normal(49))
                zT = rng.standard_normal((2**8, 49))
                gap, scale = duality_gap(y0, zT, ctl, co, tree, scheme)
                worst = max(worst, abs(gap) / scale)
        return worst

    worst, dt = timed(body)
    report(2, "exact duality gap", worst <= 1e-10, dt, 30, f"max relative gap {worst:.2e} on 2 x 20 instances")


def test_criterion_3_counterexample():
    res, dt = timed(lambda: run_experiment("counterexample", resolve("counterexample")))
    s = res.summary
    orders = ", ".join(f"{o:.3f}" for o in s["observed_orders"])
    report(3, "uncontrollable checkerboard mode", res.passed, dt, 30,
           f"eigen residual {s['eigen_residual']:.1e}, max deviation {s['max_deviation']:.1e} "
           f"over 20 controls, orders {orders}")


def test_criterion_4_hum_optimality():
    res, dt = timed(lambda: run_experiment("hum", resolve("hum")))
    s = res.summary
    p = s["probes"]
    report(4, "penalized HUM optimality", res.passed, dt, 120,
           f"optimality {s['optimality_residual']:.1e}, symmetry {p['symmetry']:.1e}, "
           f"gradient {p['gradient']:.1e}, {s['iterations']} CG iterations")


ACC5 = {"scheme": "implicit", "T": 0.2, "gamma": 0.3, "y0": "sines", "sweep_Ns": [7, 11, 15]}


def test_criterion_5_controllability_bounds():
    cfg = resolve("hum", overrides=ACC5)
    res, dt = timed(lambda: run_experiment("hum", cfg))
    sw = res.summary["sweep"]
    ok = res.checks["cost_uniform"] and res.checks["terminal_uniform"]
    report(5, "uniform control cost and terminal ratio", ok, dt, 300,
           f"cost variation {sw['cost_variation']:.2f}x, terminal variation {sw['terminal_variation']:.2f}x "
           "over h in (1/8, 1/12, 1/16)")


def test_criterion_6_observability():
    res, dt = timed(lambda: run_experiment("observability", resolve("observability")))
    s = res.summary
    report(6, "uniform observability constant", res.passed, dt, 180,
           f"C_est variation {s['variation']:.2f}x, polarization {s['max_polarization_error']:.1e}")


def test_criterion_7_carleman_sweep():
    cfg = resolve("carleman-sweep")
    assert cfg["samples"] >= 50
    res, dt = timed(lambda: run_experiment("carleman-sweep", cfg))
    s = res.summary
    report(7, "Carleman sweep", res.passed, dt, 300,
           f"sup lhs/rhs {s['max_ratio']:.3f}, variation {s['variation']:.3f}x over 6 cells")


def test_criterion_8_weight_rates():
    res, dt = timed(lambda: run_experiment("weights-rates", resolve("weights-rates")))
    lo, hi = res.summary["order_range"]
    report(8, "weight asymptotics", res.passed and 1.7 <= lo and hi <= 2.3, dt, 60,
           f"observed orders in [{lo:.3f}, {hi:.3f}]")


def test_criterion_9_sobolev():
    res, dt = timed(lambda: run_experiment("sobolev", resolve("sobolev")))
    report(9, "discrete Sobolev and product bounds", res.passed, dt, 60,
           f"ratio variation {res.summary['variation']:.3f}x, product bound and Loomis-Whitney on all probes")


SMALL = {
    "calculus-selftest": ["--trials", "5"],
    "weights-rates": [],
    "counterexample": [],
    "carleman-sweep": ["--samples", "5"],
    "observability": ["--Ns", "5", "7", "--probes", "2", "--ascent", "5"],
    "hum": [],
    "sobolev": ["--probes", "2", "--ascent", "30"],
}


def test_criterion_10_reproducibility(tmp_path):
    def body():
        bad = []
        for sub, extra in SMALL.items():
            a, b = tmp_path / sub / "a", tmp_path / sub / "b"
            for out in (a, b):
                if run([sub, *extra, "--seed", "12345", "--out", str(out)]) != EXIT_OK:
                    bad.append(f"{sub} exit")
            csvs = sorted(p.name for p in a.glob("*.csv"))
            if not csvs:
                bad.append(f"{sub} wrote no csv")
            bad += [f"{sub}/{f}" for f in csvs if (a / f).read_bytes() != (b / f).read_bytes()]
        return bad

    bad, dt = timed(body)
    report(10, "bit-identical reruns", not bad, dt, None,
           "all 7 subcommands" if not bad else "differences: " + ", ".join(bad))

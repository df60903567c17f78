"""Acceptance criteria, one check per criterion.

Each check returns ``(passed, detail)``. Under pytest the outcome is also
recorded for the summary printed at the end of the session; run this file
directly to print the same lines without pytest.
"""

import os
import sys
import tempfile

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from robustcore import lp  # noqa: E402
from robustcore.cli import ExperimentSpec, run_experiment  # noqa: E402
from robustcore.dynamics import (AllocationConfig, BargainConfig, ValueSchedule, run_allocation,  # noqa: E402
                                 run_bargaining)
from robustcore.energy import build_robust_game, coalition_cost, reference_scenario, value_bounds  # noqa: E402
from robustcore.game import in_core, three_firm_game  # noqa: E402
from robustcore.geometry import bounding_polyhedron, core_polyhedron, project  # noqa: E402
from robustcore.network import NetworkSchedule, WeightedGraph, metropolis_weights, mix, strongly_connected  # noqa: E402

from conftest import random_core_game  # noqa: E402
from oracles import active_set_projection, core_rows, vertex_enumeration_lp  # noqa: E402
from test_lp import duality_residuals, random_bounded_lp  # noqa: E402

THREE_FIRM_NET = {"n_agents": 3, "graphs": [[[0, 1], [1, 2]]], "Q": 1}
# upper values by coalition size: singletons, then pairs, then the grand coalition
V_BAR = [1, 1, 1, 4, 4, 5, 8]
BY_SIZE = [1, 2, 4, 3, 5, 6, 7]


def three_firm_spec(**fields):
    doc = {"scenario": three_firm_game().to_json(), "network": THREE_FIRM_NET, "runs": 100, "base_seed": 0}
    doc.update(fields)
    return ExperimentSpec.from_json(doc)


def _ensemble_ok(summary):
    return summary.all_converged and all(summary.in_robust_core)


def check_1():
    g = three_firm_game()
    assert g.upper.values[BY_SIZE].tolist() == V_BAR
    summary = run_experiment(three_firm_spec(algorithm="allocate", operator="overproj", alpha=0.5))
    point = in_core([2.4, 3, 2.6], g.upper, 1e-6)
    ok = _ensemble_ok(summary) and point and max(summary.iterations) <= 10_000
    return ok, (f"{sum(summary.in_robust_core)}/100 runs converged into the robust core, "
                f"max {max(summary.iterations)} iterations; [2.4, 3, 2.6] in core: {point}")


def check_2():
    g = three_firm_game()
    summary = run_experiment(three_firm_spec(algorithm="bargain", operator="proj"))
    point = in_core([2.33, 2.833, 2.833], g.upper, 5e-3)
    ok = _ensemble_ok(summary) and point
    return ok, (f"{sum(summary.in_robust_core)}/100 runs converged into the robust core; "
                f"[2.33, 2.833, 2.833] in core at 5e-3: {point}")


def check_3():
    at50 = {}
    for label, op, alpha in (("overproj 4/5", "overproj", 0.8), ("proj 4/5", "proj", 0.8),
                             ("proj 1/5", "proj", 0.2)):
        s = run_experiment(three_firm_spec(algorithm="allocate", operator=op, alpha=alpha,
                                       stop_tol=0.0, max_iter=50))
        at50[label] = float(s.mean[50])
    a, b, c = at50.values()
    ok = a * 1.2 <= b and b * 1.2 <= c
    return ok, "mean normalized distance at k=50: " + ", ".join(f"{k} {v:.3e}" for k, v in at50.items())


def _random_schedule(rng, n, seed):
    """Disconnected graphs whose union is a connected graph."""
    order = rng.permutation(n)
    edges = [tuple(sorted((int(a), int(b)))) for a, b in zip(order[:-1], order[1:])]
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in edges and rng.random() < 0.2:
                edges.append((i, j))
    n_graphs = int(rng.integers(2, 4))
    groups = [[] for _ in range(n_graphs)]
    for e in edges:
        groups[int(rng.integers(n_graphs))].append(e)
    graphs = []
    for grp in groups:
        adj = np.zeros((n, n), dtype=bool)
        for i, j in grp:
            adj[i, j] = adj[j, i] = True
        graphs.append(metropolis_weights(adj))
    return NetworkSchedule(graphs, seed=seed)


def check_4(n_games=20):
    rng = np.random.default_rng(2024)
    worst_step, worst_window, checked = -np.inf, -np.inf, 0
    for idx in range(n_games):
        n = 3 + idx % 3
        g = random_core_game(rng, n, uncertain=2, max_levels=3)
        sched = _random_schedule(rng, n, seed=idx)
        alloc = run_allocation(AllocationConfig(g, sched, "overproj", alpha=float(rng.uniform(0.2, 0.8)),
                                                value_seed=idx, max_iter=3000))
        d = np.asarray(alloc.distance)
        worst_step = max(worst_step, float(np.max(np.diff(d), initial=-np.inf)))
        barg = run_bargaining(BargainConfig(g, sched, "proj", value_seed=idx, max_iter=3000))
        d = np.asarray(barg.distance)
        nd = np.asarray(barg.normalized_distance)
        # every graph and every value function occurs within this window
        window = max(sched.period, ValueSchedule(g).window)
        for k in range(d.size - window):
            if nd[k] > 1e-6:
                worst_window = max(worst_window, float(d[k + window] - d[k]))
                checked += 1
    ok = worst_step <= 1e-7 and worst_window < 0
    return ok, (f"largest one-step allocation increase {worst_step:.2e}; largest windowed bargaining "
                f"change {worst_window:.2e} over {checked} windows")


def check_5(n_points=120):
    rng = np.random.default_rng(7)
    worst, count = 0.0, 0
    while count < n_points:
        n = int(rng.integers(2, 5))
        v = random_core_game(rng, n).upper
        agent = int(rng.integers(-1, n))
        which = None if agent < 0 else agent
        target = core_polyhedron(v) if which is None else bounding_polyhedron(v, which)
        A, b, total = core_rows(v.values, n, which)
        x = rng.normal(size=n) * 4
        worst = max(worst, float(np.abs(project(target, x) - active_set_projection(A, b, total, x)).max()))
        count += 1
    return worst <= 1e-6, f"{count} points, largest deviation {worst:.2e}"


def check_6(n_lps=220):
    rng = np.random.default_rng(11)
    worst_obj, worst_dual, n_opt, mismatched = 0.0, 0.0, 0, 0
    for _ in range(n_lps):
        prob = random_bounded_lp(rng)
        out = lp.solve(prob)
        best, _ = vertex_enumeration_lp(prob.c, prob.A_eq, prob.b_eq, prob.A_le, prob.b_le, prob.lo, prob.hi)
        if not np.isfinite(best):
            mismatched += out.status != lp.INFEASIBLE
            continue
        if not out.optimal:
            mismatched += 1
            continue
        n_opt += 1
        worst_obj = max(worst_obj, abs(out.objective_value - best))
        worst_dual = max(worst_dual, *duality_residuals(prob, out))
    ok = mismatched == 0 and worst_obj <= 1e-7 and worst_dual <= 1e-7
    return ok, (f"{n_lps} LPs ({n_opt} optimal), status mismatches {mismatched}, objective error "
                f"{worst_obj:.2e}, duality residual {worst_dual:.2e}")


def check_7(n_draws=200):
    params, scen = reference_scenario(seed=0)
    n = scen.n_agents
    g = build_robust_game(params, scen)
    singletons = [1 << i for i in range(n)]
    zero_singletons = all(g.lower.values[m] == 0.0 and g.upper.values[m] == 0.0 for m in singletons)
    masks = list(range(1, 1 << n))
    # the game pins v(I) at the forecast; its envelope bound is the containment target
    upper = g.upper.values.copy()
    upper[masks[-1]] = value_bounds(masks[-1], params, scen)[1]
    rng = np.random.default_rng(99)
    min_value, worst_excess = np.inf, -np.inf
    for _ in range(n_draws):
        q = scen.sample_demand(rng)
        cost = {m: coalition_cost(m, params, scen, q) for m in masks}
        for m in masks:
            if m in singletons:
                continue
            value = sum(cost[s] for s in singletons if m & s) - cost[m]
            min_value = min(min_value, value)
            worst_excess = max(worst_excess, value - upper[m])
    ok = zero_singletons and min_value >= -1e-9 and worst_excess <= 1e-7
    return ok, (f"singletons zero: {zero_singletons}; over {n_draws} draws min v(S) {min_value:.3e}, "
                f"largest excess over the upper bound {worst_excess:.3e}")


def _random_family(rng, n):
    graphs = []
    for _ in range(int(rng.integers(1, 4))):
        if rng.random() < 0.5:
            adj = np.triu(rng.random((n, n)) < 0.5, 1)
            graphs.append(metropolis_weights(adj | adj.T))
        else:
            k = int(rng.integers(1, 4))
            w = rng.dirichlet(np.ones(k + 1))
            W = w[0] * np.eye(n)
            for j in range(k):
                W = W + w[j + 1] * np.eye(n)[rng.permutation(n)]
            graphs.append(WeightedGraph(W))
    return graphs


def check_8(n_families=50):
    rng = np.random.default_rng(5)
    worst_mean, worst_lip, worst_ratio, n_connected = 0.0, -np.inf, 0.0, 0
    for _ in range(n_families):
        n = int(rng.integers(2, 6))
        for W in _random_family(rng, n):
            for _ in range(4):
                X, Y = rng.normal(size=(2, n, n))
                worst_mean = max(worst_mean, float(np.abs(mix(W, X).mean(axis=0) - X.mean(axis=0)).max()))
                worst_lip = max(worst_lip, float(np.linalg.norm(mix(W, X) - mix(W, Y)) - np.linalg.norm(X - Y)))
                if strongly_connected(W.adjacency()):
                    n_connected += 1
                    before = np.linalg.norm(X - X.mean(axis=0))
                    after = np.linalg.norm(mix(W, X) - X.mean(axis=0))
                    worst_ratio = max(worst_ratio, float(after / before))
    ok = worst_mean <= 1e-12 and worst_lip <= 1e-12 and worst_ratio < 1.0 and n_connected > 0
    return ok, (f"mean drift {worst_mean:.1e}, nonexpansiveness slack {worst_lip:.1e}, "
                f"worst contraction ratio {worst_ratio:.4f} over {n_connected} connected cases")


def check_9():
    same = True
    with tempfile.TemporaryDirectory() as tmp:
        for algo, op in (("allocate", "overproj"), ("bargain", "proj")):
            blobs = []
            for rep in range(2):
                out = os.path.join(tmp, f"{algo}_{rep}")
                run_experiment(three_firm_spec(algorithm=algo, operator=op, runs=5, output_dir=out))
                blobs.append({f: open(os.path.join(out, f), "rb").read() for f in sorted(os.listdir(out))})
            same &= blobs[0] == blobs[1] and len(blobs[0]) == 7
    return same, "repeated allocate and bargain ensembles wrote identical bytes" if same else "outputs differ"


CHECKS = {1: check_1, 2: check_2, 3: check_3, 4: check_4, 5: check_5,
          6: check_6, 7: check_7, 8: check_8, 9: check_9}


@pytest.mark.parametrize("num", sorted(CHECKS))
def test_criterion(num):
    from conftest import ACCEPTANCE
    ok, detail = CHECKS[num]()
    ACCEPTANCE[num] = (ok, detail)
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


if __name__ == "__main__":
    results = {}
    for num, fn in CHECKS.items():
        results[num] = fn()
        ok, detail = results[num]
        print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    sys.exit(0 if all(ok for ok, _ in results.values()) else 1)

"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Budgeted runtimes are asserted too; they hold with wide margins on
commodity hardware.
"""

import math
import time

import numpy as np
import pytest

import nlosloc
from nlosloc.builders import (
    AnchorPrior,
    CoefficientMode,
    build_esdp,
    build_fullsdp,
    build_fullsdp_anchor_uncertain,
    objective_at_positions,
)
from nlosloc.estimator import (
    EstimatorConfig,
    Formulation,
    Variant,
    extract_positions,
    localize,
    refine_gradient,
    refine_objective,
)
from nlosloc.geometry import (
    DistanceBounds,
    NoiseBoundPolicy,
    Point2,
    derive_bounds,
    pairwise_anchor_lower_bound,
)
from nlosloc.simulate import (
    NoiseModel,
    ScenarioParams,
    measure,
    paper_scenario,
    random_scenario,
    run_batch,
)
from nlosloc.solver import SolverSettings, check_kkt, solve

from oracles import disc_min_distance
from test_solver import t_star_problem, trace_min_problem

TIGHT = SolverSettings(gap_tol=1e-8, feas_tol=1e-8)


def _report(criterion, detail):
    print(f"\n[PASS] criterion {criterion}: {detail}")


def test_criterion_1_bound_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(20240808)
    worst = 0.0
    for _ in range(200):
        sep = rng.uniform(1.0, 30.0)
        theta = rng.uniform(0.0, 2 * np.pi)
        a_j = Point2(*rng.uniform(-10.0, 10.0, 2))
        a_k = Point2(a_j.x + sep * math.cos(theta), a_j.y + sep * math.sin(theta))
        radius = rng.uniform(0.5, 30.0)
        got = pairwise_anchor_lower_bound(a_j, a_k, radius)
        oracle = disc_min_distance(a_j.as_tuple(), a_k.as_tuple(), radius)
        err = abs(got - oracle)
        assert err <= max(0.01, 0.01 * oracle), (got, oracle, sep, radius)
        worst = max(worst, err)
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    _report(1, f"200 configs, worst |closed form - sampling oracle| = {worst:.2e} m, {elapsed:.1f}s")


def test_criterion_2_solver_analytic_suite():
    start = time.perf_counter()
    for prob, expected, name in (
        (t_star_problem(), 1.0, "t*"),
        (trace_min_problem(), 2.0, "trace-min"),
    ):
        sol = solve(prob, SolverSettings())
        assert sol.status == "optimal"
        assert abs(sol.objective_value - expected) <= 1e-6, name
        rep = check_kkt(prob, sol)
        assert rep.equality_residual_inf_norm <= 1e-7
        assert rep.dual_residual_inf_norm <= 1e-7
        assert rep.min_block_eigenvalue >= -1e-7
        assert rep.min_dual_eigenvalue >= -1e-7
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    _report(2, f"both analytic problems within 1e-6, KKT residuals <= 1e-7, {elapsed:.2f}s")


def test_criterion_3_relaxation_ordering():
    start = time.perf_counter()
    noise = NoiseModel(sigma=0.01, nlos_bias=(0.0, 0.5), nlos_fraction=1.0)
    policy = NoiseBoundPolicy()  # 3 sigma cap
    margins = []
    for seed in range(20):
        scn = random_scenario(1000 + seed, n_sensors=10, n_anchors=6)
        ms = measure(scn, noise, seed=2000 + seed)
        bounds = derive_bounds(ms, scn.anchor_positions, policy, noise.sigma)
        mode = CoefficientMode.PAPER_LITERAL
        full = solve(build_fullsdp(bounds, scn.anchor_positions, 10, mode), TIGHT)
        edge = solve(build_esdp(bounds, scn.anchor_positions, 10, mode), TIGHT)
        truth_obj = objective_at_positions(bounds, scn.truth, mode)
        assert full.status == "optimal" and edge.status == "optimal", seed
        assert edge.objective_value <= full.objective_value + 1e-6, seed
        assert full.objective_value <= truth_obj + 1e-6, seed
        margins.append(
            (full.objective_value - edge.objective_value, truth_obj - full.objective_value)
        )
    elapsed = time.perf_counter() - start
    assert elapsed < 300.0
    med = np.median([m[0] for m in margins]), np.median([m[1] for m in margins])
    _report(3, f"20 instances ordered; median margins esdp->full {med[0]:.3g}, "
               f"full->truth {med[1]:.3g}, {elapsed:.1f}s")


def test_criterion_4_noiseless_exact_recovery():
    start = time.perf_counter()
    rng = np.random.default_rng(44)
    anchors = {6: Point2(-12, -11), 7: Point2(13, -9), 8: Point2(-10, 12), 9: Point2(9, 13)}
    sensors = {k: Point2(*rng.uniform(-10, 10, 2)) for k in range(1, 6)}
    truth = {**sensors, **anchors}
    bounds = []
    for i in range(1, 6):
        for j in range(i + 1, 10):
            d = truth[i].distance_to(truth[j])
            bounds.append(DistanceBounds(i=i, j=j, lower=d, upper=d))
    prob = build_fullsdp(bounds, anchors, n_sensors=5)
    sol = solve(prob, TIGHT)
    assert sol.status == "optimal"
    positions = extract_positions(sol, prob)
    rmse = math.sqrt(np.mean([positions[k].distance_to(truth[k]) ** 2 for k in sensors]))
    assert rmse <= 1e-3
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    _report(4, f"FullSDP position RMSE {rmse:.2e} m on zero-width bounds, {elapsed:.1f}s")


@pytest.fixture(scope="module")
def paper_batches():
    """Five-trial paper-experiment batches in both coefficient modes.

    The master seed is the tool's documented default (0). Per-trial MSE is
    heavy-tailed under this experiment (roughly 1 to 75 m^2 across seeds),
    so the seed is pinned here for reproducibility, not tuned.
    """
    noise = NoiseModel(sigma=0.01, nlos_bias=(0.0, 0.5), nlos_fraction=1.0)
    out = {}
    start = time.perf_counter()
    for mode in (CoefficientMode.PAPER_LITERAL, CoefficientMode.MIDPOINT):
        config = EstimatorConfig(formulation=Formulation.ESDP, mode=mode)
        out[mode] = run_batch(ScenarioParams(layout="paper"), noise, config,
                              trials=5, master_seed=0)
    out["elapsed"] = time.perf_counter() - start
    return out


def test_criterion_5a_paper_experiment_all_optimal(paper_batches):
    batch = paper_batches[CoefficientMode.PAPER_LITERAL]
    statuses = [t.solver_status for t in batch.trials]
    assert statuses == ["optimal"] * 5, statuses
    assert paper_batches["elapsed"] < 900.0
    _report("5(a)", f"5/5 trials solved to optimal; both-mode batch took "
            f"{paper_batches['elapsed']:.0f}s (budget 900s)")


def test_criterion_5b_paper_experiment_band(paper_batches):
    batch = paper_batches[CoefficientMode.PAPER_LITERAL]
    per_trial = [round(t.mse, 2) for t in batch.trials]
    assert 0.5 <= batch.mse_mean <= 20.0, (
        f"mean MSE {batch.mse_mean:.3f} m^2 outside [0.5, 20]; per-trial {per_trial}. "
        f"The objective saturates every sensor-anchor term through the Gram "
        f"slack (per-edge optimum at the doubled target), leaving a nearly "
        f"flat global-translation mode, so the per-draw MSE is heavy-tailed"
    )
    _report("5(b)", f"mean MSE {batch.mse_mean:.3f} m^2 in [0.5, 20]; per-trial {per_trial}")


def test_criterion_5c_midpoint_not_worse(paper_batches):
    lit = paper_batches[CoefficientMode.PAPER_LITERAL].mse_mean
    mid = paper_batches[CoefficientMode.MIDPOINT].mse_mean
    assert mid <= lit, (
        f"midpoint-consistent mean MSE {mid:.3f} m^2 exceeds paper-literal "
        f"{lit:.3f} m^2: with zero lower bounds on every sensor-sensor edge, "
        f"the midpoint target is half the measured range on 3160 of 4600 "
        f"edges, which contracts the whole layout"
    )
    _report("5(c)", f"midpoint mean {mid:.3f} <= paper-literal mean {lit:.3f}")


def test_criterion_6_anchor_uncertainty_zero_radius():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(600 + seed)
        anchors = {4: Point2(*rng.uniform(-10, 10, 2)),
                   5: Point2(*rng.uniform(-10, 10, 2)),
                   6: Point2(*rng.uniform(-10, 10, 2))}
        sensors = {k: Point2(*rng.uniform(-10, 10, 2)) for k in (1, 2, 3)}
        truth = {**sensors, **anchors}
        bounds = []
        for i in (1, 2, 3):
            for j in range(i + 1, 7):
                d = truth[i].distance_to(truth[j])
                bounds.append(DistanceBounds(i=i, j=j, lower=max(0.0, d - 0.4), upper=d + 0.4))
        known_prob = build_fullsdp(bounds, anchors, n_sensors=3)
        priors = [AnchorPrior(j=j, estimate=p, radius=0.0, enforce_ball=True)
                  for j, p in anchors.items()]
        unc_prob = build_fullsdp_anchor_uncertain(bounds, priors, n_sensors=3)
        known_sol = solve(known_prob, TIGHT)
        unc_sol = solve(unc_prob, TIGHT)
        assert known_sol.status == "optimal" and unc_sol.status == "optimal"
        known_pos = extract_positions(known_sol, known_prob)
        unc_pos = extract_positions(unc_sol, unc_prob)
        for k in sensors:
            worst = max(worst, known_pos[k].distance_to(unc_pos[k]))
    assert worst <= 1e-4
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    _report(6, f"5 instances, worst known-vs-uncertain deviation {worst:.2e} m, {elapsed:.1f}s")


def test_criterion_7_gradient_check():
    start = time.perf_counter()
    rng = np.random.default_rng(7777)
    step = 1e-6
    checked = 0
    while checked < 100:
        n_nodes = int(rng.integers(3, 7))
        nodes = {k: Point2(*rng.uniform(-10, 10, 2)) for k in range(1, n_nodes + 1)}
        bounds = []
        for i in range(1, n_nodes + 1):
            for j in range(i + 1, n_nodes + 1):
                if rng.random() < 0.7:
                    lo = float(rng.uniform(0.0, 5.0))
                    bounds.append(DistanceBounds(i=i, j=j, lower=lo,
                                                 upper=lo + float(rng.uniform(0.0, 5.0))))
        if not bounds:
            continue
        grad = refine_gradient(nodes, bounds)
        for k, g in grad.items():
            for axis in (0, 1):
                p = nodes[k]
                if axis == 0:
                    plus = {**nodes, k: Point2(p.x + step, p.y)}
                    minus = {**nodes, k: Point2(p.x - step, p.y)}
                else:
                    plus = {**nodes, k: Point2(p.x, p.y + step)}
                    minus = {**nodes, k: Point2(p.x, p.y - step)}
                fd = (refine_objective(plus, bounds) - refine_objective(minus, bounds)) / (2 * step)
                assert abs(g[axis] - fd) / max(1.0, abs(fd)) <= 1e-4
        checked += 1
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    _report(7, f"analytic gradient matches central differences at 100 configs, {elapsed:.1f}s")


def test_refine_improves_majority_of_trials():
    # Monte Carlo record: local refinement from the solved relaxation lowers
    # the MSE in most seeded 5-sensor trials (measured 19/20 at this seed set)
    noise = NoiseModel(sigma=0.01, nlos_bias=(0.0, 0.5), nlos_fraction=1.0)
    wins = 0
    for seed in range(20):
        scn = random_scenario(3000 + seed, n_sensors=5, n_anchors=6)
        ms = measure(scn, noise, seed=4000 + seed)
        base = localize(ms, anchors=scn.anchor_positions, truth=scn.truth,
                        config=EstimatorConfig(formulation=Formulation.ESDP))
        refined = localize(ms, anchors=scn.anchor_positions, truth=scn.truth,
                           config=EstimatorConfig(formulation=Formulation.ESDP, refine=True))
        wins += refined.mse <= base.mse
    assert wins >= 11, f"refinement helped in only {wins}/20 trials"
    _report("refine-MC", f"refinement lowered MSE in {wins}/20 seeded trials")


def test_criterion_8_noise_model_statistics():
    start = time.perf_counter()
    # isolate the positive bias: vanish the LOS noise, full obstruction
    scn = random_scenario(88, n_sensors=460, n_anchors=0)
    truth = scn.truth
    ms = measure(scn, NoiseModel(sigma=1e-12, nlos_bias=(0.0, 0.5), nlos_fraction=1.0), seed=1)
    deltas = np.array([m.distance - truth[m.i].distance_to(truth[m.j]) for m in ms])
    assert len(deltas) >= 100_000
    assert abs(deltas.mean() - 0.25) <= 0.01
    assert (deltas >= -1e-9).all()
    # isolate the LOS noise: no obstruction
    ms = measure(scn, NoiseModel(sigma=0.01, nlos_fraction=0.0), seed=2)
    los = np.array([m.distance - truth[m.i].distance_to(truth[m.j]) for m in ms])
    sample_sigma = los.std()
    assert abs(sample_sigma - 0.01) / 0.01 <= 0.05
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    _report(8, f"bias mean {deltas.mean():.4f}, LOS sigma {sample_sigma:.5f}, "
               f"no negative bias draws, {elapsed:.1f}s")

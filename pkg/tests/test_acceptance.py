"""Acceptance gate: one test per criterion, each at its stated tolerance.

Runtimes are measured after the JIT warm-up done in ``conftest.py``.
"""
import time

import numpy as np
import pytest
from scipy.optimize import minimize

from adaptris.fem2d import build_mesh, make_model_fem
from adaptris.metric import DiagonalMetric, dist_subdiff, norm_V, project_ball_V, prox_R_ball
from adaptris.model import make_model_1d, make_model_quadratic
from adaptris.scheme import RunOptions, adaptive_run, nested_run, uniform_run
from adaptris.stationarity import SolverOptions, solve_stationary
from adaptris.verify import check_bv, classify_regimes, exact_trajectory_1d, trajectory_error

crit = pytest.mark.criterion
TOLS = (1e-2, 1e-3, 1e-4, 1e-5)


@pytest.fixture(scope="module")
def runs():
    """Every adaptive 1D run used below, with its wall time."""
    mdl = make_model_1d()
    out = {}
    for tol in TOLS:
        start = time.perf_counter()
        traj = adaptive_run(mdl, tol, 0.1)
        out[tol] = (traj, time.perf_counter() - start)
    return out


@pytest.fixture(scope="module")
def nested():
    start = time.perf_counter()
    levels = nested_run(make_model_1d(), [1e-2, 1e-3, 1e-4], 0.1)
    return levels, time.perf_counter() - start


@pytest.fixture(scope="module")
def fem_run():
    mdl = make_model_fem(build_mesh(21))
    opts = RunOptions(solver=SolverOptions(kkt_tol=1e-6, newton_tol=1e-11))
    start = time.perf_counter()
    traj = adaptive_run(mdl, 1e-4, None, opts)
    return mdl, traj, time.perf_counter() - start


@crit(1, "closed-form 1D solution certifies (defects <= 1e-8, < 1 s)")
def test_c01_oracle_gate(record_property):
    mdl = make_model_1d()
    start = time.perf_counter()
    rep = check_bv(exact_trajectory_1d(0.01), mdl, 64)
    elapsed = time.perf_counter() - start
    defects = {
        "complementarity": rep.complementarity_defect,
        "normalization": rep.normalization_defect,
        "endtime": rep.endtime_defect,
        "energy_identity": rep.energy_identity_defect,
    }
    record_property("detail", f"max defect {max(defects.values()):.1e}, {elapsed:.2f}s")
    assert all(v <= 1e-8 for v in defects.values()), defects
    assert elapsed < 1.0


@crit(2, "1D reproduction at tol=1e-3: S, breakpoints, Linf error, < 10 s")
def test_c02_one_d_reproduction(runs, record_property):
    mdl = make_model_1d()
    traj, elapsed = runs[1e-3]
    rep = check_bv(traj, mdl, 64)
    segs = classify_regimes(traj, metric=mdl.metric)
    jumps = [g for g in segs if g.label == "jump"]
    jump_start, jump_end = jumps[0].s0, jumps[-1].s1
    err = trajectory_error(traj, exact_trajectory_1d(), "Linf")
    record_property("detail", f"S={traj.S:.4f}, jump [{jump_start:.3f}, {jump_end:.3f}], Linf={err:.3f}, {elapsed:.2f}s")
    assert traj.reached_T and rep.endtime_defect <= 1e-12
    assert abs(traj.S - 16.0) <= 0.5
    assert abs(jump_start - 2.0) <= 0.3 and abs(jump_end - 10.0) <= 0.3
    assert err <= 0.15
    assert elapsed < 10.0


@crit(3, "every accepted step: I1 < tol, I2 < tol, I2 >= -10 x Simpson error")
def test_c03_residuum_laws(runs, nested, record_property):
    trajs = [r[0] for r in runs.values()] + list(nested[0])
    checked = 0
    worst = np.inf
    for traj in trajs:
        for r in traj.records[1:]:
            assert r.I1 < traj.tol and r.I2 < traj.tol
            assert r.I2 >= -10.0 * r.I2_err
            worst = min(worst, r.I2)
            checked += 1
    record_property("detail", f"{checked} steps over {len(trajs)} runs, min I2={worst:.1e}")


@crit(4, "energy identity defect <= sum(I1+I2) + slack <= 2 N tol + slack (tol=1e-3)")
def test_c04_discrete_energy_identity(runs, record_property):
    mdl = make_model_1d()
    traj, _ = runs[1e-3]
    rep = check_bv(traj, mdl, 64)
    budget = rep.residuum_budget["sum_I1"] + rep.residuum_budget["sum_I2"]
    record_property("detail", f"defect={rep.energy_identity_defect:.2e}, budget={budget:.2e}, slack={rep.quadrature_slack:.1e}, 2Ntol={2 * traj.N_tol * traj.tol:.3f}")
    assert rep.energy_identity_defect <= budget + rep.quadrature_slack
    assert budget <= 2 * traj.N_tol * traj.tol
    # the discrete identity itself: left-hand side equals the summed gradient mismatch
    assert rep.discrete_identity_defect <= rep.quadrature_slack


@crit(5, "KKT defects below kkt_tol on every solve; toy z=1, lambda=3 to 1e-10")
def test_c05_kkt_certification(runs, nested, fem_run, record_property):
    res = solve_stationary(make_model_quadratic(offset=5.0, slope=0.0), 0.0, [0.0], 1.0)
    assert abs(res.z_new[0] - 1.0) <= 1e-10 and abs(res.lam - 3.0) <= 1e-10
    worst_1d = max(r.kkt_max for traj in [x[0] for x in runs.values()] + list(nested[0]) for r in traj.records[1:])
    worst_fem = max(r.kkt_max for r in fem_run[1].records[1:])
    record_property("detail", f"max 1D {worst_1d:.1e}, max FEM {worst_fem:.1e}")
    assert worst_1d <= 1e-8
    assert worst_fem <= 1e-6


@crit(6, "doublings inside sticking and jump; tau_min no worse than sqrt(tol) within 10x")
def test_c06_step_size_behaviour(runs, record_property):
    mdl = make_model_1d()
    traj, _ = runs[1e-3]
    segs = classify_regimes(traj, metric=mdl.metric)
    doubled = [r.s - r.tau for r in traj.records[1:] if r.doubled]  # interval start

    def inside(label):
        return any(g.s0 <= s < g.s1 for g in segs if g.label == label for s in doubled)

    assert inside("sticking") and inside("jump")
    tols = [1e-2 / 2**j for j in range(8)]
    tau_min = [runs[t][0].tau.min() if t in runs else adaptive_run(mdl, t, 0.1).tau.min() for t in tols]
    ratios = [(tm / tau_min[0]) / np.sqrt(t / tols[0]) for t, tm in zip(tols, tau_min)]
    record_property("detail", f"tau_min/sqrt(tol) relative range [{min(ratios):.2f}, {max(ratios):.2f}]")
    assert min(ratios) >= 0.1


@crit(7, "nested grids (1e-2, 1e-3, 1e-4): exact inclusion, every level reaches T, < 30 s")
def test_c07_nested_grids(nested, record_property):
    levels, elapsed = nested
    for coarse, fine in zip(levels, levels[1:]):
        pts = coarse.s[coarse.s <= fine.s[-1]]
        assert np.isin(pts, fine.s).all()
    assert all(lv.reached_T for lv in levels)
    record_property("detail", f"steps {[lv.n_steps for lv in levels]}, {elapsed:.1f}s")
    assert elapsed < 30.0


@crit(8, "FEM n=21, tol=1e-4: reaches T=1, has a jump segment and a doubling, < 5 min")
def test_c08_fem_desk_scale(fem_run, record_property):
    mdl, traj, elapsed = fem_run
    segs = classify_regimes(traj, metric=mdl.metric)
    jumps = [g for g in segs if g.label == "jump"]
    doublings = sum(r.doubled for r in traj.records[1:])
    record_property("detail", f"{traj.n_steps} steps, {len(jumps)} jump segments, {doublings} doublings, {elapsed:.1f}s")
    assert traj.reached_T and traj.t[-1] >= 1.0
    assert jumps and doublings >= 1
    assert elapsed < 300.0


def _brute_prox(d, tau, m):
    # SLSQP in y = sqrt(v) x with y = p - q, p, q >= 0; restarted once from its own answer
    n = d.size
    sv = np.sqrt(m.v_weights)
    c = sv * d
    wgt = np.tile(m.rho_weights / sv, 2)
    obj = lambda pq: 0.5 * np.sum((pq[:n] - pq[n:] - c) ** 2) + wgt @ pq  # noqa: E731
    cons = {"type": "ineq", "fun": lambda pq: tau**2 - np.sum((pq[:n] - pq[n:]) ** 2)}
    x = np.concatenate([np.maximum(c, 0), np.maximum(-c, 0)]) * 0.5
    for _ in range(2):
        x = minimize(obj, x, bounds=[(0, None)] * (2 * n), constraints=[cons], method="SLSQP",
                     options={"ftol": 1e-16, "maxiter": 1000}).x
    return (x[:n] - x[n:]) / sv


def _brute_projection(y, tau, m):
    cons = {"type": "ineq", "fun": lambda x: tau**2 - np.sum(m.v_weights * x**2)}
    res = minimize(lambda x: np.sum(m.v_weights * (x - y) ** 2), np.zeros_like(y), constraints=[cons],
                   method="SLSQP", options={"ftol": 1e-15, "maxiter": 1000})
    return res.x


def _brute_dist(eta, m):
    res = minimize(lambda xi: np.sum((eta - xi) ** 2 / m.v_weights), np.zeros_like(eta),
                   bounds=list(zip(-m.rho_weights, m.rho_weights)), method="L-BFGS-B",
                   options={"ftol": 1e-16, "gtol": 1e-12})
    return np.sqrt(res.fun)


@crit(9, "prox / projection / dist match brute force on 200 random instances (1e-6)")
def test_c09_prox_dist_oracles(record_property):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(200):
        n = rng.integers(1, 5)
        m = DiagonalMetric(rng.uniform(0.2, 5.0, n), rng.uniform(0.2, 3.0, n))
        d = rng.normal(scale=4.0, size=n)
        tau = rng.uniform(0.1, 4.0)
        errs = (
            np.max(np.abs(prox_R_ball(d, tau, m) - _brute_prox(d, tau, m))),
            np.max(np.abs(project_ball_V(d, tau, m) - _brute_projection(d, tau, m))),
            abs(dist_subdiff(d, m) - _brute_dist(d, m)),
        )
        worst = max(worst, *errs)
    record_property("detail", f"max deviation {worst:.1e}")
    assert worst <= 1e-6


@crit(10, "adaptive steps <= uniform steps at matched max-residuum (1D, tol=1e-3)")
def test_c10_adaptive_vs_uniform(runs, record_property):
    mdl = make_model_1d()
    traj, _ = runs[1e-3]
    target = traj.residuum_totals()["max_residuum"]
    # largest uniform step tau_min * 2^j whose max residuum does not exceed the adaptive one
    tau = traj.tau.min()
    uni = uniform_run(mdl, tau)
    assert uni.residuum_totals()["max_residuum"] <= target
    while True:
        trial = uniform_run(mdl, 2 * tau)
        if trial.residuum_totals()["max_residuum"] > target:
            break
        tau, uni = 2 * tau, trial
    record_property("detail", f"adaptive {traj.n_steps} vs uniform {uni.n_steps} (tau={tau:g})")
    assert traj.n_steps <= uni.n_steps

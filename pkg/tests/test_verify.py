import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptris.errors import ContractViolation
from adaptris.fem2d import build_mesh, make_model_fem
from adaptris.model import exact_solution_1d
from adaptris.scheme import trajectory_from_arrays
from adaptris.verify import (
    Gates,
    check_bv,
    classify_regimes,
    exact_trajectory_1d,
    trajectory_error,
)


@pytest.mark.parametrize("spacing", [None, 0.25, 0.01])
def test_closed_form_solution_passes(one_d, spacing):
    rep = check_bv(exact_trajectory_1d(spacing), one_d, 64)
    for name in ("complementarity_defect", "normalization_defect", "endtime_defect", "energy_identity_defect"):
        assert getattr(rep, name) <= 1e-8, name
    assert rep.monotonicity_defect == 0.0
    assert rep.S == 16.0
    assert rep.passes()


def test_decreasing_time_is_reported(one_d):
    ex = exact_trajectory_1d(0.5)
    t = ex.t.copy()
    t[5] -= 0.3
    bad = trajectory_from_arrays(ex.s, t, ex.z, T=5.0)
    rep = check_bv(bad, one_d)
    assert rep.monotonicity_defect == pytest.approx(0.3)
    assert rep.normalization_defect > 0.1
    assert not rep.passes()
    assert not rep.gate_results(Gates())["monotonicity"]


def test_regimes_of_closed_form():
    segs = classify_regimes(exact_trajectory_1d(0.1))
    assert [(s.s0, s.s1, s.label) for s in segs] == [
        (0.0, 2.0, "sticking"), (2.0, 10.0, "jump"), (10.0, 16.0, "slip"),
    ]


def test_constant_state_is_one_sticking_segment():
    s = np.linspace(0, 3, 7)
    segs = classify_regimes(trajectory_from_arrays(s, s, np.zeros((7, 2))))
    assert [(g.s0, g.s1, g.label) for g in segs] == [(0.0, 3.0, "sticking")]


def test_threshold_is_strict():
    # slip slope t' = |z'| = 1/2 equals eps: neither sticking nor jump
    s = np.array([10.0, 12.0])
    t, z = exact_solution_1d(s)
    segs = classify_regimes(trajectory_from_arrays(s, t, z), eps=0.5)
    assert segs[0].label == "slip"
    with pytest.raises(ContractViolation):
        classify_regimes(trajectory_from_arrays(s, t, z), eps=0.0)


@given(st.lists(st.floats(0.0, 16.0), min_size=1, max_size=30))
def test_regimes_invariant_under_resampling(extra):
    base = exact_trajectory_1d()
    # sub-roundoff intervals would carry no information about the slopes
    extra = [x for x in extra if np.min(np.abs(base.s - x)) > 1e-9]
    s = np.union1d(base.s, np.array(extra))
    t, z = exact_solution_1d(s)
    fine = trajectory_from_arrays(s, t, z)
    labels = lambda tr: [(g.s0, g.s1, g.label) for g in classify_regimes(tr)]
    assert labels(fine) == labels(base)


def test_trajectory_error_self_is_zero(run_1d):
    traj = run_1d(1e-2)
    assert trajectory_error(traj, traj, "L2") == 0.0
    assert trajectory_error(traj, traj, "Linf") == 0.0


def test_trajectory_error_hand_values():
    # one interval, t^ = z^ = s on [0, 1]; the constant interpolant is (t_0, z_1) = (0, 1)
    traj = trajectory_from_arrays([0.0, 1.0], [0.0, 1.0], [[0.0], [1.0]])
    assert trajectory_error(traj, traj, "L2", kind="constant") == pytest.approx(math.sqrt(2.0 / 3.0))
    assert trajectory_error(traj, traj, "Linf", kind="constant") == pytest.approx(1.0)
    # affine vs. shifted affine: e_t = 0, e_z = 1/2 everywhere on [0, 1]
    ref = trajectory_from_arrays([0.0, 1.0], [0.0, 1.0], [[0.5], [1.5]])
    assert trajectory_error(traj, ref, "L2") == pytest.approx(0.5)


def test_trajectory_error_uses_common_range_and_callables(run_1d):
    traj = run_1d(1e-3)
    e_traj = trajectory_error(traj, exact_trajectory_1d(), "Linf")
    e_call = trajectory_error(traj, exact_solution_1d, "Linf")
    assert e_traj == pytest.approx(e_call, abs=1e-12)
    short = trajectory_from_arrays([0.0, 1.0], [0.0, 1.0], [[-2.0], [-2.0]])
    assert trajectory_error(short, exact_trajectory_1d(), "Linf") == 0.0
    with pytest.raises(ContractViolation):
        trajectory_error(traj, traj, "L1")
    far = trajectory_from_arrays([20.0, 21.0], [0.0, 1.0], [[0.0], [0.0]])
    with pytest.raises(ContractViolation):
        trajectory_error(far, traj)


def test_slack_does_not_grow_under_refinement(one_d, run_1d):
    traj = run_1d(1e-2)
    slacks = [check_bv(traj, one_d, nq).quadrature_slack for nq in (8, 16, 32, 64)]
    assert all(b <= a for a, b in zip(slacks, slacks[1:]))


def test_computed_run_satisfies_budgets(one_d, run_1d):
    traj = run_1d(1e-3)
    rep = check_bv(traj, one_d, 64)
    assert rep.energy_identity_defect <= 2 * traj.N_tol * traj.tol + rep.quadrature_slack
    assert rep.passes(Gates(i2_nonnegative=True))
    assert rep.i2_min >= -rep.quadrature_slack


def test_dimension_mismatch(one_d):
    mdl = make_model_fem(build_mesh(4))
    with pytest.raises(ContractViolation):
        check_bv(exact_trajectory_1d(), mdl)

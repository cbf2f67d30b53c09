import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adaptris import _kernels
from adaptris.fem2d import build_mesh

pytestmark = pytest.mark.skipif(_kernels.numba_impl is None, reason="numba unavailable")
nb, npy = _kernels.numba_impl, _kernels.numpy_impl
vals = arrays(np.float64, st.integers(1, 40), elements=st.floats(-5, 5))


@given(vals)
def test_elementwise_kernels_agree(x):
    thr = np.abs(x[::-1]) + 0.1
    np.testing.assert_allclose(nb.soft_threshold(x, thr), npy.soft_threshold(x, thr), rtol=1e-14, atol=0)
    for name in ("double_well", "double_well_grad", "double_well_hess"):
        np.testing.assert_allclose(getattr(nb, name)(x, 48.0), getattr(npy, name)(x, 48.0), rtol=1e-13, atol=1e-12)


@given(vals)
def test_box_excess_agrees(x):
    rho = np.full(x.size, 0.7)
    v = np.linspace(0.5, 2.0, x.size)
    np.testing.assert_allclose(nb.box_excess_sq(x, rho, v), npy.box_excess_sq(x, rho, v), rtol=1e-13)
    batch = np.stack([x, -2 * x])
    np.testing.assert_allclose(nb.box_excess_sq(batch, rho, v), npy.box_excess_sq(batch, rho, v), rtol=1e-13)


def test_assembly_kernels_agree():
    mesh = build_mesh(9)
    loc_a, area_a = nb.p1_local_stiffness(mesh.coords, mesh.triangles)
    loc_b, area_b = npy.p1_local_stiffness(mesh.coords, mesh.triangles)
    np.testing.assert_allclose(loc_a, loc_b, atol=1e-14)
    np.testing.assert_allclose(area_a, area_b, atol=1e-16)
    np.testing.assert_allclose(nb.lumped_mass(mesh.n_nodes, mesh.triangles, area_a),
                               npy.lumped_mass(mesh.n_nodes, mesh.triangles, area_b), atol=1e-16)


def test_env_flag_selects_numpy_path():
    code = "from adaptris import _kernels; print(_kernels.active.name)"
    env = {**os.environ, "ADAPTRIS_DISABLE_NUMBA": "1"}
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "numpy"
    env["ADAPTRIS_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "numba"


def test_one_step_identical_on_both_paths():
    code = (
        "import numpy as np; from adaptris import *; "
        "m = make_model_fem(build_mesh(7)); "
        "r = solve_stationary(m, 0.9, np.full(m.dim, 0.2), 0.05); print(repr(r.z_new.tolist()))"
    )
    outs = []
    for flag in ("1", "0"):
        env = {**os.environ, "ADAPTRIS_DISABLE_NUMBA": flag}
        outs.append(subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True).stdout)
    a, b = (np.array(eval(o)) for o in outs)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)

"""Elementwise numeric kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and the environment variable
``ADAPTRIS_DISABLE_NUMBA`` is unset (or set to ``0``/``false``).  Both
implementations are always importable as :data:`numba_impl` and
:data:`numpy_impl` so that they can be compared against each other.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

_flag = os.environ.get("ADAPTRIS_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED_BY_ENV = _flag not in ("", "0", "false", "no")

try:
    from numba import njit

    NUMBA_OK = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_OK = False


# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------

def _np_soft_threshold(x, thr):
    return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)


def _np_box_excess_sq(eta, rho, v):
    # eta may be (n,) or (m, n); returns sum_i max(|eta_i|-rho_i, 0)^2 / v_i
    ex = np.maximum(np.abs(eta) - rho, 0.0)
    return np.sum(ex * ex / v, axis=-1)


def _np_double_well(z, scale):
    w = 1.0 - z * z
    return scale * w * w


def _np_double_well_grad(z, scale):
    return -4.0 * scale * z * (1.0 - z * z)


def _np_double_well_hess(z, scale):
    return scale * (12.0 * z * z - 4.0)


def _np_p1_local_stiffness(coords, tris):
    p0 = coords[tris[:, 0]]
    p1 = coords[tris[:, 1]]
    p2 = coords[tris[:, 2]]
    # b_i = y_j - y_k, c_i = x_k - x_j for cyclic (i, j, k)
    b = np.stack([p1[:, 1] - p2[:, 1], p2[:, 1] - p0[:, 1], p0[:, 1] - p1[:, 1]], axis=1)
    c = np.stack([p2[:, 0] - p1[:, 0], p0[:, 0] - p2[:, 0], p1[:, 0] - p0[:, 0]], axis=1)
    area = 0.5 * np.abs(b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    loc = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4.0 * area[:, None, None])
    return loc, area


def _np_lumped_mass(n_nodes, tris, area):
    m = np.zeros(n_nodes)
    for j in range(3):
        np.add.at(m, tris[:, j], area / 3.0)
    return m


numpy_impl = SimpleNamespace(
    name="numpy",
    soft_threshold=_np_soft_threshold,
    box_excess_sq=_np_box_excess_sq,
    double_well=_np_double_well,
    double_well_grad=_np_double_well_grad,
    double_well_hess=_np_double_well_hess,
    p1_local_stiffness=_np_p1_local_stiffness,
    lumped_mass=_np_lumped_mass,
)


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------

if NUMBA_OK:

    @njit(cache=True)
    def _nb_soft_threshold_1d(x, thr):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            a = abs(x[i]) - thr[i]
            if a > 0.0:
                out[i] = a if x[i] > 0.0 else -a
            else:
                out[i] = 0.0
        return out

    @njit(cache=True)
    def _nb_box_excess_sq_2d(eta, rho, v):
        m, n = eta.shape
        out = np.zeros(m)
        for r in range(m):
            acc = 0.0
            for i in range(n):
                a = abs(eta[r, i]) - rho[i]
                if a > 0.0:
                    acc += a * a / v[i]
            out[r] = acc
        return out

    @njit(cache=True)
    def _nb_double_well_1d(z, scale):
        out = np.empty_like(z)
        for i in range(z.shape[0]):
            w = 1.0 - z[i] * z[i]
            out[i] = scale * w * w
        return out

    @njit(cache=True)
    def _nb_double_well_grad_1d(z, scale):
        out = np.empty_like(z)
        for i in range(z.shape[0]):
            out[i] = -4.0 * scale * z[i] * (1.0 - z[i] * z[i])
        return out

    @njit(cache=True)
    def _nb_double_well_hess_1d(z, scale):
        out = np.empty_like(z)
        for i in range(z.shape[0]):
            out[i] = scale * (12.0 * z[i] * z[i] - 4.0)
        return out

    @njit(cache=True)
    def _nb_p1_local_stiffness(coords, tris):
        ne = tris.shape[0]
        loc = np.empty((ne, 3, 3))
        area = np.empty(ne)
        b = np.empty(3)
        c = np.empty(3)
        for e in range(ne):
            for i in range(3):
                j = (i + 1) % 3
                k = (i + 2) % 3
                b[i] = coords[tris[e, j], 1] - coords[tris[e, k], 1]
                c[i] = coords[tris[e, k], 0] - coords[tris[e, j], 0]
            a = 0.5 * abs(b[0] * c[1] - b[1] * c[0])
            area[e] = a
            for i in range(3):
                for j in range(3):
                    loc[e, i, j] = (b[i] * b[j] + c[i] * c[j]) / (4.0 * a)
        return loc, area

    @njit(cache=True)
    def _nb_lumped_mass(n_nodes, tris, area):
        m = np.zeros(n_nodes)
        for e in range(tris.shape[0]):
            for j in range(3):
                m[tris[e, j]] += area[e] / 3.0
        return m

    # the numba kernels are written for 1-D (or 2-D) contiguous float arrays;
    # these wrappers keep the numpy broadcasting contract of the public API.
    def _nb_soft_threshold(x, thr):
        x = np.asarray(x, dtype=np.float64)
        thr = np.broadcast_to(np.asarray(thr, dtype=np.float64), x.shape)
        if x.ndim != 1:
            return _np_soft_threshold(x, thr)
        return _nb_soft_threshold_1d(np.ascontiguousarray(x), np.ascontiguousarray(thr))

    def _nb_box_excess_sq(eta, rho, v):
        eta = np.asarray(eta, dtype=np.float64)
        if eta.ndim == 1:
            return _nb_box_excess_sq_2d(eta.reshape(1, -1), rho, v)[0]
        flat = np.ascontiguousarray(eta.reshape(-1, eta.shape[-1]))
        return _nb_box_excess_sq_2d(flat, rho, v).reshape(eta.shape[:-1])

    def _elementwise(kernel, fallback):
        def call(z, scale):
            z = np.asarray(z, dtype=np.float64)
            if z.ndim == 0:
                return fallback(z, scale)
            flat = np.ascontiguousarray(z).reshape(-1)
            return kernel(flat, float(scale)).reshape(z.shape)
        return call

    def _nb_p1_local_stiffness_wrapped(coords, tris):
        return _nb_p1_local_stiffness(
            np.ascontiguousarray(coords, dtype=np.float64), np.ascontiguousarray(tris, dtype=np.int64)
        )

    def _nb_lumped_mass_wrapped(n_nodes, tris, area):
        return _nb_lumped_mass(int(n_nodes), np.ascontiguousarray(tris, dtype=np.int64), area)

    numba_impl = SimpleNamespace(
        name="numba",
        soft_threshold=_nb_soft_threshold,
        box_excess_sq=_nb_box_excess_sq,
        double_well=_elementwise(_nb_double_well_1d, _np_double_well),
        double_well_grad=_elementwise(_nb_double_well_grad_1d, _np_double_well_grad),
        double_well_hess=_elementwise(_nb_double_well_hess_1d, _np_double_well_hess),
        p1_local_stiffness=_nb_p1_local_stiffness_wrapped,
        lumped_mass=_nb_lumped_mass_wrapped,
    )
else:  # pragma: no cover
    numba_impl = None


USE_NUMBA = NUMBA_OK and not NUMBA_DISABLED_BY_ENV
active = numba_impl if USE_NUMBA else numpy_impl


def warmup() -> None:
    """Trigger JIT compilation of every numba kernel (no-op on the numpy path)."""
    if active is not numba_impl:
        return
    x = np.array([0.5, -2.0])
    ones = np.ones(2)
    active.soft_threshold(x, ones)
    active.box_excess_sq(x, ones, ones)
    active.box_excess_sq(np.stack([x, x]), ones, ones)
    active.double_well(x, 48.0)
    active.double_well_grad(x, 48.0)
    active.double_well_hess(x, 48.0)
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2]])
    loc, area = active.p1_local_stiffness(coords, tris)
    active.lumped_mass(3, tris, area)

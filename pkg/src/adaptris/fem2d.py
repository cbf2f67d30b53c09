"""P1 finite elements on the unit square with lumped mass and a double-well energy.

The mesh is the structured right-triangle pattern (every cell split along the
same diagonal).  Dirichlet nodes are eliminated, so every operator returned
here lives on the interior nodes only.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import ContractViolation, IndefiniteOperatorError, MaxIterationsExceeded
from .metric import DiagonalMetric
from .model import EnergyModel

WELL_SCALE = 48.0
LOAD_SCALE = 200.0


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    n_per_side: int
    coords: np.ndarray      # (N, 2)
    triangles: np.ndarray   # (2 (n-1)^2, 3), counter-clockwise
    boundary: np.ndarray    # (N,) bool

    @property
    def h(self) -> float:
        return 1.0 / (self.n_per_side - 1)

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)


def build_mesh(n_per_side: int) -> StructuredMesh:
    n = int(n_per_side)
    if n < 3:
        raise ContractViolation(f"n_per_side must be >= 3, got {n_per_side}")
    x = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(x, x, indexing="xy")
    coords = np.column_stack([X.ravel(), Y.ravel()])  # node = i + n j
    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="xy")
    a = (i + n * j).ravel()
    b, c, d = a + 1, a + n + 1, a + n
    triangles = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    ii, jj = np.arange(n * n) % n, np.arange(n * n) // n
    boundary = (ii == 0) | (jj == 0) | (ii == n - 1) | (jj == n - 1)
    return StructuredMesh(n, coords, triangles.astype(np.int64), boundary)


def _full_stiffness(mesh: StructuredMesh) -> tuple[sp.csr_matrix, np.ndarray]:
    loc, area = _kernels.active.p1_local_stiffness(mesh.coords, mesh.triangles)
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    K = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsr()
    K.sum_duplicates()
    return K, area


def assemble_stiffness(mesh: StructuredMesh) -> sp.csr_matrix:
    """Dirichlet-reduced P1 stiffness matrix of ``-Laplace``."""
    K, _ = _full_stiffness(mesh)
    idx = mesh.interior
    Kr = K[idx][:, idx].tocsr()
    Kr.eliminate_zeros()
    return Kr


def lumped_mass_all(mesh: StructuredMesh) -> np.ndarray:
    _, area = _full_stiffness(mesh)
    return _kernels.active.lumped_mass(mesh.n_nodes, mesh.triangles, area)


def lumped_mass(mesh: StructuredMesh) -> DiagonalMetric:
    m = lumped_mass_all(mesh)[mesh.interior]
    return DiagonalMetric(m, m)


def make_model_fem(mesh: StructuredMesh) -> EnergyModel:
    """Double-well energy with cubic-in-time uniform load, ``T = 1``, ``z0 = 0``."""
    K = assemble_stiffness(mesh)
    metric = lumped_mass(mesh)
    m = metric.v_weights.copy()
    msum = float(m.sum())
    ker = _kernels.active

    def F_val(z):
        return np.sum(m * ker.double_well(z, WELL_SCALE), axis=-1)

    def F_grad(z):
        return m * ker.double_well_grad(z, WELL_SCALE)

    def F_hess_diag(z):
        return m * ker.double_well_hess(z, WELL_SCALE)

    def f_val(t, z):
        return -LOAD_SCALE * np.asarray(t) ** 3 * np.sum(m * z, axis=-1)

    def f_grad(t, z):
        t3 = (np.asarray(t, dtype=np.float64) ** 3)[..., None]
        return np.broadcast_to(-LOAD_SCALE * t3 * m, z.shape).copy()

    def f_dt(t, z):
        return -3.0 * LOAD_SCALE * np.asarray(t) ** 2 * np.sum(m * z, axis=-1)

    return EnergyModel(
        dim=K.shape[0],
        metric=metric,
        A=K,
        F_val=F_val,
        F_grad=F_grad,
        F_hess_diag=F_hess_diag,
        f_val=f_val,
        f_grad=f_grad,
        f_dt=f_dt,
        T=1.0,
        z0=np.zeros(K.shape[0]),
        name="fem2d",
        params={"n_per_side": mesh.n_per_side, "interior_area": msum},
    )


# ---------------------------------------------------------------------------
# linear solves
# ---------------------------------------------------------------------------

_DIRECT_MAX_DIM = 2000


def _sparse_spd_factor(M: sp.csc_matrix):
    """Symmetric-mode sparse LU; all-positive diagonal pivots certify definiteness."""
    try:
        lu = spla.splu(
            M,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )
    except RuntimeError as exc:  # exactly singular
        raise IndefiniteOperatorError(str(exc)) from exc
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return None  # off-diagonal pivoting happened, the pivot test is void
    if np.any(lu.U.diagonal() <= 0.0):
        raise IndefiniteOperatorError("nonpositive pivot in symmetric factorization")
    return lu.solve


def _cg(M, rhs, tol, maxiter):
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rr = r @ r
    stop = (tol * np.linalg.norm(rhs)) ** 2
    for _ in range(maxiter):
        if rr <= stop:
            return x
        Mp = M @ p
        curv = p @ Mp
        if curv <= 0.0:
            raise IndefiniteOperatorError("negative curvature encountered in CG")
        alpha = rr / curv
        x += alpha * p
        r -= alpha * Mp
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    if rr <= stop:
        return x
    raise MaxIterationsExceeded(f"CG did not reach tol={tol} in {maxiter} iterations")


def spd_solver(op, shift=None, tol: float = 1e-12):
    """Return ``solve(rhs)`` for ``op + diag(shift)``; raises if not positive definite."""
    M = sp.csr_matrix(op, dtype=np.float64)
    if shift is not None:
        M = (M + sp.diags(np.broadcast_to(np.asarray(shift, dtype=np.float64), M.shape[0]))).tocsr()
    n = M.shape[0]
    if n <= _DIRECT_MAX_DIM:
        solve = _sparse_spd_factor(M.tocsc())
        if solve is None:
            try:
                cho = sla.cho_factor(M.toarray())
            except np.linalg.LinAlgError as exc:
                raise IndefiniteOperatorError(str(exc)) from exc
            return lambda rhs: sla.cho_solve(cho, rhs)
        return solve
    return lambda rhs: _cg(M, np.asarray(rhs, dtype=np.float64), tol, 10 * n)


def solve_spd(op, rhs, tol: float = 1e-12, shift=None) -> np.ndarray:
    """Solve ``(op + diag(shift)) x = rhs`` for a symmetric positive definite operator."""
    if not tol > 0.0:
        raise ContractViolation("tol must be positive")
    rhs = np.asarray(rhs, dtype=np.float64)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    return spd_solver(op, shift, tol)(rhs)


# ---------------------------------------------------------------------------
# debug dump
# ---------------------------------------------------------------------------

def mesh_to_json(mesh: StructuredMesh) -> dict:
    K = assemble_stiffness(mesh)
    return {
        "format_version": 1,
        "kind": "fem2d_mesh",
        "n_per_side": mesh.n_per_side,
        "coords": mesh.coords.tolist(),
        "triangles": mesh.triangles.tolist(),
        "boundary": mesh.boundary.astype(int).tolist(),
        "interior": mesh.interior.tolist(),
        "lumped_mass_interior": lumped_mass(mesh).v_weights.tolist(),
        "stiffness_csr": {
            "shape": list(K.shape),
            "indptr": K.indptr.tolist(),
            "indices": K.indices.tolist(),
            "data": K.data.tolist(),
        },
    }


def dump_mesh_json(mesh: StructuredMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mesh_to_json(mesh), fh, indent=1)

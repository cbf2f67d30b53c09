"""Energy models ``I(t, z) = 1/2 <Az, z> + F(z) - f(t, z)``.

A model is a bundle of vectorised callables.  States are arrays whose last
axis has length ``dim``; every evaluation also accepts a batch ``(k, dim)``
together with a scalar or ``(k,)`` time, which is what the quadrature code
uses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation, ModelEvaluationError
from .metric import DiagonalMetric


def _zero_like_state(t, z):
    return np.zeros_like(z)


@dataclass(frozen=True, eq=False)
class EnergyModel:
    """Evaluation bundle for one discrete rate-independent system.

    ``f_hess_diag`` is the diagonal of the z-Hessian of ``f``; it is zero for
    loads that are affine in z and may be omitted then.
    """

    dim: int
    metric: DiagonalMetric
    A: sp.csr_matrix
    F_val: Callable
    F_grad: Callable
    F_hess_diag: Callable
    f_val: Callable
    f_grad: Callable
    f_dt: Callable
    T: float
    z0: np.ndarray
    name: str = "custom"
    f_hess_diag: Callable = _zero_like_state
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        A = sp.csr_matrix(self.A, dtype=np.float64)
        if A.shape != (self.dim, self.dim):
            raise ContractViolation(f"A must be {self.dim}x{self.dim}, got {A.shape}")
        if self.metric.n != self.dim:
            raise ContractViolation("metric size does not match model dim")
        z0 = np.array(self.z0, dtype=np.float64).reshape(self.dim)
        z0.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "z0", z0)
        # A with an explicitly stored diagonal, so Hessians only patch values
        pattern = (A + sp.identity(self.dim, format="csr") * 0.0).tocsr()
        pattern.sort_indices()
        rows = np.repeat(np.arange(self.dim), np.diff(pattern.indptr))
        diag_pos = np.flatnonzero(pattern.indices == rows)
        object.__setattr__(self, "_hess_pattern", pattern)
        object.__setattr__(self, "_diag_pos", diag_pos)
        object.__setattr__(self, "T", float(self.T))

    # -- helpers ---------------------------------------------------------
    def _prep(self, t, z):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 0 or z.shape[-1] != self.dim:
            raise ContractViolation(f"state must have trailing length {self.dim}, got {z.shape}")
        return np.asarray(t, dtype=np.float64), z

    def apply_A(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim == 1:
            return self.A @ v
        flat = v.reshape(-1, self.dim)
        return (self.A @ flat.T).T.reshape(v.shape)

    def _finite(self, out, what, t, z):
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.isfinite(np.atleast_1d(out)))[0]
            raise ModelEvaluationError(
                f"{self.name}: non-finite {what} at t={np.ravel(t)[:1]}, entry {tuple(bad)}"
            )
        return out

    # -- evaluations ------------------------------------------------------
    def energy(self, t, z):
        t, z = self._prep(t, z)
        quad = 0.5 * np.sum(z * self.apply_A(z), axis=-1)
        out = quad + self.F_val(z) - self.f_val(t, z)
        return self._finite(out, "energy", t, z)

    def grad(self, t, z):
        t, z = self._prep(t, z)
        out = self.apply_A(z) + self.F_grad(z) - self.f_grad(t, z)
        return self._finite(out, "gradient", t, z)

    def hess_diag(self, t, z):
        """Diagonal part added to ``A`` in the generalized Hessian."""
        t, z = self._prep(t, z)
        return self.F_hess_diag(z) - self.f_hess_diag(t, z)

    def hess_apply(self, t, z, v):
        t, z = self._prep(t, z)
        v = np.asarray(v, dtype=np.float64)
        out = self.apply_A(v) + self.hess_diag(t, z) * v
        return self._finite(out, "Hessian action", t, z)

    def hess_matrix(self, t, z) -> sp.csr_matrix:
        t, z = self._prep(t, z)
        diag = self.hess_diag(t, z)
        self._finite(diag, "Hessian diagonal", t, z)
        H = self._hess_pattern.copy()
        H.data[self._diag_pos] += diag
        return H

    def dt_energy(self, t, z):
        t, z = self._prep(t, z)
        out = -np.asarray(self.f_dt(t, z), dtype=np.float64)
        return self._finite(out, "time derivative", t, z)


# thin functional aliases
def energy(mdl: EnergyModel, t, z):
    return mdl.energy(t, z)


def grad_energy(mdl: EnergyModel, t, z):
    return mdl.grad(t, z)


def hess_apply(mdl: EnergyModel, t, z, v):
    return mdl.hess_apply(t, z, v)


def dt_energy(mdl: EnergyModel, t, z):
    return mdl.dt_energy(t, z)


# ---------------------------------------------------------------------------
# one-dimensional example
# ---------------------------------------------------------------------------

def pw(z):
    """Piecewise C^1 nonconvex part: ``4z+8`` / ``4-z^2`` / ``-4z+8``."""
    z = np.asarray(z, dtype=np.float64)
    return np.where(z <= -2.0, 4.0 * z + 8.0, np.where(z >= 2.0, -4.0 * z + 8.0, 4.0 - z * z))


def pw_prime(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z <= -2.0, 4.0, np.where(z >= 2.0, -4.0, -2.0 * z))


def pw_second(z):
    # generalized second derivative; the kinks |z| = 2 take the affine branch
    z = np.asarray(z, dtype=np.float64)
    return np.where(np.abs(z) < 2.0, -2.0, 0.0)


def load_1d(t):
    return np.asarray(t, dtype=np.float64) + 1.0


def make_model_1d() -> EnergyModel:
    """Scalar model ``I(t, z) = z^2/2 + pw(z) - (t + 1) z`` with ``R = |.|``, ``T = 5``, ``z0 = -2``."""

    def f_val(t, z):
        return (load_1d(t)[..., None] * z - pw(z))[..., 0]

    def f_grad(t, z):
        return load_1d(t)[..., None] - pw_prime(z)

    def f_hess_diag(t, z):
        return -pw_second(z)

    def f_dt(t, z):
        return z[..., 0] + 0.0 * np.asarray(t)

    return EnergyModel(
        dim=1,
        metric=DiagonalMetric.identity(1, rho=1.0),
        A=sp.identity(1, format="csr"),
        F_val=lambda z: np.zeros(z.shape[:-1]),
        F_grad=np.zeros_like,
        F_hess_diag=np.zeros_like,
        f_val=f_val,
        f_grad=f_grad,
        f_dt=f_dt,
        f_hess_diag=f_hess_diag,
        T=5.0,
        z0=np.array([-2.0]),
        name="one_d",
    )


def exact_solution_1d(s):
    """Closed-form parametrized solution of the 1D example on ``[0, 16]``.

    Sticking on [0, 2], viscous jump on (2, 10], rate-independent slip on (10, 16].
    """
    s = np.asarray(s, dtype=np.float64)
    t = np.where(s <= 2.0, s, np.where(s <= 10.0, 2.0, (s - 6.0) / 2.0))
    z = np.where(s <= 2.0, -2.0, np.where(s <= 10.0, s - 4.0, (s + 2.0) / 2.0))
    return t, z


EXACT_1D_BREAKPOINTS = (0.0, 2.0, 8.0, 10.0, 16.0)


def make_model_quadratic(offset: float = 0.0, slope: float = 1.0, T: float = 3.0, z0: float = 0.0, rho: float = 1.0) -> EnergyModel:
    """Convex scalar model ``I(t, z) = z^2/2 - (offset + slope t) z`` with ``R = rho |.|``."""

    def f_val(t, z):
        return ((offset + slope * np.asarray(t, dtype=np.float64))[..., None] * z)[..., 0]

    def f_grad(t, z):
        return np.broadcast_to((offset + slope * np.asarray(t, dtype=np.float64))[..., None], z.shape).copy()

    def f_dt(t, z):
        return slope * z[..., 0] + 0.0 * np.asarray(t)

    return EnergyModel(
        dim=1,
        metric=DiagonalMetric.identity(1, rho=rho),
        A=sp.identity(1, format="csr"),
        F_val=lambda z: np.zeros(z.shape[:-1]),
        F_grad=np.zeros_like,
        F_hess_diag=np.zeros_like,
        f_val=f_val,
        f_grad=f_grad,
        f_dt=f_dt,
        T=T,
        z0=np.array([z0]),
        name="quadratic",
        params={"offset": offset, "slope": slope, "rho": rho},
    )

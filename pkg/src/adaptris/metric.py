"""Diagonal (lumped) geometry: V-norms, weighted L1 dissipation, its prox and dist.

Everything here is separable per degree of freedom.  ``v`` defines the
Hilbert norm ``||x||_V^2 = sum v_i x_i^2`` and ``rho`` the dissipation
``R(x) = sum rho_i |x_i|``, whose subdifferential at zero is the box
``prod [-rho_i, rho_i]``.  Covectors (gradients) are stored in nodal
representation, so their dual norm is ``sqrt(sum w_i^2 / v_i)``.

The box is nonempty and closed, hence the distance of any covector to it is
finite; the ``inf {} = inf`` convention of the continuous setting never
applies here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractViolation


@dataclass(frozen=True, eq=False)
class DiagonalMetric:
    """Lumped weights: ``v_weights`` (positive) and ``rho_weights`` (nonnegative)."""

    v_weights: np.ndarray
    rho_weights: np.ndarray

    def __post_init__(self):
        v = np.array(self.v_weights, dtype=np.float64).reshape(-1)
        rho = np.array(self.rho_weights, dtype=np.float64).reshape(-1)
        if v.size < 1 or v.shape != rho.shape:
            raise ContractViolation(
                f"v_weights and rho_weights must have equal length >= 1, got {v.shape} and {rho.shape}"
            )
        if not np.all(v > 0.0) or not np.all(np.isfinite(v)):
            raise ContractViolation("all v_weights must be positive and finite")
        if not np.all(rho >= 0.0) or not np.all(np.isfinite(rho)):
            raise ContractViolation("all rho_weights must be nonnegative and finite")
        v.setflags(write=False)
        rho.setflags(write=False)
        object.__setattr__(self, "v_weights", v)
        object.__setattr__(self, "rho_weights", rho)

    @property
    def n(self) -> int:
        return self.v_weights.shape[0]

    @classmethod
    def identity(cls, n: int = 1, rho: float = 1.0) -> "DiagonalMetric":
        return cls(np.ones(n), np.full(n, float(rho)))


def _check(x, m: DiagonalMetric) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != m.n:
        raise ContractViolation(f"dimension mismatch: expected trailing length {m.n}, got shape {x.shape}")
    return x


def norm_V(x, m: DiagonalMetric):
    x = _check(x, m)
    return np.sqrt(np.sum(m.v_weights * x * x, axis=-1))


def norm_Vinv(w, m: DiagonalMetric):
    w = _check(w, m)
    return np.sqrt(np.sum(w * w / m.v_weights, axis=-1))


def inner(eta, x) -> float:
    """Duality pairing of a nodal covector with a state."""
    return np.sum(np.asarray(eta) * np.asarray(x), axis=-1)


def dissipation(x, m: DiagonalMetric):
    x = _check(x, m)
    return np.sum(m.rho_weights * np.abs(x), axis=-1)


def dist_subdiff(eta, m: DiagonalMetric):
    """V^-1 distance of the covector ``eta`` to the box ``dR(0)``.

    Accepts a single covector ``(n,)`` or a batch ``(k, n)``.
    """
    eta = _check(eta, m)
    return np.sqrt(_kernels.active.box_excess_sq(eta, m.rho_weights, m.v_weights))


def soft_threshold(d, m: DiagonalMetric, gamma: float = 1.0) -> np.ndarray:
    """Prox of ``gamma * R`` in the V-metric: shrink each entry by ``gamma rho_i / v_i``."""
    d = _check(d, m)
    return _kernels.active.soft_threshold(d, gamma * m.rho_weights / m.v_weights)


def project_ball_V(y, tau: float, m: DiagonalMetric) -> np.ndarray:
    """Radial projection onto ``{||y||_V <= tau}``."""
    y = _check(y, m)
    nrm = float(norm_V(y, m))
    if nrm <= tau:
        return y.copy()
    return y * (tau / nrm)


def prox_R_ball(d, tau: float, m: DiagonalMetric, gamma: float = 1.0) -> np.ndarray:
    """argmin over ``||y||_V <= tau`` of ``1/2 ||y - d||_V^2 + gamma R(y)``.

    For a weighted L1 term and a ball of the same diagonal metric the
    minimiser is the soft-thresholded point scaled back into the ball
    (the KKT system gives ``(1 + mu) y = soft(d)`` for the ball multiplier
    ``mu``).
    """
    if not tau > 0.0:
        raise ContractViolation(f"tau must be positive, got {tau}")
    if not gamma > 0.0:
        raise ContractViolation(f"gamma must be positive, got {gamma}")
    return project_ball_V(soft_threshold(d, m, gamma), tau, m)

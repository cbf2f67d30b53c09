"""Adaptive incremental stationary scheme and its nested-grid variant.

Each step solves the ball-constrained stationarity problem at the previous
physical time, advances ``t`` by ``tau - ||z_k - z_{k-1}||_V`` and measures the
quality of the affine interpolants with two residua integrated by composite
Simpson:

* ``I1``: complementarity defect ``int t' dist(-D_zI(t^, z^), dR(0))``;
* ``I2``: energy-balance defect ``int <D_zI(t^,z^) - D_zI(t_,z_), z'> +
  ||z'||_V (dist(t^,z^) - dist(t_,z_))``, where ``(t_, z_) = (t_{k-1}, z_k)``
  are the constant interpolants.

Steps with both residua below ``tol`` are accepted (and the next step size is
doubled when both are below ``tol/2``); otherwise the step size is halved and
the step is recomputed from the same state.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ContractViolation, SolverError, StepFloorReached
from .metric import dissipation, dist_subdiff, norm_V
from .model import EnergyModel
from .stationarity import SolverOptions, solve_stationary

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class RunOptions:
    nq: int = 8
    tau_cap: float | None = None      # None: the model horizon T
    tau_floor_rel: float = 1e-12      # floor = tau_floor_rel * tau_init
    max_steps: int = 1_000_000
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.nq < 2 or self.nq % 2:
            raise ContractViolation(f"nq must be an even integer >= 2, got {self.nq}")


@dataclass(frozen=True, eq=False)
class IterateRecord:
    k: int
    s: float
    t: float
    tau: float
    z: np.ndarray
    lam: float = 0.0
    I1: float = 0.0
    I2: float = 0.0
    rejected_count: int = 0
    I1_err: float = 0.0
    I2_err: float = 0.0
    newton_iters: int = 0
    fallback_used: bool = False
    kkt_max: float = 0.0
    doubled: bool = False
    clipped: bool = False

    @property
    def slack(self) -> float:
        """Admissible negative excursion of ``I2`` caused by quadrature."""
        return 10.0 * self.I2_err


class Trajectory:
    """Accepted iterates and the interpolants they induce.

    ``records[0]`` is the initial state ``(s, t) = (0, 0)`` with ``tau = 0``.
    """

    def __init__(self, records, tol=None, T=None, model_name="custom"):
        if not records:
            raise ContractViolation("a trajectory needs at least the initial record")
        self.records = tuple(records)
        self.tol = tol
        self.T = T
        self.model_name = model_name

    def __len__(self):
        return len(self.records)

    @cached_property
    def s(self) -> np.ndarray:
        return np.array([r.s for r in self.records])

    @cached_property
    def t(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    @cached_property
    def tau(self) -> np.ndarray:
        return np.array([r.tau for r in self.records[1:]])

    @cached_property
    def z(self) -> np.ndarray:
        return np.stack([np.asarray(r.z, dtype=np.float64) for r in self.records])

    @property
    def n_steps(self) -> int:
        return len(self.records) - 1

    @property
    def dim(self) -> int:
        return self.z.shape[1]

    @property
    def gridpoints(self) -> np.ndarray:
        return self.s

    @property
    def reached_T(self) -> bool:
        return self.T is not None and self.t[-1] >= self.T

    @property
    def S(self) -> float:
        """First parameter at which ``t^`` reaches ``T`` (``s_last`` if it never does)."""
        if self.T is None:
            return float(self.s[-1])
        idx = np.flatnonzero(self.t >= self.T)
        if idx.size == 0:
            return float(self.s[-1])
        k = int(idx[0])
        if k == 0:
            return 0.0
        t0, t1 = self.t[k - 1], self.t[k]
        return float(self.s[k - 1] + (self.T - t0) / (t1 - t0) * self.tau[k - 1])

    @property
    def N_tol(self) -> int:
        """Number of accepted steps until ``t >= T``."""
        idx = np.flatnonzero(self.t >= self.T) if self.T is not None else []
        return int(idx[0]) if len(idx) else self.n_steps

    def interval_index(self, s) -> int:
        """1-based index ``k`` of the interval ``[s_{k-1}, s_k)`` containing ``s``."""
        s_arr = self.s
        if self.n_steps == 0:
            raise ContractViolation("trajectory has no intervals")
        if not (s_arr[0] <= s <= s_arr[-1]):
            raise ContractViolation(f"s={s} outside [{s_arr[0]}, {s_arr[-1]}]")
        k = int(np.searchsorted(s_arr, s, side="right"))
        return min(max(k, 1), self.n_steps)

    def slopes(self):
        """Per-interval ``t^'`` and ``z^'``."""
        dt = np.diff(self.t)
        dz = np.diff(self.z, axis=0)
        return dt / self.tau, dz / self.tau[:, None]

    def residuum_totals(self):
        I1 = np.array([r.I1 for r in self.records[1:]])
        I2 = np.array([r.I2 for r in self.records[1:]])
        both = I1 + I2
        return {
            "max_residuum": float(both.max()) if both.size else 0.0,
            "sum_residuum": float(both.sum()),
        }


def eval_affine(traj: Trajectory, s: float):
    k = traj.interval_index(s)
    theta = (s - traj.s[k - 1]) / traj.tau[k - 1]
    if s == traj.s[k]:
        return float(traj.t[k]), traj.z[k].copy()
    t = traj.t[k - 1] + theta * (traj.t[k] - traj.t[k - 1])
    z = traj.z[k - 1] + theta * (traj.z[k] - traj.z[k - 1])
    return float(t), z


def eval_constant(traj: Trajectory, s: float):
    """``(t_(s), z_(s)) = (t_{k-1}, z_k)`` on ``[s_{k-1}, s_k)``; the last interval is closed."""
    k = traj.interval_index(s)
    return float(traj.t[k - 1]), traj.z[k].copy()


# ---------------------------------------------------------------------------
# quadrature of the residua
# ---------------------------------------------------------------------------

def simpson_weights(nq: int) -> np.ndarray:
    """Composite Simpson weights on ``[0, 1]`` with ``nq`` (even) subintervals."""
    if nq < 2 or nq % 2:
        raise ContractViolation(f"nq must be an even integer >= 2, got {nq}")
    w = np.ones(nq + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * nq)


def _coarse_weights(nq: int) -> np.ndarray:
    """Weights of a lower-order rule on the same nodes, for the error estimate."""
    w = np.zeros(nq + 1)
    if nq % 4 == 0:
        w[::2] = simpson_weights(nq // 2)
        return w
    w[:] = 1.0 / nq
    w[0] = w[-1] = 0.5 / nq
    return w


@dataclass(frozen=True)
class IntervalIntegrals:
    """Integrals over one interval ``[s_{k-1}, s_k]`` of the affine interpolants."""

    I1: float
    I2: float
    r: float              # int <D_zI(hat) - D_zI(bar), z'>
    dt_work: float        # int d_tI(hat) t'
    diss: float           # int R(z') = R(z_k - z_{k-1})
    dist_hat: float       # int ||z'|| dist(hat)
    dist_bar: float       # int ||z'|| dist(bar)
    I1_err: float
    I2_err: float
    comp_sup: float       # max over nodes of t' dist(hat)
    err_total: float      # summed kink-safe error bounds of every integral above

    def __iter__(self):  # allows ``I1, I2 = residua(...)``-style unpacking
        return iter((self.I1, self.I2))


def _rule(w, wc, vals, tau):
    """Integral, Richardson error estimate and a kink-safe error bound.

    The Richardson factor 15 presumes a smooth integrand; across a kink the
    error only decays like h^2 and the raw difference of the two rules is the
    safe bound.
    """
    est = tau * float(w @ vals)
    diff = abs(est - tau * float(wc @ vals))
    scale = 15.0 if (len(w) - 1) % 4 == 0 else 1.0
    roundoff = 64.0 * _EPS * tau * float(w @ np.abs(vals))
    return est, diff / scale + roundoff, diff + roundoff


def interval_integrals(mdl: EnergyModel, t0, z0, t1, z1, tau, nq: int = 8, nested_slack: bool = False) -> IntervalIntegrals:
    """Residua and energy-balance pieces of one interval by composite Simpson.

    With ``nested_slack`` the reported ``err_total`` is the smallest estimate
    among the rules ``nq, nq/2, ...`` that live on the same nodes, so
    doubling ``nq`` never increases it.
    """
    m = mdl.metric
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    w = simpson_weights(nq)
    wc = _coarse_weights(nq)
    theta = np.linspace(0.0, 1.0, nq + 1)
    dz = z1 - z0
    t_slope = (t1 - t0) / tau
    z_slope = dz / tau
    nz = float(norm_V(z_slope, m))

    th = t0 + theta * (t1 - t0)
    zh = z0[None, :] + theta[:, None] * dz[None, :]
    g_hat = mdl.grad(th, zh)
    dist_hat = dist_subdiff(-g_hat, m)
    g_bar = mdl.grad(t0, z1)
    dist_bar = float(dist_subdiff(-g_bar, m))

    i1_vals = t_slope * dist_hat
    r_vals = (g_hat - g_bar[None, :]) @ z_slope
    i2_vals = r_vals + nz * (dist_hat - dist_bar)
    dti_vals = mdl.dt_energy(th, zh) * t_slope
    dh_vals = nz * dist_hat

    I1, e1, b1 = _rule(w, wc, i1_vals, tau)
    I2, e2, b2 = _rule(w, wc, i2_vals, tau)
    r_int, _, br = _rule(w, wc, r_vals, tau)
    dt_work, _, bd = _rule(w, wc, dti_vals, tau)
    dist_h, _, bh = _rule(w, wc, dh_vals, tau)
    err_total = b1 + b2 + br + bd + bh
    if nested_slack:
        stride, sub = 2, nq // 2
        while sub >= 2 and sub % 2 == 0:
            ws, wcs = simpson_weights(sub), _coarse_weights(sub)
            err = sum(
                _rule(ws, wcs, np.ascontiguousarray(vals[::stride]), tau)[2]
                for vals in (i1_vals, i2_vals, r_vals, dti_vals, dh_vals)
            )
            err_total = min(err_total, err)
            stride, sub = 2 * stride, sub // 2
    return IntervalIntegrals(
        I1=I1,
        I2=I2,
        r=r_int,
        dt_work=dt_work,
        diss=float(dissipation(dz, m)),
        dist_hat=dist_h,
        dist_bar=tau * nz * dist_bar,
        I1_err=e1,
        I2_err=e2,
        comp_sup=float(np.max(np.abs(i1_vals))),
        err_total=err_total,
    )


def residua(mdl: EnergyModel, prev, new, tau: float, nq: int = 8):
    """``(I1, I2)`` for the step ``prev = (t_{k-1}, z_{k-1}) -> new = (t_k, z_k)``."""
    (t0, z0), (t1, z1) = prev, new
    q = interval_integrals(mdl, t0, z0, t1, z1, tau, nq)
    return q.I1, q.I2


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def _initial_record(mdl: EnergyModel) -> IterateRecord:
    return IterateRecord(k=0, s=0.0, t=0.0, tau=0.0, z=mdl.z0.copy())


def _drive(mdl: EnergyModel, tol: float, tau_init: float, opts: RunOptions, grid=None, level=None):
    """Inner loop shared by the plain and the nested driver.

    ``grid`` holds the sorted gridpoints of all previous levels; a proposed
    step never overshoots the next one of them.
    """
    if not tol > 0.0:
        raise ContractViolation(f"tol must be positive, got {tol}")
    if not tau_init > 0.0:
        raise ContractViolation(f"tau_init must be positive, got {tau_init}")
    tau_cap = opts.tau_cap if opts.tau_cap is not None else mdl.T
    tau_floor = opts.tau_floor_rel * tau_init
    tag = f" (level {level})" if level is not None else ""

    records = [_initial_record(mdl)]
    t, z, s = 0.0, mdl.z0.copy(), 0.0
    sigma = min(tau_init, tau_cap)
    k = 0
    while t < mdl.T:
        if k >= opts.max_steps:
            raise SolverError(f"max_steps={opts.max_steps} exceeded{tag}")
        k += 1
        rejected = 0
        while True:
            tau, s_new, clipped = sigma, s + sigma, False
            if grid is not None and grid.size:
                j = int(np.searchsorted(grid, s, side="right"))
                if j < grid.size:
                    s_bar = grid[j]
                    if s + sigma > s_bar - 1e-12 * max(1.0, s_bar):
                        tau, s_new, clipped = s_bar - s, s_bar, True
            if tau < tau_floor:
                raise StepFloorReached(
                    f"step size {tau:.3e} below floor {tau_floor:.3e} at step {k}, t={t:.6g}{tag}"
                )
            try:
                res = solve_stationary(mdl, t, z, tau, opts.solver)
            except SolverError as exc:
                raise type(exc)(f"step {k}, t={t:.6g}, s={s:.6g}, tau={tau:.3e}{tag}: {exc}") from exc
            z_new = res.z_new
            t_new = t + max(tau - float(norm_V(z_new - z, mdl.metric)), 0.0)
            q = interval_integrals(mdl, t, z, t_new, z_new, tau, opts.nq)
            if q.I1 < tol and q.I2 < tol:
                break
            sigma = 0.5 * tau
            rejected += 1
        strong = q.I1 < 0.5 * tol and q.I2 < 0.5 * tol
        records.append(
            IterateRecord(
                k=k, s=s_new, t=t_new, tau=tau, z=z_new, lam=res.lam, I1=q.I1, I2=q.I2,
                rejected_count=rejected, I1_err=q.I1_err, I2_err=q.I2_err,
                newton_iters=res.newton_iters, fallback_used=res.fallback_used,
                kkt_max=res.kkt_max, doubled=strong, clipped=clipped,
            )
        )
        t, z, s = t_new, z_new, s_new
        if strong:
            sigma = 2.0 * sigma
        sigma = min(sigma, tau_cap)
    return Trajectory(records, tol=tol, T=mdl.T, model_name=mdl.name)


def adaptive_run(mdl: EnergyModel, tol: float, tau_init: float | None = None, opts: RunOptions | None = None) -> Trajectory:
    opts = opts or RunOptions()
    tau_init = 0.1 * mdl.T if tau_init is None else tau_init
    return _drive(mdl, tol, tau_init, opts)


def nested_run(mdl: EnergyModel, tols, tau_init: float | None = None, opts: RunOptions | None = None) -> list:
    """One adaptive run per tolerance, each refining the grids of all earlier ones."""
    tols = [float(x) for x in tols]
    if not tols or any(x <= 0.0 for x in tols):
        raise ContractViolation("tolerances must be positive")
    if any(b >= a for a, b in zip(tols, tols[1:])):
        raise ContractViolation("tolerances must be strictly decreasing")
    opts = opts or RunOptions()
    tau_init = 0.1 * mdl.T if tau_init is None else tau_init
    grid = np.empty(0)
    out = []
    for n, tol in enumerate(tols, start=1):
        traj = _drive(mdl, tol, tau_init, opts, grid=grid if n > 1 else None, level=n)
        out.append(traj)
        grid = np.union1d(grid, traj.s[1:])
    return out


def uniform_run(mdl: EnergyModel, tau: float, opts: RunOptions | None = None, tol: float | None = None) -> Trajectory:
    """Same loop with a fixed step size: no acceptance test, no doubling or halving."""
    if not tau > 0.0:
        raise ContractViolation(f"tau must be positive, got {tau}")
    opts = opts or RunOptions()
    records = [_initial_record(mdl)]
    t, z = 0.0, mdl.z0.copy()
    k = 0
    while t < mdl.T:
        if k >= opts.max_steps:
            raise SolverError(f"max_steps={opts.max_steps} exceeded (uniform tau={tau:g})")
        k += 1
        res = solve_stationary(mdl, t, z, tau, opts.solver)
        t_new = t + max(tau - float(norm_V(res.z_new - z, mdl.metric)), 0.0)
        q = interval_integrals(mdl, t, z, t_new, res.z_new, tau, opts.nq)
        records.append(
            IterateRecord(
                k=k, s=k * tau, t=t_new, tau=tau, z=res.z_new, lam=res.lam, I1=q.I1, I2=q.I2,
                I1_err=q.I1_err, I2_err=q.I2_err, newton_iters=res.newton_iters,
                fallback_used=res.fallback_used, kkt_max=res.kkt_max,
            )
        )
        t, z = t_new, res.z_new
    return Trajectory(records, tol=tol, T=mdl.T, model_name=mdl.name)


def trajectory_from_arrays(s, t, z, T=None, model_name="custom", tol=None, tau=None, **columns) -> Trajectory:
    """Build a trajectory from plain arrays (``columns`` fill record fields per step)."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64).reshape(len(s), -1)
    tau = np.diff(s) if tau is None else np.asarray(tau, dtype=np.float64)
    records = [IterateRecord(k=0, s=float(s[0]), t=float(t[0]), tau=0.0, z=z[0])]
    for k in range(1, len(s)):
        extra = {name: col[k] for name, col in columns.items() if col is not None}
        records.append(IterateRecord(k=k, s=float(s[k]), t=float(t[k]), tau=float(tau[k - 1]), z=z[k], **extra))
    return Trajectory(records, tol=tol, T=T, model_name=model_name)


def nesting_defect(coarse: Trajectory, fine: Trajectory) -> float:
    """Largest distance of a coarse gridpoint (within the fine range) to the fine grid."""
    pts = coarse.s[coarse.s <= fine.s[-1]]
    if pts.size == 0:
        return 0.0
    idx = np.clip(np.searchsorted(fine.s, pts), 0, fine.s.size - 1)
    lo = np.clip(idx - 1, 0, fine.s.size - 1)
    return float(np.max(np.minimum(np.abs(fine.s[idx] - pts), np.abs(fine.s[lo] - pts))))


def step_size_stats(traj: Trajectory) -> dict:
    tau = traj.tau
    return {
        "tau_min": float(tau.min()) if tau.size else math.nan,
        "tau_max": float(tau.max()) if tau.size else math.nan,
        "doublings": int(sum(r.doubled for r in traj.records[1:])),
        "rejections": int(sum(r.rejected_count for r in traj.records[1:])),
    }

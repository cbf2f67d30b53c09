"""Certification of parametrized trajectories.

Checks a piecewise-affine trajectory ``(t^, z^)`` against the conditions of a
V-parametrized balanced-viscosity solution: normalization, monotone time,
complementarity ``t^' dist = 0``, the energy balance, and the end-time
condition.  Integrals are recomputed per interval with composite Simpson on
``nq_fine`` subintervals.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractViolation
from .metric import norm_V
from .model import EXACT_1D_BREAKPOINTS, EnergyModel, exact_solution_1d
from .scheme import Trajectory, interval_integrals, trajectory_from_arrays

STICKING, JUMP, SLIP = "sticking", "jump", "slip"


@dataclass(frozen=True)
class Segment:
    s0: float
    s1: float
    label: str


@dataclass
class VerificationReport:
    complementarity_defect: float
    complementarity_integral: float
    energy_identity_defect: float
    discrete_identity_defect: float
    i2_min: float
    normalization_defect: float
    monotonicity_defect: float
    endtime_defect: float
    quadrature_slack: float
    residuum_budget: dict
    regime_segments: list = field(default_factory=list)
    n_intervals: int = 0
    S: float = math.nan

    def to_dict(self) -> dict:
        out = asdict(self)
        out["regime_segments"] = [
            {"s0": seg.s0, "s1": seg.s1, "label": seg.label} for seg in self.regime_segments
        ]
        return out

    def gate_results(self, gates: "Gates") -> dict:
        slack = self.quadrature_slack
        b1 = self.residuum_budget.get("sum_I1", 0.0)
        b12 = b1 + self.residuum_budget.get("sum_I2", 0.0)
        res = {
            "normalization": self.normalization_defect <= gates.normalization,
            "monotonicity": self.monotonicity_defect <= gates.monotonicity,
            "endtime": self.endtime_defect <= gates.endtime,
            "complementarity": self.complementarity_integral <= b1 + slack + gates.absolute,
            "energy_identity": self.energy_identity_defect <= b12 + slack + gates.absolute,
        }
        if gates.i2_nonnegative:
            res["i2_nonnegative"] = self.i2_min >= -slack - gates.absolute
        if gates.discrete_identity is not None:
            res["discrete_identity"] = self.discrete_identity_defect <= gates.discrete_identity + slack
        return res

    def passes(self, gates: "Gates | None" = None) -> bool:
        return all(self.gate_results(gates or Gates()).values())


@dataclass(frozen=True)
class Gates:
    """Pass/fail thresholds.

    Complementarity and the energy identity are compared against the
    residuum budget recorded in the trajectory (``sum I1``, ``sum I1 + I2``)
    plus the quadrature slack plus ``absolute``; for an exact solution the
    budget is zero.  ``I2 >= 0`` and the discrete identity only hold for
    iterates of the scheme (they use the constant interpolant), so those
    gates are opt-in.
    """

    normalization: float = 1e-10
    monotonicity: float = 0.0
    endtime: float = 1e-10
    absolute: float = 1e-8
    discrete_identity: float | None = None
    i2_nonnegative: bool = False


def classify_regimes(traj: Trajectory, eps: float = 1e-8, metric=None) -> list:
    """Label each interval sticking / jump / slip and merge equal neighbours.

    Thresholds are strict: ``||z^'||_V < eps`` is sticking, otherwise
    ``t^' < eps`` is a jump.  Intervals with ``tau <= 0`` are skipped.
    """
    if not eps > 0.0:
        raise ContractViolation("eps must be positive")
    segments: list[Segment] = []
    ok = traj.tau > 0.0
    if not np.any(ok):
        return segments
    with np.errstate(divide="ignore", invalid="ignore"):
        dt, dz = traj.slopes()
    if metric is None:
        nz = np.linalg.norm(dz, axis=1)
    else:
        nz = norm_V(np.where(ok[:, None], dz, 0.0), metric)
    for k in np.flatnonzero(ok):
        if nz[k] < eps:
            label = STICKING
        elif dt[k] < eps:
            label = JUMP
        else:
            label = SLIP
        s0, s1 = float(traj.s[k]), float(traj.s[k + 1])
        if segments and segments[-1].label == label:
            segments[-1] = Segment(segments[-1].s0, s1, label)
        else:
            segments.append(Segment(s0, s1, label))
    return segments


def check_bv(traj: Trajectory, mdl: EnergyModel, nq_fine: int = 64, eps: float = 1e-8) -> VerificationReport:
    """Evaluate every solution condition on the affine interpolants of ``traj``.

    The energy-identity defect is the largest cumulative residual of the
    energy balance over all gridpoints; the discrete-identity defect does the
    same with the dist term frozen at the constant interpolant and the
    gradient mismatch ``r`` subtracted.  Intervals with ``tau <= 0`` are
    skipped and flagged through the normalization defect.
    """
    if traj.dim != mdl.dim:
        raise ContractViolation(f"trajectory dim {traj.dim} != model dim {mdl.dim}")
    m = mdl.metric
    n = traj.n_steps
    dt = np.diff(traj.t)
    tau = traj.tau
    monotonicity = float(max(0.0, -dt.min())) if n else 0.0

    e0 = float(mdl.energy(traj.t[0], traj.z[0]))
    work = diss = dist_hat = dist_bar = r_sum = 0.0
    energy_def = disc_def = comp_sup = comp_int = slack = 0.0
    i2_min = math.inf
    norm_def = 0.0
    for k in range(1, n + 1):
        h = tau[k - 1]
        if not h > 0.0:
            norm_def = math.inf
            continue
        args = (traj.t[k - 1], traj.z[k - 1], traj.t[k], traj.z[k], h)
        nz = float(norm_V(traj.z[k] - traj.z[k - 1], m)) / h
        norm_def = max(norm_def, abs(dt[k - 1] / h + nz - 1.0))
        q = interval_integrals(mdl, *args, nq_fine, nested_slack=True)
        work += q.dt_work
        diss += q.diss
        dist_hat += q.dist_hat
        dist_bar += q.dist_bar
        r_sum += q.r
        slack += q.err_total
        comp_sup = max(comp_sup, q.comp_sup)
        comp_int += q.I1
        i2_min = min(i2_min, q.I2)
        ek = float(mdl.energy(traj.t[k], traj.z[k])) - e0 - work + diss
        energy_def = max(energy_def, abs(ek + dist_hat))
        disc_def = max(disc_def, abs(ek + dist_bar - r_sum))

    if traj.T is None:
        endtime = 0.0
    elif traj.t[-1] < traj.T:
        endtime = float(traj.T - traj.t[-1])
    else:
        S = traj.S
        k = traj.interval_index(S)
        theta = (S - traj.s[k - 1]) / tau[k - 1]
        t_at_S = traj.t[k - 1] + theta * (traj.t[k] - traj.t[k - 1])
        endtime = abs(float(t_at_S) - traj.T)

    budget = {
        "sum_I1": float(sum(r.I1 for r in traj.records[1:])),
        "sum_I2": float(sum(r.I2 for r in traj.records[1:])),
    }
    return VerificationReport(
        complementarity_defect=comp_sup,
        complementarity_integral=comp_int,
        energy_identity_defect=energy_def,
        discrete_identity_defect=disc_def,
        i2_min=i2_min if n else 0.0,
        normalization_defect=norm_def,
        monotonicity_defect=monotonicity,
        endtime_defect=endtime,
        quadrature_slack=slack,
        residuum_budget=budget,
        regime_segments=classify_regimes(traj, eps, m),
        n_intervals=n,
        S=traj.S,
    )


# ---------------------------------------------------------------------------
# comparison with references
# ---------------------------------------------------------------------------

def sample_affine(traj: Trajectory, s):
    """Vectorised ``(t^(s), z^(s))`` for an array of parameters."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < traj.s[0]) or np.any(s > traj.s[-1]):
        raise ContractViolation("sample points outside the trajectory range")
    k = np.clip(np.searchsorted(traj.s, s, side="right"), 1, traj.n_steps)
    theta = (s - traj.s[k - 1]) / traj.tau[k - 1]
    t = traj.t[k - 1] + theta * (traj.t[k] - traj.t[k - 1])
    z = traj.z[k - 1] + theta[:, None] * (traj.z[k] - traj.z[k - 1])
    exact = s == traj.s[k]
    t[exact] = traj.t[k[exact]]
    z[exact] = traj.z[k[exact]]
    return t, z


def exact_trajectory_1d(spacing: float | None = None) -> Trajectory:
    """The closed-form 1D solution as a piecewise-affine trajectory.

    With ``spacing`` each affine piece is subdivided uniformly; the pieces'
    breakpoints (where the energy has kinks) always remain gridpoints.
    """
    pts = [0.0]
    for a, b in zip(EXACT_1D_BREAKPOINTS, EXACT_1D_BREAKPOINTS[1:]):
        cnt = 1 if spacing is None else max(1, int(math.ceil((b - a) / spacing - 1e-9)))
        inner = np.linspace(a, b, cnt + 1)[1:]
        inner[-1] = b
        pts.extend(inner.tolist())
    s = np.array(pts)
    t, z = exact_solution_1d(s)
    return trajectory_from_arrays(s, t, z[:, None], T=5.0, model_name="one_d")


def _pieces(traj: Trajectory, a, b, kind):
    """Values at both ends of each merged subinterval ``[a_i, b_i]`` (one-sided)."""
    mid = 0.5 * (a + b)
    k = np.clip(np.searchsorted(traj.s, mid, side="right"), 1, traj.n_steps)
    if kind == "constant":
        t = traj.t[k - 1]
        z = traj.z[k]
        return t, t, z, z
    h = traj.tau[k - 1]
    ta = (a - traj.s[k - 1]) / h
    tb = (b - traj.s[k - 1]) / h
    dt = traj.t[k] - traj.t[k - 1]
    dz = traj.z[k] - traj.z[k - 1]
    return (
        traj.t[k - 1] + ta * dt,
        traj.t[k - 1] + tb * dt,
        traj.z[k - 1] + ta[:, None] * dz,
        traj.z[k - 1] + tb[:, None] * dz,
    )


def trajectory_error(traj: Trajectory, ref, norm: str = "Linf", metric=None, kind: str = "affine") -> float:
    """Error of ``traj`` against ``ref`` on the common parameter range.

    ``ref`` is a :class:`Trajectory` (affine interpolant) or a callable
    ``s -> (t, z)``, which is sampled on the trajectory grid refined 16-fold.
    ``kind`` selects the interpolant of ``traj``: ``"affine"`` or
    ``"constant"`` (``(t_{k-1}, z_k)`` on each interval).  On every subinterval
    of the merged grid the difference is affine, so both norms are exact;
    L2 combines the components as ``sqrt(|e_t|^2 + |e_z|^2)``.
    """
    if norm not in ("L2", "Linf"):
        raise ContractViolation(f"norm must be 'L2' or 'Linf', got {norm!r}")
    if kind not in ("affine", "constant"):
        raise ContractViolation(f"kind must be 'affine' or 'constant', got {kind!r}")
    if traj.n_steps == 0:
        raise ContractViolation("trajectory has no intervals")
    if callable(ref) and not isinstance(ref, Trajectory):
        fine = np.unique(np.concatenate([np.linspace(a, b, 17) for a, b in zip(traj.s[:-1], traj.s[1:])]))
        rt, rz = ref(fine)
        ref = trajectory_from_arrays(fine, rt, np.asarray(rz).reshape(len(fine), -1))
    lo = max(traj.s[0], ref.s[0])
    hi = min(traj.s[-1], ref.s[-1])
    if not hi > lo:
        raise ContractViolation("trajectories have no common parameter range")
    grid = np.union1d(traj.s, ref.s)
    grid = grid[(grid >= lo) & (grid <= hi)]
    a, b = grid[:-1], grid[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    t1a, t1b, z1a, z1b = _pieces(traj, a, b, kind)
    t2a, t2b, z2a, z2b = _pieces(ref, a, b, "affine")
    eta, etb = t1a - t2a, t1b - t2b
    eza, ezb = z1a - z2a, z1b - z2b
    v = np.ones(eza.shape[1]) if metric is None else metric.v_weights
    if norm == "Linf":
        nz = np.sqrt(np.maximum(np.sum(v * eza**2, axis=1), np.sum(v * ezb**2, axis=1)))
        return float(max(np.max(np.abs(eta)), np.max(np.abs(etb)), np.max(nz)))
    h = b - a
    it = np.sum(h * (eta**2 + eta * etb + etb**2)) / 3.0
    iz = np.sum(h * np.sum(v * (eza**2 + eza * ezb + ezb**2), axis=1)) / 3.0
    return float(math.sqrt(it + iz))

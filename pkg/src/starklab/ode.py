"""Direct Prufer integration of the continuous eigenvalue problem.

The amplitude/phase system
    d(ln R)/dx = (1/2) V sin 2 theta,      d theta/dx = p - V sin^2 theta,
    V = v/p + q''/(4 p^3) - (5/16)(F + q')^2 / p^5,
is integrated with an embedded Cash-Karp RK45 pair whose step never exceeds a
fixed fraction of the local oscillation period pi/p.  The truncated potential
is sampled from a dense periodic grid (cubic Lagrange); running integrals of
psi^2 = R^2 sin^2(theta)/p and R^2/p ride along as extra quadrature states.
At ~10^7 RHS evaluations per bridge run the stepper is numba-compiled; the
slow-phase phi = theta - xi is recovered at the sample points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ToleranceError
from .phase import OperatorParams, get_xi, momentum
from .potential import PotentialSpec, synthesize_grid

__all__ = [
    "PruferState",
    "TrajectorySample",
    "TrajectoryDense",
    "effective_potential",
    "integrate_prufer",
    "ln_R_window_increment",
    "wronskian",
]


def _numba_decorator(fn):
    try:
        import numba

        return numba.njit(cache=True)(fn)
    except ImportError:  # pragma: no cover - numba is a declared dependency
        return fn


@dataclass(frozen=True)
class PruferState:
    ln_R: float
    theta: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.ln_R) and math.isfinite(self.theta)):
            raise ValueError("non-finite Prufer state")


@dataclass(frozen=True)
class TrajectorySample:
    x: float
    state: PruferState
    psi_sq_integral: float
    p_inv_R_sq_integral: float


@dataclass(frozen=True)
class TrajectoryDense:
    """Per-accepted-step record of a Prufer integration."""

    x: np.ndarray
    ln_R: np.ndarray
    theta: np.ndarray
    psi_sq_integral: np.ndarray
    p_inv_R_sq_integral: np.ndarray


def effective_potential(
    params: OperatorParams,
    spec: PotentialSpec | None,
    x,
    n_modes: int = 512,
    include_geometric: bool = True,
):
    """V(x) of the transformed equation; spec=None drops the v-part entirely."""
    x = np.asarray(x, dtype=float)
    p = momentum(params, x)
    w2 = 1.0 + x * x
    qp = params.kappa * x / w2
    qpp = params.kappa * (1.0 - x * x) / w2**2
    out = np.zeros_like(p)
    if include_geometric:
        out = 0.25 * qpp / p**3 - (5.0 / 16.0) * (params.F + qp) ** 2 / p**5
    if spec is not None and not spec.is_zero:
        from .potential import eval_potential

        out = out + eval_potential(spec, x, n_modes) / p
    return out if out.ndim else float(out)


# Cash-Karp tableau
_CK_A = (
    (0.2,),
    (3.0 / 40.0, 9.0 / 40.0),
    (0.3, -0.9, 1.2),
    (-11.0 / 54.0, 2.5, -70.0 / 27.0, 35.0 / 27.0),
    (1631.0 / 55296.0, 175.0 / 512.0, 575.0 / 13824.0, 44275.0 / 110592.0, 253.0 / 4096.0),
)
_CK_B5 = (37.0 / 378.0, 0.0, 250.0 / 621.0, 125.0 / 594.0, 0.0, 512.0 / 1771.0)
_CK_B4 = (
    2825.0 / 27648.0,
    0.0,
    18575.0 / 48384.0,
    13525.0 / 55296.0,
    277.0 / 14336.0,
    0.25,
)


@_numba_decorator
def _rhs(x, lnR, theta, F, kappa, E, vgrid, use_v, use_geo, out):
    w2 = 1.0 + x * x
    u = F * x + kappa * 0.5 * math.log(w2) + E
    p = math.sqrt(u)
    V = 0.0
    if use_geo:
        qp = kappa * x / w2
        qpp = kappa * (1.0 - x * x) / (w2 * w2)
        V = 0.25 * qpp / (p * u) - 0.3125 * (F + qp) * (F + qp) / (p * u * u)
    if use_v:
        m = vgrid.shape[0]
        tf = (x - math.floor(x)) * m
        i0 = int(tf)
        t = tf - i0
        vm1 = vgrid[(i0 - 1) % m]
        v0 = vgrid[i0 % m]
        v1 = vgrid[(i0 + 1) % m]
        v2 = vgrid[(i0 + 2) % m]
        # cubic Lagrange on the uniform periodic grid
        vv = (
            vm1 * (-t * (t - 1.0) * (t - 2.0) / 6.0)
            + v0 * ((t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0)
            + v1 * (-(t + 1.0) * t * (t - 2.0) / 2.0)
            + v2 * ((t + 1.0) * t * (t - 1.0) / 6.0)
        )
        V += vv / p
    st = math.sin(theta)
    s2t = math.sin(2.0 * theta)
    R2 = math.exp(2.0 * lnR)
    out[0] = 0.5 * V * s2t
    out[1] = p - V * st * st
    out[2] = R2 * st * st / p
    out[3] = R2 / p
    return p


@_numba_decorator
def _integrate(
    x0,
    x1,
    y,
    F,
    kappa,
    E,
    vgrid,
    use_v,
    use_geo,
    rtol,
    atol,
    osc_frac,
    rec_x,
    rec_y,
    record,
):
    """Cash-Karp RK45 from x0 to x1 (either direction); y is updated in place.

    Returns (status, n_rec): status 0 ok, 1 step underflow, 2 record overflow.
    """
    direction = 1.0 if x1 >= x0 else -1.0
    x = x0
    k = np.empty((6, 4))
    ytmp = np.empty(4)
    comp = np.zeros(4)  # Kahan compensation per state component
    p0 = _rhs(x, y[0], y[1], F, kappa, E, vgrid, use_v, use_geo, k[0])
    h = direction * min(osc_frac * math.pi / p0, abs(x1 - x0))
    n_rec = 0
    if record:
        rec_x[0] = x
        for j in range(4):
            rec_y[0, j] = y[j]
        n_rec = 1
    max_iter = 500_000_000
    for _ in range(max_iter):
        if direction * (x - x1) >= 0.0:
            return 0, n_rec
        if direction * (x + h - x1) > 0.0:
            h = x1 - x
        # stages
        _rhs(x, y[0], y[1], F, kappa, E, vgrid, use_v, use_geo, k[0])
        for j in range(4):
            ytmp[j] = y[j] + h * _CK_A[0][0] * k[0][j]
        _rhs(x + 0.2 * h, ytmp[0], ytmp[1], F, kappa, E, vgrid, use_v, use_geo, k[1])
        for j in range(4):
            ytmp[j] = y[j] + h * (_CK_A[1][0] * k[0][j] + _CK_A[1][1] * k[1][j])
        _rhs(x + 0.3 * h, ytmp[0], ytmp[1], F, kappa, E, vgrid, use_v, use_geo, k[2])
        for j in range(4):
            ytmp[j] = y[j] + h * (
                _CK_A[2][0] * k[0][j] + _CK_A[2][1] * k[1][j] + _CK_A[2][2] * k[2][j]
            )
        _rhs(x + 0.6 * h, ytmp[0], ytmp[1], F, kappa, E, vgrid, use_v, use_geo, k[3])
        for j in range(4):
            ytmp[j] = y[j] + h * (
                _CK_A[3][0] * k[0][j]
                + _CK_A[3][1] * k[1][j]
                + _CK_A[3][2] * k[2][j]
                + _CK_A[3][3] * k[3][j]
            )
        _rhs(x + h, ytmp[0], ytmp[1], F, kappa, E, vgrid, use_v, use_geo, k[4])
        for j in range(4):
            ytmp[j] = y[j] + h * (
                _CK_A[4][0] * k[0][j]
                + _CK_A[4][1] * k[1][j]
                + _CK_A[4][2] * k[2][j]
                + _CK_A[4][3] * k[3][j]
                + _CK_A[4][4] * k[4][j]
            )
        _rhs(x + 0.875 * h, ytmp[0], ytmp[1], F, kappa, E, vgrid, use_v, use_geo, k[5])

        err = 0.0
        for j in range(4):
            inc5 = 0.0
            inc4 = 0.0
            for s in range(6):
                inc5 += _CK_B5[s] * k[s][j]
                inc4 += _CK_B4[s] * k[s][j]
            ytmp[j] = inc5  # reuse as the 5th-order increment
            scale = atol + rtol * max(abs(y[j]), abs(y[j] + h * inc5))
            e = h * (inc5 - inc4) / scale
            err += e * e
        err = math.sqrt(err / 4.0)

        pcur = _rhs(x, y[0], y[1], F, kappa, E, vgrid, use_v, use_geo, k[0])
        hcap = osc_frac * math.pi / pcur
        if err <= 1.0:
            for j in range(4):
                # compensated accumulation of y += h * inc5
                t = h * ytmp[j] - comp[j]
                snew = y[j] + t
                comp[j] = (snew - y[j]) - t
                y[j] = snew
            x += h
            if record:
                if n_rec >= rec_x.shape[0]:
                    return 2, n_rec
                rec_x[n_rec] = x
                for j in range(4):
                    rec_y[n_rec, j] = y[j]
                n_rec += 1
        fac = 0.9 * err ** (-0.2) if err > 1e-10 else 5.0
        if fac > 5.0:
            fac = 5.0
        if fac < 0.2:
            fac = 0.2
        hnew = abs(h) * fac
        if hnew > hcap:
            hnew = hcap
        if hnew < 1e-14 * (abs(x) + 1.0):
            return 1, n_rec
        h = direction * hnew
    return 1, n_rec


def integrate_prufer(
    params: OperatorParams,
    spec: PotentialSpec | None,
    x0: float,
    x1: float,
    init: PruferState,
    tol: float = 1e-10,
    targets=None,
    dense: bool = False,
    n_modes: int = 512,
    include_geometric: bool = True,
    osc_frac: float = 0.125,
    max_record: int = 4_000_000,
):
    """Integrate the Prufer system from x0 to x1 with samples at targets.

    Returns (samples, dense_traj): samples are TrajectorySample at x0, the
    sorted targets, and x1; dense_traj is a TrajectoryDense of every accepted
    step when dense=True, else None.  Running integrals start at 0 at x0.
    """
    lo, hi = (x0, x1) if x1 >= x0 else (x1, x0)
    if lo < params.x_min:
        raise DomainError("integration range extends left of the turning region")
    pts = [float(x0)]
    if targets is not None:
        inside = [float(t) for t in targets if min(x0, x1) <= t <= max(x0, x1)]
        pts.extend(sorted(set(inside), reverse=x1 < x0))
    if not pts or pts[-1] != float(x1):
        pts.append(float(x1))

    use_v = spec is not None and not spec.is_zero
    vgrid = (
        synthesize_grid(spec, n_modes, 8 * n_modes) if use_v else np.zeros(8)
    )
    y = np.array([init.ln_R, init.theta, 0.0, 0.0])
    rec_x = np.empty(max_record if dense else 1)
    rec_y = np.empty((max_record if dense else 1, 4))

    xi = get_xi(params)
    samples = [
        TrajectorySample(
            pts[0], PruferState(y[0], y[1], y[1] - float(xi(pts[0]))), 0.0, 0.0
        )
    ]
    dense_chunks = []
    for a, b in zip(pts[:-1], pts[1:]):
        status, n_rec = _integrate(
            a, b, y, params.F, params.kappa, params.E, vgrid,
            use_v, include_geometric, tol, tol, osc_frac,
            rec_x, rec_y, dense,
        )
        if status == 1:
            raise ToleranceError(f"step-size underflow near x = {b}")
        if status == 2:
            raise ToleranceError("dense record buffer exhausted; raise max_record")
        if dense:
            dense_chunks.append((rec_x[:n_rec].copy(), rec_y[:n_rec].copy()))
        samples.append(
            TrajectorySample(
                b, PruferState(y[0], y[1], y[1] - float(xi(b))), y[2], y[3]
            )
        )
    dense_traj = None
    if dense:
        xs = np.concatenate([c[0] for c in dense_chunks])
        ys = np.vstack([c[1] for c in dense_chunks])
        dense_traj = TrajectoryDense(xs, ys[:, 0], ys[:, 1], ys[:, 2], ys[:, 3])
    return samples, dense_traj


def ln_R_window_increment(trajectory: TrajectoryDense, x_l: float, x_l1: float) -> float:
    """sup over recorded x in [x_l, x_{l+1}] of |ln R(x) - ln R(x_l)|."""
    m = (trajectory.x >= x_l) & (trajectory.x <= x_l1)
    if not m.any():
        raise ValueError("trajectory does not cover the requested window")
    lnr = trajectory.ln_R[m]
    return float(np.max(np.abs(lnr - lnr[0])))


def wronskian(s1: TrajectorySample, s2: TrajectorySample) -> float:
    """R1 R2 sin(theta1 - theta2): conserved for any two solutions."""
    return float(
        math.exp(s1.state.ln_R + s2.state.ln_R)
        * math.sin(s1.state.theta - s2.state.theta)
    )

"""Operator constants, Liouville phase, resonance grids, adiabatic data.

All derived constants of the reduction chain live on OperatorParams:
    F = pi^2 q / (3 p),          kappa' = 2 kappa / F,
    E' = (E - 2 kappa + kappa ln(pi^2/F)) / F,
    Lambda = e^{1/(q kappa')},   A = (1/q) e^{-(E'+kappa')/kappa'},
    mu = pi q kappa',            s0 = pi q (E' + kappa'),
    rho = -pi kappa' e^{-(E'+kappa')/kappa'}   (the spectral parameter).

The Liouville phase xi solves xi' = p = sqrt(F x + kappa ln<x> + E), anchored so
that xi - [(2/(3F)) u^{3/2} - (2 kappa/F) u^{1/2}] -> 0 as x -> +infinity; the
remainder is precomputed on a log grid and splined, keeping xi' = p to
quadrature accuracy at vector speed.

Phases rho * Lambda^m mod 2 pi are chaotic in double precision beyond m ~ 30;
geometric_phase_table produces them exactly via fixed-precision big floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import gmpy2
import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import DegenerateError, DomainError, NoRootError
from .potential import GaussSumParams, PotentialSpec, fourier_coeff, gauss_sum_w, gauss_sum_w1

__all__ = [
    "OperatorParams",
    "GridIndex",
    "momentum",
    "momentum_derivatives",
    "phase_xi",
    "get_xi",
    "solve_grid",
    "build_grids",
    "Omega",
    "s_of_k",
    "step_amplitudes",
    "b0_const",
    "turning_data",
    "geometric_phase_table",
]

# smallest admissible momentum: keeps every grid/quadrature safely right of the
# classical turning point
_P_MIN = 1.0


@dataclass(frozen=True)
class OperatorParams:
    """Physical parameters (p, q, kappa, E) plus derived constants.

    (p_int, q_int) is reduced at construction; F depends only on the fraction.
    """

    p_int: int
    q_int: int
    kappa: float
    E: float

    def __post_init__(self):
        g = GaussSumParams(self.p_int, self.q_int)  # validates and reduces
        object.__setattr__(self, "p_int", g.p)
        object.__setattr__(self, "q_int", g.q)
        if self.kappa < 0:
            # the m -> +infinity analysis assumes kappa > 0; kappa = 0 is the
            # stability check regime
            raise ValueError("kappa must be >= 0 (kappa > 0 for the singular regime)")

    @classmethod
    def from_rho(cls, p_int: int, q_int: int, kappa: float, rho: float) -> "OperatorParams":
        """Back-solve E from the closed form of rho (requires kappa > 0, rho < 0)."""
        if kappa <= 0 or rho >= 0:
            raise ValueError("from_rho needs kappa > 0 and rho < 0")
        F = math.pi**2 * q_int / (3 * p_int)
        kp = 2 * kappa / F
        E_prime = -kp * (1.0 + math.log(-rho / (math.pi * kp)))
        E = E_prime * F + 2 * kappa - kappa * math.log(math.pi**2 / F)
        return cls(p_int, q_int, kappa, E)

    @cached_property
    def gauss(self) -> GaussSumParams:
        return GaussSumParams(self.p_int, self.q_int)

    @cached_property
    def F(self) -> float:
        return math.pi**2 * self.q_int / (3 * self.p_int)

    @cached_property
    def kappa_prime(self) -> float:
        return 2 * self.kappa / self.F

    @cached_property
    def E_prime(self) -> float:
        return (self.E - 2 * self.kappa + self.kappa * math.log(math.pi**2 / self.F)) / self.F

    @cached_property
    def log_Lambda(self) -> float:
        if self.kappa_prime == 0.0:
            raise DegenerateError("Lambda is defined only for kappa > 0")
        return 1.0 / (self.q_int * self.kappa_prime)

    @cached_property
    def Lambda(self) -> float:
        return math.exp(self.log_Lambda)

    @cached_property
    def A(self) -> float:
        kp = self.kappa_prime
        if kp == 0.0:
            raise DegenerateError("A is defined only for kappa > 0")
        return math.exp(-(self.E_prime + kp) / kp) / self.q_int

    @cached_property
    def mu(self) -> float:
        return math.pi * self.q_int * self.kappa_prime

    @cached_property
    def s0(self) -> float:
        return math.pi * self.q_int * (self.E_prime + self.kappa_prime)

    @cached_property
    def rho(self) -> float:
        kp = self.kappa_prime
        if kp == 0.0:
            raise DegenerateError("rho is defined only for kappa > 0")
        return -math.pi * kp * math.exp(-(self.E_prime + kp) / kp)

    @cached_property
    def x_min(self) -> float:
        """Leftmost admissible point: u(x_min) = _P_MIN^2."""
        return _solve_u(self, _P_MIN**2, include_E=True)

    # --- potential well geometry -------------------------------------------

    def u(self, x):
        x = np.asarray(x, dtype=float)
        return self.F * x + self.kappa * np.log(np.hypot(1.0, x)) + self.E

    def u_prime(self, x):
        x = np.asarray(x, dtype=float)
        return self.F + self.kappa * x / (1.0 + x * x)


def momentum(params: OperatorParams, x):
    """p(x, E) = sqrt(F x + kappa ln<x> + E); DomainError left of the turning point."""
    u = params.u(x)
    if np.any(u <= 0.0):
        raise DomainError("momentum radicand <= 0: point left of the turning point")
    out = np.sqrt(u)
    return out if out.ndim else float(out)


def momentum_derivatives(params: OperatorParams, x):
    """(p, p', p'', p''') for the in-cell phase Taylor expansions."""
    x = np.asarray(x, dtype=float)
    w2 = 1.0 + x * x
    u = params.u(x)
    if np.any(u <= 0.0):
        raise DomainError("momentum radicand <= 0")
    k = params.kappa
    u1 = params.F + k * x / w2
    u2 = k * (1.0 - x * x) / w2**2
    u3 = k * (2.0 * x**3 - 6.0 * x) / w2**3
    p = np.sqrt(u)
    p1 = u1 / (2 * p)
    p2 = u2 / (2 * p) - u1**2 / (4 * p**3)
    p3 = u3 / (2 * p) - 3 * u1 * u2 / (4 * p**3) + 3 * u1**3 / (8 * p**5)
    return p, p1, p2, p3


def _solve_u(params: OperatorParams, target: float, include_E: bool = True) -> float:
    """Root of F x + kappa ln<x> (+E) = target; monotone for x > 0."""
    E = params.E if include_E else 0.0

    def f(x):
        return params.F * x + params.kappa * math.log(math.hypot(1.0, x)) + E - target

    x0 = (target - E) / params.F
    # Newton with the analytic derivative, bracketing fallback
    x = max(x0, 1e-3)
    for _ in range(60):
        fx = f(x)
        dfx = params.F + params.kappa * x / (1.0 + x * x)
        step = fx / dfx
        x_new = x - step
        if x_new <= 0:
            x_new = x / 2.0
        if abs(x_new - x) <= 1e-14 * max(1.0, abs(x_new)):
            return x_new
        x = x_new
    lo, hi = x0 / 4 if x0 > 0 else 1e-6, abs(x0) * 4 + 10.0
    for _ in range(80):
        if f(lo) < 0 < f(hi):
            return brentq(f, lo, hi, xtol=1e-13, rtol=4e-16)
        lo /= 2
        hi *= 2
    raise NoRootError(f"no root for u(x) = {target}")


# --- Liouville phase ---------------------------------------------------------


class XiCalculator:
    """xi(x) = closed-form leading part + splined remainder, xi' = p exactly.

    leading g(x) = (2/(3F)) u^{3/2} - (2 kappa/F) u^{1/2}; the remainder
    r(x) = -int_x^inf (p - g') dy decays like x^{-1/2} ln x and is anchored so
    xi - g -> 0 at infinity.
    """

    def __init__(self, params: OperatorParams, x_max: float = 4.0e6, n_anchor: int = 480):
        self.params = params
        self.x_lo = params.x_min * (1.0 + 1e-12) + 1e-9
        self.x_hi = x_max

        if params.kappa == 0.0:
            self._spline = None
            return

        xs = np.exp(np.linspace(math.log(self.x_lo), math.log(self.x_hi), n_anchor))
        h = self._integrand
        pieces = np.array(
            [quad(h, xs[i], xs[i + 1], limit=200, epsabs=1e-14, epsrel=1e-12)[0]
             for i in range(len(xs) - 1)]
        )
        # tail via y = x_hi / t^2: integrand ~ y^{-3/2} ln y becomes bounded
        # (mild ln t endpoint behaviour: take quad's best value, no warning)
        x_hi = float(xs[-1])
        tail = quad(
            lambda t: h(x_hi / t**2) * 2.0 * x_hi / t**3,
            0.0, 1.0, limit=200, epsabs=1e-13, epsrel=1e-11, full_output=1,
        )[0]
        # r(x_i) = -(tail + sum of pieces to the right of x_i)
        suffix = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
        r = -(tail + suffix)
        self._spline = CubicSpline(np.log(xs), r)

    def _integrand(self, y):
        # p - g' = (kappa/F) [ (F + kappa y/<y>^2)/p - y p/<y>^2 ]
        pr = self.params
        w2 = 1.0 + y * y
        p = math.sqrt(pr.F * y + pr.kappa * math.log(math.sqrt(w2)) + pr.E)
        return (pr.kappa / pr.F) * ((pr.F + pr.kappa * y / w2) / p - y * p / w2)

    def leading(self, x):
        u = self.params.u(x)
        if np.any(u <= 0):
            raise DomainError("xi evaluated left of the turning point")
        su = np.sqrt(u)
        return (2.0 / (3.0 * self.params.F)) * u * su - (
            2.0 * self.params.kappa / self.params.F
        ) * su

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.leading(x)
        if self._spline is not None:
            if np.any(x > self.x_hi * (1 + 1e-9)):
                raise DomainError("xi remainder spline range exceeded; enlarge x_max")
            out = out + self._spline(np.log(np.maximum(x, self.x_lo)))
        return out if out.ndim else float(out)

    def inverse(self, xi_target):
        """x with xi(x) = xi_target, by Newton (xi is strictly increasing)."""
        t = np.asarray(xi_target, dtype=float)
        pr = self.params
        u_guess = (1.5 * pr.F * np.maximum(t, 1e-8)) ** (2.0 / 3.0)
        x = np.maximum((u_guess - pr.E) / pr.F, self.x_lo)
        for _ in range(3):
            x = np.maximum((u_guess - pr.E - pr.kappa * np.log(np.hypot(1, x))) / pr.F, self.x_lo)
        for _ in range(40):
            delta = (self(x) - t) / momentum(pr, x)
            x = np.maximum(x - delta, self.x_lo)
            if np.max(np.abs(delta)) < 1e-13 * max(1.0, float(np.max(np.abs(x)))):
                break
        return x if x.ndim else float(x)


@lru_cache(maxsize=16)
def get_xi(params: OperatorParams) -> XiCalculator:
    return XiCalculator(params)


def phase_xi(params: OperatorParams, x):
    """Liouville phase xi(x) (see XiCalculator for the anchoring convention)."""
    return get_xi(params)(x)


# --- resonance / adiabatic grids --------------------------------------------


def solve_grid(params: OperatorParams, kind: str, index: int, eta: float = 0.42):
    """One grid value; kinds: x_l_tilde, x_l, X_l, x_l_star, k_m_tilde, k_m,
    K_m, K_m_hat, K_m_minus, K_m_plus."""
    l = index
    if kind in ("x_l_tilde", "x_l"):
        target = math.pi**2 * (l - 0.5) ** 2
        if target <= params.u(params.x_min):
            raise NoRootError(f"index {l} too small for x_l grid")
        xt = _solve_u(params, target, include_E=True)
        return xt if kind == "x_l_tilde" else math.floor(xt) - 0.5
    if kind == "X_l":
        target = math.pi**2 * l**2
        if target <= params.u(params.x_min):
            raise NoRootError(f"index {l} too small for X_l grid")
        return _solve_u(params, target, include_E=True)
    if kind == "x_l_star":
        target = math.pi**2 * (l - 0.5) ** 2
        xt = _solve_u(params, target, include_E=False)
        return xt
    # k-side grids need kappa > 0
    if kind in ("k_m_tilde", "k_m"):
        kt = params.A * params.Lambda ** (l - 0.5)
        if kt < 1:
            raise NoRootError(f"index {l} too small for k_m grid")
        return kt if kind == "k_m_tilde" else math.floor(kt)
    if kind == "K_m":
        return params.A * params.Lambda**l
    if kind == "K_m_hat":
        return math.floor(params.A * params.Lambda**l)
    if kind in ("K_m_minus", "K_m_plus"):
        if not (0.375 < eta < 0.5):
            raise ValueError("eta must lie in (3/8, 1/2)")
        K = params.A * params.Lambda**l
        off = K ** (1.0 - eta)
        return math.floor(K - off) if kind == "K_m_minus" else math.floor(K + off)
    raise ValueError(f"unknown grid kind {kind!r}")


@dataclass(frozen=True)
class GridIndex:
    """Cached grid arrays for l in [l_min, l_max] and m in [m_min, m_max]."""

    params: OperatorParams
    l_min: int
    l_max: int
    m_min: int
    m_max: int
    eta: float
    x_l: np.ndarray
    X_l: np.ndarray
    x_l_star: np.ndarray
    k_m: np.ndarray
    K_m: np.ndarray
    K_m_hat: np.ndarray
    K_m_minus: np.ndarray
    K_m_plus: np.ndarray

    def xl(self, l: int) -> float:
        return float(self.x_l[l - self.l_min])

    def km(self, m: int) -> int:
        return int(self.k_m[m - self.m_min])


def build_grids(
    params: OperatorParams,
    l_min: int,
    l_max: int,
    m_min: int = 0,
    m_max: int = -1,
    eta: float = 0.42,
) -> GridIndex:
    if not (0.375 < eta < 0.5):
        raise ValueError("eta must lie in (3/8, 1/2)")
    ls = range(l_min, l_max + 1)
    x_l = np.array([solve_grid(params, "x_l", l) for l in ls])
    X_l = np.array([solve_grid(params, "X_l", l) for l in ls])
    x_l_star = np.array([solve_grid(params, "x_l_star", l) for l in ls])
    if m_max >= m_min and params.kappa > 0:
        ms = np.arange(m_min, m_max + 1)
        K = params.A * params.Lambda ** ms.astype(float)
        off = K ** (1.0 - eta)
        k_m = np.floor(params.A * params.Lambda ** (ms - 0.5))
        grids_m = (k_m, K, np.floor(K), np.floor(K - off), np.floor(K + off))
    else:
        m_min, m_max = 0, -1
        grids_m = (np.array([]),) * 5
    return GridIndex(params, l_min, l_max, m_min, m_max, eta, x_l, X_l, x_l_star, *grids_m)


# --- slow phase data ----------------------------------------------------------


def Omega(params: OperatorParams, k):
    """Omega(k) = pi k q (E' + kappa' ln(k q))."""
    k = np.asarray(k, dtype=float)
    q = params.q_int
    out = math.pi * k * q * (params.E_prime + params.kappa_prime * np.log(k * q))
    return out if out.ndim else float(out)


def s_of_k(params: OperatorParams, k):
    """s(k) = dOmega/dk = pi q (E' + kappa' + kappa' ln(k q))."""
    k = np.asarray(k, dtype=float)
    q = params.q_int
    out = math.pi * q * (
        params.E_prime + params.kappa_prime + params.kappa_prime * np.log(k * q)
    )
    return out if out.ndim else float(out)


def step_amplitudes(params: OperatorParams, spec: PotentialSpec, k):
    """(b(k), b1(k)): resonant amplitude and the w1 phase-drift coefficient."""
    karr = np.asarray(k)
    scalar = karr.ndim == 0
    karr = np.atleast_1d(karr).astype(int)
    if np.any(karr < 1):
        raise ValueError("k must be >= 1")
    from .potential import fourier_coeff_array

    vq = fourier_coeff_array(spec, karr * params.q_int)
    s = s_of_k(params, karr.astype(float))
    w = gauss_sum_w(params.gauss, s)
    b = vq * w / np.sqrt(2.0 * params.F * params.q_int * karr)
    if params.q_int == 1:
        b1 = np.zeros(karr.shape)
    else:
        w1 = gauss_sum_w1(params.gauss, s)
        b1 = np.abs(vq) ** 2 * np.imag(w1) / (2.0 * params.F * params.q_int * karr)
    if scalar:
        return complex(b[0]), float(b1[0])
    return b, b1


def b0_const(params: OperatorParams, spec: PotentialSpec) -> float:
    """b0 = v0 mu^{beta - 1/2} / sqrt(2 F q)."""
    return spec.v0 * params.mu ** (-0.5 + spec.beta) / math.sqrt(2.0 * params.F * params.q_int)


def turning_data(params: OperatorParams, spec: PotentialSpec, m: int):
    """(d_m, lambda_m, Phi0(m)) at the m-th turning index.

    Phi0 is computed as rho * Lambda^m; the Omega(K_m) - pi m K_m route is an
    independent cross-check exercised in the tests (they agree to ~1e-12 rel).
    """
    s0 = params.s0
    if math.pi * m <= s0:
        raise DegenerateError(f"pi*m <= s0 at m={m}; no turning point")
    b0 = b0_const(params, spec)
    w = gauss_sum_w(params.gauss, math.pi * m)
    d_m = b0 * w * (math.pi * m - s0) ** (-spec.beta)
    lambda_m = -0.5j * abs(d_m) ** 2
    log_phi = math.log(abs(params.rho)) + m * params.log_Lambda
    Phi0 = -math.exp(log_phi) if log_phi < 700 else -math.inf
    return d_m, lambda_m, Phi0


# --- exact geometric phases ---------------------------------------------------


def geometric_phase_table(rho: float, log_lambda: float, m0: int, m1: int) -> np.ndarray:
    """rho * Lambda^m mod 2 pi for m = m0..m1, exact via big floats.

    Fixed mantissa covering the full final magnitude: relative errors are
    preserved under multiplication, so no staged reduction is possible; cost is
    one big multiply + one frac per step.
    """
    if m1 < m0:
        return np.empty(0)
    bits = int(m1 * log_lambda / math.log(2.0)) + 128
    ctx = gmpy2.context(precision=max(bits, 128))
    with gmpy2.local_context(ctx):
        lam = gmpy2.exp(gmpy2.mpfr(log_lambda))
        twopi = 2 * gmpy2.const_pi()
        u = gmpy2.mpfr(rho) / twopi * lam**m0
        out = np.empty(m1 - m0 + 1)
        for i in range(m1 - m0 + 1):
            out[i] = float(u - gmpy2.floor(u))
            u = u * lam
    return 2.0 * math.pi * out

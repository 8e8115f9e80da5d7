"""Fourier model of the periodic potential and its resonance exponential sums.

The potential is defined through its Fourier coefficients
    v(x) = sum_n vhat(n) e^{-2 pi i n x},   vhat(-n) = conj(vhat(n)),
with vhat(0) = 0 and vhat(n) = v0 (ln n)^{-beta} for n >= n0.  The coefficients
decay so slowly that v is integrable but unbounded at integer points; everything
downstream therefore works with coefficients (or controlled truncations), never
with naive pointwise synthesis.

The cubic exponential sums w, w1 encode the rational-field resonance structure
pi^2/F = 3p/q and enter the amplitudes of the discrete system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "PotentialSpec",
    "GaussSumParams",
    "fourier_coeff",
    "fourier_coeff_array",
    "finite_differences",
    "eval_potential",
    "synthesize_grid",
    "v_l1_norm",
    "gauss_sum_w",
    "gauss_sum_w1",
    "gauss_sum_w_ds",
]


@dataclass(frozen=True)
class PotentialSpec:
    """Log-decaying Fourier coefficient model of the periodic potential.

    low_modes[j] is vhat(j+1) for 0 < j+1 < n0 (defaults to zero: the model
    constrains only n >= n0, low modes are free knobs).
    """

    v0: float = 1.0
    beta: float = 0.3
    n0: int = 2
    low_modes: tuple = ()

    def __post_init__(self):
        if not (0.0 < self.beta < 0.5):
            raise ValueError(f"beta must lie in (0, 1/2), got {self.beta}")
        if self.n0 < 2:
            raise ValueError(f"n0 must be >= 2, got {self.n0}")
        if len(self.low_modes) > self.n0 - 1:
            raise ValueError("low_modes longer than the free range 0 < n < n0")
        object.__setattr__(self, "low_modes", tuple(complex(c) for c in self.low_modes))

    @property
    def is_zero(self) -> bool:
        return self.v0 == 0.0 and all(c == 0 for c in self.low_modes)


def fourier_coeff(spec: PotentialSpec, n: int) -> complex:
    """vhat(n); hermitian-symmetric, vhat(0) = 0."""
    if n == 0:
        return 0.0 + 0.0j
    m = abs(int(n))
    if m >= spec.n0:
        c = complex(spec.v0 * math.log(m) ** (-spec.beta))
    elif m - 1 < len(spec.low_modes):
        c = spec.low_modes[m - 1]
    else:
        c = 0.0 + 0.0j
    return c if n > 0 else c.conjugate()


def fourier_coeff_array(spec: PotentialSpec, n: np.ndarray) -> np.ndarray:
    """Vectorized vhat over an integer array."""
    n = np.asarray(n)
    m = np.abs(n)
    out = np.zeros(n.shape, dtype=complex)
    hi = m >= spec.n0
    if spec.v0 != 0.0:
        out[hi] = spec.v0 * np.log(m[hi]) ** (-spec.beta)
    for j, c in enumerate(spec.low_modes):
        if c != 0:
            out[m == j + 1] = c
    np.conjugate(out, where=n < 0, out=out)
    return out


def finite_differences(spec: PotentialSpec, n: int, k: int) -> complex:
    """Iterated backward difference vhat^(k)(n) = vhat^(k-1)(n) - vhat^(k-1)(n-1)."""
    if k not in (1, 2, 3):
        raise ValueError(f"k must be 1, 2 or 3, got {k}")
    # binomial expansion of the k-fold difference
    return sum(
        (-1) ** j * math.comb(k, j) * fourier_coeff(spec, n - j) for j in range(k + 1)
    )


def eval_potential(spec: PotentialSpec, x, modes: int, fejer: bool = False):
    """Truncated synthesis sum_{|n|<=modes} vhat(n) e^{-2 pi i n x} (real).

    With fejer=True the partial sum carries Cesaro weights (1 - |n|/(modes+1)),
    which tames the integer-point spikes of the slowly convergent series.
    """
    if modes < spec.n0:
        raise ValueError("modes must be >= n0")
    x = np.asarray(x, dtype=float)
    n = np.arange(1, modes + 1)
    c = fourier_coeff_array(spec, n)
    if fejer:
        c = c * (1.0 - n / (modes + 1.0))
    # real series: vhat(0)=0 and conjugate symmetry fold the sum onto n >= 1
    phases = np.exp(-2j * np.pi * np.outer(x, n))
    out = 2.0 * (phases @ c).real
    return out if out.ndim else float(out)


@lru_cache(maxsize=32)
def _grid_cache(spec: PotentialSpec, modes: int, size: int, fejer: bool):
    n = np.arange(1, modes + 1)
    c = fourier_coeff_array(spec, n)
    if fejer:
        c = c * (1.0 - n / (modes + 1.0))
    a = np.zeros(size, dtype=complex)
    a[n % size] += c
    a[(-n) % size] += np.conjugate(c)
    # samples v(j/size) = sum_n a_n e^{-2 pi i n j / size}
    return np.fft.fft(a).real


def synthesize_grid(
    spec: PotentialSpec, modes: int = 1024, size: int = 16384, fejer: bool = False
) -> np.ndarray:
    """Samples of the truncated potential on the uniform grid j/size, one period.

    size must exceed 2*modes (no aliasing); cached per (spec, modes, size).
    """
    if size <= 2 * modes:
        raise ValueError("grid size must exceed twice the mode count")
    return _grid_cache(spec, int(modes), int(size), bool(fejer))


def v_l1_norm(spec: PotentialSpec, modes: int = 1 << 15) -> tuple:
    """Estimate of ||v||_L1(T) by Fejer synthesis, with a crude error gauge.

    Returns (value, est_error); est_error is the change under doubling the
    truncation, recorded because the series converges only logarithmically.
    """
    vals = []
    for m in (modes // 2, modes):
        g = synthesize_grid(spec, m, 4 * m, fejer=True)
        vals.append(float(np.mean(np.abs(g))))
    return vals[-1], abs(vals[-1] - vals[0])


@dataclass(frozen=True)
class GaussSumParams:
    """Reduced fraction (p, q) with pi^2/F = 3p/q; normalized at construction."""

    p: int
    q: int

    def __post_init__(self):
        p, q = int(self.p), int(self.q)
        if p < 1 or q < 1:
            raise ValueError("p and q must be positive integers")
        g = math.gcd(p, q)
        object.__setattr__(self, "p", p // g)
        object.__setattr__(self, "q", q // g)


def gauss_sum_w(params: GaussSumParams, s):
    """w(s) = e^{i pi/4} sum_{r=0}^{q-1} e^{-2 pi i (p/q) r^3 + 2 i (s/q) r}."""
    scalar = np.ndim(s) == 0
    s = np.atleast_1d(np.asarray(s, dtype=float))
    r = np.arange(params.q)
    cubic = np.exp(-2j * np.pi * params.p / params.q * r**3)
    out = np.exp(1j * np.pi / 4) * (np.exp(2j * np.outer(s, r) / params.q) @ cubic)
    return complex(out[0]) if scalar else out


def gauss_sum_w_ds(params: GaussSumParams, s):
    """d/ds of gauss_sum_w (termwise: extra factor 2 i r / q)."""
    scalar = np.ndim(s) == 0
    s = np.atleast_1d(np.asarray(s, dtype=float))
    r = np.arange(params.q)
    cubic = (2j * r / params.q) * np.exp(-2j * np.pi * params.p / params.q * r**3)
    out = np.exp(1j * np.pi / 4) * (np.exp(2j * np.outer(s, r) / params.q) @ cubic)
    return complex(out[0]) if scalar else out


def gauss_sum_w1(params: GaussSumParams, s):
    """Double cubic sum w1(s); identically 0 for q = 1."""
    scalar = np.ndim(s) == 0
    s = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.zeros(s.shape, dtype=complex)
    q, p = params.q, params.p
    for r in range(1, q):
        r1 = np.arange(r)
        inner = (
            np.exp(2j * np.pi * p / q * r1**3)
            * np.exp(-2j * np.multiply.outer(s, r1) / q)
        ).sum(axis=-1)
        out += np.exp(-2j * np.pi * p / q * r**3) * np.exp(2j * s * r / q) * inner
    return complex(out[0]) if scalar else out

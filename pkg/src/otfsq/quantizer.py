"""B-bit uniform ADC model: the quantizer map, its transitional density,
and the posterior-moment denoiser shared by the generalized detectors.

Real and imaginary parts are quantized independently. For step q and B bits
the output levels are p_1 = (-2^{B-1} + 1/2) q, p_{i+1} = p_i + q, and the
decision thresholds are t_1 = -inf, t_2 = (1 - 2^{B-1}) q, t_{i+1} = t_i + q,
t_{2^B+1} = +inf; level p_i is returned for inputs in (t_i, t_{i+1}].

``bits=None`` is the infinite-precision sentinel: quantization becomes the
identity and the posterior denoiser degenerates to the conjugate-Gaussian
AWGN update, so detectors keep a single code path for the ideal-ADC curves.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import optimize, special

__all__ = [
    "QuantizerSpec",
    "NoiseSpec",
    "quantize",
    "interval_of",
    "output_posterior_moments",
    "awgn_posterior_moments",
    "choose_step",
    "gaussian_optimal_step",
    "GAUSSIAN_STEP_TABLE",
]

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class QuantizerSpec:
    """Bit depth and step size of the uniform quantizer (bits=None: infinite)."""

    bits: int | None
    step: float = 0.0

    def __post_init__(self):
        if self.bits is not None:
            if self.bits < 1:
                raise ValueError("bit depth must be >= 1")
            if self.step <= 0:
                raise ValueError("finite-bit quantizer needs a positive step")

    @classmethod
    def infinite(cls) -> "QuantizerSpec":
        return cls(bits=None)

    @property
    def is_infinite(self) -> bool:
        return self.bits is None

    @cached_property
    def levels(self) -> np.ndarray:
        if self.is_infinite:
            raise ValueError("infinite-precision quantizer has no level table")
        half = 2 ** (self.bits - 1)
        return (np.arange(2**self.bits) - half + 0.5) * self.step

    @cached_property
    def thresholds(self) -> np.ndarray:
        """All 2^B + 1 interval edges, including the infinite outer ones."""
        if self.is_infinite:
            raise ValueError("infinite-precision quantizer has no threshold table")
        half = 2 ** (self.bits - 1)
        inner = (np.arange(1, 2**self.bits) - half) * self.step
        return np.concatenate(([-np.inf], inner, [np.inf]))


@dataclass(frozen=True)
class NoiseSpec:
    """Complex AWGN variance per sample (each real dimension carries sigma2/2)."""

    sigma2: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("noise variance must be nonnegative")


def _quantize_real(v: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    inner = spec.thresholds[1:-1]
    idx = np.searchsorted(inner, v, side="left")
    return spec.levels[idx]


def quantize(z: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    """Quantize real and imaginary parts independently (identity if infinite)."""
    z = np.asarray(z)
    if spec.is_infinite:
        return np.array(z, dtype=np.complex128, copy=True)
    return _quantize_real(z.real, spec) + 1j * _quantize_real(z.imag, spec)


def interval_of(level: float, spec: QuantizerSpec) -> tuple[float, float]:
    """The half-open interval (lo, hi] that produced an observed output level."""
    diffs = np.abs(spec.levels - level)
    i = int(np.argmin(diffs))
    if diffs[i] > 1e-9:
        raise ValueError(f"{level} is not an output level of the quantizer")
    return float(spec.thresholds[i]), float(spec.thresholds[i + 1])


def _interval_indices(vals: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    idx = np.rint(vals / spec.step - 0.5 + 2 ** (spec.bits - 1)).astype(np.int64)
    if np.any((idx < 0) | (idx >= 2**spec.bits)):
        raise ValueError("observation contains values that are not quantizer levels")
    if not np.allclose(spec.levels[idx], vals, atol=1e-9 * max(1.0, spec.step)):
        raise ValueError("observation contains values that are not quantizer levels")
    return idx


def _phi_ratios(alpha: np.ndarray, beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stable (phi(a)-phi(b))/Z and (a*phi(a)-b*phi(b))/Z for Z = Phi(b)-Phi(a).

    Interior intervals use the plain normal CDF; once both edges sit deep in
    the same tail the expressions are rewritten with scaled complementary
    error functions so the ratios stay finite instead of hitting 0/0.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    r1 = np.empty_like(alpha)
    r2 = np.empty_like(alpha)

    hi = alpha > 8.0          # both edges in the right tail
    lo = beta < -8.0          # both edges in the left tail
    mid = ~(hi | lo)

    if np.any(mid):
        a, b = alpha[mid], beta[mid]
        z = special.ndtr(b) - special.ndtr(a)
        z = np.maximum(z, 1e-300)
        af = np.where(np.isfinite(a), a, 0.0)
        bf = np.where(np.isfinite(b), b, 0.0)
        pa = np.where(np.isfinite(a), np.exp(-0.5 * af**2), 0.0) / np.sqrt(2 * np.pi)
        pb = np.where(np.isfinite(b), np.exp(-0.5 * bf**2), 0.0) / np.sqrt(2 * np.pi)
        r1[mid] = (pa - pb) / z
        r2[mid] = (af * pa - bf * pb) / z

    def _tail(a, b):
        # both edges in the right tail: factor exp(-a^2/2) out of num and den
        finite_b = np.isfinite(b)
        bf = np.where(finite_b, b, 0.0)
        w = np.exp(np.where(finite_b, (a**2 - bf**2) / 2.0, -np.inf))
        eb = np.where(finite_b, special.erfcx(bf / np.sqrt(2.0)), 0.0)
        den = special.erfcx(a / np.sqrt(2.0)) - w * eb
        return _SQRT_2_OVER_PI * (1.0 - w) / den, _SQRT_2_OVER_PI * (a - bf * w) / den

    if np.any(hi):
        r1[hi], r2[hi] = _tail(alpha[hi], beta[hi])

    if np.any(lo):
        # mirror through the origin: (a, b) -> (-b, -a)
        t1, t2 = _tail(-beta[lo], -alpha[lo])
        r1[lo] = -t1
        r2[lo] = t2

    return r1, r2


def _truncated_moments_real(y, mean, var, noise_var, spec):
    """Per-real-dimension posterior moments of z given y = Q(z + w).

    z ~ N(mean, var), w ~ N(0, noise_var); the observed level pins z + w into
    an interval (a, b].
    """
    idx = _interval_indices(y, spec)
    a = spec.thresholds[idx]
    b = spec.thresholds[idx + 1]
    s2 = var + noise_var
    s = np.sqrt(s2)
    alpha = np.where(np.isfinite(a), (a - mean) / s, -np.inf)
    beta = np.where(np.isfinite(b), (b - mean) / s, np.inf)
    r1, r2 = _phi_ratios(alpha, beta)
    post_mean = mean + (var / s) * r1
    trunc_ratio = np.maximum(1.0 + r2 - r1**2, 0.0)  # Var(z+w | interval)/s2
    post_var = (var**2 / s2) * trunc_ratio + var * noise_var / s2
    return post_mean, np.maximum(post_var, 0.0)


def output_posterior_moments(
    y: np.ndarray,
    cav_mean: np.ndarray,
    cav_var,
    noise: NoiseSpec,
    spec: QuantizerSpec,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean/variance of the pre-ADC signal z given quantized y.

    cav_var is the complex cavity variance (scalar or per component); each
    real dimension carries half of it and half of the noise variance. The
    returned variance is the sum of the two per-dimension variances.
    """
    y = np.asarray(y, dtype=np.complex128)
    cav_mean = np.asarray(cav_mean, dtype=np.complex128)
    if spec.is_infinite:
        return awgn_posterior_moments(y, cav_mean, cav_var, noise)
    v = np.broadcast_to(np.asarray(cav_var, dtype=np.float64), y.shape) / 2.0
    nv = noise.sigma2 / 2.0
    m_re, v_re = _truncated_moments_real(y.real, cav_mean.real, v, nv, spec)
    m_im, v_im = _truncated_moments_real(y.imag, cav_mean.imag, v, nv, spec)
    return m_re + 1j * m_im, v_re + v_im


def awgn_posterior_moments(y, cav_mean, cav_var, noise: NoiseSpec):
    """Conjugate-Gaussian update for the unquantized observation y = z + w."""
    y = np.asarray(y, dtype=np.complex128)
    cav_mean = np.asarray(cav_mean, dtype=np.complex128)
    v = np.broadcast_to(np.asarray(cav_var, dtype=np.float64), y.shape)
    if noise.sigma2 == 0.0:
        return y.copy(), np.zeros_like(v)
    post_var = 1.0 / (1.0 / v + 1.0 / noise.sigma2)
    post_mean = post_var * (cav_mean / v + y / noise.sigma2)
    return post_mean, post_var


def _uniform_quantizer_distortion(step: float, bits: int) -> float:
    """E (Q(t) - t)^2 for t ~ N(0,1) under the B-bit uniform quantizer."""
    spec = QuantizerSpec(bits=bits, step=step)
    a = spec.thresholds[:-1]
    b = spec.thresholds[1:]
    p = spec.levels
    af = np.where(np.isfinite(a), a, 0.0)
    bf = np.where(np.isfinite(b), b, 0.0)
    pa = np.where(np.isfinite(a), np.exp(-0.5 * af**2), 0.0) / np.sqrt(2 * np.pi)
    pb = np.where(np.isfinite(b), np.exp(-0.5 * bf**2), 0.0) / np.sqrt(2 * np.pi)
    mass = special.ndtr(b) - special.ndtr(a)
    e1 = pa - pb                                 # int t phi over interval
    e2 = mass + af * pa - bf * pb                # int t^2 phi over interval
    return float(np.sum(p**2 * mass - 2 * p * e1 + e2))


def gaussian_optimal_step(bits: int) -> float:
    """Distortion-minimising uniform step for a unit-variance Gaussian input.

    Numerical-minimisation oracle behind GAUSSIAN_STEP_TABLE; kept so the
    frozen table stays verifiable.
    """
    if not 1 <= bits <= 8:
        raise ValueError("supported bit depths are 1..8")
    res = optimize.minimize_scalar(
        _uniform_quantizer_distortion,
        bounds=(1e-3, 4.0),
        args=(bits,),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return float(res.x)


# Frozen outputs of gaussian_optimal_step (unit-variance Gaussian input).
GAUSSIAN_STEP_TABLE = {
    1: 1.595769121606,
    2: 0.995686714206,
    3: 0.586019432859,
    4: 0.335200611359,
    5: 0.188138790447,
    6: 0.104063017099,
    7: 0.056867677180,
    8: 0.030762387714,
}


def choose_step(bits: int, input_power: float, override: float | None = None) -> float:
    """Step size for a B-bit ADC driven at a known per-real-dimension power.

    Scales the Gaussian-optimal unit-variance step by the input RMS (ideal
    automatic gain control). ``override`` bypasses the table entirely.
    """
    if override is not None:
        return float(override)
    if input_power <= 0:
        raise ValueError("input power must be positive")
    if bits not in GAUSSIAN_STEP_TABLE:
        raise ValueError("supported bit depths are 1..8")
    return GAUSSIAN_STEP_TABLE[bits] * float(np.sqrt(input_power))

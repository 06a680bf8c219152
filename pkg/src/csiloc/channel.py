"""Statistical fading-channel models and OFDM frequency responses.

The fading models form a tagged union of small frozen dataclasses. Every
sampler takes an explicit ``numpy.random.Generator`` so a realization is a
pure function of (parameters, seed); callers that need independence own
their own generator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

__all__ = [
    "Awgn",
    "Rayleigh",
    "Rician",
    "Nakagami",
    "FadingModel",
    "Tap",
    "TapProfile",
    "ParameterError",
    "sample_coefficient",
    "sample_coefficients",
    "pdf_amplitude",
    "bessel_i0",
    "freq_response",
    "apply_awgn",
    "estimate_csi",
    "doppler_shift",
    "SPEED_OF_LIGHT",
]


class ParameterError(ValueError):
    """A channel-model parameter or argument is outside its domain."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParameterError(msg)


@dataclass(frozen=True)
class Awgn:
    """Identity channel coefficient; additive noise of variance sigma2 is
    applied separately via :func:`apply_awgn`."""

    sigma2: float = 0.0

    def __post_init__(self):
        _require(math.isfinite(self.sigma2) and self.sigma2 >= 0.0,
                 f"sigma2 must be finite and >= 0, got {self.sigma2}")


@dataclass(frozen=True)
class Rayleigh:
    """Pure-scatter channel: h = a + jb with a, b ~ N(0, 1/2), so E|h|^2 = 1."""


@dataclass(frozen=True)
class Rician:
    """Line-of-sight channel with deterministic-to-scattered power ratio K.

    The sample is normalized so that E|h|^2 = 1 for every K >= 0.
    """

    K: float

    def __post_init__(self):
        _require(math.isfinite(self.K) and self.K >= 0.0,
                 f"K must be finite and >= 0, got {self.K}")


@dataclass(frozen=True)
class Nakagami:
    """Gamma-derived amplitude model with shape m >= 1/2 and spread omega > 0."""

    m: float
    omega: float = 1.0

    def __post_init__(self):
        _require(math.isfinite(self.m) and self.m >= 0.5,
                 f"m must be finite and >= 0.5, got {self.m}")
        _require(math.isfinite(self.omega) and self.omega > 0.0,
                 f"omega must be finite and > 0, got {self.omega}")


FadingModel = Awgn | Rayleigh | Rician | Nakagami


@dataclass(frozen=True)
class Tap:
    """One multipath component: integer sample delay, power and fading model."""

    delay: int
    power: float
    model: FadingModel

    def __post_init__(self):
        _require(self.delay >= 0, f"tap delay must be >= 0, got {self.delay}")
        _require(math.isfinite(self.power) and self.power > 0.0,
                 f"tap power must be finite and > 0, got {self.power}")


@dataclass(frozen=True)
class TapProfile:
    """Multipath delay profile evaluated on fft_size subcarrier bins."""

    taps: tuple[Tap, ...]
    fft_size: int = 56

    def __post_init__(self):
        object.__setattr__(self, "taps", tuple(self.taps))
        _require(self.fft_size >= 1, f"fft_size must be >= 1, got {self.fft_size}")
        _require(len(self.taps) >= 1, "profile needs at least one tap")
        delays = [t.delay for t in self.taps]
        _require(all(d2 > d1 for d1, d2 in zip(delays, delays[1:])),
                 f"tap delays must be strictly increasing, got {delays}")
        _require(delays[-1] < self.fft_size,
                 f"tap delay {delays[-1]} does not fit fft_size {self.fft_size}")

    @property
    def total_power(self) -> float:
        return sum(t.power for t in self.taps)


def sample_coefficients(model: FadingModel, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n complex channel coefficients from the given fading model."""
    if isinstance(model, Awgn):
        return np.ones(n, dtype=complex)
    if isinstance(model, Rayleigh):
        scale = math.sqrt(0.5)
        return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    if isinstance(model, Rician):
        # Deterministic component D = sqrt(2 * 0.5 * K); normalization keeps E|h|^2 = 1.
        d = math.sqrt(model.K)
        denom = math.sqrt(d * d + 1.0)
        scale = math.sqrt(0.5)
        a = scale * rng.standard_normal(n)
        b = scale * rng.standard_normal(n)
        return (d + a + 1j * b) / denom
    if isinstance(model, Nakagami):
        # Squared amplitude is Gamma(shape=m, scale=omega/m); phase is uniform.
        g = rng.gamma(model.m, model.omega / model.m, size=n)
        phase = rng.uniform(-math.pi, math.pi, size=n)
        return np.sqrt(g) * np.exp(1j * phase)
    raise ParameterError(f"unknown fading model {model!r}")


def sample_coefficient(model: FadingModel, rng: np.random.Generator) -> complex:
    """Draw one complex channel coefficient from the given fading model."""
    return complex(sample_coefficients(model, rng, 1)[0])


def bessel_i0(x):
    """Modified Bessel function I0 via its power series.

    Terms are accumulated until they drop below 1e-16 of the running sum,
    so no special-function library is needed.
    """
    arr = np.asarray(x, dtype=float)
    q = arr * arr / 4.0
    term = np.ones_like(q)
    total = np.ones_like(q)
    for k in range(1, 10_000):
        term = term * (q / (k * k))
        total = total + term
        if np.all(term <= 1e-16 * total):
            break
    return float(total) if arr.ndim == 0 else total


def _log_i0(x: float) -> float:
    """log I0(x) by streaming log-sum-exp over the same power series.

    Only used where the linear-space series would overflow (x beyond ~600).
    """
    if x == 0.0:
        return 0.0
    log_q = 2.0 * math.log(x / 2.0)
    log_term = 0.0
    lse = 0.0
    k = 0
    while True:
        k += 1
        log_term += log_q - 2.0 * math.log(k)
        if log_term > lse:
            lse = log_term + math.log1p(math.exp(lse - log_term))
        else:
            lse = lse + math.log1p(math.exp(log_term - lse))
        if log_term < lse - 40.0 and k > x / 2.0:
            return lse


def pdf_amplitude(model: FadingModel, r):
    """Closed-form amplitude density p_R(r) of the fading model at r >= 0.

    Accepts a scalar or array of amplitudes. The AWGN model has a
    deterministic amplitude and therefore no density.
    """
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0.0):
        raise ParameterError("amplitude r must be >= 0")
    if isinstance(model, Rayleigh):
        out = 2.0 * arr * np.exp(-arr * arr)
    elif isinstance(model, Rician):
        k = model.K
        x = 2.0 * arr * math.sqrt(k * (k + 1.0))
        if np.any(x > 600.0):
            log_i0 = np.array([_log_i0(float(v)) for v in np.atleast_1d(x)]).reshape(arr.shape)
        else:
            log_i0 = np.log(bessel_i0(x)) if arr.ndim else math.log(bessel_i0(float(x)))
        out = 2.0 * arr * (1.0 + k) * np.exp(-k - (1.0 + k) * arr * arr + log_i0)
    elif isinstance(model, Nakagami):
        m, om = model.m, model.omega
        coef = 2.0 * m**m / (om**m * math.gamma(m))
        out = coef * arr ** (2.0 * m - 1.0) * np.exp(-arr * arr * m / om)
    elif isinstance(model, Awgn):
        raise ParameterError("AWGN amplitude is deterministic; it has no density")
    else:
        raise ParameterError(f"unknown fading model {model!r}")
    return float(out) if arr.ndim == 0 else out


def freq_response(profile: TapProfile, rng: np.random.Generator) -> np.ndarray:
    """One realization of the per-subcarrier response of a multipath profile.

    Each tap draws one coefficient from its model, scaled by sqrt(power) and
    placed at its delay; the response is the DFT H[k] = sum_t h_t e^{-j2pi kt/N}
    over the fft_size bins.
    """
    h = np.zeros(profile.fft_size, dtype=complex)
    for tap in profile.taps:
        h[tap.delay] += math.sqrt(tap.power) * sample_coefficient(tap.model, rng)
    return np.fft.fft(h)


def apply_awgn(signal, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Add complex Gaussian noise of total variance sigma2 (sigma2/2 per component)."""
    _require(math.isfinite(sigma2) and sigma2 >= 0.0,
             f"sigma2 must be finite and >= 0, got {sigma2}")
    x = np.asarray(signal, dtype=complex)
    scale = math.sqrt(sigma2 / 2.0)
    noise = scale * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
    return x + noise


def estimate_csi(pilot, received) -> np.ndarray:
    """Per-subcarrier channel estimate H[k] = Y[k] / X[k] from known pilots."""
    x = np.asarray(pilot, dtype=complex)
    y = np.asarray(received, dtype=complex)
    if x.shape != y.shape:
        raise ParameterError(f"pilot shape {x.shape} != received shape {y.shape}")
    zero = np.flatnonzero(x == 0)
    if zero.size:
        raise ParameterError(f"pilot is zero at subcarrier bin {int(zero[0])}")
    return y / x


def doppler_shift(fc: float, v: float, theta: float, c: float = SPEED_OF_LIGHT) -> float:
    """Doppler frequency shift f_d = f_c * v * cos(theta) / c."""
    _require(c > 0.0, f"propagation speed must be > 0, got {c}")
    return fc * v * math.cos(theta) / c

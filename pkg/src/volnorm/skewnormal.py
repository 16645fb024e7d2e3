"""Skew-normal distribution mathematics.

Provides the density, CDF (through Owen's T function), quantiles and sampling
for the skew-normal family, together with conversions between its two
parameterisations:

* direct (DP): location xi, scale omega, shape alpha;
* centred (CP): mean mu, standard deviation sigma, skewness gamma.

The centred parameterisation is the one used for estimation downstream; its
skewness is constrained to |gamma| < C_GAMMA, the supremum attainable by the
family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import erfc, log_ndtr

from .errors import DomainError, SkewnessRangeError, ValidationError

__all__ = [
    "C_GAMMA",
    "GAMMA_GUARD",
    "SkewNormalDP",
    "SkewNormalCP",
    "std_normal_pdf",
    "std_normal_cdf",
    "std_normal_quantile",
    "owen_t",
    "sn_pdf",
    "sn_logpdf",
    "sn_cdf",
    "sn_quantile",
    "cp_to_dp",
    "dp_to_cp",
    "cp_to_dp_arrays",
    "dp_to_cp_arrays",
    "sn_sample",
]

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_B = math.sqrt(2.0 / math.pi)  # E|Z| for a standard normal Z

# Supremum of |skewness| over the skew-normal family, reached as the DP shape
# parameter tends to infinity.
C_GAMMA = _SQRT2 * (4.0 - math.pi) / (math.pi - 2.0) ** 1.5

# Working bound used by estimation: fits clamp the skewness strictly inside
# the admissible interval so every fitted model stays convertible.
GAMMA_GUARD = 0.995 * C_GAMMA


@dataclass(frozen=True)
class SkewNormalDP:
    """Direct parameterisation: location, scale > 0, shape."""

    location: float
    scale: float
    shape: float

    def __post_init__(self):
        if not (
            math.isfinite(self.location)
            and math.isfinite(self.scale)
            and math.isfinite(self.shape)
        ):
            raise ValidationError("skew-normal DP parameters must be finite")
        if self.scale <= 0.0:
            raise ValidationError(f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class SkewNormalCP:
    """Centred parameterisation: mean, sd > 0, skewness with |gamma| < C_GAMMA."""

    mean: float
    sd: float
    skewness: float

    def __post_init__(self):
        if not (
            math.isfinite(self.mean)
            and math.isfinite(self.sd)
            and math.isfinite(self.skewness)
        ):
            raise ValidationError("skew-normal CP parameters must be finite")
        if self.sd <= 0.0:
            raise ValidationError(f"sd must be positive, got {self.sd}")
        if abs(self.skewness) >= C_GAMMA:
            raise SkewnessRangeError(
                f"|skewness| = {abs(self.skewness)} is not below the "
                f"admissible bound {C_GAMMA}"
            )


def std_normal_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return out if out.ndim else float(out)


def std_normal_cdf(x):
    """Standard normal CDF, evaluated through the complementary error function.

    Saturates at 0/1 in the extreme tails instead of raising.
    """
    x = np.asarray(x, dtype=float)
    out = 0.5 * erfc(-x / _SQRT2)
    return out if out.ndim else float(out)


# Coefficients of Acklam's rational approximation to the normal quantile.
_ACKLAM_A = (
    -3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
    1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00,
)
_ACKLAM_B = (
    -5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
    6.680131188771972e+01, -1.328068155288572e+01,
)
_ACKLAM_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
    -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00,
)
_ACKLAM_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
    3.754408661907416e+00,
)


def _quantile_lower_half(p):
    """Normal quantile for p in (0, 0.5] via rational approximation + Newton."""
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    x = np.empty_like(p)
    tail = p < 0.02425
    if np.any(tail):
        q = np.sqrt(-2.0 * np.log(p[tail]))
        x[tail] = (
            ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
        ) / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    mid = ~tail
    if np.any(mid):
        q = p[mid] - 0.5
        r = q * q
        x[mid] = (
            ((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]
        ) * q / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    # One Newton step against the CDF brings the approximation to full
    # double precision.
    x -= (0.5 * erfc(-x / _SQRT2) - p) / (np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi))
    return x


def std_normal_quantile(p):
    """Inverse of the standard normal CDF for p strictly inside (0, 1).

    The upper half is computed by reflection so the identity
    quantile(1 - p) = -quantile(p) holds by construction.
    """
    arr = np.asarray(p, dtype=float)
    if arr.size and not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("quantile argument must lie strictly inside (0, 1)")
    flip = arr > 0.5
    lower = np.where(flip, 1.0 - arr, arr)
    x = _quantile_lower_half(np.atleast_1d(lower).astype(float))
    x = np.where(np.atleast_1d(flip), -x, x)
    if arr.ndim == 0:
        return float(x[0])
    return x.reshape(arr.shape)


def _owen_t_scalar(h: float, a: float) -> float:
    if a == 0.0 or not np.isfinite(h):
        # T(h, 0) = 0 for every h; the CDF callers also rely on the
        # saturated-tail limit T(+-inf, a) = 0.
        return 0.0
    sign = 1.0 if a > 0.0 else -1.0
    a, h = abs(a), abs(h)
    if h == 0.0:
        return sign * math.atan(a) / (2.0 * math.pi)
    hh = 0.5 * h * h
    val, _ = integrate.quad(
        lambda x: math.exp(-hh * (1.0 + x * x)) / (1.0 + x * x),
        0.0,
        a,
        epsabs=1e-14,
        epsrel=1e-12,
        limit=200,
    )
    return sign * val / (2.0 * math.pi)


def owen_t(h, a):
    """Owen's T function T(h, a) = (1/2pi) * int_0^a exp(-h^2(1+x^2)/2)/(1+x^2) dx.

    Evaluated by adaptive quadrature of the defining integrand after applying
    the symmetries T(-h, a) = T(h, a) and T(h, -a) = -T(h, a).
    """
    if np.ndim(h) == 0 and np.ndim(a) == 0:
        return _owen_t_scalar(float(h), float(a))
    hb, ab = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(a, dtype=float))
    out = np.empty(hb.shape, dtype=float)
    out_flat, h_flat, a_flat = out.ravel(), hb.ravel(), ab.ravel()
    for i in range(out_flat.size):
        out_flat[i] = _owen_t_scalar(h_flat[i], a_flat[i])
    return out


def sn_pdf(x, dp: SkewNormalDP):
    """Skew-normal density (2/omega) * phi(z) * Phi(alpha z), z = (x - xi)/omega."""
    z = (np.asarray(x, dtype=float) - dp.location) / dp.scale
    out = 2.0 / dp.scale * std_normal_pdf(z) * std_normal_cdf(dp.shape * z)
    return out if np.ndim(out) else float(out)


def sn_logpdf(x, dp: SkewNormalDP):
    """Log of sn_pdf, stable deep into the tail where Phi underflows."""
    z = (np.asarray(x, dtype=float) - dp.location) / dp.scale
    out = (
        math.log(2.0)
        - math.log(dp.scale)
        - 0.5 * z * z
        - _LOG_SQRT_2PI
        + log_ndtr(dp.shape * z)
    )
    return out if np.ndim(out) else float(out)


def sn_cdf(x, dp: SkewNormalDP):
    """Skew-normal CDF: Phi(z) - 2 T(z, alpha), clipped to [0, 1]."""
    z = (np.asarray(x, dtype=float) - dp.location) / dp.scale
    out = np.clip(std_normal_cdf(z) - 2.0 * owen_t(z, dp.shape), 0.0, 1.0)
    return out if np.ndim(out) else float(out)


def sn_quantile(p: float, dp: SkewNormalDP) -> float:
    """Inverse of sn_cdf by bracketed root finding."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError("quantile argument must lie strictly inside (0, 1)")
    from scipy.optimize import brentq

    # Start from the zero-skew solution and widen until the root is bracketed.
    guess = dp.location + dp.scale * std_normal_quantile(p)
    half = dp.scale
    lo, hi = guess - half, guess + half
    for _ in range(200):
        if sn_cdf(lo, dp) <= p <= sn_cdf(hi, dp):
            break
        half *= 2.0
        lo, hi = guess - half, guess + half
    return float(brentq(lambda t: sn_cdf(t, dp) - p, lo, hi, xtol=1e-13, rtol=8.9e-16))


def _shape_from_skewness(gamma):
    """Map skewness to (mu_z, delta, alpha) of the standardized variable."""
    g = np.asarray(gamma, dtype=float)
    r = np.cbrt(2.0 * g / (4.0 - math.pi))
    mu_z = r / np.sqrt(1.0 + r * r)
    delta = mu_z / _B
    alpha = delta / np.sqrt(1.0 - delta * delta)
    return mu_z, delta, alpha


def cp_to_dp_arrays(mean, sd, skewness):
    """Centred-to-direct conversion on arrays; returns (xi, omega, alpha).

    Inputs broadcast against each other. Skewness must satisfy
    |skewness| < C_GAMMA elementwise.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    skewness = np.asarray(skewness, dtype=float)
    if np.any(np.abs(skewness) >= C_GAMMA):
        worst = float(np.max(np.abs(skewness)))
        raise SkewnessRangeError(
            f"|skewness| = {worst} is not below the admissible bound {C_GAMMA}"
        )
    mu_z, _, alpha = _shape_from_skewness(skewness)
    omega = sd / np.sqrt(1.0 - mu_z * mu_z)
    xi = mean - omega * mu_z
    return xi, omega, alpha


def dp_to_cp_arrays(location, scale, shape):
    """Direct-to-centred conversion on arrays; returns (mean, sd, skewness)."""
    location = np.asarray(location, dtype=float)
    scale = np.asarray(scale, dtype=float)
    shape = np.asarray(shape, dtype=float)
    delta = shape / np.sqrt(1.0 + shape * shape)
    mu_z = _B * delta
    mean = location + scale * mu_z
    sd = scale * np.sqrt(1.0 - mu_z * mu_z)
    skewness = 0.5 * (4.0 - math.pi) * mu_z**3 / (1.0 - mu_z * mu_z) ** 1.5
    return mean, sd, skewness


def cp_to_dp(cp: SkewNormalCP) -> SkewNormalDP:
    """Convert centred to direct parameters.

    Raises SkewnessRangeError when |skewness| >= C_GAMMA (enforced by the CP
    type as well); estimation clamps before calling so pipelines stay total.
    """
    xi, omega, alpha = cp_to_dp_arrays(cp.mean, cp.sd, cp.skewness)
    return SkewNormalDP(float(xi), float(omega), float(alpha))


def dp_to_cp(dp: SkewNormalDP) -> SkewNormalCP:
    """Convert direct to centred parameters (first three moments)."""
    mean, sd, skewness = dp_to_cp_arrays(dp.location, dp.scale, dp.shape)
    # Guard against rounding pushing an extreme shape onto the open boundary.
    skewness = float(np.clip(skewness, -np.nextafter(C_GAMMA, 0.0), np.nextafter(C_GAMMA, 0.0)))
    return SkewNormalCP(float(mean), float(sd), skewness)


def sn_draw(generator: np.random.Generator, xi, omega, alpha, n: int) -> np.ndarray:
    """Draw n variates given (possibly per-element) direct parameters.

    Uses the bivariate conditioning representation: a pair correlated at
    delta = alpha/sqrt(1+alpha^2) is formed and the second member reflected
    by the sign of the first.
    """
    alpha = np.asarray(alpha, dtype=float)
    z0 = generator.standard_normal(n)
    z1 = generator.standard_normal(n)
    delta = alpha / np.sqrt(1.0 + alpha * alpha)
    x = delta * z0 + np.sqrt(1.0 - delta * delta) * z1
    x = np.where(z0 >= 0.0, x, -x)
    return np.asarray(xi, dtype=float) + np.asarray(omega, dtype=float) * x


def sn_sample(dp: SkewNormalDP, n: int, seed: int) -> np.ndarray:
    """Deterministic skew-normal sample of size n for the given seed.

    The counter-based Philox generator keys the stream, so identical seeds
    reproduce identical sequences across platforms.
    """
    if n < 1:
        raise ValidationError(f"sample size must be at least 1, got {n}")
    generator = np.random.Generator(np.random.Philox(key=int(seed)))
    return sn_draw(generator, dp.location, dp.scale, dp.shape, int(n))

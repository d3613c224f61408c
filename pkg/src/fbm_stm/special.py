"""Special functions: log-Gamma, Kummer's Phi, parabolic cylinder U and
even raw moments of a scalar Gaussian.

Kummer's function is summed by term-ratio recurrence in double precision.
When the float pass reveals cancellation (large sum of |terms| relative to
the result) or overflow, the same series is re-summed in ``decimal`` with
enough guard digits to absorb it.
"""

from __future__ import annotations

import decimal
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln, logsumexp

from .errors import DomainError, PoleError, QuadratureFailure, RangeExceeded

__all__ = [
    "GaussianScalar",
    "log_gamma",
    "kummer_phi",
    "parabolic_u",
    "gaussian_raw_moment",
    "gaussian_raw_moment_log",
    "MAX_A",
    "MAX_Z",
]

MAX_A = 500.0
MAX_Z = 700.0
MAX_TERMS = 20000
_EPS = 1e-16
# float pass is trusted while sum|t_k| / |sum t_k| stays below this
_MAX_CONDITION = 1e5


@dataclass(frozen=True)
class GaussianScalar:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std >= 0:
            raise DomainError(f"std must be nonnegative, got {self.std!r}")


def log_gamma(x):
    """ln Gamma(x) for x > 0."""
    if not x > 0:
        raise DomainError(f"log_gamma requires x > 0, got {x!r}")
    return math.lgamma(x)


def _is_nonpositive_integer(x):
    return x <= 0 and float(x).is_integer()


def _series_float(a, b, x, n_terms=None):
    """Float pass. Returns (sum, sum_abs) or None on overflow."""
    term = 1.0
    total = 1.0
    total_abs = 1.0
    small = 0
    k = 0
    limit = n_terms if n_terms is not None else MAX_TERMS
    while k < limit:
        term *= (a + k) / ((b + k) * (k + 1)) * x
        k += 1
        if not math.isfinite(term):
            return None
        total += term
        total_abs += abs(term)
        if n_terms is not None:
            continue
        if abs(term) <= _EPS * abs(total) and k > abs(x) + abs(a):
            small += 1
            if small >= 3:
                break
        else:
            small = 0
    else:
        if n_terms is None:
            raise RangeExceeded(f"Kummer series did not converge in {MAX_TERMS} terms")
    if not math.isfinite(total_abs):
        return None
    return total, total_abs


def _series_decimal(a, b, x, n_terms, digits, log_scale=0.0):
    """Re-sum exp(log_scale) * sum_k t_k with ``digits`` significant digits."""
    ctx = decimal.Context(prec=digits, Emax=10**9, Emin=-(10**9))
    with decimal.localcontext(ctx):
        da, db, dx = decimal.Decimal(a), decimal.Decimal(b), decimal.Decimal(x)
        term = decimal.Decimal(1)
        total = decimal.Decimal(1)
        eps = decimal.Decimal(10) ** (-(digits - 2))
        small = 0
        k = 0
        limit = n_terms if n_terms is not None else MAX_TERMS
        while k < limit:
            term = term * (da + k) / ((db + k) * (k + 1)) * dx
            k += 1
            total += term
            if n_terms is not None:
                continue
            if abs(term) <= eps * abs(total) and k > abs(x) + abs(a):
                small += 1
                if small >= 3:
                    break
            else:
                small = 0
        else:
            if n_terms is None:
                raise RangeExceeded(f"Kummer series did not converge in {MAX_TERMS} terms")
        value = total * decimal.Decimal(log_scale).exp()
        try:
            out = float(value)
        except OverflowError:  # pragma: no cover - float() saturates instead
            out = math.inf
    if math.isinf(out):
        raise RangeExceeded("Kummer function value overflows double precision")
    return out


def _sum_series(a, b, x, n_terms=None, log_scale=0.0):
    """exp(log_scale) * sum_k (a)_k / ((b)_k k!) x^k, accurate to ~1e-13."""
    res = _series_float(a, b, x, n_terms)
    if res is not None:
        total, total_abs = res
        cond = total_abs / abs(total) if total != 0 else math.inf
        if cond <= _MAX_CONDITION:
            scale = math.exp(log_scale)
            out = total * scale
            if math.isfinite(out) and (out != 0 or total == 0 or scale == 0):
                return out
        extra = 0 if cond == math.inf else int(math.log10(cond))
        digits = 40 + min(extra, 400)
    else:
        digits = 40
    return _series_decimal(a, b, x, n_terms, digits, log_scale)


def kummer_phi(a, b, z, max_a=MAX_A, max_z=MAX_Z):
    """Kummer's confluent hypergeometric function Phi(a, b, z) = 1F1(a; b; z).

    Negative-integer ``a`` gives the terminating polynomial. For z < 0 the
    value is computed as ``exp(z) * Phi(b - a, b, -z)``.
    """
    a, b, z = float(a), float(b), float(z)
    if _is_nonpositive_integer(b):
        raise PoleError(f"Phi(a, b, z) has a pole at b={b}")
    if not (abs(a) <= max_a and abs(z) <= max_z):
        raise RangeExceeded(f"(a={a}, z={z}) outside |a|<={max_a}, |z|<={max_z}")
    if z == 0 or a == 0:
        return 1.0
    if _is_nonpositive_integer(a):
        return _sum_series(a, b, z, n_terms=int(-a))
    if z > 0:
        return _sum_series(a, b, z)
    c = b - a
    if _is_nonpositive_integer(c):
        return _sum_series(c, b, -z, n_terms=int(-c), log_scale=z)
    return _sum_series(c, b, -z, log_scale=z)


def _log_integrand_peak(alpha, z):
    """argmax over w > 0 of alpha*log(w) - w^2/2 - z*w."""
    if alpha > 0:
        return 0.5 * (-z + math.sqrt(z * z + 4.0 * alpha))
    return max(0.0, -z)


def parabolic_u(a, z, rtol=1e-12):
    """Parabolic cylinder function U(a, z) for real a > -1/2 via its
    Laplace-type integral over [0, inf).

    The algebraic factor w^(a-1/2) is handled exactly by QUADPACK's
    algebraic-weight rule; the Gaussian factor is rescaled by its maximum
    to keep very negative ``z`` representable.
    """
    a, z = float(a), float(z)
    if not a > -0.5:
        raise DomainError(f"parabolic_u requires a > -1/2, got {a!r}")
    alpha = a - 0.5
    shift = 0.5 * z * z if z < 0 else 0.0

    def gauss(w):
        return math.exp(-0.5 * w * w - z * w - shift)

    def log_g(w):
        return alpha * math.log(w) - 0.5 * w * w - z * w - shift

    peak = _log_integrand_peak(alpha, z)
    offset = 8.0
    for _ in range(40):
        upper = max(peak, 1.0) + offset
        value, abserr, info = integrate.quad(
            gauss, 0.0, upper, weight="alg", wvar=(alpha, 0.0),
            epsabs=0.0, epsrel=rtol, limit=500, full_output=True,
        )[:3]
        if not value > 0 or abserr > 1e-9 * value:
            raise QuadratureFailure(
                f"U({a}, {z}): quadrature error estimate {abserr:.2e} for value {value:.3e}"
            )
        # beyond the peak log g is concave, so the tail is below g(W) / |(log g)'(W)|
        slope = alpha / upper - upper - z
        tail = math.exp(log_g(upper)) / -slope if slope < 0 else math.inf
        if tail <= 1e-18 * value:
            break
        offset *= 1.5
    else:
        raise QuadratureFailure(f"U({a}, {z}): could not certify the tail")
    log_u = -0.25 * z * z - math.lgamma(a + 0.5) + shift + math.log(value)
    return math.exp(log_u)


def _check_order(order):
    if int(order) != order or order <= 0 or order % 2:
        raise DomainError(f"order must be an even positive integer, got {order!r}")
    return int(order) // 2


def gaussian_raw_moment_log(g: GaussianScalar, order):
    """(sign, log|E[Q^order]|) for Q ~ N(g.mean, g.std^2) and even ``order``.

    Uses E[Q^2n] = 2^n / sqrt(pi) * s^2n * Gamma(n + 1/2) * Phi(-n, 1/2, -m^2/(2 s^2)),
    with the terminating Phi summed in log space (all its terms are positive
    for a negative argument).
    """
    n = _check_order(order)
    mu, s = float(g.mean), float(g.std)
    if s == 0:
        if mu == 0:
            raise DomainError("degenerate Gaussian N(0, 0) has log-moment -inf")
        return 1, 2 * n * math.log(abs(mu))
    log_prefactor = (
        n * math.log(2.0) - 0.5 * math.log(math.pi) + 2 * n * math.log(s) + math.lgamma(n + 0.5)
    )
    if mu == 0:
        return 1, log_prefactor
    # log of m^2 / (2 s^2), formed in log space so tiny means do not underflow
    log_x = 2.0 * (math.log(abs(mu)) - math.log(s)) - math.log(2.0)
    k = np.arange(n + 1)
    log_terms = (
        gammaln(n + 1.0) - gammaln(n - k + 1.0)
        - (gammaln(k + 0.5) - gammaln(0.5))
        - gammaln(k + 1.0)
        + k * log_x
    )
    return 1, log_prefactor + float(logsumexp(log_terms))


def gaussian_raw_moment(g: GaussianScalar, order):
    """E[Q^order] for even ``order`` <= 64."""
    n = _check_order(order)
    if order > 64:
        raise DomainError("order > 64: use gaussian_raw_moment_log")
    if g.std == 0:
        return float(g.mean) ** (2 * n)
    sign, log_mag = gaussian_raw_moment_log(g, order)
    return sign * math.exp(log_mag)

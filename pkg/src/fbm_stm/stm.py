"""Stochastic theta method (STM) along a supplied fBm increment sequence.

    X_{n+1} = X_n + theta f(t_{n+1}, X_{n+1}) dt + (1 - theta) f(t_n, X_n) dt
              + g(t_n, X_n) V_n

For the linear test equation one step is multiplication by
``Z_n = alpha_n + beta_n V_n``; the product is accumulated in log-signed form
so exponentially growing or decaying paths never leave double range. The
nonlinear scheme solves the implicit equation with a safeguarded Newton
iteration and saturates to +/-inf on overflow.

All ``*_paths`` functions operate on a (paths, steps) increment array;
single-path wrappers return :class:`Trajectory`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateDenominator, DomainError, ImplicitSolveFailure
from .fbm import IncrementBlock
from .models import LinearTestModel, NonlinearModel

__all__ = [
    "ThetaScheme",
    "LogSignedState",
    "Trajectory",
    "alpha_n",
    "beta_n",
    "step_factors",
    "simulate_linear",
    "simulate_linear_paths",
    "simulate_nonlinear",
    "simulate_nonlinear_paths",
    "solve_implicit",
    "write_trajectory_csv",
]

DENOMINATOR_TOL = 1e-14
SOLVE_RTOL = 1e-12
MAX_SOLVE_ITER = 200
# below the smallest normal double the root is not representable to relative accuracy
_SUBNORMAL_FLOOR = np.finfo(float).tiny


@dataclass(frozen=True)
class ThetaScheme:
    theta: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise DomainError(f"theta must lie in [0, 1], got {self.theta!r}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise DomainError(f"dt must be positive, got {self.dt!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise DomainError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class LogSignedState:
    sign: int
    log_abs: float

    @property
    def value(self):
        return self.sign * math.exp(self.log_abs) if self.sign else 0.0


@dataclass
class Trajectory:
    """States X_0..X_N as parallel ``sign`` / ``log_abs`` arrays."""

    sign: np.ndarray
    log_abs: np.ndarray
    scheme: ThetaScheme
    diverged_at: Optional[int] = None
    plain: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def states(self):
        return [LogSignedState(int(s), float(l)) for s, l in zip(self.sign, self.log_abs)]

    def values(self):
        """Plain values; saturates to +/-inf where exp overflows."""
        if self.plain is not None:
            return self.plain
        with np.errstate(over="ignore"):
            return self.sign * np.exp(self.log_abs)


def _denominator(n, theta, lam, kappa, dt):
    n = np.asarray(n, dtype=float)
    den = 1.0 + kappa * theta * lam * np.power(n + 1.0, kappa - 1.0) * dt**kappa
    if np.any(np.abs(den) < DENOMINATOR_TOL):
        raise DegenerateDenominator(
            f"1 + kappa*theta*lam*(n+1)^(kappa-1)*dt^kappa vanishes (theta={theta}, lam={lam})"
        )
    return den


def alpha_n(n, theta, lam, kappa, dt):
    """Deterministic part of the one-step factor. Vectorised over ``n``."""
    num = 1.0 - kappa * (1.0 - theta) * lam * np.power(np.asarray(n, float), kappa - 1.0) * dt**kappa
    out = num / _denominator(n, theta, lam, kappa, dt)
    return out if np.ndim(out) else float(out)


def beta_n(n, theta, lam, mu, kappa, dt):
    """Noise coefficient of the one-step factor. Vectorised over ``n``."""
    out = mu / _denominator(n, theta, lam, kappa, dt)
    return out if np.ndim(out) else float(out)


def step_factors(model: LinearTestModel, scheme: ThetaScheme, n_steps=None):
    """Arrays (alpha_0..alpha_{N-1}, beta_0..beta_{N-1})."""
    n = np.arange(scheme.n_steps if n_steps is None else n_steps)
    return (
        alpha_n(n, scheme.theta, model.lam, model.kappa, scheme.dt),
        beta_n(n, scheme.theta, model.lam, model.mu, model.kappa, scheme.dt),
    )


def _check_increments(increments, scheme):
    v = np.asarray(increments, dtype=float)
    if v.ndim == 1:
        v = v[None, :]
    if v.shape[1] != scheme.n_steps:
        raise DomainError(f"increments have {v.shape[1]} steps, scheme expects {scheme.n_steps}")
    return v


def simulate_linear_paths(model: LinearTestModel, scheme: ThetaScheme, increments):
    """Log-signed linear STM for a batch. Returns (sign, log_abs), shape (P, N+1)."""
    v = _check_increments(increments, scheme)
    alpha, beta = step_factors(model, scheme)
    z = alpha + beta * v
    paths = v.shape[0]
    sign = np.empty((paths, scheme.n_steps + 1), dtype=np.int8)
    log_abs = np.empty((paths, scheme.n_steps + 1))
    sign[:, 0] = np.sign(model.x0)
    log_abs[:, 0] = math.log(abs(model.x0))
    with np.errstate(divide="ignore"):
        log_z = np.log(np.abs(z))
    np.cumsum(log_z, axis=1, out=log_abs[:, 1:])
    log_abs[:, 1:] += log_abs[:, :1]
    np.cumprod(np.sign(z).astype(np.int8), axis=1, out=sign[:, 1:])
    sign[:, 1:] *= sign[:, :1]
    # a zero factor is absorbing: sign 0 and log -inf from then on
    log_abs[sign == 0] = -np.inf
    return sign, log_abs


def simulate_linear(model: LinearTestModel, scheme: ThetaScheme, increments) -> Trajectory:
    values = increments.values if isinstance(increments, IncrementBlock) else increments
    if isinstance(increments, IncrementBlock) and increments.grid.dt != scheme.dt:
        raise DomainError("increment grid dt does not match scheme dt")
    sign, log_abs = simulate_linear_paths(model, scheme, values)
    return Trajectory(sign=sign[0], log_abs=log_abs[0], scheme=scheme)


def _numeric_slope(f, t, y):
    h = 1e-7 * (1.0 + np.abs(y))
    return (f(t, y + h) - f(t, y - h)) / (2.0 * h)


def solve_implicit(drift, t_next, c, rhs, drift_dx=None, rtol=SOLVE_RTOL, max_iter=MAX_SOLVE_ITER):
    """Solve ``y - c * drift(t_next, y) = rhs`` elementwise.

    Newton steps are accepted while they stay inside a sign-change bracket
    and at least halve |G|; otherwise the bracket is bisected. The bracket
    is grown geometrically around ``rhs``. Returns ``(y, failed_mask)``.
    """
    rhs = np.asarray(rhs, dtype=float)
    slope = drift_dx if drift_dx is not None else (lambda t, y: _numeric_slope(drift, t, y))
    # iterate to a purely relative residual so tiny states keep full precision;
    # failure is only declared against the looser rtol * (1 + |rhs|)
    accept = rtol * (1.0 + np.abs(rhs))
    tol = np.maximum(rtol * np.abs(rhs), _SUBNORMAL_FLOOR)

    def resid(y):
        return y - c * drift(t_next, y) - rhs

    y = rhs.copy()
    g = resid(y)
    done = np.abs(g) <= tol
    failed = np.zeros(rhs.shape, dtype=bool)
    iters = 0
    if done.all():
        return y, failed

    # bracket [lo, hi] with resid(lo) <= 0 <= resid(hi) or the reverse
    width = 1.0 + np.abs(rhs)
    lo, hi = rhs - width, rhs + width
    g_lo, g_hi = resid(lo), resid(hi)
    open_ = ~done & (np.sign(g_lo) * np.sign(g_hi) > 0)
    while open_.any():
        iters += 1
        if iters > max_iter:
            failed |= open_
            break
        width = np.where(open_, 2.0 * width, width)
        lo = np.where(open_, rhs - width, lo)
        hi = np.where(open_, rhs + width, hi)
        g_lo = np.where(open_, resid(lo), g_lo)
        g_hi = np.where(open_, resid(hi), g_hi)
        open_ = open_ & (np.sign(g_lo) * np.sign(g_hi) > 0) & np.isfinite(width)
    active = ~done & ~failed
    # place y at the better end if rhs itself was a poor start
    prev_abs = np.abs(g)
    while active.any():
        iters += 1
        if iters > max_iter:
            failed |= active & (np.abs(g) > accept)
            break
        d = 1.0 - c * slope(t_next, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = y - g / d
        inside = (newton > np.minimum(lo, hi)) & (newton < np.maximum(lo, hi)) & np.isfinite(newton)
        y_new = np.where(inside, newton, 0.5 * (lo + hi))
        g_new = resid(y_new)
        # a Newton step that fails to halve |G| is replaced by bisection
        slow = inside & (np.abs(g_new) > 0.5 * prev_abs) & (np.abs(g_new) > tol)
        if slow.any():
            mid = 0.5 * (lo + hi)
            y_new = np.where(slow, mid, y_new)
            g_new = np.where(slow, resid(mid), g_new)
        y = np.where(active, y_new, y)
        g = np.where(active, g_new, g)
        prev_abs = np.abs(g)
        same_as_lo = np.sign(g) == np.sign(g_lo)
        lo = np.where(active & same_as_lo, y, lo)
        g_lo = np.where(active & same_as_lo, g, g_lo)
        hi = np.where(active & ~same_as_lo, y, hi)
        g_hi = np.where(active & ~same_as_lo, g, g_hi)
        # bracket collapsed to adjacent floats: the root is located to machine precision
        collapsed = np.abs(hi - lo) <= 4.0 * np.spacing(np.maximum(np.abs(lo), np.abs(hi)))
        converged = (np.abs(g) <= tol) | collapsed
        active = active & ~converged
    return y, failed


def simulate_nonlinear_paths(model: NonlinearModel, scheme: ThetaScheme, increments):
    """Plain-arithmetic STM for a batch.

    Returns ``(values, diverged_at, failed)``: values shape (P, N+1);
    ``diverged_at[p]`` is the first step whose state is infinite (-1 if none);
    ``failed[p]`` flags paths whose implicit solve did not converge.
    """
    v = _check_increments(increments, scheme)
    paths, n = v.shape
    theta, dt = scheme.theta, scheme.dt
    times = scheme.times
    x = np.empty((paths, n + 1))
    x[:, 0] = model.x0
    failed = np.zeros(paths, dtype=bool)
    c = theta * dt
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            xn = x[:, k]
            live = np.isfinite(xn)
            rhs = xn + (1.0 - theta) * dt * model.drift(times[k], xn) + model.diffusion(times[k], xn) * v[:, k]
            rhs = np.where(np.isnan(rhs), np.inf, rhs)
            ok = live & np.isfinite(rhs)
            nxt = np.where(live, rhs, xn)
            nxt = np.where(np.isnan(nxt), np.inf, nxt)
            if c > 0 and ok.any():
                y, bad = solve_implicit(model.drift, times[k + 1], c, rhs[ok], model.drift_dx)
                nxt[ok] = y
                failed[np.flatnonzero(ok)[bad]] = True
            x[:, k + 1] = nxt
    inf_mask = ~np.isfinite(x)
    diverged_at = np.where(inf_mask.any(axis=1), inf_mask.argmax(axis=1), -1)
    return x, diverged_at, failed


def simulate_nonlinear(model: NonlinearModel, scheme: ThetaScheme, increments) -> Trajectory:
    values = increments.values if isinstance(increments, IncrementBlock) else increments
    x, diverged_at, failed = simulate_nonlinear_paths(model, scheme, values)
    if failed[0]:
        raise ImplicitSolveFailure(
            f"implicit equation not solved within {MAX_SOLVE_ITER} iterations"
        )
    xs = x[0]
    with np.errstate(divide="ignore"):
        log_abs = np.log(np.abs(xs))
    return Trajectory(
        sign=np.sign(xs).astype(np.int8),
        log_abs=log_abs,
        scheme=scheme,
        diverged_at=None if diverged_at[0] < 0 else int(diverged_at[0]),
        plain=xs,
    )


def write_trajectory_csv(path, trajectory: Trajectory):
    """``step,t,sign,log_abs,value_or_inf`` with 17 significant digits."""
    times = trajectory.scheme.times
    values = trajectory.values()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "t", "sign", "log_abs", "value_or_inf"])
        for k in range(len(trajectory.sign)):
            writer.writerow([
                k, f"{times[k]:.17g}", int(trajectory.sign[k]),
                f"{trajectory.log_abs[k]:.17g}", f"{values[k]:.17g}",
            ])

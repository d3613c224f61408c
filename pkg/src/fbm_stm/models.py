"""Test equations driven by fBm.

All models use the canonical sign convention

    dX = -lam * kappa * t^(kappa-1) * X dt + mu * X dB^H,

so ``lam > 0`` is the stable direction. The numerical-experiments convention
writes the drift as ``+lam * kappa * t^(kappa-1) * X``; use
:meth:`LinearTestModel.from_example_convention` to enter parameters that way.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, NumericalOverflowWarning

__all__ = [
    "LinearTestModel",
    "AssumptionConstants",
    "NonlinearModel",
    "ModelKind",
    "AssumptionReport",
    "cubic_drift",
    "cubic_drift_sin_diffusion",
    "linear_as_nonlinear",
    "exact_solution_linear",
    "exact_mean_square_linear",
    "check_assumption",
]


def _time_power(t, kappa):
    # t^(kappa-1) with 0^0 = 1 so kappa = 1 is the constant-coefficient case
    return np.power(t, kappa - 1.0)


@dataclass(frozen=True)
class LinearTestModel:
    lam: float
    mu: float
    kappa: float
    x0: float

    def __post_init__(self):
        if not self.kappa >= 1:
            raise DomainError(f"kappa must be >= 1, got {self.kappa!r}")
        if self.x0 == 0 or not math.isfinite(self.x0):
            raise DomainError("x0 must be a finite nonzero constant")

    @classmethod
    def from_example_convention(cls, lam, mu, kappa, x0):
        """Build from a drift written as ``+lam * kappa * t^(kappa-1) * X``."""
        return cls(lam=-lam, mu=mu, kappa=kappa, x0=x0)

    def to_example_convention(self):
        """Return ``(lam, mu, kappa, x0)`` with the drift sign flipped."""
        return (-self.lam, self.mu, self.kappa, self.x0)

    def drift(self, t, x):
        return -self.lam * self.kappa * _time_power(t, self.kappa) * x

    def drift_dx(self, t, x):
        return -self.lam * self.kappa * _time_power(t, self.kappa) * np.ones_like(x)

    def diffusion(self, t, x):
        return self.mu * x


@dataclass(frozen=True)
class AssumptionConstants:
    """Constants (lam, lam_bar, mu, kappa) of the monotone / growth conditions."""

    lam: float
    lam_bar: float
    mu: float
    kappa: float

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError("lam must be positive")
        if not self.lam_bar >= self.lam:
            raise DomainError("lam_bar must satisfy lam_bar >= lam > 0")
        if not self.mu > 0:
            raise DomainError("mu must be positive")
        if not self.kappa >= 1:
            raise DomainError("kappa must be >= 1")


class ModelKind(str, enum.Enum):
    CUBIC_DRIFT = "cubic_drift"
    CUBIC_DRIFT_SIN_DIFFUSION = "cubic_drift_sin_diffusion"
    CUSTOM = "custom"


@dataclass(frozen=True)
class NonlinearModel:
    """Drift/diffusion pair. Callables must accept numpy arrays elementwise.

    ``drift_dx`` (the x-derivative of the drift) is optional; without it the
    implicit solver falls back to a finite-difference slope.
    """

    kind: ModelKind
    constants: AssumptionConstants
    x0: float
    drift: Callable = None
    diffusion: Callable = None
    drift_dx: Optional[Callable] = None

    def __post_init__(self):
        if self.drift is None or self.diffusion is None:
            raise DomainError("drift and diffusion callables are required")


def cubic_drift(lam, kappa, mu, x0, lam_bar=None):
    """f = -lam kappa t^(kappa-1) x - x^3, g = mu x.

    The cubic term violates the linear-growth bound on f for large |x|, so
    ``lam_bar`` is only nominal here (defaults to ``lam``).
    """
    consts = AssumptionConstants(lam, lam if lam_bar is None else lam_bar, mu, kappa)
    rate = lam * kappa

    def drift(t, x):
        return -rate * _time_power(t, kappa) * x - x**3

    def drift_dx(t, x):
        return -rate * _time_power(t, kappa) - 3.0 * x**2

    def diffusion(t, x):
        return mu * x

    return NonlinearModel(ModelKind.CUBIC_DRIFT, consts, x0, drift, diffusion, drift_dx)


def cubic_drift_sin_diffusion(lam, kappa, x0, mu=2.0, lam_bar=None):
    """Cubic drift with g = x + sin(x); |x + sin x| <= 2|x| so mu = 2 by default."""
    base = cubic_drift(lam, kappa, mu, x0, lam_bar)

    def diffusion(t, x):
        return x + np.sin(x)

    return NonlinearModel(
        ModelKind.CUBIC_DRIFT_SIN_DIFFUSION, base.constants, x0,
        base.drift, diffusion, base.drift_dx,
    )


def linear_as_nonlinear(model: LinearTestModel):
    """Wrap the linear test equation as a Custom nonlinear model."""
    lam_pos = model.lam if model.lam > 0 else 1.0
    consts = AssumptionConstants(lam_pos, lam_pos, max(abs(model.mu), 1e-300), model.kappa)
    return NonlinearModel(
        ModelKind.CUSTOM, consts, model.x0, model.drift, model.diffusion, model.drift_dx
    )


def _warn_overflow(values):
    if np.any(np.isinf(values)):
        warnings.warn("closed-form value overflowed to inf", NumericalOverflowWarning, stacklevel=3)


def exact_solution_linear(model: LinearTestModel, t, bh_value):
    """X(t) = x0 * exp(-lam t^kappa + mu B^H(t)). Vectorised over t, bh_value."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be nonnegative")
    with np.errstate(over="ignore"):
        out = model.x0 * np.exp(-model.lam * t**model.kappa + model.mu * np.asarray(bh_value))
    _warn_overflow(out)
    return out if out.ndim else float(out)


def exact_mean_square_linear(model: LinearTestModel, hurst, t):
    """E|X(t)|^2 = x0^2 exp(2(-lam t^kappa + mu^2 t^2H))."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be nonnegative")
    with np.errstate(over="ignore"):
        out = model.x0**2 * np.exp(
            2.0 * (-model.lam * t**model.kappa + model.mu**2 * t ** (2.0 * hurst))
        )
    _warn_overflow(out)
    return out if out.ndim else float(out)


def log_exact_mean_square_linear(model: LinearTestModel, hurst, t):
    """Natural log of :func:`exact_mean_square_linear`; never overflows."""
    t = np.asarray(t, dtype=float)
    return 2.0 * math.log(abs(model.x0)) + 2.0 * (
        -model.lam * t**model.kappa + model.mu**2 * t ** (2.0 * hurst)
    )


@dataclass(frozen=True)
class AssumptionReport:
    """Pointwise truth of the three conditions on a (t, x) grid, shape (len(t), len(x))."""

    holds_lip_f: np.ndarray
    holds_lg_f: np.ndarray
    holds_lg_g: np.ndarray

    @property
    def all_lip_f(self):
        return bool(self.holds_lip_f.all())

    @property
    def all_lg_f(self):
        return bool(self.holds_lg_f.all())

    @property
    def all_lg_g(self):
        return bool(self.holds_lg_g.all())

    @property
    def holds(self):
        return self.all_lip_f and self.all_lg_f and self.all_lg_g


def check_assumption(model: NonlinearModel, t_grid, x_grid, rtol=1e-12):
    """Evaluate the monotone, linear-growth and uniform linear-growth
    inequalities at every grid point. Advisory only; nothing is enforced."""
    t = np.asarray(t_grid, dtype=float)
    x = np.asarray(x_grid, dtype=float)
    if t.size == 0 or x.size == 0:
        raise DomainError("grids must be nonempty")
    if np.any(t <= 0):
        raise DomainError("t_grid must be strictly positive")
    c = model.constants
    tt, xx = np.meshgrid(t, x, indexing="ij")
    f = model.drift(tt, xx)
    g = model.diffusion(tt, xx)
    rate = c.kappa * _time_power(tt, c.kappa) * xx**2
    bound_lip = -c.lam * rate
    lip = xx * f <= bound_lip + rtol * np.abs(bound_lip)
    bound_lgf = c.lam_bar * c.kappa * _time_power(tt, c.kappa) * np.abs(xx)
    lgf = np.abs(f) <= bound_lgf * (1 + rtol)
    lgg = np.abs(g) <= c.mu * np.abs(xx) * (1 + rtol)
    return AssumptionReport(lip, lgf, lgg)

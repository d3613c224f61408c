"""Closed-form stability predicates, thresholds and bounds for the theta
method on the fBm-driven linear test equation and its nonlinear extension.

Every verdict says whether stability is *guaranteed* by a proven statement;
empirical behaviour is the business of :mod:`fbm_stm.lab`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import matmul_toeplitz

from .errors import DomainError
from .fbm import autocovariance
from .models import AssumptionConstants
from .stm import beta_n, alpha_n

__all__ = [
    "Source",
    "Guarantee",
    "TheoremVerdict",
    "KAPPA_TOL",
    "resolve_kappa",
    "threshold_linear",
    "threshold_nonlinear",
    "continuous_stability",
    "theorem1_classify",
    "theorem2_classify",
    "brownian_dt_threshold",
    "brownian_step_criterion",
    "brownian_classify",
    "remark_p_threshold",
    "envelope_bound",
    "sigma_tilde_sq",
]

KAPPA_TOL = 1e-12
_C1 = math.sqrt(1.5) * math.e
_C2 = math.sqrt(6.0) * math.e


class Source(str, enum.Enum):
    CONTINUOUS = "ContinuousCondMS"
    THEOREM1_I = "Theorem1_i"
    THEOREM1_II = "Theorem1_ii"
    THEOREM1_III = "Theorem1_iii"
    THEOREM2_I = "Theorem2_i"
    THEOREM2_II = "Theorem2_ii"
    BROWNIAN = "BrownianProposition"
    OPEN = "OpenRegion"


class Guarantee(str, enum.Enum):
    STABLE = "StableGuaranteed"
    NOT_UNCONDITIONAL = "NotUnconditionallyStable"
    NONE = "NoGuarantee"


@dataclass(frozen=True)
class TheoremVerdict:
    source: Source
    guaranteed: Guarantee
    detail: str
    thresholds: dict = field(default_factory=dict)
    requires: tuple = ()

    def record(self):
        parts = [f"source={self.source.value}", f"guaranteed={self.guaranteed.value}"]
        parts += [f"{k}={v:.17g}" for k, v in self.thresholds.items()]
        if self.requires:
            parts.append("requires=" + ",".join(self.requires))
        parts.append(f'detail="{self.detail}"')
        return " ".join(parts)


def resolve_kappa(kappa, hurst):
    """Return ``(kappa_value, equals_2h)``; ``kappa`` may be the string "2H"."""
    if isinstance(kappa, str):
        if kappa.strip().upper() != "2H":
            raise DomainError(f"symbolic kappa must be '2H', got {kappa!r}")
        return 2.0 * hurst, True
    kappa = float(kappa)
    return kappa, abs(kappa - 2.0 * hurst) <= KAPPA_TOL


def threshold_linear():
    """Lower theta bound sqrt(3/2) e / (sqrt(3/2) e + 1) for the linear test equation."""
    return _C1 / (_C1 + 1.0)


def threshold_nonlinear(ratio=1.0):
    """Lower theta bound sqrt(6) e r / (sqrt(6) e r + 1), r = lam_bar / lam."""
    if not ratio >= 1.0:
        raise DomainError("lam_bar / lam must be >= 1")
    return _C2 * ratio / (_C2 * ratio + 1.0)


def continuous_stability(lam, mu, kappa, hurst):
    """Mean-square stability of the exact solution."""
    k, at_2h = resolve_kappa(kappa, hurst)
    if at_2h:
        return -lam + mu * mu < 0
    return k > 2.0 * hurst and lam > 0


def _check_theta(theta):
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"theta must lie in [0, 1], got {theta!r}")


def theorem1_classify(kappa, hurst, theta):
    """Case analysis for the linear test equation."""
    if not 0.5 < hurst < 1.0:
        raise DomainError(f"hurst must lie in (1/2, 1), got {hurst!r}")
    _check_theta(theta)
    k, at_2h = resolve_kappa(kappa, hurst)
    above = at_2h or k > 2.0 * hurst
    thr = threshold_linear()
    th = {"theta_threshold": thr}
    if above and theta >= thr:
        return TheoremVerdict(Source.THEOREM1_I, Guarantee.STABLE,
                              "kappa >= 2H and theta above the linear threshold", th)
    if k > 1.5 and 0.5 < theta <= 1.0:
        return TheoremVerdict(Source.THEOREM1_II, Guarantee.STABLE,
                              "kappa > 3/2 and theta in (1/2, 1]", th)
    if above and 0.0 < theta < 0.5:
        return TheoremVerdict(Source.THEOREM1_III, Guarantee.NOT_UNCONDITIONAL,
                              "theta < 1/2: unstable for some step sizes", th)
    if not above:
        why = "kappa < 2H lies outside the hypotheses"
    elif theta == 0.0:
        why = "theta = 0 is not covered"
    else:
        why = "2H <= kappa <= 3/2 with theta in [1/2, threshold) is unresolved"
    return TheoremVerdict(Source.OPEN, Guarantee.NONE, why, th)


def theorem2_classify(constants: AssumptionConstants, theta, hurst):
    """Case analysis for the nonlinear equation under the assumption constants."""
    if not 0.5 <= hurst < 1.0:
        raise DomainError(f"hurst must lie in [1/2, 1), got {hurst!r}")
    _check_theta(theta)
    thr = threshold_nonlinear(constants.lam_bar / constants.lam)
    th = {"theta_threshold": thr}
    if theta == 1.0:
        return TheoremVerdict(Source.THEOREM2_I, Guarantee.STABLE,
                              "backward Euler", th, ("Lip_f", "LG_g"))
    if thr <= theta < 1.0:
        return TheoremVerdict(Source.THEOREM2_II, Guarantee.STABLE,
                              "theta above the nonlinear threshold", th, ("Lip_f", "LG_f", "LG_g"))
    return TheoremVerdict(Source.OPEN, Guarantee.NONE,
                          "theta below the nonlinear threshold", th, ())


def brownian_step_criterion(lam, mu, theta, dt):
    """(1 - 2 theta) lam^2 dt + (mu^2 - 2 lam); negative iff the per-step
    second moment alpha^2 + beta^2 dt is below 1 (H = 1/2, kappa = 1)."""
    return (1.0 - 2.0 * theta) * lam * lam * dt + (mu * mu - 2.0 * lam)


def brownian_dt_threshold(lam, mu, theta):
    """Largest stable step (2 lam - mu^2) / ((1 - 2 theta) lam^2), or inf.

    Returns ``inf`` when every step is stable (theta >= 1/2 and 2 lam > mu^2),
    ``0.0`` when none is (theta < 1/2 and 2 lam <= mu^2) and ``nan`` when the
    stable steps are not an interval starting at 0 (theta > 1/2, 2 lam <= mu^2).
    """
    _check_theta(theta)
    if not lam > 0:
        raise DomainError("lam must be positive")
    gap = 2.0 * lam - mu * mu
    if theta >= 0.5:
        return math.inf if gap > 0 else math.nan
    return max(gap, 0.0) / ((1.0 - 2.0 * theta) * lam * lam)


def brownian_classify(lam, mu, kappa, theta, dt):
    """Mean-square stability of the theta method for Brownian driving noise."""
    _check_theta(theta)
    if not kappa >= 1:
        raise DomainError("kappa must be >= 1")
    if not dt > 0:
        raise DomainError("dt must be positive")
    if kappa > 1:
        if 0.5 < theta <= 1.0:
            return TheoremVerdict(Source.BROWNIAN, Guarantee.STABLE, "kappa > 1 and theta > 1/2")
        return TheoremVerdict(Source.BROWNIAN, Guarantee.NOT_UNCONDITIONAL,
                              "kappa > 1 and theta <= 1/2: not mean square stable")
    crit = brownian_step_criterion(lam, mu, theta, dt)
    th = {"criterion": crit}
    if lam > 0:
        th["dt_star"] = brownian_dt_threshold(lam, mu, theta)
    if crit < 0:
        return TheoremVerdict(Source.BROWNIAN, Guarantee.STABLE,
                              "kappa = 1 and per-step second moment below 1", th)
    return TheoremVerdict(Source.BROWNIAN, Guarantee.NOT_UNCONDITIONAL,
                          "kappa = 1 and per-step second moment >= 1: not mean square stable", th)


def remark_p_threshold(p):
    """p-th moment constant M_p = (2/e) / ((p+1) C(p, p/2)) and the theta
    threshold 1 / (1 + M_p)."""
    if int(p) != p or p < 2 or p % 2:
        raise DomainError(f"p must be an even integer >= 2, got {p!r}")
    p = int(p)
    m_p = (2.0 / math.e) / ((p + 1) * math.comb(p, p // 2))
    return {"m_p": m_p, "theta_threshold": 1.0 / (1.0 + m_p)}


def envelope_bound(n, theta):
    """log of (sqrt(3/2) e (1-theta)/theta)^(2n) / sqrt(4 pi n)."""
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    if not 0.5 < theta < 1.0:
        raise DomainError("theta must lie in (1/2, 1)")
    base = _C1 * (1.0 - theta) / theta
    return 2.0 * n * math.log(base) - 0.5 * math.log(4.0 * math.pi * n)


def sigma_tilde_sq(n, theta, lam, mu, kappa, dt, hurst, signs):
    """Return ``(sigma_tilde^2, mu_tilde)`` for weights ``signs`` in {-1, 0, 1}^n.

    sigma_tilde^2 = sum_ij s_i s_j beta_i beta_j Cov(V_i, V_j) is evaluated
    with an FFT Toeplitz product; mu_tilde = sum_i s_i alpha_i.
    """
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    if not lam > 0:
        raise DomainError("lam must be positive")
    s = np.asarray(signs, dtype=float)
    if s.shape != (n,) or not np.all(np.isin(s, (-1.0, 0.0, 1.0))):
        raise DomainError("signs must be a length-n vector over {-1, 0, 1}")
    k = np.arange(n)
    w = s * beta_n(k, theta, lam, mu, kappa, dt)
    mu_tilde = float(np.dot(s, alpha_n(k, theta, lam, kappa, dt)))
    if not w.any():
        return 0.0, mu_tilde
    gamma = autocovariance(n, dt, hurst)
    cw = gamma[0] * w if hurst == 0.5 else matmul_toeplitz(gamma, w)
    return float(np.dot(w, cw)), mu_tilde

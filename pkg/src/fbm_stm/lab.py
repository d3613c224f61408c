"""Monte Carlo ensembles, mean-square estimation and stability verdicts.

Per-path states are reduced in the log domain: each chunk of paths keeps,
for every recorded step, the triple

    M  = max_p 2 log|X_p|
    s1 = sum_p exp(2 log|X_p| - M)
    m2 = sum_p (exp(2 log|X_p| - M) - s1 / P)^2

so the mean of X^2 and its relative variance survive any magnitude. Chunks
are fixed blocks of path indices (stream id = path index) and are folded in
index order, so the result does not depend on how many workers ran them.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .errors import (
    CapExceeded,
    DomainError,
    EnsembleError,
    InsufficientData,
    NumericalFailure,
)
from .fbm import (
    FbmGrid,
    SamplingMethod,
    covariance_matrix,
    increment_covariance,
    sample_increment_paths,
    stream_generator,
)
from .models import LinearTestModel, NonlinearModel
from .special import GaussianScalar, gaussian_raw_moment
from .stm import ThetaScheme, simulate_linear_paths, simulate_nonlinear_paths, step_factors

__all__ = [
    "EnsembleConfig",
    "MeanSquareSeries",
    "StabilityVerdict",
    "run_ensemble",
    "run_exact_ensemble",
    "classify",
    "product_moment_exact",
    "slln_diagnostic",
    "log_factor_covariance",
    "resolve_workers",
    "map_chunks",
    "log_mean_square_from_logs",
    "CHUNK_SIZE",
]

CHUNK_SIZE = 256
MAX_EXACT_N = 10


@dataclass(frozen=True)
class EnsembleConfig:
    n_paths: int
    master_seed: int = 0
    record_stride: Optional[int] = None
    burn_in_fraction: float = 0.2

    def __post_init__(self):
        if int(self.n_paths) != self.n_paths or self.n_paths < 2:
            raise DomainError(f"n_paths must be an integer >= 2, got {self.n_paths!r}")
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            raise DomainError("master_seed must be a nonnegative integer")
        if self.record_stride is not None and (
            int(self.record_stride) != self.record_stride or self.record_stride < 1
        ):
            raise DomainError("record_stride must be a positive integer")
        if not 0.0 <= self.burn_in_fraction < 0.5:
            raise DomainError("burn_in_fraction must lie in [0, 0.5)")

    def stride_for(self, n_steps):
        if self.record_stride is not None:
            return int(self.record_stride)
        return max(1, n_steps // 1024)


@dataclass
class MeanSquareSeries:
    steps: np.ndarray
    times: np.ndarray
    log_mean_square: np.ndarray
    log_std_error: np.ndarray
    n_paths: int
    diverged_by_step: np.ndarray

    @property
    def diverged_fraction(self):
        return float(self.diverged_by_step[-1]) if len(self.diverged_by_step) else 0.0

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "t", "log_mean_square", "log_std_error", "diverged_fraction"])
            for row in zip(self.steps, self.times, self.log_mean_square,
                           self.log_std_error, self.diverged_by_step):
                writer.writerow([int(row[0])] + [f"{float(x):.17g}" for x in row[1:]])


@dataclass(frozen=True)
class StabilityVerdict:
    label: str
    slope: float
    slope_ci: float
    drop: float
    n_fit: int = 0
    horizon_step: int = 0
    diverged_fraction: float = 0.0

    def record(self):
        """Single-line ``key=value`` text form."""
        return " ".join(f"{k}={_fmt(v)}" for k, v in self.__dict__.items())


def _fmt(v):
    return f"{v:.10g}" if isinstance(v, float) else str(v)


# -- worker pool ----------------------------------------------------------------


def resolve_workers(n_workers=None):
    if n_workers is None:
        raw = os.environ.get("FBM_STM_THREADS", "0").strip() or "0"
        try:
            n_workers = int(raw)
        except ValueError:
            raise DomainError(f"FBM_STM_THREADS must be an integer, got {raw!r}") from None
    if n_workers < 0:
        raise DomainError("worker count must be nonnegative")
    return n_workers or (os.cpu_count() or 1)


def map_chunks(fn, n_paths, n_workers):
    """Apply ``fn`` to consecutive blocks of path indices; results in block order."""
    starts = list(range(0, n_paths, CHUNK_SIZE))
    chunks = [range(s, min(s + CHUNK_SIZE, n_paths)) for s in starts]
    workers = resolve_workers(n_workers)
    if workers == 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


# -- log-domain reduction -------------------------------------------------------


def _chunk_stats(log_abs):
    """Reduce (paths, steps) log|X| to per-step (M, s1, m2, n_diverged, n)."""
    two = 2.0 * log_abs
    diverged = np.isposinf(two)
    n_div = diverged.sum(axis=0)
    finite_two = np.where(diverged, -np.inf, two)
    m = finite_two.max(axis=0)
    shift = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(finite_two - shift)
    s1 = e.sum(axis=0)
    m2 = ((e - s1 / e.shape[0]) ** 2).sum(axis=0)
    return m, s1, m2, n_div, e.shape[0]


def _combine(a, b):
    # pairwise update of centred sums, each side rescaled to the common max
    m = np.maximum(a[0], b[0])
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(invalid="ignore"):
        fa = np.where(np.isfinite(a[0]), np.exp(a[0] - shift), 0.0)
        fb = np.where(np.isfinite(b[0]), np.exp(b[0] - shift), 0.0)
    na, nb = a[4], b[4]
    delta = a[1] * fa / na - b[1] * fb / nb
    return (
        m,
        a[1] * fa + b[1] * fb,
        a[2] * fa * fa + b[2] * fb * fb + delta * delta * (na * nb / (na + nb)),
        a[3] + b[3],
        na + nb,
    )


def _finish(acc, n_paths):
    m, s1, m2, n_div, _ = acc
    p = float(n_paths)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_mean = np.where(np.isfinite(m), m + np.log(s1) - math.log(p), -np.inf)
        relvar = (m2 / (p - 1.0)) / (s1 / p) ** 2
        se = np.sqrt(np.clip(relvar, 0.0, None) / p)
    se = np.where(np.isfinite(m), se, 0.0)
    div = n_div > 0
    log_mean = np.where(div, np.inf, log_mean)
    se = np.where(div, np.inf, se)
    return log_mean, se, n_div / p


def log_mean_square_from_logs(log_abs):
    """Log-domain mean of X^2 and its delta-method standard error for a
    (paths, steps) array of log|X|."""
    log_abs = np.atleast_2d(np.asarray(log_abs, dtype=float))
    log_mean, se, _ = _finish(_chunk_stats(log_abs), log_abs.shape[0])
    return log_mean, se


# -- ensembles ------------------------------------------------------------------


def _record_steps(n_steps, stride):
    steps = np.arange(0, n_steps + 1, stride)
    if steps[-1] != n_steps:
        steps = np.append(steps, n_steps)
    return steps


def _path_logs(model, scheme, increments):
    if isinstance(model, LinearTestModel):
        _, log_abs = simulate_linear_paths(model, scheme, increments)
        return log_abs, None
    if isinstance(model, NonlinearModel):
        x, _, failed = simulate_nonlinear_paths(model, scheme, increments)
        with np.errstate(divide="ignore"):
            return np.log(np.abs(x)), failed
    raise DomainError(f"unsupported model type {type(model).__name__}")


def run_ensemble(
    model,
    scheme: ThetaScheme,
    fbm: FbmGrid,
    config: EnsembleConfig,
    method=SamplingMethod.CIRCULANT,
    n_workers=None,
) -> MeanSquareSeries:
    """Monte Carlo estimate of log E|X_n|^2 on the recorded steps."""
    if fbm.n_steps != scheme.n_steps or fbm.dt != scheme.dt:
        raise DomainError("fbm grid and scheme disagree on dt or n_steps")
    steps = _record_steps(scheme.n_steps, config.stride_for(scheme.n_steps))

    def work(chunk):
        try:
            v = sample_increment_paths(fbm, method, config.master_seed, chunk)
            log_abs, failed = _path_logs(model, scheme, v)
        except NumericalFailure as exc:
            raise EnsembleError(chunk[0], exc) from exc
        if failed is not None and failed.any():
            sid = chunk[int(np.argmax(failed))]
            raise EnsembleError(sid, "implicit solve did not converge")
        return _chunk_stats(log_abs[:, steps])

    parts = map_chunks(work, config.n_paths, n_workers)
    acc = parts[0]
    for part in parts[1:]:
        acc = _combine(acc, part)
    log_mean, se, div = _finish(acc, config.n_paths)
    return MeanSquareSeries(steps, steps * scheme.dt, log_mean, se, config.n_paths, div)


def run_exact_ensemble(
    model: LinearTestModel,
    hurst,
    times,
    config: EnsembleConfig,
    method=SamplingMethod.CIRCULANT,
    n_workers=None,
) -> MeanSquareSeries:
    """Mean square of the closed-form solution evaluated on sampled B^H(t).

    ``times`` must be positive integer multiples of their smallest common
    spacing; B^H is sampled on that grid.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(times <= 0):
        raise DomainError("times must be a nonempty vector of positive values")
    dt = float(np.min(times))
    idx = np.rint(times / dt).astype(int)
    if np.any(np.abs(idx * dt - times) > 1e-12 * times):
        raise DomainError("times must be integer multiples of the smallest time")
    grid = FbmGrid(hurst, dt, int(idx.max()))

    def work(chunk):
        v = sample_increment_paths(grid, method, config.master_seed, chunk)
        bh = np.cumsum(v, axis=1)[:, idx - 1]
        # log|X(t)| directly, so huge or tiny values stay exact
        log_abs = math.log(abs(model.x0)) - model.lam * times**model.kappa + model.mu * bh
        return _chunk_stats(log_abs)

    parts = map_chunks(work, config.n_paths, n_workers)
    acc = parts[0]
    for part in parts[1:]:
        acc = _combine(acc, part)
    log_mean, se, div = _finish(acc, config.n_paths)
    return MeanSquareSeries(idx, times, log_mean, se, config.n_paths, div)


# -- verdicts -------------------------------------------------------------------


def _fit(x, y):
    if x.size < 3:
        return None
    fit = stats.linregress(x, y)
    ci = float(stats.t.ppf(0.975, x.size - 2) * fit.stderr)
    return float(fit.slope), ci if math.isfinite(ci) else 0.0, int(x.size)


def classify(
    series: MeanSquareSeries,
    slope_tol=0.0,
    drop_margin=2.0,
    burn_in_fraction=0.2,
    max_log_std_error=0.5,
    min_points=10,
) -> StabilityVerdict:
    """Label a mean-square series Stable / Unstable / Inconclusive.

    Decay is judged only over the usable horizon: the leading run of
    recorded points whose estimate is finite and whose log standard error is
    at most ``max_log_std_error``. Past that point a finite ensemble no
    longer sees the rare paths that carry the mean and the estimate drifts
    downward whatever the true behaviour. That bias never produces growth,
    so a significant positive slope over the whole series (past burn-in)
    also counts as instability.
    """
    lm = np.asarray(series.log_mean_square, dtype=float)
    se = np.asarray(series.log_std_error, dtype=float)
    steps = np.asarray(series.steps, dtype=float)
    n = lm.size
    if n - int(burn_in_fraction * n) < min_points:
        raise InsufficientData(f"need {min_points} recorded points past burn-in, have {n}")
    div_frac = series.diverged_fraction
    if div_frac > 0.5:
        return StabilityVerdict("Unstable", math.inf, 0.0, math.inf, 0, int(steps[-1]), div_frac)
    good = np.isfinite(lm) & (se <= max_log_std_error)
    horizon = n if good.all() else int(np.argmin(good))
    if horizon == 0:
        raise InsufficientData("first recorded point is already unusable")
    start = int(burn_in_fraction * horizon)
    near = _fit(steps[start:horizon], lm[start:horizon])
    if near is None:
        raise InsufficientData(f"only {horizon - start} usable points past burn-in")
    finite = np.isfinite(lm)
    start_all = int(burn_in_fraction * n)
    far = _fit(steps[start_all:][finite[start_all:]], lm[start_all:][finite[start_all:]])
    drop = -math.inf if np.isneginf(lm[-1]) else float(lm[horizon - 1] - lm[0])
    slope, ci, n_fit = near
    if far is not None and far[0] - far[1] > max(slope - ci, slope_tol):
        slope, ci, n_fit = far
    if slope - ci > slope_tol:
        label = "Unstable"
    elif slope + ci < -slope_tol and drop < -drop_margin:
        label = "Stable"
    else:
        label = "Inconclusive"
    return StabilityVerdict(label, slope, ci, drop, n_fit, int(steps[horizon - 1]), div_frac)


# -- exact small-n moments ------------------------------------------------------


def product_moment_exact(n, model: LinearTestModel, scheme: ThetaScheme, hurst):
    """E[prod_{k<n} Z_k^2] from the polarization identity.

    Each of the 3^n terms is an even raw moment of a scalar Gaussian
    Q = sum_i h_i Z_i with h_i = 1 - v_i, v in {0, 1, 2}^n.
    """
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    n = int(n)
    if n > MAX_EXACT_N:
        raise CapExceeded(f"product_moment_exact enumerates 3^n terms; n <= {MAX_EXACT_N}")
    if not model.lam > 0:
        raise DomainError("lam must be positive")
    alpha, beta = step_factors(model, scheme, n)
    cov = covariance_matrix(FbmGrid(hurst, scheme.dt, n))
    v = np.array(list(itertools.product((0, 1, 2), repeat=n)), dtype=float)
    h = 1.0 - v
    coef = np.prod(np.array([1.0, -2.0, 1.0])[v.astype(int)], axis=1)
    means = h @ alpha
    hb = h * beta
    variances = np.einsum("ij,jk,ik->i", hb, cov, hb)
    terms = [
        c * gaussian_raw_moment(GaussianScalar(m, math.sqrt(max(s2, 0.0))), 2 * n)
        for c, m, s2 in zip(coef, means, variances)
    ]
    return math.fsum(terms) / math.factorial(2 * n)


# -- diagnostics ----------------------------------------------------------------


def slln_diagnostic(model: LinearTestModel, scheme: ThetaScheme, hurst, config: EnsembleConfig,
                    method=SamplingMethod.CIRCULANT, n_workers=None):
    """Cross-path mean of S_n / n with S_n = sum_{k<n} ln Z_k^2.

    Exact-zero factors contribute 0 to S_n. Returns a dict with
    ``running_mean`` (length n_steps, entry k-1 is S_k / k) and the
    reference value ``ln((1 - theta) / theta)^2``.
    """
    theta = scheme.theta
    if not (0 < theta < 1 and theta != 0.5):
        raise DomainError("theta must lie in (0, 1) and differ from 1/2")
    alpha, beta = step_factors(model, scheme)
    grid = FbmGrid(hurst, scheme.dt, scheme.n_steps)
    counts = np.arange(1, scheme.n_steps + 1)

    def work(chunk):
        v = sample_increment_paths(grid, method, config.master_seed, chunk)
        z2 = (alpha + beta * v) ** 2
        with np.errstate(divide="ignore"):
            y = np.where(z2 > 0, np.log(z2), 0.0)
        return (np.cumsum(y, axis=1) / counts).sum(axis=0)

    parts = map_chunks(work, config.n_paths, n_workers)
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    reference = 2.0 * math.log((1.0 - theta) / theta)
    return {"running_mean": total / config.n_paths, "reference": reference}


def log_factor_covariance(i, j, model: LinearTestModel, scheme: ThetaScheme, hurst,
                          n_samples=100_000, master_seed=0, return_se=False):
    """Monte Carlo Cov(ln Z_i^2, ln Z_j^2) from exact joint draws of (V_i, V_j).

    With ``return_se`` the pair (estimate, standard error) is returned.
    """
    if i == j:
        raise DomainError("i and j must differ")
    if i < 0 or j < 0:
        raise DomainError("indices must be nonnegative")
    if n_samples < 10_000:
        raise DomainError("n_samples must be at least 10^4")
    idx = np.array([i, j])
    alpha, beta = step_factors(model, scheme, int(idx.max()) + 1)
    var = increment_covariance(0, scheme.dt, hurst)
    c = increment_covariance(abs(i - j), scheme.dt, hurst)
    chol = np.linalg.cholesky(np.array([[var, c], [c, var]]))
    z = stream_generator(master_seed, 0).standard_normal((int(n_samples), 2))
    v = z @ chol.T
    with np.errstate(divide="ignore"):
        y = np.log((alpha[idx] + beta[idx] * v) ** 2)
    y = np.where(np.isfinite(y), y, 0.0)
    d = (y - y.mean(axis=0))
    prod = d[:, 0] * d[:, 1]
    est = float(prod.sum() / (n_samples - 1))
    if return_se:
        return est, float(prod.std(ddof=1) / math.sqrt(n_samples))
    return est


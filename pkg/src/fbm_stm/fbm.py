"""Exact sampling of fractional Gaussian noise on a uniform grid.

Two samplers are provided, both exact in law:

* Cholesky factorisation of the Toeplitz increment covariance (small grids).
* Circulant embedding of the stationary increment sequence (any size,
  O(n log n) per path).

Every path is driven by its own Philox counter stream keyed by
``(master_seed, stream_id)``, so a given path is reproducible no matter which
worker produces it or in which order.
"""

from __future__ import annotations

import csv
import enum
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CapExceeded, CirculantEmbeddingFailure, DomainError

__all__ = [
    "FbmGrid",
    "IncrementBlock",
    "SamplingMethod",
    "increment_covariance",
    "autocovariance",
    "covariance_matrix",
    "stream_generator",
    "sample_increments",
    "sample_increment_paths",
    "cumulative_path",
    "write_csv",
    "DEFAULT_CHOLESKY_CAP",
]

DEFAULT_CHOLESKY_CAP = 4096
EMBEDDING_TOL = 1e-10


class SamplingMethod(str, enum.Enum):
    CHOLESKY = "cholesky"
    CIRCULANT = "circulant"


def _check_hurst_dt(hurst, dt):
    if not (0.5 <= hurst < 1.0):
        raise DomainError(f"hurst must lie in [0.5, 1), got {hurst!r}")
    if not (dt > 0 and math.isfinite(dt)):
        raise DomainError(f"dt must be positive and finite, got {dt!r}")


@dataclass(frozen=True)
class FbmGrid:
    """Uniform grid ``t_n = n * dt``, ``n = 0..n_steps``, with Hurst index."""

    hurst: float
    dt: float
    n_steps: int

    def __post_init__(self):
        _check_hurst_dt(self.hurst, self.dt)
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise DomainError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class IncrementBlock:
    values: np.ndarray = field(repr=False)
    grid: FbmGrid
    stream_id: int

    def __post_init__(self):
        if self.values.shape != (self.grid.n_steps,):
            raise DomainError(
                f"block length {self.values.shape} does not match n_steps={self.grid.n_steps}"
            )


_SERIES_TERMS = 40


def _second_difference(k, two_h):
    """``(k+1)^2H - 2 k^2H + (k-1)^2H`` for integer lags ``k >= 1``.

    With x = 1/k this is ``2 k^2H sum_j C(2H, 2j) x^(2j)``; every term has
    the factor 2H(2H-1), so there is no cancellation for large k or for H
    near 1/2. Forty terms reach double precision already at k = 2.
    """
    k = np.asarray(k, dtype=float)
    out = np.empty_like(k)
    one = k < 2
    out[one] = 2.0 * math.expm1((two_h - 1.0) * math.log(2.0))
    kk = k[~one]
    x2 = 1.0 / (kk * kk)
    coef = 1.0
    power = np.ones_like(kk)
    total = np.zeros_like(kk)
    for j in range(1, _SERIES_TERMS + 1):
        m = 2 * j
        coef *= (two_h - m + 2) * (two_h - m + 1) / ((m - 1) * m)
        power = power * x2
        total += coef * power
    out[~one] = 2.0 * kk**two_h * total
    return out


def autocovariance(n, dt, hurst):
    """Increment autocovariance at lags ``0..n-1`` as an array."""
    _check_hurst_dt(hurst, dt)
    var = dt ** (2.0 * hurst)
    gamma = np.zeros(n)
    if n == 0:
        return gamma
    gamma[0] = var
    if hurst != 0.5 and n > 1:
        gamma[1:] = 0.5 * var * _second_difference(np.arange(1, n), 2.0 * hurst)
    return gamma


def increment_covariance(lag, dt, hurst):
    """E[V_m V_{m+lag}] for fBm increments on a grid of spacing ``dt``."""
    _check_hurst_dt(hurst, dt)
    if int(lag) != lag or lag < 0:
        raise DomainError(f"lag must be a nonnegative integer, got {lag!r}")
    lag = int(lag)
    var = dt ** (2.0 * hurst)
    if lag == 0:
        return var
    if hurst == 0.5:
        return 0.0
    return float(0.5 * var * _second_difference(np.array([lag]), 2.0 * hurst)[0])


def covariance_matrix(grid: FbmGrid):
    """Toeplitz covariance of the increment vector on ``grid``."""
    if grid.hurst == 0.5:
        return grid.dt * np.eye(grid.n_steps)
    gamma = autocovariance(grid.n_steps, grid.dt, grid.hurst)
    idx = np.arange(grid.n_steps)
    return gamma[np.abs(idx[:, None] - idx[None, :])]


# -- factor caches -------------------------------------------------------------

_cache_lock = threading.Lock()
_cholesky_cache: dict = {}
_circulant_cache: dict = {}


def _cholesky_factor(grid):
    key = (grid.n_steps, grid.dt, grid.hurst)
    factor = _cholesky_cache.get(key)
    if factor is None:
        with _cache_lock:
            factor = _cholesky_cache.get(key)
            if factor is None:
                factor = np.linalg.cholesky(covariance_matrix(grid))
                factor.setflags(write=False)
                _cholesky_cache[key] = factor
    return factor


def _circulant_sqrt_eigenvalues(grid, tol=EMBEDDING_TOL):
    key = (grid.n_steps, grid.dt, grid.hurst, tol)
    root = _circulant_cache.get(key)
    if root is None:
        with _cache_lock:
            root = _circulant_cache.get(key)
            if root is None:
                n = grid.n_steps
                gamma = autocovariance(n + 1, grid.dt, grid.hurst)
                row = np.concatenate([gamma, gamma[-2:0:-1]])
                eig = np.fft.fft(row).real
                scale = max(eig.max(), 0.0)
                if eig.min() < -tol * scale:
                    raise CirculantEmbeddingFailure(
                        f"negative circulant eigenvalue {eig.min():.3e} "
                        f"(largest {scale:.3e}) for H={grid.hurst}, n={n}"
                    )
                root = np.sqrt(np.clip(eig, 0.0, None) / row.size)
                root.setflags(write=False)
                _circulant_cache[key] = root
    return root


def clear_caches():
    with _cache_lock:
        _cholesky_cache.clear()
        _circulant_cache.clear()


# -- random streams ------------------------------------------------------------


def stream_generator(master_seed, stream_id):
    """Generator for stream ``stream_id``: Philox keyed by the master seed.

    The stream id occupies the high words of the 256-bit counter, so streams
    never overlap for fewer than 2**128 draws each.
    """
    if master_seed < 0 or stream_id < 0:
        raise DomainError("master_seed and stream_id must be nonnegative")
    key = np.random.SeedSequence(int(master_seed)).generate_state(2, np.uint64)
    sid = int(stream_id)
    counter = [0, 0, sid & 0xFFFFFFFFFFFFFFFF, sid >> 64]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def _normals(master_seed, stream_ids, width):
    out = np.empty((len(stream_ids), width))
    for row, sid in enumerate(stream_ids):
        out[row] = stream_generator(master_seed, sid).standard_normal(width)
    return out


def sample_increment_paths(
    grid: FbmGrid,
    method=SamplingMethod.CIRCULANT,
    master_seed=0,
    stream_ids: Sequence[int] | Iterable[int] = (0,),
    cholesky_cap=DEFAULT_CHOLESKY_CAP,
):
    """Sample one increment vector per stream id; returns shape (len(ids), n)."""
    method = SamplingMethod(method)
    stream_ids = list(stream_ids)
    n = grid.n_steps
    if method is SamplingMethod.CHOLESKY and n > cholesky_cap:
        raise CapExceeded(f"Cholesky sampler capped at n_steps={cholesky_cap}, got {n}")
    if grid.hurst == 0.5:
        return math.sqrt(grid.dt) * _normals(master_seed, stream_ids, n)
    if method is SamplingMethod.CHOLESKY:
        factor = _cholesky_factor(grid)
        z = _normals(master_seed, stream_ids, n)
        # one matrix-vector product per stream: a batched product may round
        # differently depending on batch shape, which would tie a path's
        # values to the batch it was drawn in
        return np.stack([factor @ row for row in z]) if len(z) else z
    root = _circulant_sqrt_eigenvalues(grid)
    m = root.size
    z = _normals(master_seed, stream_ids, 2 * m)
    w = (z[:, :m] + 1j * z[:, m:]) * root
    return np.fft.fft(w, axis=1).real[:, :n].copy()


def sample_increments(
    grid: FbmGrid,
    method=SamplingMethod.CIRCULANT,
    master_seed=0,
    stream_id=0,
    cholesky_cap=DEFAULT_CHOLESKY_CAP,
) -> IncrementBlock:
    values = sample_increment_paths(grid, method, master_seed, [stream_id], cholesky_cap)[0]
    return IncrementBlock(values=values, grid=grid, stream_id=int(stream_id))


def cumulative_path(block):
    """B^H(t_0..t_n) from the increments, with B^H(0) = 0."""
    values = block.values if isinstance(block, IncrementBlock) else np.asarray(block, float)
    out = np.zeros(values.size + 1)
    np.cumsum(values, out=out[1:])
    return out


def write_csv(path, grid: FbmGrid, values):
    """Write ``step,t,value`` rows with 17 significant digits.

    ``values`` may hold n_steps entries (increments, indexed from step 0) or
    n_steps + 1 entries (a path on the full grid).
    """
    values = np.asarray(values, dtype=float)
    times = grid.times
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "t", "value"])
        for step, value in enumerate(values):
            writer.writerow([step, f"{times[step]:.17g}", f"{value:.17g}"])

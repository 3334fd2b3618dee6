"""Numerical primitives shared across the package.

Chi-squared probabilities, the rerandomization variance multiplier,
Cholesky factorization with a one-shot ridge repair, (truncated) normal
sampling, pool-adjacent-violators isotonic regression and Gaussian
process supremum quantiles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Union

import numpy as np

from .exceptions import ConfigurationError, DomainError, FactorizationError

__all__ = [
    "RngStream",
    "PathEnsemble",
    "as_generator",
    "chisq_cdf",
    "chisq_quantile",
    "kappa",
    "cholesky",
    "psd_cholesky",
    "mvn_sample",
    "constrained_sphere_normal",
    "pava_isotonic",
    "gaussian_paths",
    "gp_sup_quantile",
    "normal_quantile",
]

logger = logging.getLogger(__name__)

_GAMMA_TOL = 1e-15
_GAMMA_MAX_ITER = 10_000
_PIVOT_TOL = 1e-12
_RIDGE = 1e-10


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys,
    so two streams with different ids never share state and identical ids
    always reproduce the same draws.

    Parameters
    ----------
    seed : int
        Master seed (non-negative).
    stream_id : tuple of int
        Path of sub-stream indices below the master seed.
    """

    seed: int
    stream_id: tuple = field(default_factory=tuple)

    def __post_init__(self):
        sid = self.stream_id
        if isinstance(sid, (int, np.integer)):
            sid = (int(sid),)
        sid = tuple(int(s) for s in sid)
        if self.seed < 0 or any(s < 0 for s in sid):
            raise DomainError("seed and stream ids must be non-negative")
        object.__setattr__(self, "stream_id", sid)

    def substream(self, *ids: int) -> "RngStream":
        """Return the child stream ``stream_id + ids``."""
        return RngStream(self.seed, self.stream_id + tuple(ids))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        return np.random.Generator(np.random.PCG64(ss))


RngLike = Union[RngStream, np.random.Generator, int, None]


def as_generator(rng: RngLike) -> np.random.Generator:
    """Coerce an :class:`RngStream`, generator, seed or ``None`` to a generator."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated sample paths on a common time grid.

    Attributes
    ----------
    grid : ndarray of shape (m,)
        Strictly increasing evaluation points.
    paths : ndarray of shape (n_paths, m)
        One realization per row.
    """

    grid: np.ndarray
    paths: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        paths = np.atleast_2d(np.asarray(self.paths, dtype=float))
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
            raise DomainError("grid must be one-dimensional and strictly increasing")
        if paths.shape[1] != grid.shape[0]:
            raise DomainError("paths must have one column per grid point")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "paths", paths)

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]


# --------------------------------------------------------------------------
# chi-squared distribution
# --------------------------------------------------------------------------


def _lower_gamma_series(a: float, x: float) -> float:
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_n x^n / ((a+1)...(a+n))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_TOL:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_gamma_cf(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_TOL:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def chisq_cdf(x: float, df: int) -> float:
    """Cumulative distribution function of the chi-squared distribution.

    Evaluates the regularized lower incomplete gamma function
    ``P(df/2, x/2)`` by its power series when ``x < df + 1`` and through
    the continued fraction for the upper tail otherwise.

    Parameters
    ----------
    x : float
        Non-negative evaluation point; ``inf`` is allowed.
    df : int
        Degrees of freedom, at least 1.

    Returns
    -------
    float
        Probability in ``[0, 1]``.
    """
    if df < 1 or int(df) != df:
        raise DomainError(f"degrees of freedom must be a positive integer, got {df}")
    if not x >= 0:
        raise DomainError(f"chi-squared argument must be non-negative, got {x}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    a = 0.5 * df
    h = 0.5 * x
    if h == 0:
        # x / 2 underflows for the smallest subnormals
        return 0.0
    if x < df + 1:
        value = _lower_gamma_series(a, h)
    else:
        value = 1.0 - _upper_gamma_cf(a, h)
    return min(max(value, 0.0), 1.0)


def chisq_quantile(prob: float, df: int, tol: float = 1e-13) -> float:
    """Inverse of :func:`chisq_cdf` by bracketing and bisection."""
    if not 0.0 < prob < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {prob}")
    lo, hi = 0.0, float(max(df, 1))
    while chisq_cdf(hi, df) < prob:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if chisq_cdf(mid, df) < prob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def kappa(c: float, p: int) -> float:
    """Variance multiplier of a standard normal coordinate truncated to a ball.

    ``kappa(c, p) = P(chi2_{p+2} <= c) / P(chi2_p <= c)``, which equals
    ``E(L_1^2 | L'L < c)`` for ``L ~ N(0, I_p)``.

    Parameters
    ----------
    c : float
        Positive acceptance threshold; ``inf`` gives 1.
    p : int
        Number of balancing covariates.
    """
    if not c > 0:
        raise DomainError(f"threshold c must be positive, got {c}")
    if p < 1 or int(p) != p:
        raise DomainError(f"p must be a positive integer, got {p}")
    if math.isinf(c):
        return 1.0
    num = chisq_cdf(c, p + 2)
    den = chisq_cdf(c, p)
    if den <= 0.0:
        # deep small-c regime: ratio of leading series terms
        return c / (p + 2)
    return num / den


def normal_quantile(prob: float) -> float:
    """Standard normal quantile."""
    return NormalDist().inv_cdf(prob)


# --------------------------------------------------------------------------
# factorization and sampling
# --------------------------------------------------------------------------


def _as_symmetric(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DomainError("matrix has non-finite entries")
    scale = max(np.max(np.abs(M)), 1.0)
    if np.max(np.abs(M - M.T)) > 1e-8 * scale:
        raise DomainError("matrix is not symmetric")
    return 0.5 * (M + M.T)


def cholesky(M) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises :class:`FactorizationError` when the factorization breaks down
    or any squared pivot is at most ``1e-12`` times the largest diagonal
    entry.
    """
    M = _as_symmetric(M)
    dmax = float(np.max(np.diag(M))) if M.size else 0.0
    if dmax <= 0:
        raise FactorizationError("matrix has no positive diagonal entry")
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"matrix is not positive definite: {exc}") from None
    if np.any(np.diag(L) ** 2 <= _PIVOT_TOL * dmax):
        raise FactorizationError("matrix is numerically singular")
    return L


def psd_cholesky(M) -> np.ndarray:
    """Cholesky factor with a single ridge repair for semi-definite input.

    If the plain factorization fails, ``1e-10 * max(diag(M))`` is added to
    the diagonal once; a second failure propagates.  A matrix of zeros
    yields a zero factor.
    """
    M = _as_symmetric(M)
    if not np.any(M):
        return np.zeros_like(M)
    try:
        return cholesky(M)
    except FactorizationError:
        ridge = _RIDGE * float(np.max(np.diag(M)))
        logger.info("PSD repair: adding ridge %.3g to a %d-dim covariance", ridge, M.shape[0])
        return cholesky(M + ridge * np.eye(M.shape[0]))


def mvn_sample(rng: RngLike, mean, cov, size: int | None = None) -> np.ndarray:
    """Draw from a multivariate normal distribution via its Cholesky factor.

    A covariance of all zeros is treated as degenerate and returns the mean.
    """
    gen = as_generator(rng)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = _as_symmetric(cov)
    if cov.shape[0] != mean.shape[0]:
        raise DomainError("mean and covariance dimensions differ")
    shape = (mean.shape[0],) if size is None else (size, mean.shape[0])
    if not np.any(cov):
        return np.broadcast_to(mean, shape).copy()
    L = cholesky(cov)
    z = gen.standard_normal(shape)
    return mean + z @ L.T


def constrained_sphere_normal(
    rng: RngLike, p: int, c: float, size: int | None = None, return_tries: bool = False
):
    """Standard ``p``-variate normal draws conditioned on ``L'L < c``.

    Plain rejection sampling; raw draws are generated in batches sized by
    the acceptance probability.

    Parameters
    ----------
    rng : RngStream or Generator
    p : int
        Dimension.
    c : float
        Squared radius of the acceptance ball.
    size : int, optional
        Number of accepted draws; a single vector is returned when omitted.
    return_tries : bool, default=False
        Also return the number of raw draws consumed.
    """
    if p < 1:
        raise DomainError("p must be at least 1")
    if not c > 0:
        raise DomainError("c must be positive")
    gen = as_generator(rng)
    want = 1 if size is None else int(size)
    accept = chisq_cdf(c, p) if math.isfinite(c) else 1.0
    out = []
    have = 0
    tries = 0
    while have < want:
        batch = max(16, int(1.1 * (want - have) / max(accept, 1e-6)) + 16)
        z = gen.standard_normal((batch, p))
        ok = np.einsum("ij,ij->i", z, z) < c
        take = z[ok][: want - have]
        if take.shape[0] == want - have:
            # count raw draws up to and including the last accepted one
            last = np.flatnonzero(ok)[want - have - 1]
            tries += last + 1
        else:
            tries += batch
        out.append(take)
        have += take.shape[0]
    draws = np.concatenate(out, axis=0)
    result = draws[0] if size is None else draws
    if return_tries:
        return result, tries
    return result


# --------------------------------------------------------------------------
# isotonic regression
# --------------------------------------------------------------------------


def pava_isotonic(y, direction: str = "nonincreasing", weights=None) -> np.ndarray:
    """Least-squares projection onto monotone sequences (pool adjacent violators).

    Parameters
    ----------
    y : array-like of shape (m,)
    direction : {"nonincreasing", "nondecreasing"}
    weights : array-like of shape (m,), optional
        Positive observation weights.

    Returns
    -------
    ndarray of shape (m,)
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise DomainError("pava_isotonic needs a nonempty input")
    if direction not in ("nonincreasing", "nondecreasing"):
        raise DomainError(f"unknown direction {direction!r}")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape != y.shape or np.any(w <= 0):
        raise DomainError("weights must be positive and match y")
    sign = 1.0 if direction == "nondecreasing" else -1.0
    v = sign * y

    means, wts, counts = [], [], []
    for yi, wi in zip(v, w):
        means.append(yi)
        wts.append(wi)
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, c2 = means.pop(), wts.pop(), counts.pop()
            m1, w1, c1 = means.pop(), wts.pop(), counts.pop()
            wsum = w1 + w2
            means.append((w1 * m1 + w2 * m2) / wsum)
            wts.append(wsum)
            counts.append(c1 + c2)
    fitted = np.repeat(means, counts)
    return sign * fitted


# --------------------------------------------------------------------------
# Gaussian process paths
# --------------------------------------------------------------------------


def gaussian_paths(cov, n_paths: int, rng: RngLike) -> np.ndarray:
    """Mean-zero Gaussian paths with covariance ``cov`` on a finite grid.

    Returns an array of shape ``(n_paths, m)``.
    """
    L = psd_cholesky(cov)
    gen = as_generator(rng)
    z = gen.standard_normal((int(n_paths), L.shape[0]))
    return z @ L.T


def gp_sup_quantile(cov_grid, n_paths: int, alpha: float, rng: RngLike) -> float:
    """Quantile of the supremum of ``|G(t)|`` over a grid for a Gaussian process.

    Parameters
    ----------
    cov_grid : array-like of shape (m, m)
        Covariance of the process on the grid (positive semi-definite).
    n_paths : int
        Number of simulated paths, at least 100.
    alpha : float
        The ``1 - alpha`` quantile of the supremum is returned.
    rng : RngStream or Generator
    """
    if n_paths < 100:
        raise ConfigurationError(f"n_paths={n_paths} is too small for a stable quantile (< 100)")
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    cov_grid = _as_symmetric(cov_grid)
    if not np.any(cov_grid):
        return 0.0
    paths = gaussian_paths(cov_grid, n_paths, rng)
    sups = np.max(np.abs(paths), axis=1)
    return float(np.quantile(sups, 1.0 - alpha))

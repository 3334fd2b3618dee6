"""Treatment assignment: simple, rerandomized and stratified rerandomized.

Rerandomization redraws Bernoulli assignments until the Mahalanobis
distance between arm means of the balancing covariates falls below a
threshold ``c``.  The stratified variant draws within strata and balances
the stratum-size weighted within-stratum mean differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .data import DesignMeta
from .exceptions import DesignError, DomainError, FactorizationError
from .mathcore import RngLike, as_generator, cholesky

__all__ = [
    "Assignment",
    "ImbalanceReport",
    "assign_simple",
    "imbalance",
    "rerandomize",
    "stratified_imbalance",
    "stratified_rerandomize",
    "assign",
    "balance_covariance",
]

MAX_EMPTY_RETRIES = 1000
DEFAULT_MAX_TRIES = 100_000


@dataclass(frozen=True)
class Assignment:
    """Accepted treatment vector.

    Attributes
    ----------
    arms : ndarray of shape (n,)
    n_tries : int
        Number of complete candidate assignments evaluated.
    accepted_distance : float or None
        Mahalanobis distance of the accepted draw (rerandomized designs).
    """

    arms: np.ndarray
    n_tries: int = 1
    accepted_distance: Optional[float] = None


@dataclass(frozen=True)
class ImbalanceReport:
    """Imbalance vector, its estimated variance and the Mahalanobis distance."""

    I_n: np.ndarray
    var_hat: np.ndarray
    distance: float


def _check_zrr(Zrr) -> np.ndarray:
    Z = np.asarray(Zrr, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2 or Z.shape[1] == 0:
        raise DomainError("balancing covariates must be an (n, p) array with p >= 1")
    return Z


def _bernoulli_both_arms(n: int, pi1: float, gen: np.random.Generator) -> np.ndarray:
    for _ in range(MAX_EMPTY_RETRIES):
        arms = (gen.random(n) < pi1).astype(np.int64)
        s = arms.sum()
        if 0 < s < n:
            return arms
    raise DesignError(f"could not obtain two nonempty arms in {MAX_EMPTY_RETRIES} draws (n={n}, pi1={pi1})")


def assign_simple(n: int, pi1: float, rng: RngLike) -> Assignment:
    """Independent Bernoulli(``pi1``) assignment with both arms nonempty."""
    if n < 2:
        raise DomainError("need at least two units")
    if not 0.0 < pi1 < 1.0:
        raise DomainError("pi1 must lie in (0, 1)")
    return Assignment(_bernoulli_both_arms(int(n), float(pi1), as_generator(rng)))


def _mahalanobis(I_n: np.ndarray, var_hat: np.ndarray) -> float:
    try:
        L = cholesky(var_hat)
    except FactorizationError:
        raise DesignError(
            "imbalance variance is singular; the balancing covariates are collinear or constant"
        ) from None
    u = np.linalg.solve(L, I_n)
    return float(u @ u)


def imbalance(Zrr, arms) -> ImbalanceReport:
    """Difference of arm means and its Mahalanobis distance.

    ``var_hat = (n1 n0)^{-1} sum_i (Z_i - Zbar)(Z_i - Zbar)'``.
    """
    Z = _check_zrr(Zrr)
    arms = np.asarray(arms)
    n1 = int(np.sum(arms == 1))
    n0 = arms.shape[0] - n1
    if n1 == 0 or n0 == 0:
        raise DesignError("both arms must be nonempty")
    I_n = Z[arms == 1].mean(axis=0) - Z[arms == 0].mean(axis=0)
    Zc = Z - Z.mean(axis=0)
    var_hat = Zc.T @ Zc / (n1 * n0)
    return ImbalanceReport(I_n, var_hat, _mahalanobis(I_n, var_hat))


def rerandomize(Zrr, pi1: float, c: float, rng: RngLike, max_tries: int = DEFAULT_MAX_TRIES) -> Assignment:
    """Redraw Bernoulli assignments until the imbalance distance is below ``c``.

    Draws with an empty arm are discarded without counting as a try.
    """
    Z = _check_zrr(Zrr)
    if not c > 0:
        raise DomainError("threshold c must be positive")
    n = Z.shape[0]
    gen = as_generator(rng)
    Zc = Z - Z.mean(axis=0)
    try:
        L = cholesky(Zc.T @ Zc)
    except FactorizationError:
        raise DesignError("balancing covariates are collinear or constant") from None
    for tries in range(1, int(max_tries) + 1):
        arms = _bernoulli_both_arms(n, pi1, gen)
        n1 = int(arms.sum())
        n0 = n - n1
        diff = Zc[arms == 1].mean(axis=0) - Zc[arms == 0].mean(axis=0)
        u = np.linalg.solve(L, diff)
        dist = float(n1 * n0 * (u @ u))
        if dist < c:
            return Assignment(arms, tries, dist)
    raise DesignError(
        f"no acceptable assignment in {max_tries} tries (empirical acceptance rate 0); "
        f"threshold c={c} is likely too small"
    )


def _strata_index(D) -> tuple:
    D = np.asarray(D)
    levels, inv = np.unique(D, return_inverse=True)
    return levels, inv


def stratified_imbalance(Zrr, D, arms) -> ImbalanceReport:
    """Stratum-weighted imbalance and its variance estimate.

    ``I = sum_d (n_d/n) (mean_{d,1} - mean_{d,0})`` and
    ``var_hat = sum_d (n_d/n)^2 (n_{1d} n_{0d})^{-1} sum_{i in d} (Z_i - Zbar_d)(Z_i - Zbar_d)'``.
    """
    Z = _check_zrr(Zrr)
    arms = np.asarray(arms)
    levels, inv = _strata_index(D)
    n, p = Z.shape
    I_n = np.zeros(p)
    var_hat = np.zeros((p, p))
    for k, d in enumerate(levels):
        in_d = inv == k
        a = arms[in_d]
        n1 = int(np.sum(a == 1))
        n0 = int(in_d.sum()) - n1
        if n1 == 0 or n0 == 0:
            raise DesignError(f"stratum {d} is missing an arm")
        Zd = Z[in_d]
        w = in_d.sum() / n
        I_n += w * (Zd[a == 1].mean(axis=0) - Zd[a == 0].mean(axis=0))
        Zc = Zd - Zd.mean(axis=0)
        var_hat += w**2 * (Zc.T @ Zc) / (n1 * n0)
    return ImbalanceReport(I_n, var_hat, _mahalanobis(I_n, var_hat))


def stratified_rerandomize(
    Zrr,
    D,
    pi1_by_stratum: Mapping,
    c: float,
    rng: RngLike,
    max_tries: int = DEFAULT_MAX_TRIES,
) -> Assignment:
    """Within-stratum Bernoulli draws repeated until the stratified distance is below ``c``."""
    Z = _check_zrr(Zrr)
    if not c > 0:
        raise DomainError("threshold c must be positive")
    levels, inv = _strata_index(D)
    gen = as_generator(rng)
    lookup = {int(k): float(v) for k, v in dict(pi1_by_stratum).items()}
    missing = [int(d) for d in levels if int(d) not in lookup]
    if missing:
        raise DesignError(f"no treatment probability given for strata {missing}")
    probs = np.array([lookup[int(d)] for d in levels])
    if np.any((probs <= 0) | (probs >= 1)):
        raise DomainError("per-stratum probabilities must lie in (0, 1)")
    sizes = np.bincount(inv, minlength=levels.size)
    small = levels[sizes < 2]
    if small.size:
        raise DesignError(f"stratum {small[0]} has fewer than two units; both arms cannot be filled")
    members = [np.flatnonzero(inv == k) for k in range(levels.size)]
    for tries in range(1, int(max_tries) + 1):
        arms = np.empty(Z.shape[0], dtype=np.int64)
        for k, idx in enumerate(members):
            arms[idx] = _bernoulli_both_arms(idx.size, probs[k], gen)
        rep = stratified_imbalance(Z, inv, arms)
        if rep.distance < c:
            return Assignment(arms, tries, rep.distance)
    raise DesignError(f"no acceptable stratified assignment in {max_tries} tries; c={c} is likely too small")


def assign(meta: DesignMeta, Zrr, rng: RngLike, D=None, max_tries: int = DEFAULT_MAX_TRIES) -> Assignment:
    """Assignment according to a :class:`~survrerand.data.DesignMeta`."""
    Z = np.asarray(Zrr, dtype=float)
    n = Z.shape[0]
    if meta.design == "simple":
        return assign_simple(n, meta.pi1, rng)
    if meta.design == "rerand":
        return rerandomize(Z, meta.pi1, meta.c, rng, max_tries)
    if D is None:
        raise DesignError("stratified design needs stratum labels")
    probs = {int(d): meta.stratum_pi1(d) for d in np.unique(D)}
    return stratified_rerandomize(Z, D, probs, meta.c, rng, max_tries)


def balance_covariance(Zrr, arms, D=None) -> np.ndarray:
    """``n`` times the estimated imbalance variance.

    This is the covariance of the scaled imbalance used by the variance
    correction; the stratified form applies when ``D`` is given.
    """
    Z = _check_zrr(Zrr)
    rep = imbalance(Z, arms) if D is None else stratified_imbalance(Z, D, arms)
    return Z.shape[0] * rep.var_hat

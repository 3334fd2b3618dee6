"""Variance estimation under (stratified) rerandomization, intervals and bands.

Rerandomization shrinks the part of an estimator's variance that is
explained by the balancing covariates.  With ``Sigma(t)`` the influence
variance, ``W(t)`` the cross-covariance between the influence function and
the scaled imbalance, and ``Sigma_B`` the imbalance covariance, the share of
explained variance is ``rho(t) = W' Sigma_B^{-1} W / Sigma(t)`` and the
corrected variance is ``Sigma(t) {1 - (1 - kappa(c)) rho(t)}``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset, DesignMeta
from .datagen import GeneratedSample, observe
from .designs import assign_simple, balance_covariance
from .estimators import InfluenceMatrix, SurvivalCurve, km_influence
from .exceptions import DesignError, FactorizationError, InferenceError
from .mathcore import (
    PathEnsemble,
    RngLike,
    RngStream,
    as_generator,
    cholesky,
    constrained_sphere_normal,
    gaussian_paths,
    gp_sup_quantile,
    kappa,
    normal_quantile,
    pava_isotonic,
)

__all__ = [
    "CovarianceReport",
    "Band",
    "GeometryPaths",
    "if_covariance",
    "rerand_covariance_vector",
    "corrected_variance",
    "covariance_report",
    "pointwise_ci",
    "uniform_band",
    "geometry_decomposition",
    "write_geometry_csv",
]

logger = logging.getLogger(__name__)


def if_covariance(IF, s: Optional[int] = None, t: Optional[int] = None):
    """Empirical second-moment covariance ``n^{-1} sum_i phi_i(s) phi_i(t)``.

    With ``s`` and ``t`` (column indices) a scalar is returned, otherwise
    the full grid matrix.
    """
    Phi = IF.values if isinstance(IF, InfluenceMatrix) else np.asarray(IF, dtype=float)
    n = Phi.shape[0]
    if s is not None and t is not None:
        return float(Phi[:, s] @ Phi[:, t] / n)
    return Phi.T @ Phi / n


def rerand_covariance_vector(IF, Zrr, arms, meta: DesignMeta, strata=None) -> np.ndarray:
    """Cross-covariance between the influence function and the scaled imbalance.

    Estimated as the difference between arm-1 and arm-0 averages of
    ``phi_i(t) (Z_i - Zbar)``.  For the stratified design the covariates
    are centered within strata and stratum contributions are combined with
    weights ``n_d / n``.  For estimators whose influence values vanish
    outside the target arm (Kaplan-Meier, IPCW) this reduces to the
    target-arm average alone.

    Returns
    -------
    ndarray of shape (m, p)
        One row per grid time; zeros for the simple design.
    """
    Phi = IF.values if isinstance(IF, InfluenceMatrix) else np.asarray(IF, dtype=float)
    Z = np.asarray(Zrr, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    arms = np.asarray(arms)
    if meta.design == "simple":
        return np.zeros((Phi.shape[1], Z.shape[1]))

    def contrast(rows):
        Zc = Z[rows] - Z[rows].mean(axis=0)
        a = arms[rows]
        if not (np.any(a == 1) and np.any(a == 0)):
            raise InferenceError("every stratum must contain both arms")
        P = Phi[rows]
        return P[a == 1].T @ Zc[a == 1] / np.sum(a == 1) - P[a == 0].T @ Zc[a == 0] / np.sum(a == 0)

    if meta.design == "rerand":
        return contrast(np.arange(Z.shape[0]))
    if strata is None:
        raise InferenceError("stratified design requires stratum labels")
    strata = np.asarray(strata)
    out = np.zeros((Phi.shape[1], Z.shape[1]))
    for d in np.unique(strata):
        rows = np.flatnonzero(strata == d)
        out += rows.size / Z.shape[0] * contrast(rows)
    return out


def corrected_variance(sigma2, sigma_B_vec, Sigma_B, c: Optional[float], p_rr: int, design: str = "rerand"):
    """Rerandomization-corrected pointwise variance.

    Parameters
    ----------
    sigma2 : array-like of shape (m,)
        Uncorrected variances.
    sigma_B_vec : array-like of shape (m, p)
    Sigma_B : array-like of shape (p, p)
    c : float
        Acceptance threshold.
    p_rr : int
        Number of balancing covariates.
    design : str, default="rerand"
        ``"simple"`` skips the correction.

    Returns
    -------
    rho_hat : ndarray of shape (m,)
        Explained share, clipped to ``[0, 1]``.
    sigma2_corrected : ndarray of shape (m,)
    q : ndarray of shape (m,)
        Unclipped quadratic forms ``W' Sigma_B^{-1} W``.
    """
    sigma2 = np.atleast_1d(np.asarray(sigma2, dtype=float))
    if design == "simple":
        zeros = np.zeros_like(sigma2)
        return zeros, sigma2.copy(), zeros
    W = np.atleast_2d(np.asarray(sigma_B_vec, dtype=float))
    try:
        L = cholesky(Sigma_B)
    except FactorizationError:
        raise InferenceError("imbalance covariance is singular") from None
    U = np.linalg.solve(L, W.T)
    q = np.sum(U**2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(sigma2 > 0, np.clip(q / sigma2, 0.0, 1.0), 0.0)
    k = kappa(c, p_rr)
    corrected = sigma2 - (1.0 - k) * np.minimum(q, sigma2)
    return rho, corrected, q


@dataclass(frozen=True)
class CovarianceReport:
    """Variance components of an estimator on a grid.

    Attributes
    ----------
    grid : ndarray of shape (m,)
    sigma2_uncorrected : ndarray of shape (m,)
    sigma_B_vec : ndarray of shape (m, p)
    Sigma_B : ndarray of shape (p, p)
    kappa_c : float
    rho_hat : ndarray of shape (m,)
    sigma2_corrected : ndarray of shape (m,)
        Equal to the uncorrected variance when no correction applies.
    design : DesignMeta
    corrected : bool
        Whether the rerandomization correction was applied.
    cov_uncorrected, cov_corrected : ndarray of shape (m, m)
    """

    grid: np.ndarray
    sigma2_uncorrected: np.ndarray
    sigma_B_vec: np.ndarray
    Sigma_B: np.ndarray
    kappa_c: float
    rho_hat: np.ndarray
    sigma2_corrected: np.ndarray
    design: DesignMeta
    corrected: bool
    cov_uncorrected: np.ndarray
    cov_corrected: np.ndarray

    @property
    def variance_reduction(self) -> np.ndarray:
        """Percentage reduction of the corrected relative to the uncorrected variance."""
        with np.errstate(divide="ignore", invalid="ignore"):
            red = 100.0 * (self.sigma2_uncorrected - self.sigma2_corrected) / self.sigma2_uncorrected
        return np.where(self.sigma2_uncorrected > 0, red, 0.0)


def covariance_report(IF: InfluenceMatrix, dataset: Dataset, meta: DesignMeta) -> CovarianceReport:
    """Uncorrected and design-corrected covariance of an influence matrix.

    The correction is applied for Kaplan-Meier and IPCW influence matrices
    under rerandomized designs.  Cross-fitted (``dml``) influence matrices
    are left uncorrected, though ``rho_hat`` is still reported as a
    diagnostic.
    """
    Sigma = if_covariance(IF)
    sigma2 = np.diag(Sigma).copy()
    m = sigma2.size
    if meta.design == "simple":
        p = len(meta.rerand_cols) or len(dataset.rerand_cols)
        return CovarianceReport(
            IF.grid, sigma2, np.zeros((m, p)), np.zeros((p, p)), 1.0,
            np.zeros(m), sigma2.copy(), meta, False, Sigma, Sigma.copy(),
        )
    cols = list(meta.rerand_cols or dataset.rerand_cols)
    Z = dataset.covariates[:, cols]
    strata = dataset.stratum if meta.is_stratified else None
    if meta.is_stratified and strata is None:
        raise InferenceError("stratified design but the dataset has no stratum labels")
    W = rerand_covariance_vector(IF, Z, dataset.arm, meta, strata)
    try:
        Sigma_B = balance_covariance(Z, dataset.arm, strata)
    except DesignError as exc:
        raise InferenceError(str(exc)) from None
    rho, corrected, q = corrected_variance(sigma2, W, Sigma_B, meta.c, len(cols), meta.design)
    k = kappa(meta.c, len(cols))
    apply = IF.method != "dml"
    if apply:
        L = cholesky(Sigma_B)
        U = np.linalg.solve(L, W.T)
        G = U.T @ U
        # shrink rows so the diagonal matches the clipped quadratic form
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(q > sigma2, np.sqrt(np.where(q > 0, sigma2 / q, 0.0)), 1.0)
        G = scale[:, None] * G * scale[None, :]
        cov_c = Sigma - (1.0 - k) * G
        np.fill_diagonal(cov_c, corrected)
    else:
        corrected = sigma2.copy()
        cov_c = Sigma.copy()
    return CovarianceReport(IF.grid, sigma2, W, Sigma_B, k, rho, corrected, meta, apply, Sigma, cov_c)


@dataclass(frozen=True)
class Band:
    """Pointwise interval or simultaneous band on a grid."""

    grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    kind: str
    alpha: float
    critical_value: Optional[float] = None

    def covers(self, truth) -> np.ndarray:
        truth = np.asarray(truth, dtype=float)
        return (self.lower <= truth) & (truth <= self.upper)


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def pointwise_ci(curve, sigma2, n: int, alpha: float = 0.05, scale: str = "logit") -> Band:
    """Wald intervals on the plain or logit scale.

    On the logit scale, points where the estimate equals 0 get lower bound
    0 and the smallest positive upper bound on the grid as upper bound;
    points where it equals 1 get upper bound 1 and the smallest positive
    lower bound on the grid.

    Parameters
    ----------
    curve : SurvivalCurve or array-like
    sigma2 : array-like
        Asymptotic variances (of ``sqrt(n)`` times the estimator).
    n : int
    alpha : float, default=0.05
    scale : {"logit", "plain"}
    """
    grid = curve.grid if isinstance(curve, SurvivalCurve) else np.arange(np.size(curve), dtype=float)
    S = np.asarray(curve.values if isinstance(curve, SurvivalCurve) else curve, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(sigma2, dtype=float), 0.0)) / np.sqrt(n)
    z = normal_quantile(1.0 - alpha / 2.0)
    if scale == "plain":
        lo = np.clip(S - z * sd, 0.0, 1.0)
        hi = np.clip(S + z * sd, 0.0, 1.0)
        return Band(grid, lo, hi, "pointwise", alpha)
    if scale != "logit":
        raise InferenceError(f"unknown interval scale {scale!r}")
    inner = (S > 0) & (S < 1)
    lo = np.empty_like(S)
    hi = np.empty_like(S)
    Si = S[inner]
    logit = np.log(Si / (1.0 - Si))
    half = z * sd[inner] / (Si * (1.0 - Si))
    lo[inner] = _expit(logit - half)
    hi[inner] = _expit(logit + half)
    pos_hi = hi[inner][hi[inner] > 0]
    pos_lo = lo[inner][lo[inner] > 0]
    zero = S <= 0
    one = S >= 1
    lo[zero] = 0.0
    hi[zero] = pos_hi.min() if pos_hi.size else 0.0
    hi[one] = 1.0
    lo[one] = pos_lo.min() if pos_lo.size else 1.0
    return Band(grid, lo, hi, "pointwise", alpha)


def uniform_band(curve, cov_grid, n: int, alpha: float = 0.05, n_paths: int = 10_000, rng: RngLike = None) -> Band:
    """Fixed-width simultaneous band ``S +/- c_alpha / sqrt(n)`` with monotone limits.

    ``c_alpha`` is the ``1 - alpha`` quantile of ``sup_t |G(t)|`` for a
    mean-zero Gaussian process with covariance ``cov_grid``.  Both limits
    are clipped to ``[0, 1]`` and projected onto nonincreasing sequences.
    """
    if n_paths < 1000:
        raise InferenceError("uniform bands need at least 1000 simulated paths")
    grid = curve.grid if isinstance(curve, SurvivalCurve) else np.arange(np.size(curve), dtype=float)
    S = np.asarray(curve.values if isinstance(curve, SurvivalCurve) else curve, dtype=float)
    try:
        c_hat = gp_sup_quantile(cov_grid, n_paths, alpha, rng)
    except FactorizationError as exc:
        raise InferenceError(f"band covariance is not positive semi-definite: {exc}") from None
    half = c_hat / np.sqrt(n)
    lo = pava_isotonic(np.clip(S - half, 0.0, 1.0), "nonincreasing")
    hi = pava_isotonic(np.clip(S + half, 0.0, 1.0), "nonincreasing")
    return Band(grid, lo, hi, "uniform", alpha, c_hat)


# --------------------------------------------------------------------------
# geometry of the limiting process
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GeometryPaths:
    """Decomposition of the limiting process into projection and residual parts.

    Attributes
    ----------
    grid : ndarray of shape (m,)
    V, rho : ndarray of shape (m,)
        Pointwise variance and explained share.
    alpha_vec : ndarray of shape (m, p)
        Whitened cross-covariance ``Sigma_B^{-1/2} W(t)``.
    U : ndarray of shape (m, p)
        Unit directions of ``alpha_vec`` (zero rows where it vanishes).
    c, kappa_c : float
    L_free : ndarray of shape (n_paths, p)
        Unconstrained standard normal draws.
    L_constrained : ndarray of shape (n_paths, p)
        Draws conditioned on ``L'L < c``.
    projection_free, projection_constrained, residual : PathEnsemble
    total_free, total_constrained : PathEnsemble
        Projection plus the shared residual paths.
    """

    grid: np.ndarray
    V: np.ndarray
    rho: np.ndarray
    alpha_vec: np.ndarray
    U: np.ndarray
    c: float
    kappa_c: float
    L_free: np.ndarray
    L_constrained: np.ndarray
    projection_free: PathEnsemble
    projection_constrained: PathEnsemble
    residual: PathEnsemble
    total_free: PathEnsemble
    total_constrained: PathEnsemble

    @property
    def constrained_flags(self) -> np.ndarray:
        """Which unconstrained draws fall inside the acceptance ball."""
        return np.einsum("ij,ij->i", self.L_free, self.L_free) < self.c

    def predicted_constrained_variance(self) -> np.ndarray:
        return self.V * (1.0 - (1.0 - self.kappa_c) * self.rho)


def _inv_sqrt(M: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(M)
    if np.any(vals <= 0):
        raise InferenceError("imbalance covariance is not positive definite")
    return (vecs / np.sqrt(vals)) @ vecs.T


def geometry_decomposition(
    super_population: GeneratedSample,
    arm: int,
    grid,
    c: float,
    n_paths: int,
    rng: RngLike,
    pi1: float = 0.5,
) -> GeometryPaths:
    """Simulate the projection/residual decomposition of the KM limiting process.

    Treatment is assigned by simple randomization in the super-population
    and the Kaplan-Meier influence function of ``arm`` supplies the
    population covariance operators.

    Parameters
    ----------
    super_population : GeneratedSample
        At least ``1e4`` units.
    arm : {0, 1}
    grid : array-like of shape (m,)
    c : float
        Rerandomization threshold for the constrained draws.
    n_paths : int
    rng : RngStream or Generator
    pi1 : float, default=0.5
    """
    if super_population.n < 10_000:
        raise InferenceError("the super-population needs at least 1e4 units")
    stream = rng if isinstance(rng, RngStream) else None
    gen = as_generator(rng) if stream is None else None

    def sub(i):
        return stream.substream(i) if stream is not None else gen

    grid = np.asarray(grid, dtype=float)
    arms = assign_simple(super_population.n, pi1, sub(0)).arms
    ds = observe(super_population, arms)
    pi_a = pi1 if arm == 1 else 1.0 - pi1
    IF = km_influence(ds, arm, grid, pi_a=pi_a)
    Sigma = if_covariance(IF)
    V = np.diag(Sigma).copy()
    Z = ds.rerand_matrix
    meta = DesignMeta("rerand", pi1, c, tuple(ds.rerand_cols))
    W = rerand_covariance_vector(IF, Z, arms, meta)
    Sigma_B = balance_covariance(Z, arms)
    A = W @ _inv_sqrt(Sigma_B)
    norm = np.linalg.norm(A, axis=1)
    if not np.any(norm > 0):
        raise InferenceError("no projection onto the balancing covariates: geometry is degenerate")
    with np.errstate(divide="ignore", invalid="ignore"):
        U = np.where(norm[:, None] > 0, A / norm[:, None], 0.0)
        rho = np.where(V > 0, np.clip(norm**2 / V, 0.0, 1.0), 0.0)
    p = Z.shape[1]
    L_free = as_generator(sub(1)).standard_normal((n_paths, p))
    L_con = constrained_sphere_normal(sub(2), p, c, size=n_paths)
    R = Sigma - A @ A.T
    resid = gaussian_paths(R, n_paths, sub(3))
    proj_free = L_free @ A.T
    proj_con = L_con @ A.T
    return GeometryPaths(
        grid=grid,
        V=V,
        rho=rho,
        alpha_vec=A,
        U=U,
        c=float(c),
        kappa_c=kappa(c, p),
        L_free=L_free,
        L_constrained=L_con,
        projection_free=PathEnsemble(grid, proj_free),
        projection_constrained=PathEnsemble(grid, proj_con),
        residual=PathEnsemble(grid, resid),
        total_free=PathEnsemble(grid, proj_free + resid),
        total_constrained=PathEnsemble(grid, proj_con + resid),
    )


def write_geometry_csv(geom: GeometryPaths, path) -> None:
    """Long-format export ``panel,path_id,t,value,constrained``.

    Panel ``A`` holds the balancing draws (``t`` is the coordinate index),
    panel ``B`` the projection paths and panel ``C`` the total paths; all
    rows of a path carry the flag ``L'L < c`` of its draw.
    """
    flags = geom.constrained_flags
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["panel", "path_id", "t", "value", "constrained"])
        for i in range(geom.L_free.shape[0]):
            flag = int(flags[i])
            for j, v in enumerate(geom.L_free[i], start=1):
                w.writerow(["A", i, j, repr(float(v)), flag])
        for panel, ens in (("B", geom.projection_free), ("C", geom.total_free)):
            for i in range(ens.n_paths):
                flag = int(flags[i])
                for t, v in zip(geom.grid, ens.paths[i]):
                    w.writerow([panel, i, repr(float(t)), repr(float(v)), flag])

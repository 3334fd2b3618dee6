"""Cox proportional-hazards regression (Breslow ties, Breslow baseline).

Used as the censoring model behind inverse-probability-of-censoring weights
and as a built-in nuisance learner for the cross-fitted estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_survival_target
from .exceptions import FitError

_SEPARATION_TOL = 1e-6

__all__ = ["CoxFit", "fit_cox", "predict_survival", "partial_loglik", "CoxPHSurvival"]


@dataclass(frozen=True)
class CoxFit:
    """Fitted proportional-hazards model.

    Attributes
    ----------
    beta : ndarray of shape (p,)
    means : ndarray of shape (p,)
        Covariate means used for centering.
    times : ndarray of shape (m,)
        Distinct event times where the baseline hazard jumps.
    cumhaz : ndarray of shape (m,)
        Breslow baseline cumulative hazard (centered covariates) at ``times``.
    n_iter : int
    grad_norm : float
        Sup-norm of the score at ``beta``.
    loglik : float
        Partial log-likelihood at ``beta``.
    """

    beta: np.ndarray
    means: np.ndarray
    times: np.ndarray
    cumhaz: np.ndarray
    n_iter: int = 0
    grad_norm: float = 0.0
    loglik: float = 0.0

    @classmethod
    def null(cls, p: int) -> "CoxFit":
        """Model with zero hazard: survival identically one."""
        return cls(np.zeros(p), np.zeros(p), np.empty(0), np.empty(0))

    def baseline_at(self, t, left: bool = False) -> np.ndarray:
        """Baseline cumulative hazard at ``t`` (left limits when ``left``)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="left" if left else "right")
        padded = np.concatenate([[0.0], self.cumhaz])
        return padded[idx]

    def risk(self, Z) -> np.ndarray:
        """Relative risk ``exp((z - zbar)' beta)`` for covariate rows."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.beta.size == 0:
            return np.ones(Z.shape[0])
        return np.exp((Z - self.means) @ self.beta)


def _prepare(time, event, X):
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(np.int64)
    n = time.shape[0]
    X = np.asarray(X, dtype=float).reshape(n, -1) if X is not None else np.empty((n, 0))
    order = np.argsort(time, kind="mergesort")
    ts = time[order]
    es = event[order]
    Xs = X[order]
    ev_times = np.unique(ts[es == 1])
    start = np.searchsorted(ts, ev_times, side="left")
    ev_idx = np.searchsorted(ev_times, ts[es == 1])
    d = np.bincount(ev_idx, minlength=ev_times.size).astype(float)
    return ts, es, Xs, ev_times, start, ev_idx, d


class _PartialLikelihood:
    """Breslow partial likelihood with cached risk-set bookkeeping."""

    def __init__(self, time, event, X):
        self.ts, self.es, Xs, self.ev_times, self.start, ev_idx, self.d = _prepare(time, event, X)
        self.means = Xs.mean(axis=0) if Xs.shape[0] else np.zeros(Xs.shape[1])
        self.X = Xs - self.means
        p = self.X.shape[1]
        self.dx = np.zeros((self.ev_times.size, p))
        np.add.at(self.dx, ev_idx, self.X[self.es == 1])

    def _suffix(self, a):
        return np.cumsum(a[::-1], axis=0)[::-1]

    def evaluate(self, beta, need_info=True):
        eta = self.X @ beta
        shift = eta.max() if eta.size else 0.0
        r = np.exp(eta - shift)
        S0 = self._suffix(r)[self.start]
        loglik = float(np.sum(self.dx @ beta) - np.sum(self.d * (np.log(S0) + shift)))
        if not need_info:
            return loglik, None, None
        S1 = self._suffix(r[:, None] * self.X)[self.start]
        m1 = S1 / S0[:, None]
        score = self.dx.sum(axis=0) - self.d @ m1
        XX = self.X[:, :, None] * self.X[:, None, :]
        S2 = self._suffix(r[:, None, None] * XX)[self.start]
        info = np.einsum("j,jkl->kl", self.d, S2 / S0[:, None, None] - m1[:, :, None] * m1[:, None, :])
        return loglik, score, info

    def baseline(self, beta):
        eta = self.X @ beta
        S0 = self._suffix(np.exp(eta))[self.start]
        return np.cumsum(self.d / S0)


def partial_loglik(time, event, X, beta) -> float:
    """Breslow partial log-likelihood at ``beta`` (covariates centered)."""
    pl = _PartialLikelihood(time, event, X)
    return pl.evaluate(np.asarray(beta, dtype=float), need_info=False)[0]


def fit_cox(
    time,
    event,
    X=None,
    *,
    max_iter: int = 50,
    tol_score: float = 1e-8,
    tol_loglik: float = 1e-10,
    max_beta_norm: float = 50.0,
) -> CoxFit:
    """Maximize the Breslow partial likelihood by damped Newton steps.

    Parameters
    ----------
    time : array-like of shape (n,)
    event : array-like of shape (n,)
        1 for an observed event, 0 for censoring.
    X : array-like of shape (n, p), optional
        Covariates; constant columns receive a zero coefficient.
    max_iter : int, default=50
    tol_score : float, default=1e-8
        Convergence when the score sup-norm drops below this value.
    tol_loglik : float, default=1e-10
        Convergence when the relative log-likelihood change drops below this value.
    max_beta_norm : float, default=50
        Larger coefficient norms are reported as separation.

    Returns
    -------
    CoxFit

    Raises
    ------
    FitError
        No events, collinear covariates, divergence or non-convergence.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    if not np.any(event == 1):
        raise FitError("Cox model needs at least one event")
    pl = _PartialLikelihood(time, event, X)
    p = pl.X.shape[1]
    active = np.ptp(pl.X, axis=0) > 0 if p else np.zeros(0, dtype=bool)
    beta = np.zeros(p)
    loglik, score, info = pl.evaluate(beta)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        if not np.any(active) or np.max(np.abs(score[active])) < tol_score:
            converged = True
            break
        sub = info[np.ix_(active, active)]
        try:
            step_a = np.linalg.solve(sub, score[active])
        except np.linalg.LinAlgError:
            raise FitError("information matrix is singular; covariates are collinear") from None
        if not np.all(np.isfinite(step_a)):
            raise FitError("information matrix is singular; covariates are collinear")
        step = np.zeros(p)
        step[active] = step_a
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            ll_new = pl.evaluate(cand, need_info=False)[0]
            if np.isfinite(ll_new) and ll_new >= loglik:
                break
            scale *= 0.5
        else:
            # no ascent available at machine precision: treat as stationary
            converged = True
            break
        if np.linalg.norm(cand) > max_beta_norm:
            raise FitError(
                f"coefficient norm exceeded {max_beta_norm}; the partial likelihood looks "
                "monotone (possible separation by a covariate)"
            )
        rel = abs(ll_new - loglik) / max(abs(loglik), 1e-300)
        beta = cand
        loglik, score, info = pl.evaluate(beta)
        if rel < tol_loglik:
            converged = True
            break
    if not converged:
        raise FitError(f"Cox fit did not converge in {max_iter} iterations")
    if np.any(active):
        # a monotone likelihood drives the score to zero while the
        # information collapses; standardize by the covariate spread
        sd = pl.X[:, active].std(axis=0)
        sub = info[np.ix_(active, active)] / np.outer(sd, sd) / pl.d.sum()
        if np.min(np.linalg.eigvalsh(sub)) < _SEPARATION_TOL:
            raise FitError(
                "the information matrix vanished at the optimum; the partial likelihood looks "
                "monotone (possible separation by a covariate)"
            )
    grad = float(np.max(np.abs(score[active]))) if np.any(active) else 0.0
    return CoxFit(
        beta=beta,
        means=pl.means,
        times=pl.ev_times,
        cumhaz=pl.baseline(beta),
        n_iter=n_iter,
        grad_norm=grad,
        loglik=loglik,
    )


def predict_survival(fit: CoxFit, Z, times, left: bool = False) -> np.ndarray:
    """Conditional survival ``exp(-Lambda0(t) exp((z - zbar)' beta))``.

    Parameters
    ----------
    fit : CoxFit
    Z : array-like of shape (n, p) or (p,)
    times : array-like of shape (m,)
    left : bool, default=False
        Return left limits ``S(t- | z)``.

    Returns
    -------
    ndarray of shape (n, m)
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim <= 1:
        Z = Z.reshape(1, -1) if fit.beta.size else np.zeros((1, 0))
    H0 = fit.baseline_at(times, left=left)
    return np.exp(-np.outer(fit.risk(Z), H0))


class CoxPHSurvival(BaseEstimator):
    """Cox proportional-hazards model with an estimator interface.

    Parameters
    ----------
    max_iter : int, default=50
    tol : float, default=1e-8
        Score sup-norm tolerance.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    fit_ : CoxFit
    n_features_in_ : int

    Examples
    --------
    >>> import numpy as np
    >>> X = np.array([[0.], [1.], [0.], [1.]])
    >>> y = (np.array([1., 2., 3., 4.]), np.array([1, 1, 1, 1]))
    >>> model = CoxPHSurvival().fit(X, y)
    >>> model.coef_.shape
    (1,)
    """

    def __init__(self, max_iter=50, tol=1e-8):
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X = check_array(X, dtype=float, ensure_min_features=0)
        time, event = check_survival_target(y)
        self.fit_ = fit_cox(time, event, X, max_iter=self.max_iter, tol_score=self.tol)
        self.coef_ = self.fit_.beta
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Linear predictor ``(x - xbar)' beta``; larger means higher risk."""
        check_is_fitted(self, "fit_")
        X = check_array(X, dtype=float, ensure_min_features=0)
        return (X - self.fit_.means) @ self.coef_

    def predict_survival_function(self, X, times):
        """Survival probabilities, shape ``(n_samples, n_times)``."""
        check_is_fitted(self, "fit_")
        X = check_array(X, dtype=float, ensure_min_features=0)
        return predict_survival(self.fit_, X, times)

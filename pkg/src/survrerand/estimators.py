"""Treatment-specific survival estimators and their influence functions.

Three estimators of ``S_a(t) = P(T(a) > t)`` are provided:

* the Kaplan-Meier product-limit estimator on arm ``a``;
* inverse-probability-of-censoring weighted Kaplan-Meier, with weights
  ``1 / max(S_C(s- | Z), 0.05)`` from a per-arm Cox censoring model;
* a cross-fitted estimator that averages the uncentered efficient
  influence function with nuisances fitted on held-out folds.

Each estimator returns a :class:`SurvivalCurve` and an
:class:`InfluenceMatrix` of per-unit influence values on the same grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_covariates, check_survival_target, check_treatment
from .coxph import CoxFit, fit_cox
from .data import Dataset, Observation, RiskTable, risk_table
from .exceptions import ConfigurationError, EstimationError, FitError
from .mathcore import RngLike, as_generator, pava_isotonic

__all__ = [
    "SurvivalCurve",
    "InfluenceMatrix",
    "FoldPartition",
    "NuisanceSet",
    "ConditionalSurvival",
    "ProportionalSurvival",
    "MarginalSurvival",
    "CoxLearner",
    "MarginalLearner",
    "km_estimate",
    "km_influence",
    "censoring_fit",
    "ipcw_weights",
    "ipcw_km_estimate",
    "ipcw_influence",
    "crossfit_partition",
    "eif_values",
    "eif_evaluate",
    "dml_estimate",
    "KaplanMeier",
    "IPCWKaplanMeier",
    "CrossFitSurvival",
    "WEIGHT_FLOOR",
]

WEIGHT_FLOOR = 0.05
_CHUNK = 4096


@dataclass(frozen=True)
class SurvivalCurve:
    """Survival estimates on a grid.

    Attributes
    ----------
    grid : ndarray of shape (m,)
    values : ndarray of shape (m,)
    arm : int
    method : {"km", "ipcw", "dml"}
    """

    grid: np.ndarray
    values: np.ndarray
    arm: int
    method: str

    def monotone(self) -> "SurvivalCurve":
        """Nonincreasing projection of the values, clipped to ``[0, 1]``."""
        vals = np.clip(pava_isotonic(self.values, "nonincreasing"), 0.0, 1.0)
        return replace(self, values=vals)

    def at(self, times) -> np.ndarray:
        """Values at grid points (exact matches required)."""
        idx = np.searchsorted(self.grid, times)
        idx = np.clip(idx, 0, self.grid.size - 1)
        if not np.allclose(self.grid[idx], times, rtol=0, atol=0):
            raise ConfigurationError("requested times are not on the curve grid")
        return self.values[idx]


@dataclass(frozen=True)
class InfluenceMatrix:
    """Per-unit influence values, one row per unit and one column per grid time."""

    values: np.ndarray
    grid: np.ndarray
    arm: int
    method: str

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def columns(self, times) -> "InfluenceMatrix":
        idx = np.searchsorted(self.grid, times)
        return replace(self, values=self.values[:, idx], grid=self.grid[idx])


def _as_grid(grid) -> np.ndarray:
    g = np.atleast_1d(np.asarray(grid, dtype=float))
    if g.ndim != 1 or g.size == 0 or np.any(np.diff(g) <= 0) or g[0] < 0:
        raise ConfigurationError("grid must be a nonempty, strictly increasing, non-negative vector")
    return g


def _step_values(times: np.ndarray, values: np.ndarray, grid: np.ndarray, initial: float = 1.0) -> np.ndarray:
    idx = np.searchsorted(times, grid, side="right")
    return np.concatenate([[initial], values])[idx]


def _product_limit(table: RiskTable):
    if np.any((table.Y <= 0) & (table.dN > 0)):
        raise EstimationError("empty risk set at an event time")
    dL = table.dN / table.Y
    return dL, np.cumprod(1.0 - dL)


# --------------------------------------------------------------------------
# Kaplan-Meier and IPCW Kaplan-Meier
# --------------------------------------------------------------------------


def km_estimate(dataset: Dataset, arm: int, grid) -> SurvivalCurve:
    """Product-limit estimate for arm ``arm`` evaluated on ``grid``."""
    grid = _as_grid(grid)
    table = risk_table(dataset, arm)
    _, S = _product_limit(table)
    return SurvivalCurve(grid, _step_values(table.times, S, grid), int(arm), "km")


def _pl_influence(dataset, arm, grid, S_grid, table, weights, pi_a, method):
    # -S(t) * sum_{s_j <= t} w_i(s_j) {dN_i(s_j) - Y_i(s_j) dL(s_j)} / h(s_j)
    n = dataset.n
    idx = np.flatnonzero(dataset.arm == arm)
    n_a = idx.size
    x = dataset.time[idx]
    d = dataset.event[idx]
    dL, _ = _product_limit(table)
    if pi_a is None:
        h = table.Y / n
    else:
        if not 0.0 < pi_a < 1.0:
            raise ConfigurationError("pi_a must lie in (0, 1)")
        h = pi_a * table.Y / n_a
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_h = np.where(h > 0, 1.0 / h, 0.0)
    rate = dL * inv_h
    j_grid = np.searchsorted(table.times, grid, side="right")
    # number of event times at or before each unit's exit time
    j_exit = np.searchsorted(table.times, x, side="right")
    jump_pos = j_exit - 1  # position of own event time when d == 1
    if weights is None:
        C = np.concatenate([[0.0], np.cumsum(rate)])
        w_own = np.ones(n_a)
        cum = None
    else:
        W = weights
        cum = np.concatenate([np.zeros((n_a, 1)), np.cumsum(W * rate[None, :], axis=1)], axis=1)
        w_own = np.where(d == 1, W[np.arange(n_a), np.maximum(jump_pos, 0)], 0.0) if W.shape[1] else np.zeros(n_a)
    own_rate = inv_h[np.maximum(jump_pos, 0)] if inv_h.size else np.zeros(n_a)
    term1_base = np.where(d == 1, w_own * own_rate, 0.0)
    out = np.zeros((n, grid.size))
    for k, t in enumerate(grid):
        upto = np.minimum(j_grid[k], j_exit)
        term1 = np.where(x <= t, term1_base, 0.0)
        term2 = C[upto] if cum is None else cum[np.arange(n_a), upto]
        out[idx, k] = -S_grid[k] * (term1 - term2)
    return InfluenceMatrix(out, grid, int(arm), method)


def km_influence(
    dataset: Dataset, arm: int, grid, curve: Optional[SurvivalCurve] = None, pi_a: Optional[float] = None
) -> InfluenceMatrix:
    """Counting-process influence function of the Kaplan-Meier estimator.

    ``phi_i(t) = -S(t) 1(A_i = a) sum_{s <= t} {dN_i(s) - Y_i(s) dL(s)} / h(s)``
    where ``h(s)`` estimates the arm-``a`` at-risk proportion.  By default
    ``h(s) = Y(s) / n``; passing the design probability ``pi_a`` uses
    ``h(s) = pi_a Y(s) / n_a`` instead, which removes the chance
    fluctuation of the arm size from the variance.

    Parameters
    ----------
    dataset : Dataset
    arm : {0, 1}
    grid : array-like
    curve : SurvivalCurve, optional
        Output of :func:`km_estimate` on the same data and grid.
    pi_a : float, optional
        Known probability of assignment to ``arm``.
    """
    grid = _as_grid(grid)
    if curve is None:
        curve = km_estimate(dataset, arm, grid)
    table = risk_table(dataset, arm)
    return _pl_influence(dataset, arm, grid, curve.values, table, None, pi_a, "km")


def censoring_fit(dataset: Dataset, arm: int, cols: Optional[Sequence[int]] = None) -> CoxFit:
    """Per-arm Cox model for the censoring time.

    Censoring is the "event" (``1 - event``).  An arm without censoring
    yields a model whose censoring survival is identically one.
    """
    sel = dataset.arm == arm
    if not np.any(sel):
        raise EstimationError(f"arm {arm} has no units")
    cols = list(range(dataset.p)) if cols is None else list(cols)
    Z = dataset.covariates[sel][:, cols]
    cens = 1 - dataset.event[sel]
    if not np.any(cens == 1):
        return CoxFit.null(len(cols))
    return fit_cox(dataset.time[sel], cens, Z)


def ipcw_weights(dataset: Dataset, censor_fit: CoxFit, cols: Optional[Sequence[int]] = None):
    """Weight function ``w_i(s) = 1 / max(S_C(s- | Z_i), 0.05)``.

    Returns a callable suitable for :func:`~survrerand.data.risk_table`.
    """
    cols = list(range(dataset.p)) if cols is None else list(cols)
    Z = dataset.covariates[:, cols]

    def weights(index, times):
        H = np.outer(censor_fit.risk(Z[index]), censor_fit.baseline_at(times, left=True))
        return 1.0 / np.maximum(np.exp(-H), WEIGHT_FLOOR)

    return weights


def ipcw_km_estimate(dataset: Dataset, arm: int, grid, censor_fit: CoxFit, cols=None) -> SurvivalCurve:
    """Weighted product-limit estimate with inverse censoring-survival weights."""
    grid = _as_grid(grid)
    table = risk_table(dataset, arm, ipcw_weights(dataset, censor_fit, cols))
    _, S = _product_limit(table)
    return SurvivalCurve(grid, _step_values(table.times, S, grid), int(arm), "ipcw")


def ipcw_influence(
    dataset: Dataset,
    arm: int,
    grid,
    curve: Optional[SurvivalCurve],
    censor_fit: CoxFit,
    pi_a: Optional[float] = None,
    cols=None,
) -> InfluenceMatrix:
    """Influence function of the IPCW Kaplan-Meier estimator with known weights.

    The martingale form of :func:`km_influence` with weighted counting and
    at-risk processes; the estimation error of the censoring model is
    ignored.
    """
    grid = _as_grid(grid)
    if curve is None:
        curve = ipcw_km_estimate(dataset, arm, grid, censor_fit, cols)
    wfun = ipcw_weights(dataset, censor_fit, cols)
    table = risk_table(dataset, arm, wfun)
    idx = np.flatnonzero(dataset.arm == arm)
    W = wfun(idx, table.times)
    return _pl_influence(dataset, arm, grid, curve.values, table, W, pi_a, "ipcw")


# --------------------------------------------------------------------------
# cross-fitting and the efficient influence function
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPartition:
    """Fold label per unit; fold sizes differ from ``n / K`` by at most one."""

    K: int
    membership: np.ndarray

    def fold(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.membership == k)


def crossfit_partition(n: int, K: int, rng: RngLike) -> FoldPartition:
    """Uniformly random partition of ``range(n)`` into ``K`` balanced folds."""
    if K < 2:
        raise ConfigurationError("K must be at least 2")
    if K > n:
        raise ConfigurationError(f"K={K} folds exceed n={n} units")
    labels = np.arange(n) % K
    gen = as_generator(rng)
    return FoldPartition(int(K), gen.permutation(labels))


class ConditionalSurvival:
    """Conditional survival step functions for a batch of covariate rows.

    Subclasses expose the common jump times of the cumulative hazard and
    row blocks of the cumulative hazard and log-survival evaluated at those
    jump times (right-continuous values).
    """

    jump_times: np.ndarray
    n: int

    def cumhaz(self, rows: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def log_surv(self, rows: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def log_surv_at(self, rows: np.ndarray, times, left: bool = False) -> np.ndarray:
        """Log-survival of the given rows at arbitrary times (rows x times)."""
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.jump_times, times, side="left" if left else "right")
        ls = self.log_surv(rows)
        padded = np.concatenate([np.zeros((ls.shape[0], 1)), ls], axis=1)
        return padded[:, idx]

    def log_surv_own(self, rows: np.ndarray, times, left: bool = False) -> np.ndarray:
        """Log-survival of row ``rows[i]`` at ``times[i]``."""
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.jump_times, times, side="left" if left else "right")
        ls = self.log_surv(rows)
        padded = np.concatenate([np.zeros((ls.shape[0], 1)), ls], axis=1)
        return padded[np.arange(len(rows)), idx]


class ProportionalSurvival(ConditionalSurvival):
    """``Lambda(t | z) = risk(z) * Lambda0(t)`` and ``S = exp(-Lambda)``."""

    def __init__(self, jump_times, baseline, risk):
        self.jump_times = np.asarray(jump_times, dtype=float)
        self.baseline = np.asarray(baseline, dtype=float)
        self.risk = np.asarray(risk, dtype=float)
        self.n = self.risk.shape[0]

    def cumhaz(self, rows):
        return np.outer(self.risk[rows], self.baseline)

    def log_surv(self, rows):
        return -self.cumhaz(rows)


class MarginalSurvival(ConditionalSurvival):
    """Covariate-free survival shared by all rows (Nelson-Aalen / Kaplan-Meier pair)."""

    def __init__(self, jump_times, cumhaz, log_surv, n):
        self.jump_times = np.asarray(jump_times, dtype=float)
        self._cumhaz = np.asarray(cumhaz, dtype=float)
        self._log_surv = np.asarray(log_surv, dtype=float)
        self.n = int(n)

    def cumhaz(self, rows):
        return np.broadcast_to(self._cumhaz, (len(rows), self._cumhaz.size))

    def log_surv(self, rows):
        return np.broadcast_to(self._log_surv, (len(rows), self._log_surv.size))


class CoxLearner:
    """Per-arm Cox proportional-hazards nuisance learner."""

    name = "cox"

    def fit(self, X, time, event):
        X = np.asarray(X, dtype=float)
        self.fit_ = fit_cox(time, event, X) if np.any(np.asarray(event) == 1) else CoxFit.null(X.shape[1])
        return self

    def predict(self, X) -> ProportionalSurvival:
        f = self.fit_
        return ProportionalSurvival(f.times, f.cumhaz, f.risk(np.asarray(X, dtype=float)))


class MarginalLearner:
    """Covariate-free learner: Nelson-Aalen hazard with Kaplan-Meier survival."""

    name = "marginal"

    def fit(self, X, time, event):
        time = np.asarray(time, dtype=float)
        event = np.asarray(event)
        times = np.unique(time[event == 1])
        ts = np.sort(time)
        Y = ts.size - np.searchsorted(ts, times, side="left")
        ev = np.sort(time[event == 1])
        dN = np.searchsorted(ev, times, side="right") - np.searchsorted(ev, times, side="left")
        dL = dN / Y
        self.times_ = times
        self.cumhaz_ = np.cumsum(dL)
        with np.errstate(divide="ignore"):
            self.log_surv_ = np.cumsum(np.log1p(-dL))
        return self

    def predict(self, X) -> MarginalSurvival:
        return MarginalSurvival(self.times_, self.cumhaz_, self.log_surv_, np.asarray(X).shape[0])


_LEARNERS = {"cox": CoxLearner, "marginal": MarginalLearner}


def _make_learner(learner):
    if isinstance(learner, str):
        if learner not in _LEARNERS:
            raise ConfigurationError(f"unknown learner {learner!r}; expected one of {sorted(_LEARNERS)}")
        return _LEARNERS[learner]()
    if callable(learner) and not hasattr(learner, "fit"):
        return learner()
    from sklearn.base import clone

    try:
        return clone(learner)
    except TypeError:
        return learner


@dataclass
class NuisanceSet:
    """Fitted outcome and censoring learners for one arm, one entry per fold."""

    learner: str
    arm: int
    outcome: list = field(default_factory=list)
    censoring: list = field(default_factory=list)


def _ratio(log_num, log_den):
    # exp(log_num - log_den) with the convention 0 / 0 = 0 past the support
    with np.errstate(invalid="ignore"):
        diff = log_num - log_den
    return np.where(np.isfinite(diff), np.exp(np.minimum(diff, 0.0)), 0.0)


def eif_values(
    in_arm,
    time,
    event,
    grid,
    surv_T: ConditionalSurvival,
    surv_C: ConditionalSurvival,
    pi_a: float,
    floor: float = WEIGHT_FLOOR,
) -> np.ndarray:
    """Uncentered efficient influence function on a grid.

    For each unit ``i`` and time ``t``::

        S_T(t|Z) [1 - 1(A=a)/pi_a { 1(X<=t, D=1) / (S_T(X-|Z) S_C(X-|Z))
                                    - sum_{s<=t^X} dL_T(s|Z) / (S_T(s-|Z) S_C(s-|Z)) }]

    where the sum runs over the jump points of the fitted cumulative
    hazard.  Ratios ``S_T(t|Z) / S_T(s-|Z)`` are formed on the log scale so
    that vanishing survival probabilities stay finite; ``S_C`` is floored
    at ``floor``.

    Parameters
    ----------
    in_arm : array-like of bool, shape (n,)
    time, event : array-like of shape (n,)
    grid : array-like of shape (m,)
    surv_T, surv_C : ConditionalSurvival
        Outcome and censoring nuisances for the same ``n`` rows.
    pi_a : float
        Known assignment probability of the arm.

    Returns
    -------
    ndarray of shape (n, m)
    """
    if not 0.0 < pi_a < 1.0:
        raise ConfigurationError("pi_a must lie in (0, 1)")
    in_arm = np.asarray(in_arm, dtype=bool)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    n = time.shape[0]
    s = surv_T.jump_times
    m = s.size
    out = np.empty((n, grid.size))
    for lo in range(0, n, _CHUNK):
        rows = np.arange(lo, min(n, lo + _CHUNK))
        logS_t = surv_T.log_surv_at(rows, grid)
        out[rows] = np.exp(logS_t)
        arm_rows = rows[in_arm[rows]]
        if arm_rows.size == 0:
            continue
        k = np.flatnonzero(in_arm[rows])
        x = time[arm_rows]
        dlt = event[arm_rows] == 1
        logS_t_a = logS_t[k]
        # own exit time terms
        logS_T_xm = surv_T.log_surv_own(arm_rows, x, left=True)
        S_C_xm = np.maximum(np.exp(surv_C.log_surv_own(arm_rows, x, left=True)), floor)
        # jump-point terms
        if m:
            H = np.asarray(surv_T.cumhaz(arm_rows))
            dH = np.diff(np.concatenate([np.zeros((H.shape[0], 1)), H], axis=1), axis=1)
            ls = np.asarray(surv_T.log_surv(arm_rows))
            logS_T_sm = np.concatenate([np.zeros((ls.shape[0], 1)), ls[:, :-1]], axis=1)
            S_C_sm = np.maximum(np.exp(surv_C.log_surv_at(arm_rows, s, left=True)), floor)
            j_exit = np.searchsorted(s, x, side="right")
        j_grid = np.searchsorted(s, grid, side="right")
        for g, t in enumerate(grid):
            lt = logS_t_a[:, g]
            term1 = np.where(dlt & (x <= t), _ratio(lt, logS_T_xm) / S_C_xm, 0.0)
            if m:
                upto = np.minimum(j_grid[g], j_exit)
                mask = np.arange(m)[None, :] < upto[:, None]
                r = _ratio(lt[:, None], logS_T_sm)
                term2 = np.sum(np.where(mask, dH * r / S_C_sm, 0.0), axis=1)
            else:
                term2 = 0.0
            out[arm_rows, g] = np.exp(lt) - (term1 - term2) / pi_a
    return out


def eif_evaluate(
    obs: Observation,
    t: float,
    surv_T: ConditionalSurvival,
    surv_C: ConditionalSurvival,
    pi_a: float,
    arm: int = 1,
) -> float:
    """Uncentered efficient influence function of one observation at one time.

    ``surv_T`` and ``surv_C`` must describe a single covariate row, that of
    ``obs``.
    """
    val = eif_values(
        [obs.arm == arm], [obs.time], [obs.event], [float(t)], surv_T, surv_C, pi_a
    )
    return float(val[0, 0])


def dml_estimate(
    dataset: Dataset,
    arm: int,
    grid,
    K: int = 5,
    learner="cox",
    pi_a: float = 0.5,
    rng: RngLike = None,
    cols: Optional[Sequence[int]] = None,
    return_nuisance: bool = False,
):
    """Cross-fitted efficient-influence-function estimator of ``S_a``.

    For each fold, outcome and censoring learners are fitted on arm-``a``
    units of the other folds and the uncentered influence function is
    evaluated on the held-out fold.  The estimate is the grand mean and
    the influence matrix is the centered influence values.

    Parameters
    ----------
    dataset : Dataset
    arm : {0, 1}
    grid : array-like
    K : int, default=5
    learner : {"cox", "marginal"} or learner object
        Objects must provide ``fit(X, time, event)`` and ``predict(X)``
        returning a :class:`ConditionalSurvival`.
    pi_a : float, default=0.5
        Known probability of assignment to ``arm``.
    rng : RngStream or Generator
        Drives the fold partition.
    cols : sequence of int, optional
        Covariate columns given to the learners (all by default).

    Returns
    -------
    curve : SurvivalCurve
        Raw (not monotonized) estimate.
    influence : InfluenceMatrix
    """
    grid = _as_grid(grid)
    cols = list(range(dataset.p)) if cols is None else list(cols)
    Z = dataset.covariates[:, cols]
    part = crossfit_partition(dataset.n, K, rng)
    phi = np.empty((dataset.n, grid.size))
    name = learner if isinstance(learner, str) else getattr(learner, "name", type(learner).__name__)
    nuis = NuisanceSet(name, int(arm))
    for k in range(K):
        test = part.fold(k)
        train = part.membership != k
        if np.unique(dataset.arm[train]).size < 2:
            raise EstimationError(f"training set for fold {k} contains a single arm")
        fit_rows = train & (dataset.arm == arm)
        x, d = dataset.time[fit_rows], dataset.event[fit_rows]
        try:
            out_model = _make_learner(learner).fit(Z[fit_rows], x, d)
            cen_model = _make_learner(learner).fit(Z[fit_rows], x, 1 - d)
        except FitError as exc:
            raise EstimationError(f"nuisance fit failed on fold {k}: {exc}") from exc
        nuis.outcome.append(out_model)
        nuis.censoring.append(cen_model)
        phi[test] = eif_values(
            dataset.arm[test] == arm,
            dataset.time[test],
            dataset.event[test],
            grid,
            out_model.predict(Z[test]),
            cen_model.predict(Z[test]),
            pi_a,
        )
    est = phi.mean(axis=0)
    curve = SurvivalCurve(grid, est, int(arm), "dml")
    infl = InfluenceMatrix(phi - est, grid, int(arm), "dml")
    if return_nuisance:
        return curve, infl, nuis
    return curve, infl


# --------------------------------------------------------------------------
# estimator classes
# --------------------------------------------------------------------------


def _dataset_from_xy(X, y, treatment) -> Dataset:
    time, event = check_survival_target(y)
    n = time.shape[0]
    Z = check_covariates(X, n)
    arm = np.ones(n, dtype=np.int64) if treatment is None else check_treatment(treatment, n)
    return Dataset(arm=arm, time=time, event=event, covariates=Z)


class _SurvivalEstimatorMixin:
    def predict(self, times):
        """Estimated survival probabilities at ``times``."""
        check_is_fitted(self, "dataset_")
        return self._curve(np.atleast_1d(np.asarray(times, dtype=float))).values

    def survival_curve(self, times) -> SurvivalCurve:
        check_is_fitted(self, "dataset_")
        return self._curve(np.atleast_1d(np.asarray(times, dtype=float)))

    def influence(self, times) -> InfluenceMatrix:
        """Per-unit influence values at ``times`` (one row per training unit)."""
        check_is_fitted(self, "dataset_")
        return self._influence(np.atleast_1d(np.asarray(times, dtype=float)))


class KaplanMeier(_SurvivalEstimatorMixin, BaseEstimator):
    """Kaplan-Meier estimator of one arm's survival function.

    Parameters
    ----------
    arm : {0, 1}, default=1
        Arm to estimate; ignored when ``fit`` receives no treatment vector.
    pi_a : float, optional
        Known assignment probability used in the influence function.

    Examples
    --------
    >>> import numpy as np
    >>> y = (np.array([1., 2., 3.]), np.array([1, 0, 1]))
    >>> KaplanMeier().fit(None, y).predict([1.5, 3.0])
    array([0.66666667, 0.        ])
    """

    def __init__(self, arm=1, pi_a=None):
        self.arm = arm
        self.pi_a = pi_a

    def fit(self, X, y, treatment=None):
        self.dataset_ = _dataset_from_xy(X, y, treatment)
        self.arm_ = self.arm if treatment is not None else 1
        return self

    def _curve(self, times):
        return km_estimate(self.dataset_, self.arm_, times)

    def _influence(self, times):
        return km_influence(self.dataset_, self.arm_, times, pi_a=self.pi_a)


class IPCWKaplanMeier(_SurvivalEstimatorMixin, BaseEstimator):
    """Kaplan-Meier weighted by inverse Cox-model censoring survival.

    Parameters
    ----------
    arm : {0, 1}, default=1
    pi_a : float, optional
        Known assignment probability used in the influence function.
    """

    def __init__(self, arm=1, pi_a=None):
        self.arm = arm
        self.pi_a = pi_a

    def fit(self, X, y, treatment=None):
        self.dataset_ = _dataset_from_xy(X, y, treatment)
        self.arm_ = self.arm if treatment is not None else 1
        self.censor_fit_ = censoring_fit(self.dataset_, self.arm_)
        return self

    def _curve(self, times):
        return ipcw_km_estimate(self.dataset_, self.arm_, times, self.censor_fit_)

    def _influence(self, times):
        return ipcw_influence(self.dataset_, self.arm_, times, None, self.censor_fit_, pi_a=self.pi_a)


class CrossFitSurvival(_SurvivalEstimatorMixin, BaseEstimator):
    """Cross-fitted efficient-influence-function survival estimator.

    Parameters
    ----------
    times : array-like
        Evaluation grid, fixed at fit time.
    arm : {0, 1}, default=1
    n_folds : int, default=5
    learner : {"cox", "marginal"}, default="cox"
    pi_a : float, default=0.5
    random_state : int or RngStream, optional
    """

    def __init__(self, times=(1.0, 2.0, 3.0, 4.0), arm=1, n_folds=5, learner="cox", pi_a=0.5, random_state=None):
        self.times = times
        self.arm = arm
        self.n_folds = n_folds
        self.learner = learner
        self.pi_a = pi_a
        self.random_state = random_state

    def fit(self, X, y, treatment):
        self.dataset_ = _dataset_from_xy(X, y, treatment)
        self.curve_, self.influence_ = dml_estimate(
            self.dataset_,
            self.arm,
            np.asarray(self.times, dtype=float),
            K=self.n_folds,
            learner=self.learner,
            pi_a=self.pi_a,
            rng=self.random_state,
        )
        return self

    def _curve(self, times):
        return SurvivalCurve(times, _lookup(self.curve_.grid, self.curve_.values, times), self.arm, "dml")

    def _influence(self, times):
        idx = _grid_index(self.curve_.grid, times)
        return InfluenceMatrix(self.influence_.values[:, idx], times, self.arm, "dml")


def _grid_index(grid, times):
    idx = np.searchsorted(grid, times)
    if np.any(idx >= grid.size) or not np.array_equal(grid[np.minimum(idx, grid.size - 1)], times):
        raise ConfigurationError("times must be a subset of the grid given at fit time")
    return idx


def _lookup(grid, values, times):
    return values[_grid_index(grid, times)]

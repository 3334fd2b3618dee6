import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize
from sklearn.base import clone

from survrerand.coxph import CoxFit, CoxPHSurvival, fit_cox, partial_loglik, predict_survival
from survrerand.exceptions import FitError


def _nelson_aalen(time, event):
    times = np.unique(time[event == 1])
    dN = np.array([np.sum((time == t) & (event == 1)) for t in times])
    Y = np.array([np.sum(time >= t) for t in times])
    return times, np.cumsum(dN / Y)


def _score(time, event, X, beta):
    # brute-force Breslow score
    X = X - X.mean(axis=0)
    r = np.exp(X @ beta)
    g = np.zeros_like(beta)
    for i in np.flatnonzero(event == 1):
        risk = time >= time[i]
        g += X[i] - (r[risk, None] * X[risk]).sum(axis=0) / r[risk].sum()
    return g


@pytest.fixture(scope="module")
def ph_data():
    gen = np.random.default_rng(0)
    n = 10_000
    X = np.column_stack([gen.standard_normal(n), gen.integers(0, 2, n)])
    beta = np.array([0.5, -0.7])
    T = gen.standard_exponential(n) / (0.2 * np.exp(X @ beta))
    C = gen.exponential(8.0, n)
    return np.minimum(T, C), (T <= C).astype(int), X, beta


def test_zero_covariates_reduce_to_nelson_aalen():
    gen = np.random.default_rng(1)
    time = gen.exponential(size=50).round(2)
    event = gen.integers(0, 2, 50)
    event[0] = 1
    fit = fit_cox(time, event, np.zeros((50, 2)))
    np.testing.assert_array_equal(fit.beta, 0.0)
    times, H = _nelson_aalen(time, event)
    np.testing.assert_array_equal(fit.times, times)
    np.testing.assert_allclose(fit.cumhaz, H, rtol=1e-14)


def test_four_row_hand_score_root():
    time = np.array([1.0, 2.0, 3.0, 4.0])
    event = np.array([1, 1, 1, 1])
    x = np.array([[1.0], [0.0], [0.0], [1.0]])
    # score(b) with centering cancels; root-find the raw one-dimensional score
    def score(b):
        r = np.exp(b * x[:, 0])
        total = 0.0
        for i in range(4):
            risk = slice(i, 4)
            total += x[i, 0] - np.sum(r[risk] * x[risk, 0]) / np.sum(r[risk])
        return total

    root = optimize.brentq(score, -10, 10, xtol=1e-14)
    fit = fit_cox(time, event, x)
    assert fit.beta[0] == pytest.approx(root, abs=1e-8)
    assert fit.grad_norm < 1e-8


def test_recovers_true_coefficients(ph_data):
    time, event, X, beta = ph_data
    fit = fit_cox(time, event, X)
    # standard errors from a finite-difference Hessian of the partial likelihood
    h = 1e-4
    H = np.zeros((2, 2))
    for j in range(2):
        for k in range(2):
            e_j, e_k = np.eye(2)[j] * h, np.eye(2)[k] * h
            H[j, k] = (
                partial_loglik(time, event, X, fit.beta + e_j + e_k)
                - partial_loglik(time, event, X, fit.beta + e_j - e_k)
                - partial_loglik(time, event, X, fit.beta - e_j + e_k)
                + partial_loglik(time, event, X, fit.beta - e_j - e_k)
            ) / (4 * h * h)
    se = np.sqrt(np.diag(np.linalg.inv(-H)))
    assert np.all(np.abs(fit.beta - beta) < 3 * se)


def test_score_and_loglik_at_optimum(ph_data):
    time, event, X, _ = ph_data
    sub = slice(0, 800)
    fit = fit_cox(time[sub], event[sub], X[sub])
    assert np.max(np.abs(_score(time[sub], event[sub], X[sub], fit.beta))) < 1e-7
    assert fit.loglik >= partial_loglik(time[sub], event[sub], X[sub], np.zeros(2))


def test_baseline_with_beta_zero_matches_na_increments():
    gen = np.random.default_rng(2)
    time = gen.exponential(size=30)
    event = np.ones(30, dtype=int)
    fit = fit_cox(time, event, np.zeros((30, 1)))
    times, H = _nelson_aalen(time, event)
    np.testing.assert_allclose(np.diff(np.r_[0, fit.cumhaz]), np.diff(np.r_[0, H]), rtol=1e-14)


def test_errors():
    with pytest.raises(FitError, match="event"):
        fit_cox([1.0, 2.0], [0, 0], [[0.0], [1.0]])
    with pytest.raises(FitError, match="collinear"):
        x = np.arange(10.0)
        fit_cox(np.arange(1.0, 11.0), np.ones(10), np.column_stack([x, 2 * x]))
    with pytest.raises(FitError, match="separation"):
        # every event comes from the x = 1 group before any x = 0 unit fails
        fit_cox([1.0, 2.0, 3.0, 4.0], [1, 1, 0, 0], [[1.0], [1.0], [0.0], [0.0]])


def test_predict_survival_properties(ph_data):
    time, event, X, _ = ph_data
    fit = fit_cox(time[:500], event[:500], X[:500])
    t = np.array([0.0, 0.5, 1.0, 2.0, 5.0, 100.0])
    S = predict_survival(fit, X[:20], t)
    assert S.shape == (20, 6)
    np.testing.assert_array_equal(S[:, 0], 1.0)
    assert np.all(np.diff(S, axis=1) <= 0)
    # larger value of a covariate with positive coefficient lowers survival
    z = np.array([[0.0, 0.0], [1.0, 0.0]])
    s = predict_survival(fit, z, [2.0])
    assert (fit.beta[0] > 0) == (s[1, 0] < s[0, 0])


def test_predict_survival_beta_zero_is_marginal():
    gen = np.random.default_rng(3)
    time = gen.exponential(size=40)
    event = gen.integers(0, 2, 40)
    event[0] = 1
    fit = fit_cox(time, event, np.zeros((40, 1)))
    times, H = _nelson_aalen(time, event)
    S = predict_survival(fit, gen.standard_normal((3, 1)), times)
    np.testing.assert_allclose(S, np.tile(np.exp(-H), (3, 1)))


@settings(max_examples=30)
@given(st.floats(0.1, 5.0), st.floats(0.1, 3.0))
def test_doubling_baseline_halves_log_survival(t, z):
    fit = CoxFit(np.array([0.3]), np.array([0.0]), np.array([0.05, 1.0, 2.0]), np.array([0.1, 0.4, 0.9]))
    doubled = CoxFit(fit.beta, fit.means, fit.times, 2 * fit.cumhaz)
    a = np.log(predict_survival(fit, [[z]], [t]))
    b = np.log(predict_survival(doubled, [[z]], [t]))
    assert b[0, 0] == pytest.approx(2 * a[0, 0], rel=1e-12)


def test_left_limits():
    fit = CoxFit(np.zeros(1), np.zeros(1), np.array([1.0, 2.0]), np.array([0.5, 1.0]))
    assert fit.baseline_at(1.0) == 0.5
    assert fit.baseline_at(1.0, left=True) == 0.0
    assert CoxFit.null(2).baseline_at(3.0) == 0.0


def test_estimator_interface(ph_data):
    time, event, X, _ = ph_data
    y = np.zeros(600, dtype=[("event", bool), ("time", float)])
    y["event"], y["time"] = event[:600], time[:600]
    model = CoxPHSurvival().fit(X[:600], y)
    ref = fit_cox(time[:600], event[:600], X[:600])
    np.testing.assert_allclose(model.coef_, ref.beta)
    assert model.predict(X[:5]).shape == (5,)
    assert model.predict_survival_function(X[:5], [1.0, 2.0]).shape == (5, 2)
    assert clone(model).get_params() == {"max_iter": 50, "tol": 1e-8}

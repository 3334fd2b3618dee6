import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from survrerand.data import Dataset, DesignMeta
from survrerand.datagen import ScenarioConfig, gen_geometry_population, generate, observe
from survrerand.designs import assign_simple, balance_covariance, rerandomize
from survrerand.estimators import SurvivalCurve, dml_estimate, km_estimate, km_influence
from survrerand.exceptions import InferenceError
from survrerand.inference import (
    corrected_variance,
    covariance_report,
    geometry_decomposition,
    if_covariance,
    pointwise_ci,
    rerand_covariance_vector,
    uniform_band,
)
from survrerand.mathcore import RngStream, chisq_quantile, kappa, normal_quantile

GRID = np.array([1.0, 2.0, 3.0, 4.0])
REM = DesignMeta("rerand", 0.5, 1.83, (0, 1))


def _km_setup(n=400, seed=1, design="rerand"):
    s = generate(ScenarioConfig(1, n), RngStream(seed))
    Z = s.covariates[:, list(s.rerand_cols)]
    arms = rerandomize(Z, 0.5, 1.83, RngStream(seed, (1,))).arms if design == "rerand" else assign_simple(n, 0.5, RngStream(seed, (1,))).arms
    ds = observe(s, arms)
    return ds, km_influence(ds, 1, GRID, pi_a=0.5)


# -- influence covariance ---------------------------------------------------------


def test_if_covariance_trivial_cases():
    assert if_covariance(np.zeros((5, 3)), 1, 1) == 0.0
    v = np.array([1.0, -2.0, 0.5])
    Phi = np.outer([1.0, -1.0, 2.0, 0.0], v)
    np.testing.assert_allclose(if_covariance(Phi), np.outer(v, v) * 6 / 4)


def test_if_covariance_matches_two_pass():
    gen = np.random.default_rng(0)
    for _ in range(20):
        Phi = gen.standard_normal((50, 4)) @ gen.standard_normal((4, 4))
        Phi -= Phi.mean(axis=0)
        np.testing.assert_allclose(if_covariance(Phi), np.cov(Phi.T, bias=True), atol=1e-12)
        assert if_covariance(Phi, 0, 2) == pytest.approx(np.cov(Phi.T, bias=True)[0, 2], abs=1e-12)


# -- cross-covariance with the imbalance ------------------------------------------


def test_rerand_vector_simple_design_is_zero():
    ds, IF = _km_setup()
    W = rerand_covariance_vector(IF, ds.rerand_matrix, ds.arm, DesignMeta("simple", 0.5))
    np.testing.assert_array_equal(W, 0.0)


def test_rerand_vector_vanishes_for_permuted_covariates():
    ds, IF = _km_setup(n=20_000, seed=2, design="simple")
    Z = np.random.default_rng(3).permutation(ds.rerand_matrix)
    W = rerand_covariance_vector(IF, Z, ds.arm, REM)
    Zc = Z - Z.mean(axis=0)
    a = ds.arm == 1
    for k in range(GRID.size):
        prod = IF.values[:, k : k + 1] * Zc
        se = np.sqrt(prod[a].var(axis=0) / a.sum() + prod[~a].var(axis=0) / (~a).sum())
        assert np.all(np.abs(W[k]) < 3 * se)


def test_rerand_vector_linear_influence():
    gen = np.random.default_rng(4)
    n = 50_000
    Z = gen.multivariate_normal([0, 0], [[2.0, 0.6], [0.6, 1.0]], n)
    arms = gen.integers(0, 2, n)
    # phi = 3 (z1 - zbar1) on arm 1 only: W ~ 3 Cov(z1, Z) = (6, 1.8)
    phi = np.where(arms == 1, 3 * (Z[:, 0] - Z[:, 0].mean()), 0.0)[:, None]
    W = rerand_covariance_vector(phi, Z, arms, REM)
    np.testing.assert_allclose(W[0], [6.0, 1.8], rtol=0.05)


def test_rerand_vector_stratified():
    gen = np.random.default_rng(5)
    n = 200
    Z = gen.standard_normal((n, 2))
    arms = np.arange(n) % 2
    phi = gen.standard_normal((n, 3))
    meta = DesignMeta("stratified-rerand", 0.5, 1.83, (0, 1), "D")
    # one stratum reduces to the unstratified contrast
    np.testing.assert_allclose(
        rerand_covariance_vector(phi, Z, arms, meta, np.zeros(n)), rerand_covariance_vector(phi, Z, arms, REM)
    )
    D = (np.arange(n) < 80).astype(int)
    expect = sum(
        np.sum(D == d) / n * rerand_covariance_vector(phi[D == d], Z[D == d], arms[D == d], REM) for d in (0, 1)
    )
    np.testing.assert_allclose(rerand_covariance_vector(phi, Z, arms, meta, D), expect)
    with pytest.raises(InferenceError):
        rerand_covariance_vector(phi, Z, arms, meta)
    with pytest.raises(InferenceError):
        rerand_covariance_vector(phi, Z, arms, meta, np.where(arms == 1, 0, np.arange(n) % 4 + 1))


# -- corrected variance -------------------------------------------------------------


def test_corrected_variance_zero_projection():
    rho, corr, q = corrected_variance([2.0, 3.0], np.zeros((2, 2)), np.eye(2), 1.83, 2)
    np.testing.assert_array_equal(rho, 0.0)
    np.testing.assert_array_equal(corr, [2.0, 3.0])


def test_corrected_variance_perfect_projection():
    # W' Sigma_B^{-1} W = sigma2 gives kappa * sigma2
    rho, corr, _ = corrected_variance([4.0], [[2.0, 0.0]], np.eye(2), 1.83, 2)
    assert rho[0] == 1.0
    assert corr[0] == pytest.approx(kappa(1.83, 2) * 4.0)


def test_corrected_variance_hand_numbers():
    c = optimize.brentq(lambda x: kappa(x, 1) - 0.6, 0.01, 50, xtol=1e-14)
    rho, corr, q = corrected_variance([4.0], [[1.0]], [[1.0]], c, 1)
    assert q[0] == pytest.approx(1.0)
    assert rho[0] == pytest.approx(0.25)
    assert corr[0] == pytest.approx(3.6)


def test_corrected_variance_simple_and_singular():
    rho, corr, _ = corrected_variance([4.0], [[1.0]], [[1.0]], 1.0, 1, design="simple")
    assert rho[0] == 0.0 and corr[0] == 4.0
    with pytest.raises(InferenceError):
        corrected_variance([4.0], [[1.0, 1.0]], np.ones((2, 2)), 1.0, 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.1, 20.0))
def test_corrected_never_exceeds_uncorrected(seed, c):
    gen = np.random.default_rng(seed)
    m, p = 5, 3
    sigma2 = gen.exponential(size=m)
    W = gen.standard_normal((m, p)) * 2
    B = gen.standard_normal((p, p))
    rho, corr, _ = corrected_variance(sigma2, W, B @ B.T + 0.1 * np.eye(p), c, p)
    assert np.all(corr <= sigma2)
    assert np.all(corr >= 0)
    assert np.all((rho >= 0) & (rho <= 1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_rho_invariant_to_linear_recoding(seed):
    ds, IF = _km_setup(n=300, seed=seed % 50 + 1)
    Z = ds.rerand_matrix
    gen = np.random.default_rng(seed)
    A = gen.standard_normal((2, 2)) + 2 * np.eye(2)
    if abs(np.linalg.det(A)) < 0.1:
        A += 2 * np.eye(2)
    b = gen.standard_normal(2) * 5

    def rho_of(Zr):
        W = rerand_covariance_vector(IF, Zr, ds.arm, REM)
        return corrected_variance(np.diag(if_covariance(IF)), W, balance_covariance(Zr, ds.arm), 1.83, 2)[0]

    np.testing.assert_allclose(rho_of(Z @ A.T + b), rho_of(Z), atol=1e-8)


# -- covariance reports ---------------------------------------------------------------


def test_covariance_report_km_rerand():
    ds, IF = _km_setup()
    rep = covariance_report(IF, ds, REM)
    assert rep.corrected
    assert np.all(rep.sigma2_corrected <= rep.sigma2_uncorrected)
    np.testing.assert_allclose(np.diag(rep.cov_corrected), rep.sigma2_corrected)
    assert np.all(rep.variance_reduction >= 0) and np.all(rep.variance_reduction <= 100 * (1 - rep.kappa_c) + 1e-9)
    assert rep.kappa_c == pytest.approx(kappa(1.83, 2))


def test_covariance_report_simple_and_dml():
    ds, IF = _km_setup(design="simple")
    rep = covariance_report(IF, ds, DesignMeta("simple", 0.5))
    assert not rep.corrected
    np.testing.assert_array_equal(rep.variance_reduction, 0.0)
    _, dml_if = dml_estimate(ds, 1, GRID, rng=RngStream(1))
    rep = covariance_report(dml_if, ds, REM)
    assert not rep.corrected
    np.testing.assert_array_equal(rep.sigma2_corrected, rep.sigma2_uncorrected)
    assert rep.rho_hat.shape == (4,)


def test_covariance_report_stratified_needs_labels():
    ds, IF = _km_setup()
    meta = DesignMeta("stratified-rerand", 0.5, 1.83, (0, 1), "D")
    rep = covariance_report(IF, ds, meta)
    assert np.all(rep.sigma2_corrected <= rep.sigma2_uncorrected)
    bare = Dataset(arm=ds.arm, time=ds.time, event=ds.event, covariates=ds.covariates, rerand_cols=(0, 1))
    with pytest.raises(InferenceError):
        covariance_report(IF, bare, meta)


@pytest.mark.slow
def test_dml_rho_vanishes_at_large_n():
    n = 100_000
    s = generate(ScenarioConfig(1, n), RngStream(41))
    ds = observe(s, assign_simple(n, 0.5, RngStream(42)).arms)
    # coarsen times to keep the number of hazard jumps small
    ds = Dataset(
        arm=ds.arm,
        time=np.ceil(ds.time * 100) / 100,
        event=ds.event,
        covariates=ds.covariates,
        rerand_cols=ds.rerand_cols,
        tau=ds.tau,
    )
    _, IF = dml_estimate(ds, 1, GRID, rng=RngStream(43))
    rep = covariance_report(IF, ds, REM)
    assert rep.rho_hat.max() < 0.02


# -- intervals and bands ----------------------------------------------------------------


def test_pointwise_plain_hand_example():
    band = pointwise_ci([0.5], [0.01], 1, scale="plain")
    assert band.lower[0] == pytest.approx(0.304, abs=5e-4)
    assert band.upper[0] == pytest.approx(0.696, abs=5e-4)


def test_pointwise_zero_variance_is_degenerate():
    for scale in ("plain", "logit"):
        band = pointwise_ci([0.3, 0.7], [0.0, 0.0], 100, scale=scale)
        np.testing.assert_allclose(band.lower, [0.3, 0.7])
        np.testing.assert_allclose(band.upper, [0.3, 0.7])


def test_pointwise_logit_matches_formula():
    S, v, n = 0.8, 0.25, 100
    band = pointwise_ci([S], [v], n)
    half = normal_quantile(0.975) * math.sqrt(v / n) / (S * (1 - S))
    logit = math.log(S / (1 - S))
    assert band.lower[0] == pytest.approx(1 / (1 + math.exp(-(logit - half))))
    assert band.upper[0] == pytest.approx(1 / (1 + math.exp(-(logit + half))))


def test_pointwise_edge_rules():
    band = pointwise_ci([1.0, 0.9, 0.5, 0.0], [0.1, 0.1, 0.2, 0.0], 50)
    assert band.upper[0] == 1.0
    assert band.lower[0] == pytest.approx(band.lower[1:3].min())
    assert band.lower[3] == 0.0
    assert band.upper[3] == pytest.approx(band.upper[1:3].min())
    with pytest.raises(InferenceError):
        pointwise_ci([0.5], [0.1], 10, scale="probit")


def test_pointwise_accepts_curve():
    curve = SurvivalCurve(GRID, np.array([0.9, 0.7, 0.5, 0.3]), 1, "km")
    band = pointwise_ci(curve, np.full(4, 0.2), 100)
    np.testing.assert_array_equal(band.grid, GRID)
    assert np.all(band.covers(curve.values))


def test_uniform_band_zero_covariance_is_curve():
    S = np.array([0.9, 0.6, 0.3])
    band = uniform_band(S, np.zeros((3, 3)), 100, rng=RngStream(1))
    np.testing.assert_allclose(band.lower, S)
    np.testing.assert_allclose(band.upper, S)


def test_uniform_band_singleton_matches_plain_ci():
    band = uniform_band([0.6], [[0.25]], 100, n_paths=100_000, rng=RngStream(2))
    ci = pointwise_ci([0.6], [0.25], 100, scale="plain")
    assert band.lower[0] == pytest.approx(ci.lower[0], abs=2e-3)
    assert band.upper[0] == pytest.approx(ci.upper[0], abs=2e-3)


def test_uniform_band_wider_than_pointwise_and_monotone():
    ds, IF = _km_setup()
    grid = np.linspace(0.5, 4.0, 30)
    IF = km_influence(ds, 1, grid, pi_a=0.5)
    curve = km_estimate(ds, 1, grid)
    cov = if_covariance(IF)
    band = uniform_band(curve, cov, ds.n, n_paths=100_000, rng=RngStream(3))
    ci = pointwise_ci(curve, np.diag(cov), ds.n, scale="plain")
    inner = (ci.lower > 0) & (ci.upper < 1) & (band.lower > 0) & (band.upper < 1)
    assert np.all((band.upper - band.lower)[inner] >= (ci.upper - ci.lower)[inner] - 1e-3)
    assert np.all(np.diff(band.lower) <= 0) and np.all(np.diff(band.upper) <= 0)
    assert band.critical_value > normal_quantile(0.975) * math.sqrt(np.diag(cov).max())


def test_uniform_band_needs_paths():
    with pytest.raises(InferenceError):
        uniform_band([0.5], [[0.1]], 10, n_paths=100, rng=RngStream(1))


# -- geometry ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def geometry():
    pop = gen_geometry_population(ScenarioConfig("geometry", 100_000, tau=15.0), RngStream(50))
    c = chisq_quantile(0.15, 2)
    return geometry_decomposition(pop, 1, np.linspace(0.1, 4.5, 100), c, 10_000, RngStream(51))


def test_geometry_constrained_draws_inside_ball(geometry):
    r2 = np.sum(geometry.L_constrained**2, axis=1)
    assert np.all(r2 < geometry.c)
    assert geometry.constrained_flags.mean() == pytest.approx(0.15, abs=0.015)


def test_geometry_constrained_variance_matches_formula(geometry):
    X = geometry.total_constrained.paths
    v = X.var(axis=0)
    se = np.sqrt(np.mean((X - X.mean(axis=0)) ** 4, axis=0) - v**2) / math.sqrt(X.shape[0])
    assert np.all(np.abs(v - geometry.predicted_constrained_variance()) < 3 * se)
    assert np.all(v <= geometry.total_free.paths.var(axis=0))


def test_geometry_projection_and_residual_uncorrelated(geometry):
    P = geometry.projection_free.paths
    R = geometry.residual.paths
    for k in range(P.shape[1]):
        assert abs(np.corrcoef(P[:, k], R[:, k])[0, 1]) < 3 / math.sqrt(P.shape[0])


def test_geometry_shares_and_units(geometry):
    assert np.all((geometry.rho >= 0) & (geometry.rho <= 1))
    norms = np.linalg.norm(geometry.U, axis=1)
    np.testing.assert_allclose(norms[norms > 0], 1.0)
    np.testing.assert_allclose(np.sum(geometry.alpha_vec**2, axis=1), geometry.rho * geometry.V, rtol=1e-8)


def test_geometry_needs_large_population():
    pop = gen_geometry_population(ScenarioConfig("geometry", 500, tau=15.0), RngStream(1))
    with pytest.raises(InferenceError):
        geometry_decomposition(pop, 1, [1.0, 2.0], 1.0, 100, RngStream(2))


@pytest.mark.slow
def test_uniform_band_coverage_scenario2_km():
    from survrerand.harness import SimulationConfig, run_simulation

    res = run_simulation(SimulationConfig(scenario=2, n=400, replicates=500, methods=("km",)))
    assert res.rows[0].u_ecp >= 0.94

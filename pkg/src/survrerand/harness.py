"""Monte Carlo simulation runner, real-data analysis and geometry export."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, DesignMeta, band_grid, validate
from .datagen import OracleCache, ScenarioConfig, generate, observe
from .designs import assign
from .estimators import censoring_fit, dml_estimate, ipcw_influence, ipcw_km_estimate, km_estimate, km_influence
from .exceptions import ConfigurationError, DataError, HarnessError, SurvRerandError
from .inference import covariance_report, geometry_decomposition, pointwise_ci, uniform_band, write_geometry_csv
from .mathcore import RngStream, chisq_cdf, chisq_quantile, kappa

__all__ = [
    "SimulationConfig",
    "MetricsRow",
    "SimulationResult",
    "AnalysisReport",
    "run_simulation",
    "write_metrics_csv",
    "analyze_dataset",
    "export_geometry",
    "kappa_tool",
    "METRICS_COLUMNS",
]

logger = logging.getLogger(__name__)

METHODS = ("km", "ipcw", "dml")
METRICS_COLUMNS = ("method", "design", "time", "bias", "ese", "ase", "ecp", "u_ecp", "failures")
MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True)
class SimulationConfig:
    """Settings of one Monte Carlo experiment (one design, several methods).

    Attributes
    ----------
    scenario : {1, 2}
    n : int
    replicates : int
    design : {"srs", "rem", "srem"}
    methods : tuple of {"km", "ipcw", "dml"}
    times : tuple of float
        Report times for pointwise metrics.
    band : tuple (lo, hi, m)
        Uniform band grid.
    alpha : float
    c : float
        Rerandomization threshold.
    K : int
        Cross-fitting folds.
    seed : int
    jobs : int
        Worker processes; results do not depend on it.
    n_paths : int
        Gaussian paths for the band critical value.
    pi1 : float
    arm : int
        Target arm.
    learner : str
        Nuisance learner of the cross-fitted estimator.
    oracle_n_mc, oracle_seed : int
        Key of the cached true survival values.
    cache_path : str, optional
        Location of the truth cache.
    """

    scenario: int = 1
    n: int = 100
    replicates: int = 500
    design: str = "srs"
    methods: tuple = ("km",)
    times: tuple = (1.0, 2.0, 3.0, 4.0)
    band: tuple = (1.0, 4.0, 50)
    alpha: float = 0.05
    c: float = 1.83
    K: int = 5
    seed: int = 2024
    jobs: int = 1
    n_paths: int = 10_000
    pi1: float = 0.5
    arm: int = 1
    learner: str = "cox"
    oracle_n_mc: int = 1_000_000
    oracle_seed: int = 20240101
    cache_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        lo, hi, m = self.band
        object.__setattr__(self, "band", (float(lo), float(hi), int(m)))
        if self.replicates < 1:
            raise ConfigurationError("replicates must be at least 1")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ConfigurationError(f"methods must be a nonempty subset of {METHODS}")
        if self.scenario not in (1, 2):
            raise ConfigurationError("scenario must be 1 or 2")
        tau = ScenarioConfig(self.scenario, max(self.n, 2)).tau
        if any(not 0 < t < tau for t in self.times):
            raise ConfigurationError(f"report times must lie in (0, {tau})")
        if not (0 < lo < hi < tau):
            raise ConfigurationError(f"band limits must satisfy 0 < lo < hi < {tau}")
        self.meta  # validates the design

    @property
    def meta(self) -> DesignMeta:
        if self.design in ("srs", "simple"):
            return DesignMeta("simple", self.pi1)
        if self.design in ("rem", "rerand"):
            return DesignMeta("rerand", self.pi1, self.c, (0, 1))
        return DesignMeta("stratified-rerand", self.pi1, self.c, (0, 1), "D")

    @classmethod
    def from_dict(cls, payload: dict) -> "SimulationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigurationError(f"unknown configuration fields {sorted(unknown)}")
        return cls(**payload)


@dataclass(frozen=True)
class MetricsRow:
    """Aggregated Monte Carlo performance at one report time."""

    method: str
    design: str
    time: float
    bias: float
    ese: float
    ase: float
    ecp: float
    u_ecp: float
    failures: int


@dataclass
class SimulationResult:
    """Metrics table plus the per-replicate raw estimates."""

    config: SimulationConfig
    rows: list
    estimates: dict = field(default_factory=dict)
    ses: dict = field(default_factory=dict)
    truth: Optional[np.ndarray] = None

    def row(self, method: str, time: float) -> MetricsRow:
        for r in self.rows:
            if r.method == method and r.time == time:
                return r
        raise KeyError((method, time))


def _grids(config: SimulationConfig):
    bg = band_grid(*config.band)
    full = np.union1d(np.asarray(config.times), bg)
    rep_idx = np.searchsorted(full, config.times)
    band_idx = np.searchsorted(full, bg)
    return full, rep_idx, band_idx


def _estimate(method, ds, arm, grid, config, stream):
    if method == "km":
        curve = km_estimate(ds, arm, grid)
        return curve, km_influence(ds, arm, grid, curve)
    if method == "ipcw":
        cf = censoring_fit(ds, arm)
        curve = ipcw_km_estimate(ds, arm, grid, cf)
        return curve, ipcw_influence(ds, arm, grid, curve, cf)
    pi_a = config.pi1 if arm == 1 else 1.0 - config.pi1
    return dml_estimate(ds, arm, grid, config.K, config.learner, pi_a, stream)


def _replicate(args):
    config, r, truth = args
    full, rep_idx, band_idx = _grids(config)
    root = RngStream(config.seed, (r,))
    sample = generate(ScenarioConfig(config.scenario, config.n), root.substream(0))
    meta = config.meta
    assignment = assign(meta, sample.covariates[:, list(sample.rerand_cols)], root.substream(1), D=sample.stratum)
    ds = observe(sample, assignment.arms)
    out = {}
    for k, method in enumerate(config.methods):
        try:
            curve, IF = _estimate(method, ds, config.arm, full, config, root.substream(2, k))
            rep = covariance_report(IF, ds, meta)
            var = rep.sigma2_corrected
            ci = pointwise_ci(curve.values[rep_idx], var[rep_idx], ds.n, config.alpha)
            band = uniform_band(
                curve.values[band_idx],
                rep.cov_corrected[np.ix_(band_idx, band_idx)],
                ds.n,
                config.alpha,
                config.n_paths,
                root.substream(3, k),
            )
            out[method] = (
                curve.values[rep_idx],
                np.sqrt(var[rep_idx] / ds.n),
                ci.covers(truth[rep_idx]),
                bool(np.all(band.covers(truth[band_idx]))),
            )
        except SurvRerandError as exc:
            logger.debug("replicate %d, %s failed: %s", r, method, exc)
            out[method] = None
    return out


def run_simulation(config: SimulationConfig) -> SimulationResult:
    """Run the Monte Carlo experiment described by ``config``.

    Every replicate derives its random streams from ``(seed, replicate)``:
    data, assignment and estimation use separate sub-streams, so designs
    run with the same seed share the generated populations and the results
    do not depend on ``jobs``.
    """
    full, rep_idx, band_idx = _grids(config)
    truth, _ = OracleCache(config.cache_path).lookup(
        config.scenario, config.arm, full, config.oracle_n_mc, config.oracle_seed
    )
    tasks = [(config, r, truth) for r in range(config.replicates)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as ex:
            results = list(ex.map(_replicate, tasks, chunksize=max(1, len(tasks) // (4 * config.jobs))))
    else:
        results = [_replicate(t) for t in tasks]
    rows, estimates, ses = [], {}, {}
    design = {"simple": "srs", "rerand": "rem", "stratified-rerand": "srem"}[config.meta.design]
    for method in config.methods:
        ok = [res[method] for res in results if res[method] is not None]
        failures = config.replicates - len(ok)
        if failures > MAX_FAILURE_RATE * config.replicates:
            raise HarnessError(
                f"{failures} of {config.replicates} replicates failed for {method}; "
                "the configuration is likely degenerate"
            )
        est = np.array([o[0] for o in ok])
        se = np.array([o[1] for o in ok])
        hit = np.array([o[2] for o in ok])
        uhit = np.array([o[3] for o in ok])
        estimates[method], ses[method] = est, se
        ese = est.std(axis=0, ddof=1) if len(ok) > 1 else np.zeros(len(config.times))
        for j, t in enumerate(config.times):
            rows.append(
                MetricsRow(
                    method=method,
                    design=design,
                    time=t,
                    bias=float(abs(est[:, j].mean() - truth[rep_idx[j]])),
                    ese=float(ese[j]),
                    ase=float(se[:, j].mean()),
                    ecp=float(hit[:, j].mean()),
                    u_ecp=float(uhit.mean()),
                    failures=failures,
                )
            )
    return SimulationResult(config, rows, estimates, ses, truth[rep_idx])


def write_metrics_csv(rows: Sequence[MetricsRow], path) -> None:
    """Write metrics rows with the fixed column order of :data:`METRICS_COLUMNS`."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            w.writerow([r.method, r.design, repr(r.time), repr(r.bias), repr(r.ese), repr(r.ase),
                        repr(r.ecp), repr(r.u_ecp), r.failures])


# --------------------------------------------------------------------------
# real-data analysis
# --------------------------------------------------------------------------


@dataclass
class AnalysisReport:
    """Estimates, standard errors and hypothetical-design variance reductions.

    ``results[method]`` holds ``estimate``, ``se`` (keyed by design short
    name, ``srs`` being uncorrected) and ``variance_reduction`` (percent,
    keyed by rerandomized design).  Methods that failed are listed in
    ``errors``.
    """

    times: list
    arm: int
    n: int
    n_arm: int
    results: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def analyze_dataset(
    dataset: Dataset,
    metas: Sequence[DesignMeta],
    methods: Sequence[str] = ("km", "ipcw", "dml"),
    times: Sequence[float] = (500.0, 1000.0, 1500.0, 2000.0),
    alpha: float = 0.05,
    arm: int = 1,
    pi1: float = 0.5,
    K: int = 5,
    seed: int = 2024,
) -> AnalysisReport:
    """Estimate survival in one arm and the variance reductions hypothetical designs would give.

    The influence functions use the known assignment probability ``pi1``.
    Each rerandomized design in ``metas`` contributes a corrected standard
    error and a percentage variance reduction; cross-fitted estimates are
    never corrected, so their reduction is zero.
    """
    problems = [f for f in validate(dataset, None) if f.level == "error"]
    for meta in metas:
        problems += [f for f in validate(dataset, meta) if f.level == "error"]
    if problems:
        raise DataError("; ".join(sorted({f.message for f in problems})))
    grid = np.asarray(sorted(set(float(t) for t in times)))
    pi_a = pi1 if arm == 1 else 1.0 - pi1
    report = AnalysisReport(list(grid), arm, dataset.n, dataset.n_arm(arm))
    for k, method in enumerate(methods):
        try:
            if method == "km":
                curve = km_estimate(dataset, arm, grid)
                IF = km_influence(dataset, arm, grid, curve, pi_a=pi_a)
            elif method == "ipcw":
                cf = censoring_fit(dataset, arm)
                curve = ipcw_km_estimate(dataset, arm, grid, cf)
                IF = ipcw_influence(dataset, arm, grid, curve, cf, pi_a=pi_a)
            elif method == "dml":
                curve, IF = dml_estimate(dataset, arm, grid, K, "cox", pi_a, RngStream(seed, (k,)))
            else:
                raise ConfigurationError(f"unknown method {method!r}")
            simple = covariance_report(IF, dataset, DesignMeta("simple", pi1))
            se = {"srs": list(np.sqrt(simple.sigma2_uncorrected / dataset.n))}
            ci = pointwise_ci(curve, simple.sigma2_uncorrected, dataset.n, alpha)
            reduction = {}
            for meta in metas:
                if meta.design == "simple":
                    continue
                rep = covariance_report(IF, dataset, meta)
                se[meta.short_name] = list(np.sqrt(rep.sigma2_corrected / dataset.n))
                reduction[meta.short_name] = list(rep.variance_reduction)
            report.results[method] = {
                "estimate": list(curve.values),
                "se": se,
                "ci_lower": list(ci.lower),
                "ci_upper": list(ci.upper),
                "variance_reduction": reduction,
            }
        except SurvRerandError as exc:
            report.errors[method] = str(exc)
    return report


# --------------------------------------------------------------------------
# geometry and kappa utilities
# --------------------------------------------------------------------------


def export_geometry(
    path,
    n_paths: int = 250,
    superpop: int = 100_000,
    seed: int = 2024,
    grid: Optional[Sequence[float]] = None,
    c: Optional[float] = None,
    arm: int = 1,
):
    """Simulate and write the three-panel geometry ensemble.

    Defaults: super-population of ``1e5`` units, 250 paths, 100 grid points
    on ``[0.1, 4.5]`` and ``c`` equal to the 15% quantile of a chi-squared
    distribution with 2 degrees of freedom.
    """
    from .datagen import gen_geometry_population

    if grid is None:
        grid = np.linspace(0.1, 4.5, 100)
    if c is None:
        c = chisq_quantile(0.15, 2)
    root = RngStream(seed)
    pop = gen_geometry_population(ScenarioConfig("geometry", superpop, tau=15.0), root.substream(0))
    geom = geometry_decomposition(pop, arm, grid, c, n_paths, root.substream(1))
    write_geometry_csv(geom, path)
    return geom


def kappa_tool(p: int, c: float) -> dict:
    """Variance multiplier, acceptance probability and variance-reduction ceiling."""
    k = kappa(c, p)
    acc = chisq_cdf(c, p) if math.isfinite(c) else 1.0
    return {"p": int(p), "c": float(c), "kappa": k, "acceptance": acc, "max_reduction": 1.0 - k}

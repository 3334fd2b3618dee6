"""Synthetic trial populations and Monte Carlo true survival curves.

Two simulation scenarios are provided:

* scenario 1: Weibull event times (shape 1.5) with a covariate-dependent
  proportional-hazards rate and covariate-dependent exponential censoring;
* scenario 2: log-normal event times with uniform(0, 20) censoring.

Both share the covariate law ``z1 ~ N(1, 1)``, ``D | z1 ~ Bernoulli(0.4 +
0.2 1(z1 < 1))`` and ``z2 ~ N(0, 1)``; the balancing covariates are
``(z1, z2)`` and ``D`` is the stratum.  A third population (two standard
normal covariates, strong Weibull effect, uniform(0, 15) censoring) feeds the
geometry illustration.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .data import Dataset
from .exceptions import ConfigurationError
from .mathcore import RngLike, RngStream, as_generator

__all__ = [
    "ScenarioConfig",
    "GeneratedSample",
    "gen_covariates",
    "gen_scenario1",
    "gen_scenario2",
    "gen_geometry_population",
    "generate",
    "observe",
    "true_survival",
    "OracleCache",
    "DEFAULT_PARAMS",
]

DEFAULT_PARAMS = {
    1: {"base_rate": 0.1, "shape": 1.5, "censor_rate": 0.05},
    2: {"sigma": 1.0, "censor_max": 20.0},
    "geometry": {"shape": 1.5, "effect": 1.5, "censor_max": 15.0},
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Data-generating configuration.

    Parameters
    ----------
    scenario : {1, 2, "geometry"}
    n : int
        Sample size, at least 2.
    tau : float, default=5.0
        Administrative end of follow-up.
    overrides : mapping, optional
        Replacements for entries of :data:`DEFAULT_PARAMS`.
    """

    scenario: object = 1
    n: int = 100
    tau: float = 5.0
    overrides: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in (1, 2, "geometry"):
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if int(self.n) < 2:
            raise ConfigurationError("n must be at least 2")
        if not self.tau > 0:
            raise ConfigurationError("tau must be positive")
        bad = set(self.overrides) - set(DEFAULT_PARAMS[self.scenario])
        if bad:
            raise ConfigurationError(f"unknown parameter overrides {sorted(bad)}")

    @property
    def params(self) -> dict:
        return {**DEFAULT_PARAMS[self.scenario], **dict(self.overrides)}


@dataclass(frozen=True)
class GeneratedSample:
    """Complete data: covariates, both potential event times and censoring.

    Attributes
    ----------
    covariates : ndarray of shape (n, p)
    covariate_names : tuple of str
    stratum : ndarray of shape (n,) or None
    t0, t1 : ndarray of shape (n,)
        Potential event times under arms 0 and 1.
    censor : ndarray of shape (n,)
        Censoring time, shared by both arms.
    rerand_cols : tuple of int
    tau : float
    """

    covariates: np.ndarray
    covariate_names: tuple
    stratum: Optional[np.ndarray]
    t0: np.ndarray
    t1: np.ndarray
    censor: np.ndarray
    rerand_cols: tuple
    tau: float

    @property
    def n(self) -> int:
        return self.t0.shape[0]

    def potential(self, arm: int) -> np.ndarray:
        return self.t1 if arm == 1 else self.t0


def gen_covariates(n: int, rng: RngLike) -> np.ndarray:
    """Columns ``(z1, z2, D)`` with ``D`` depending on ``z1``."""
    gen = as_generator(rng)
    z1 = gen.normal(1.0, 1.0, n)
    d = (gen.random(n) < 0.4 + 0.2 * (z1 < 1.0)).astype(float)
    z2 = gen.normal(0.0, 1.0, n)
    return np.column_stack([z1, z2, d])


def _weibull_times(rate: np.ndarray, shape: float, gen: np.random.Generator) -> np.ndarray:
    # inverse transform of S(t) = exp(-rate * t**shape)
    return (gen.standard_exponential(rate.shape[0]) / rate) ** (1.0 / shape)


def scenario1_rate(z: np.ndarray, arm: int, base_rate: float = 0.1) -> np.ndarray:
    """Weibull rate ``lambda(a)`` of scenario 1 for covariate rows ``(z1, z2, D)``."""
    z1, z2, d = z[:, 0], z[:, 1], z[:, 2]
    lin = -0.5 * arm + 0.5 * z1 - 0.5 * z2 + 0.5 * d + 0.5 * arm * z1 - 0.5 * arm * z2
    return base_rate * np.exp(lin)


def scenario1_censor_rate(z: np.ndarray, censor_rate: float = 0.05) -> np.ndarray:
    return censor_rate * np.exp(0.2 * z[:, 0] + 0.2 * z[:, 2])


def scenario2_mean(z: np.ndarray, arm: int) -> np.ndarray:
    """Mean of ``log T(a)`` in scenario 2."""
    return -1.0 - 0.5 * arm + z[:, 0] - z[:, 1] + z[:, 2]


def _sample(z, t0, t1, c, tau) -> GeneratedSample:
    return GeneratedSample(
        covariates=z,
        covariate_names=("z1", "z2", "D"),
        stratum=z[:, 2].astype(np.int64),
        t0=t0,
        t1=t1,
        censor=c,
        rerand_cols=(0, 1),
        tau=tau,
    )


def gen_scenario1(config: ScenarioConfig, rng: RngLike) -> GeneratedSample:
    """Weibull proportional-hazards outcomes with exponential censoring."""
    gen = as_generator(rng)
    prm = config.params
    z = gen_covariates(config.n, gen)
    t0 = _weibull_times(scenario1_rate(z, 0, prm["base_rate"]), prm["shape"], gen)
    t1 = _weibull_times(scenario1_rate(z, 1, prm["base_rate"]), prm["shape"], gen)
    c = gen.standard_exponential(config.n) / scenario1_censor_rate(z, prm["censor_rate"])
    return _sample(z, t0, t1, c, config.tau)


def gen_scenario2(config: ScenarioConfig, rng: RngLike) -> GeneratedSample:
    """Log-normal outcomes with independent uniform censoring."""
    gen = as_generator(rng)
    prm = config.params
    z = gen_covariates(config.n, gen)
    t0 = np.exp(gen.normal(scenario2_mean(z, 0), prm["sigma"]))
    t1 = np.exp(gen.normal(scenario2_mean(z, 1), prm["sigma"]))
    c = gen.uniform(0.0, prm["censor_max"], config.n)
    return _sample(z, t0, t1, c, config.tau)


def gen_geometry_population(config: ScenarioConfig, rng: RngLike) -> GeneratedSample:
    """Population for the geometry illustration.

    ``Z ~ N(0, I_2)``, ``S(t | z) = exp(-t^1.5 exp(1.5 z1 + 1.5 z2))`` for
    both arms, and ``C ~ U(0, 15)``.
    """
    gen = as_generator(rng)
    prm = config.params
    z = gen.standard_normal((config.n, 2))
    rate = np.exp(prm["effect"] * (z[:, 0] + z[:, 1]))
    t0 = _weibull_times(rate, prm["shape"], gen)
    t1 = _weibull_times(rate, prm["shape"], gen)
    c = gen.uniform(0.0, prm["censor_max"], config.n)
    return GeneratedSample(
        covariates=z,
        covariate_names=("z1", "z2"),
        stratum=None,
        t0=t0,
        t1=t1,
        censor=c,
        rerand_cols=(0, 1),
        tau=config.tau,
    )


_GENERATORS = {1: gen_scenario1, 2: gen_scenario2, "geometry": gen_geometry_population}


def generate(config: ScenarioConfig, rng: RngLike) -> GeneratedSample:
    """Dispatch to the generator of ``config.scenario``."""
    return _GENERATORS[config.scenario](config, rng)


def observe(sample: GeneratedSample, arms) -> Dataset:
    """Observed data under a treatment vector.

    Follow-up stops at the earliest of the potential event time, the
    censoring time and ``tau``.
    """
    arms = np.asarray(arms)
    t = np.where(arms == 1, sample.t1, sample.t0)
    end = np.minimum(sample.censor, sample.tau)
    return Dataset(
        arm=arms,
        time=np.minimum(t, end),
        event=(t <= end).astype(np.int64),
        covariates=sample.covariates,
        covariate_names=sample.covariate_names,
        rerand_cols=sample.rerand_cols,
        stratum=sample.stratum,
        stratum_col="D" if sample.stratum is not None else None,
        tau=sample.tau,
    )


def true_survival(scenario, arm: int, times, n_mc: int, rng: RngLike):
    """Monte Carlo marginal survival ``P(T(arm) > t)``.

    Parameters
    ----------
    scenario : {1, 2, "geometry"}
    arm : {0, 1}
    times : array-like
    n_mc : int
        Super-population size, at least ``1e5``.
    rng : RngStream or Generator

    Returns
    -------
    survival, mc_se : ndarray
        Empirical survival proportions and their binomial standard errors.
    """
    if n_mc < 100_000:
        raise ConfigurationError("n_mc must be at least 1e5 for the truth oracle")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    sample = generate(ScenarioConfig(scenario, n_mc), rng)
    t = np.sort(sample.potential(arm))
    surv = 1.0 - np.searchsorted(t, times, side="right") / n_mc
    se = np.sqrt(surv * (1.0 - surv) / n_mc)
    return surv, se


_CACHE_COLUMNS = ("scenario", "arm", "t", "survival", "mc_se", "n_mc", "seed")


class OracleCache:
    """Disk cache of true survival values keyed by ``(scenario, arm, n_mc, seed)``.

    Missing time points are computed from the same seeded super-population
    and appended, so cached and fresh values are always consistent.

    Parameters
    ----------
    path : path-like, optional
        CSV location; defaults to ``$SURVRERAND_CACHE`` or
        ``~/.cache/survrerand/oracle.csv``.
    """

    def __init__(self, path=None):
        if path is None:
            path = os.environ.get("SURVRERAND_CACHE") or Path.home() / ".cache" / "survrerand" / "oracle.csv"
        self.path = Path(path)

    def _read(self) -> dict:
        table = {}
        if not self.path.exists():
            return table
        with open(self.path, newline="") as fh:
            for row in csv.DictReader(fh):
                scen = row["scenario"]
                scen = int(scen) if scen.isdigit() else scen
                key = (scen, int(row["arm"]), int(row["n_mc"]), int(row["seed"]))
                table.setdefault(key, {})[repr(float(row["t"]))] = (float(row["survival"]), float(row["mc_se"]))
        return table

    def lookup(self, scenario, arm: int, times: Sequence[float], n_mc: int = 10**6, seed: int = 20240101):
        """Survival and MC standard errors at ``times``, computing what is missing."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        key = (scenario, int(arm), int(n_mc), int(seed))
        stored = self._read().get(key, {})
        missing = [t for t in times if repr(float(t)) not in stored]
        if missing:
            # the oracle draw depends on (scenario, arm) only through the stream id
            stream = RngStream(seed, (0 if scenario == "geometry" else int(scenario), int(arm)))
            s, se = true_survival(scenario, arm, missing, n_mc, stream)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            new_file = not self.path.exists()
            with open(self.path, "a", newline="") as fh:
                w = csv.writer(fh)
                if new_file:
                    w.writerow(_CACHE_COLUMNS)
                for t, v, e in zip(missing, s, se):
                    w.writerow([scenario, arm, repr(float(t)), repr(float(v)), repr(float(e)), n_mc, seed])
                    stored[repr(float(t))] = (float(v), float(e))
        surv = np.array([stored[repr(float(t))][0] for t in times])
        se = np.array([stored[repr(float(t))][1] for t in times])
        return surv, se

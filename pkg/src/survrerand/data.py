"""Observed survival data, time grids, design metadata and CSV ingestion."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Callable, Iterator, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .exceptions import ConfigurationError, DataError, EstimationError

__all__ = [
    "Observation",
    "Dataset",
    "TimeGrid",
    "DesignMeta",
    "RiskTable",
    "Finding",
    "risk_table",
    "validate",
    "load_dataset_csv",
    "save_dataset_csv",
    "band_grid",
]

DESIGNS = ("simple", "rerand", "stratified-rerand")
_DESIGN_ALIASES = {
    "simple": "simple",
    "srs": "simple",
    "rerand": "rerand",
    "rem": "rerand",
    "stratified-rerand": "stratified-rerand",
    "srem": "stratified-rerand",
}
SHORT_DESIGN = {"simple": "srs", "rerand": "rem", "stratified-rerand": "srem"}


class Observation(NamedTuple):
    """One unit's realized record ``(A, X, Delta, Z, D)``."""

    id: object
    arm: int
    time: float
    event: int
    covariates: np.ndarray
    stratum: Optional[int] = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of observations.

    Parameters
    ----------
    arm : array-like of shape (n,)
        Treatment indicator in ``{0, 1}``.
    time : array-like of shape (n,)
        Follow-up time ``min(T, C)``.
    event : array-like of shape (n,)
        Event indicator ``1(T <= C)``.
    covariates : array-like of shape (n, p)
        Baseline covariates used by nuisance models.
    covariate_names : sequence of str, optional
    rerand_cols : sequence of int, default=()
        Indices into ``covariates`` of the balancing covariates.
    stratum : array-like of shape (n,), optional
        Small-integer stratum labels.
    stratum_col : str, optional
        Name of the stratum column, for provenance only.
    ids : array-like of shape (n,), optional
    tau : float, optional
        Maximum follow-up; defaults to the largest observed time.
    """

    arm: np.ndarray
    time: np.ndarray
    event: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple = ()
    rerand_cols: tuple = ()
    stratum: Optional[np.ndarray] = None
    stratum_col: Optional[str] = None
    ids: Optional[np.ndarray] = None
    tau: Optional[float] = None

    def __post_init__(self):
        arm = np.asarray(self.arm)
        time = np.asarray(self.time, dtype=float)
        event = np.asarray(self.event)
        n = time.shape[0]
        if n == 0:
            raise DataError("dataset is empty")
        if arm.shape != (n,) or event.shape != (n,):
            raise DataError("arm, time and event must be one-dimensional of equal length")
        if not np.all(np.isin(arm, (0, 1))):
            raise DataError("arm values must be 0 or 1")
        if not np.all(np.isin(event, (0, 1))):
            raise DataError("event values must be 0 or 1")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise DataError("times must be finite and non-negative")
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(n, -1) if cov.size else np.empty((n, 0))
        if cov.shape[0] != n:
            raise DataError("covariate rows must match the number of observations")
        if not np.all(np.isfinite(cov)):
            raise DataError("covariates must be finite")
        names = tuple(self.covariate_names) or tuple(f"z{j + 1}" for j in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise DataError("covariate_names length does not match covariate columns")
        rr = tuple(int(j) for j in self.rerand_cols)
        if any(j < 0 or j >= cov.shape[1] for j in rr):
            raise DataError(f"rerand column indices {rr} out of range for {cov.shape[1]} covariates")
        stratum = None
        if self.stratum is not None:
            stratum = np.asarray(self.stratum)
            if stratum.shape != (n,):
                raise DataError("stratum must have one entry per observation")
            if not np.all(np.equal(np.mod(stratum, 1), 0)):
                raise DataError("stratum labels must be integers")
            stratum = stratum.astype(np.int64)
        ids = np.arange(1, n + 1) if self.ids is None else np.asarray(self.ids)
        if ids.shape != (n,):
            raise DataError("ids must have one entry per observation")
        tau = float(np.max(time)) if self.tau is None else float(self.tau)
        if not tau > 0:
            raise DataError("tau must be positive")
        for name, value in (
            ("arm", arm.astype(np.int64)),
            ("time", time),
            ("event", event.astype(np.int64)),
            ("covariates", cov),
            ("covariate_names", names),
            ("rerand_cols", rr),
            ("stratum", stratum),
            ("ids", ids),
            ("tau", tau),
        ):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    # -- convenience -----------------------------------------------------

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def rerand_matrix(self) -> np.ndarray:
        """Balancing covariates ``Z^rr`` as an ``(n, p_rr)`` array."""
        return self.covariates[:, list(self.rerand_cols)]

    def n_arm(self, arm: int) -> int:
        return int(np.sum(self.arm == arm))

    def observations(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation(
                self.ids[i],
                int(self.arm[i]),
                float(self.time[i]),
                int(self.event[i]),
                self.covariates[i],
                None if self.stratum is None else int(self.stratum[i]),
            )

    def subset(self, index) -> "Dataset":
        """Rows selected by an integer index array or boolean mask."""
        index = np.asarray(index)
        return replace(
            self,
            arm=self.arm[index],
            time=self.time[index],
            event=self.event[index],
            covariates=self.covariates[index],
            stratum=None if self.stratum is None else self.stratum[index],
            ids=self.ids[index],
        )

    def with_arms(self, arms) -> "Dataset":
        """Copy with a new treatment vector (used after re-assignment)."""
        return replace(self, arm=np.asarray(arms))


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing evaluation times inside ``[0, tau]``."""

    points: np.ndarray
    tau: float = math.inf

    def __post_init__(self):
        pts = np.atleast_1d(np.asarray(self.points, dtype=float))
        if pts.ndim != 1 or pts.size == 0:
            raise ConfigurationError("time grid must be a nonempty vector")
        if np.any(np.diff(pts) <= 0):
            raise ConfigurationError("time grid must be strictly increasing")
        if pts[0] < 0 or pts[-1] > self.tau:
            raise ConfigurationError(f"time grid must lie inside [0, {self.tau}]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.points, dtype=dtype)

    @classmethod
    def default(cls, dataset: Dataset, arm: int, report_times: Sequence[float] = ()) -> "TimeGrid":
        """Arm-specific event times within ``[0, tau]`` joined with report times."""
        sel = (dataset.arm == arm) & (dataset.event == 1) & (dataset.time <= dataset.tau)
        pts = np.union1d(dataset.time[sel], np.asarray(report_times, dtype=float))
        return cls(pts, dataset.tau)


def band_grid(lo: float = 1.0, hi: float = 4.0, m: int = 50) -> np.ndarray:
    """Equally spaced band evaluation points on ``[lo, hi]``."""
    if not (hi > lo and m >= 1):
        raise ConfigurationError("band requires hi > lo and at least one point")
    return np.linspace(lo, hi, int(m))


@dataclass(frozen=True)
class DesignMeta:
    """How treatment was (or hypothetically would have been) assigned.

    Attributes
    ----------
    design : {"simple", "rerand", "stratified-rerand"}
        Short aliases ``srs``, ``rem`` and ``srem`` are accepted.
    pi1 : float
        Probability of assignment to arm 1.
    c : float, optional
        Mahalanobis acceptance threshold (rerandomized designs only).
    rerand_cols : tuple of int
        Balancing covariate indices.
    stratum_col : str, optional
        Stratum column name (stratified design only).
    pi1_by_stratum : dict, optional
        Per-stratum treatment probabilities; missing strata use ``pi1``.
    """

    design: str = "simple"
    pi1: float = 0.5
    c: Optional[float] = None
    rerand_cols: tuple = ()
    stratum_col: Optional[str] = None
    pi1_by_stratum: Optional[dict] = None

    def __post_init__(self):
        design = _DESIGN_ALIASES.get(str(self.design).lower())
        if design is None:
            raise ConfigurationError(f"unknown design {self.design!r}; expected one of {DESIGNS}")
        object.__setattr__(self, "design", design)
        if not 0.0 < float(self.pi1) < 1.0:
            raise ConfigurationError("pi1 must lie in (0, 1)")
        object.__setattr__(self, "pi1", float(self.pi1))
        object.__setattr__(self, "rerand_cols", tuple(int(j) for j in self.rerand_cols))
        if self.c is not None:
            if not float(self.c) > 0:
                raise ConfigurationError("threshold c must be positive")
            object.__setattr__(self, "c", float(self.c))
        if self.pi1_by_stratum is not None:
            probs = {int(k): float(v) for k, v in dict(self.pi1_by_stratum).items()}
            if any(not 0.0 < v < 1.0 for v in probs.values()):
                raise ConfigurationError("per-stratum probabilities must lie in (0, 1)")
            object.__setattr__(self, "pi1_by_stratum", probs)
        if design != "simple" and (self.c is None or not self.rerand_cols):
            raise ConfigurationError(f"design {design!r} requires rerand_cols and c")

    @property
    def is_rerandomized(self) -> bool:
        return self.design != "simple"

    @property
    def is_stratified(self) -> bool:
        return self.design == "stratified-rerand"

    @property
    def short_name(self) -> str:
        return SHORT_DESIGN[self.design]

    def stratum_pi1(self, d: int) -> float:
        if self.pi1_by_stratum and int(d) in self.pi1_by_stratum:
            return self.pi1_by_stratum[int(d)]
        return self.pi1

    def to_json(self) -> str:
        payload = asdict(self)
        payload["rerand_cols"] = list(self.rerand_cols)
        if self.pi1_by_stratum is not None:
            payload["pi1_by_stratum"] = {str(k): v for k, v in self.pi1_by_stratum.items()}
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DesignMeta":
        payload = json.loads(text)
        unknown = set(payload) - {"design", "pi1", "c", "rerand_cols", "stratum_col", "pi1_by_stratum"}
        if unknown:
            raise ConfigurationError(f"unknown DesignMeta fields: {sorted(unknown)}")
        return cls(**payload)


@dataclass(frozen=True)
class RiskTable:
    """Aggregated counting-process quantities at the distinct event times.

    ``dN[j]`` is the (weighted) number of events at ``times[j]`` and
    ``Y[j]`` the (weighted) number at risk just before it.
    """

    times: np.ndarray
    dN: np.ndarray
    Y: np.ndarray


WeightFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


def risk_table(dataset: Dataset, arm: int, weights: Optional[WeightFunction] = None) -> RiskTable:
    """Event counts and risk-set sizes for one arm.

    A censoring tied with an event time leaves the censored unit at risk
    for that event.

    Parameters
    ----------
    dataset : Dataset
    arm : {0, 1}
    weights : callable, optional
        ``weights(unit_index, times)`` returns an ``(len(unit_index),
        len(times))`` array of per-unit weights at each event time.

    Returns
    -------
    RiskTable
    """
    idx = np.flatnonzero(dataset.arm == arm)
    if idx.size == 0:
        raise EstimationError(f"arm {arm} has no units")
    x = dataset.time[idx]
    d = dataset.event[idx]
    times = np.unique(x[d == 1])
    if weights is None:
        xs = np.sort(x)
        Y = (xs.size - np.searchsorted(xs, times, side="left")).astype(float)
        ev = np.sort(x[d == 1])
        dN = (np.searchsorted(ev, times, side="right") - np.searchsorted(ev, times, side="left")).astype(float)
        return RiskTable(times, dN, Y)
    W = np.asarray(weights(idx, times), dtype=float)
    if W.shape != (idx.size, times.size):
        raise EstimationError("weight function returned an array of the wrong shape")
    at_risk = x[:, None] >= times[None, :]
    jump = (x[:, None] == times[None, :]) & (d[:, None] == 1)
    Y = np.sum(W * at_risk, axis=0)
    dN = np.sum(W * jump, axis=0)
    return RiskTable(times, dN, Y)


@dataclass(frozen=True)
class Finding:
    """A validation message; ``level`` is ``"error"`` or ``"warning"``."""

    level: str
    code: str
    message: str


def validate(dataset: Dataset, meta: Optional[DesignMeta] = None) -> list:
    """Consistency checks between a dataset and a design declaration.

    Returns a (possibly empty) list of :class:`Finding` objects instead of
    raising.
    """
    out = []
    for a in (0, 1):
        if dataset.n_arm(a) == 0:
            out.append(Finding("error", "empty-arm", f"arm {a} has no units"))
        elif not np.any((dataset.arm == a) & (dataset.time >= dataset.tau)):
            out.append(
                Finding(
                    "warning",
                    "no-risk-at-tau",
                    f"arm {a} has no units still at risk at tau={dataset.tau:g}; "
                    "estimates near tau rest on an empty risk set",
                )
            )
    if meta is None:
        return out
    if meta.is_rerandomized:
        cols = meta.rerand_cols or dataset.rerand_cols
        bad = [j for j in cols if j >= dataset.p]
        if not cols:
            out.append(Finding("error", "no-rerand-cols", "rerandomized design without balancing covariates"))
        elif bad:
            out.append(Finding("error", "bad-rerand-cols", f"rerand columns {bad} out of range"))
    if meta.is_stratified:
        if dataset.stratum is None:
            out.append(Finding("error", "no-stratum", "stratified design but the dataset has no stratum column"))
        else:
            for d in np.unique(dataset.stratum):
                in_d = dataset.stratum == d
                arms = set(np.unique(dataset.arm[in_d]).tolist())
                if arms != {0, 1}:
                    out.append(
                        Finding("error", "stratum-single-arm", f"stratum {d} does not contain both arms")
                    )
    return out


# --------------------------------------------------------------------------
# CSV I/O
# --------------------------------------------------------------------------

_ROLES = ("id", "arm", "time", "event", "stratum")


def _parse_float(text: str, column: str, row: int) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataError(f"row {row}: column {column!r} has non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}: column {column!r} is not finite")
    return value


def load_dataset_csv(
    path,
    schema: Optional[Mapping[str, str]] = None,
    *,
    rerand_cols: Sequence = (),
    log_cols: Sequence[str] = (),
    tau: Optional[float] = None,
) -> Dataset:
    """Read one-row-per-unit survival data from a CSV file with a header.

    Parameters
    ----------
    path : path-like
    schema : mapping, optional
        Maps roles ``id``, ``arm``, ``time``, ``event`` and ``stratum`` to
        column names; unmapped roles use the role name itself.  Every other
        column (and the stratum column) becomes a covariate.
    rerand_cols : sequence of str or int
        Balancing covariates, by name or covariate index.
    log_cols : sequence of str
        Covariates replaced by ``log(1 + x)`` after parsing.
    tau : float, optional

    Raises
    ------
    DataError
        Missing columns, non-numeric fields, negative times or invalid arm
        or event codes; messages cite the 1-based data row.
    """
    schema = dict(schema or {})
    unknown = set(schema) - set(_ROLES)
    if unknown:
        raise DataError(f"unknown schema roles {sorted(unknown)}; expected {_ROLES}")
    cols = {role: schema.get(role, role) for role in _ROLES}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for role in ("arm", "time", "event"):
            if cols[role] not in header:
                raise DataError(f"required column {cols[role]!r} ({role}) not found in header")
        has_id = cols["id"] in header
        has_stratum = cols["stratum"] in header
        if "stratum" in schema and not has_stratum:
            raise DataError(f"stratum column {cols['stratum']!r} not found in header")
        reserved = {cols["id"], cols["arm"], cols["time"], cols["event"]}
        cov_names = [h for h in header if h not in reserved]
        ids, arm, time, event, cov, strat = [], [], [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if None in row or any(v is None for v in row.values()):
                raise DataError(f"row {row_no}: wrong number of fields")
            a = _parse_float(row[cols["arm"]], cols["arm"], row_no)
            if a not in (0.0, 1.0):
                raise DataError(f"row {row_no}: arm must be 0 or 1, got {row[cols['arm']]!r}")
            t = _parse_float(row[cols["time"]], cols["time"], row_no)
            if t < 0:
                raise DataError(f"row {row_no}: negative time {t}")
            e = _parse_float(row[cols["event"]], cols["event"], row_no)
            if e not in (0.0, 1.0):
                raise DataError(f"row {row_no}: event must be 0 or 1, got {row[cols['event']]!r}")
            ids.append(row[cols["id"]] if has_id else row_no)
            arm.append(int(a))
            time.append(t)
            event.append(int(e))
            cov.append([_parse_float(row[c], c, row_no) for c in cov_names])
            if has_stratum:
                s = _parse_float(row[cols["stratum"]], cols["stratum"], row_no)
                if s != int(s):
                    raise DataError(f"row {row_no}: stratum must be an integer label")
                strat.append(int(s))
    if not time:
        raise DataError(f"{path} contains no data rows")
    cov = np.asarray(cov, dtype=float).reshape(len(time), len(cov_names))
    for name in log_cols:
        if name not in cov_names:
            raise DataError(f"log-transform column {name!r} is not a covariate")
        j = cov_names.index(name)
        if np.any(cov[:, j] <= -1):
            raise DataError(f"column {name!r} has values <= -1; log(1 + x) undefined")
        cov[:, j] = np.log1p(cov[:, j])
    rr = []
    for c in rerand_cols:
        if isinstance(c, str) and not c.lstrip("-").isdigit():
            if c not in cov_names:
                raise DataError(f"rerand column {c!r} is not a covariate")
            rr.append(cov_names.index(c))
        else:
            rr.append(int(c))
    id_arr = np.asarray(ids)
    return Dataset(
        arm=np.asarray(arm),
        time=np.asarray(time),
        event=np.asarray(event),
        covariates=cov,
        covariate_names=tuple(cov_names),
        rerand_cols=tuple(rr),
        stratum=np.asarray(strat) if has_stratum else None,
        stratum_col=cols["stratum"] if has_stratum else None,
        ids=id_arr,
        tau=tau,
    )


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Write a dataset in the format read by :func:`load_dataset_csv`.

    Values are written with ``repr`` so that a reload is exact.  A stratum
    that is not already one of the covariates is written as ``stratum``.
    """
    names = list(dataset.covariate_names)
    extra_stratum = dataset.stratum is not None and (dataset.stratum_col or "stratum") not in names
    header = ["id", "arm", "time", "event", *names]
    if extra_stratum:
        header.append(dataset.stratum_col or "stratum")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(dataset.n):
            row = [
                dataset.ids[i],
                int(dataset.arm[i]),
                repr(float(dataset.time[i])),
                int(dataset.event[i]),
                *(repr(float(v)) for v in dataset.covariates[i]),
            ]
            if extra_stratum:
                row.append(int(dataset.stratum[i]))
            w.writerow(row)

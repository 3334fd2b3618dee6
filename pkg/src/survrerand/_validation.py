"""Input validation helpers shared by the estimator classes."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, column_or_1d

from .exceptions import DataError

__all__ = ["check_survival_target", "check_treatment", "check_covariates"]


def check_survival_target(y):
    """Split a survival target into ``(time, event)`` arrays.

    Accepts a structured array with ``time`` and ``event`` fields (any
    field order, boolean or integer event), a ``(time, event)`` tuple, or
    an ``(n, 2)`` array whose columns are time and event.
    """
    if isinstance(y, tuple) and len(y) == 2:
        time, event = y
    else:
        arr = np.asarray(y)
        if arr.dtype.names is not None:
            names = arr.dtype.names
            t_name = next((f for f in names if f.lower() in ("time", "t", "duration")), None)
            e_name = next((f for f in names if f.lower() in ("event", "status", "delta", "cens")), None)
            if t_name is None or e_name is None:
                raise DataError(f"structured survival target needs time and event fields, got {names}")
            time, event = arr[t_name], arr[e_name]
        else:
            arr = check_array(arr, ensure_2d=True, dtype=float)
            if arr.shape[1] != 2:
                raise DataError("survival target array must have two columns (time, event)")
            time, event = arr[:, 0], arr[:, 1]
    time = column_or_1d(np.asarray(time, dtype=float))
    event = column_or_1d(np.asarray(event).astype(float))
    if time.shape != event.shape:
        raise DataError("time and event lengths differ")
    if not np.all(np.isfinite(time)) or np.any(time < 0):
        raise DataError("times must be finite and non-negative")
    if not np.all(np.isin(event, (0.0, 1.0))):
        raise DataError("event indicators must be 0 or 1")
    return time, event.astype(np.int64)


def check_treatment(treatment, n: int) -> np.ndarray:
    """Validate a binary treatment vector of length ``n``."""
    a = column_or_1d(np.asarray(treatment))
    if a.shape[0] != n:
        raise DataError(f"treatment has {a.shape[0]} entries, expected {n}")
    if not np.all(np.isin(a, (0, 1))):
        raise DataError("treatment must be coded 0/1")
    return a.astype(np.int64)


def check_covariates(X, n: int) -> np.ndarray:
    """Covariate matrix with ``n`` rows; ``None`` yields zero columns."""
    if X is None:
        return np.empty((n, 0))
    X = check_array(X, ensure_2d=False, dtype=float, ensure_min_features=0)
    if X.ndim == 1:
        X = X.reshape(n, -1)
    if X.shape[0] != n:
        raise DataError(f"covariates have {X.shape[0]} rows, expected {n}")
    return X

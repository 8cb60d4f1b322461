"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ConfigError, ContractError, DimensionError


def check_features(X, n_rows=None, name="X"):
    """Finite float64 2-D array, optionally with a fixed row count."""
    try:
        X = check_array(X, dtype=np.float64, ensure_all_finite=True, ensure_min_samples=1)
    except ValueError as exc:
        raise ContractError(f"{name}: {exc}") from None
    if n_rows is not None and X.shape[0] != n_rows:
        raise DimensionError(name, X.shape, (n_rows, X.shape[1]))
    return X


def check_adjacency(A, n_nodes=None):
    A = check_features(A, n_nodes, name="adjacency")
    if A.shape[0] != A.shape[1]:
        raise DimensionError("adjacency", A.shape)
    if np.any(A < 0):
        raise ContractError("adjacency has negative weights")
    if not np.allclose(A, A.T, rtol=0, atol=0):
        raise ContractError("adjacency is not symmetric")
    return A


def check_positive(name, value):
    if value is None or value <= 0:
        raise ConfigError(f"{name} must be positive, got {value!r}")
    return value


def check_choice(name, value, choices):
    if value not in choices:
        raise ConfigError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value

"""Base power forecasters behind one fit/predict contract.

Built-in kinds are ``persistence``, ``linear_regression`` and
``knn_regressor``.  Other models join the ensemble by registering a class
with ``fit(X, y, options)`` returning a parameter dict and
``predict(params, X, recent, recent_known)`` returning ``(values, available)``.
Parameters must be numpy arrays or plain scalars so states can be bundled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from .core import DomainError, ForecastRecord
from .neighbors import NeighborIndex, Standardizer

RIDGE_PENALTY = 1e-6
DEFAULT_KNN_NEIGHBORS = 20


class FitError(ValueError):
    pass


class Forecaster(Protocol):
    needs_features: bool

    def fit(self, X: np.ndarray, y: np.ndarray, options: dict) -> dict[str, Any]: ...

    def predict(self, params: dict, X: np.ndarray, recent: np.ndarray,
                recent_known: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True)
class ForecasterState:
    kind: str
    params: dict = field(compare=False)
    feature_dims: int
    clip_range: tuple[float, float] = (0.0, 1.0)
    ridge: bool = False


class Persistence:
    needs_features = False

    def fit(self, X, y, options):
        return {}

    def predict(self, params, X, recent, recent_known):
        return np.asarray(recent, dtype=float).copy(), np.asarray(recent_known, dtype=bool).copy()


class LinearRegression:
    """Ordinary least squares with intercept; ridge fallback on rank deficiency."""

    needs_features = True

    def fit(self, X, y, options):
        n, d = X.shape
        if n < d + 1:
            raise FitError(f"linear regression needs >= {d + 1} rows, got {n}")
        A = np.hstack([np.ones((n, 1)), X])
        if np.linalg.matrix_rank(A) < d + 1:
            penalty = np.full(d + 1, RIDGE_PENALTY)
            penalty[0] = 0.0
            coef = np.linalg.solve(A.T @ A + np.diag(penalty), A.T @ y)
            return {"intercept": float(coef[0]), "coef": coef[1:], "ridge": True}
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        return {"intercept": float(coef[0]), "coef": coef[1:], "ridge": False}

    def predict(self, params, X, recent, recent_known):
        return params["intercept"] + X @ params["coef"], np.ones(len(X), dtype=bool)


class KNNRegressor:
    """Mean target of the nearest training rows in standardized feature space."""

    needs_features = True

    def fit(self, X, y, options):
        if len(X) == 0:
            raise FitError("kNN regressor needs at least one row")
        scaler = Standardizer.fit(X)
        return {
            "mean": scaler.mean, "scale": scaler.scale,
            "points": scaler(X), "targets": np.asarray(y, dtype=float),
            "neighbors": int(options.get("neighbors", DEFAULT_KNN_NEIGHBORS)),
        }

    def predict(self, params, X, recent, recent_known):
        index = params.get("_index")
        if index is None:
            index = NeighborIndex(params["points"])
            params["_index"] = index
        q = (X - params["mean"]) / params["scale"]
        idx, _ = index.query(q, params["neighbors"])
        return params["targets"][idx].mean(axis=1), np.ones(len(X), dtype=bool)


REGISTRY: dict[str, Forecaster] = {
    "persistence": Persistence(),
    "linear_regression": LinearRegression(),
    "knn_regressor": KNNRegressor(),
}


def register(kind: str, forecaster: Forecaster):
    REGISTRY[kind] = forecaster


def _impl(kind):
    try:
        return REGISTRY[kind]
    except KeyError:
        raise DomainError(f"unknown forecaster kind {kind!r}; known: {sorted(REGISTRY)}") from None


def fit_arrays(kind: str, X, y, options: dict | None = None) -> ForecasterState:
    impl = _impl(kind)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise FitError("features must be a 2-d array")
    if impl.needs_features and len(X) == 0:
        raise FitError(f"{kind}: empty training set")
    params = impl.fit(X, y, dict(options or {}))
    ridge = bool(params.pop("ridge", False))
    return ForecasterState(kind, params, X.shape[1], ridge=ridge)


def fit(kind: str, rows, options: dict | None = None) -> ForecasterState:
    """Fit from ``(features, observation)`` pairs."""
    rows = list(rows)
    if not rows and _impl(kind).needs_features:
        raise FitError(f"{kind}: empty training set")
    X = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), -1) if rows else np.zeros((0, 0))
    y = np.array([r[1] for r in rows], dtype=float)
    return fit_arrays(kind, X, y, options)


def predict_arrays(state: ForecasterState, X, recent=None, recent_known=None):
    """Vectorized prediction; returns ``(values clipped to [0, 1], available)``."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    if recent is None:
        recent = np.zeros(n)
        recent_known = np.zeros(n, dtype=bool)
    impl = _impl(state.kind)
    if impl.needs_features and X.shape[1] != state.feature_dims:
        raise DomainError(f"{state.kind}: expected {state.feature_dims} features, got {X.shape[1]}")
    values, available = impl.predict(state.params, X, np.asarray(recent, dtype=float),
                                     np.asarray(recent_known, dtype=bool))
    lo, hi = state.clip_range
    values = np.clip(np.where(available, values, 0.0), lo, hi)
    return values, np.asarray(available, dtype=bool)


def predict(state: ForecasterState, record: ForecastRecord) -> float | None:
    """Single-record prediction; ``None`` signals an unavailable member."""
    X = np.asarray(record.features, dtype=float).reshape(1, -1)
    recent = record.recent_power_at_origin
    values, ok = predict_arrays(state, X, [0.0 if recent is None else recent], [recent is not None])
    return float(values[0]) if ok[0] else None

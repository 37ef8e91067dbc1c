"""Elastic-net logistic regression baselines fit by proximal gradient."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

# default risk-factor feature list for the 14-variable model; overridable
LR14_DEFAULT_FEATURES = [
    "resp_rate",
    "heart_rate",
    "spo2",
    "fio2",
    "sf_ratio",
    "pco2",
    "ph",
    "hfnc_flow",
    "age",
    "temperature",
    "sbp",
    "dbp",
    "wbc",
    "lactate",
]


@dataclass
class ElasticNetModel:
    weights: np.ndarray
    intercept: float
    lam: float
    alpha: float  # L1 share of the penalty
    feature_subset: str = "full"  # "lr14" | "full"
    features: list[str] = field(default_factory=list)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _smooth_objective(X, y, w, b, lam, alpha):
    z = X @ w + b
    # log(1+exp(-|z|)) formulation for numerical stability
    bce = np.mean(np.logaddexp(0.0, z) - y * z)
    ridge = 0.5 * lam * (1.0 - alpha) * float(w @ w)
    return float(bce + ridge)


def objective(X, y, w, b, lam, alpha):
    return _smooth_objective(X, y, w, b, lam, alpha) + lam * alpha * float(
        np.abs(w).sum()
    )


def _soft_threshold(v, thresh):
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def fit_elasticnet_logreg(
    rows: np.ndarray,
    labels: np.ndarray,
    lam: float,
    alpha: float,
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 100_000,
    features: list[str] | None = None,
    feature_subset: str = "full",
) -> ElasticNetModel:
    """Minimize mean BCE + lam*(alpha*||w||_1 + (1-alpha)*0.5*||w||_2^2)
    by monotone proximal gradient with backtracking; intercept unpenalized.

    Stops when the proximal-gradient residual max-norm drops below ``tol``
    or after ``max_iter`` iterations.
    """
    X = np.asarray(rows, dtype=float)
    y = np.asarray(labels, dtype=float)
    keep = ~np.isnan(y)
    X, y = X[keep], y[keep]
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("rows/labels shape mismatch")
    if lam < 0 or not (0.0 <= alpha <= 1.0):
        raise ValueError("need lam >= 0 and alpha in [0, 1]")
    n, d = X.shape
    features = list(features) if features is not None else []

    base_rate = float(y.mean()) if n else 0.5
    if base_rate <= 0.0 or base_rate >= 1.0:
        warnings.warn("single-class labels: fitting intercept only")
        p = min(max(base_rate, 1e-7), 1.0 - 1e-7)
        return ElasticNetModel(
            np.zeros(d), float(np.log(p / (1.0 - p))), lam, alpha,
            feature_subset, features,
        )

    w = np.zeros(d)
    b = float(np.log(base_rate / (1.0 - base_rate)))
    # Lipschitz guess for the logistic loss gradient; refined by backtracking
    step = 4.0 / max(float(np.linalg.norm(X, 2) ** 2) / n + lam * (1 - alpha), 1e-12)

    f_cur = _smooth_objective(X, y, w, b, lam, alpha)
    for _ in range(max_iter):
        p = _sigmoid(X @ w + b)
        gw = X.T @ (p - y) / n + lam * (1.0 - alpha) * w
        gb = float(np.mean(p - y))
        while True:
            w_new = _soft_threshold(w - step * gw, step * lam * alpha)
            b_new = b - step * gb
            dw = w_new - w
            db = b_new - b
            f_new = _smooth_objective(X, y, w_new, b_new, lam, alpha)
            quad = (
                f_cur
                + float(gw @ dw)
                + gb * db
                + (float(dw @ dw) + db * db) / (2.0 * step)
            )
            if f_new <= quad + 1e-15:
                break
            step *= 0.5
        residual = max(
            float(np.max(np.abs(dw))) if d else 0.0, abs(db)
        ) / step
        w, b, f_cur = w_new, b_new, f_new
        if residual <= tol:
            break
        step *= 1.1  # allow the step to recover between backtracks

    return ElasticNetModel(w, b, lam, alpha, feature_subset, features)


def predict_logreg(model: ElasticNetModel, rows: np.ndarray) -> np.ndarray:
    X = np.asarray(rows, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.weights.shape[0]:
        raise ValueError(
            f"feature mismatch: model has {model.weights.shape[0]}, "
            f"row has {X.shape[1]}"
        )
    p = _sigmoid(X @ model.weights + model.intercept)
    return float(p[0]) if single else p

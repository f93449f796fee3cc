"""Classical baselines over extracted features: linear and logistic regression."""

from dataclasses import dataclass

import numpy as np

from .losses import accuracy, mae


@dataclass
class LinearModel:
    weights: np.ndarray  # (d,)
    bias: float
    kind: str  # "regression" | "logistic"

    def decision(self, X):
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias

    def predict(self, X):
        z = self.decision(X)
        if self.kind == "logistic":
            return (z >= 0).astype(np.int64)
        return z

    def predict_proba(self, X):
        z = self.decision(X)
        return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                        np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def linreg_fit(X, y, ridge=1e-8):
    """Least squares via normal equations on the centered system.

    The tiny ridge only stabilizes near-singular Gram matrices.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite inputs")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    gram = Xc.T @ Xc + ridge * np.eye(X.shape[1])
    w = np.linalg.solve(gram, Xc.T @ yc)
    b = y_mean - x_mean @ w
    return LinearModel(weights=w, bias=float(b), kind="regression")


def logreg_fit(X, y, lr=0.01, epochs=500, class_weights=None):
    """Full-batch gradient descent on (optionally class-weighted) BCE."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    classes = np.unique(y)
    if not np.all(np.isin(classes, (0.0, 1.0))):
        raise ValueError("labels must be 0/1")
    if classes.size < 2:
        raise ValueError("both classes must be present")
    n, d = X.shape
    sw = np.ones(n)
    if class_weights is not None:
        sw = np.where(y == 1, class_weights[1], class_weights[0])
    w = np.zeros(d)
    b = 0.0
    for _ in range(epochs):
        z = X @ w + b
        p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                     np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        resid = sw * (p - y) / n
        w -= lr * (X.T @ resid)
        b -= lr * resid.sum()
    return LinearModel(weights=w, bias=float(b), kind="logistic")


def logreg_loss(model, X, y, class_weights=None):
    """Weighted BCE of a fitted logistic model (monitoring helper)."""
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(model.predict_proba(X), 1e-12, 1 - 1e-12)
    sw = np.ones_like(y)
    if class_weights is not None:
        sw = np.where(y == 1, class_weights[1], class_weights[0])
    return float(-np.mean(sw * (y * np.log(p) + (1 - y) * np.log(1 - p))))


def baseline_eval(model, X, y):
    """MAE for regression models, accuracy for logistic ones."""
    if np.asarray(X).shape[0] != np.asarray(y).shape[0]:
        raise ValueError("X and y row counts differ")
    if model.kind == "regression":
        return {"mae": mae(model.predict(X), np.asarray(y, dtype=np.float64))}
    return {"accuracy": accuracy(model.predict(X), np.asarray(y))}


def baseline_report(rows):
    """Text table like the baseline result tables: method, train, test."""
    lines = [f"{'Method':<24}{'Train':>10}{'Test':>10}"]
    for method, train_val, test_val in rows:
        lines.append(f"{method:<24}{train_val:>10.4f}{test_val:>10.4f}")
    return "\n".join(lines)

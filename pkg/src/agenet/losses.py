"""Training losses and evaluation metrics."""

import numpy as np

from .tensor import Tensor

PROB_FLOOR = 1e-7


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def mse(pred, target):
    """Mean squared error; differentiable through pred."""
    pred = _as_tensor(pred)
    target = _as_tensor(target)
    if pred.size == 0:
        raise ValueError("mse of empty vectors")
    diff = pred - target
    return (diff * diff).mean()


def mae(pred, target):
    """Mean absolute error (evaluation metric, plain float)."""
    pred = np.asarray(pred.data if isinstance(pred, Tensor) else pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    if pred.size == 0:
        raise ValueError("mae of empty vectors")
    return float(np.mean(np.abs(pred - target)))


def _floor_probs(p):
    return p.maximum(Tensor(np.asarray(PROB_FLOOR, dtype=p.dtype)))


def categorical_cross_entropy(probs, onehot):
    """Mean negative log-probability of the true class.

    probs rows must sum to 1; onehot rows must contain exactly one 1.
    """
    probs = _as_tensor(probs)
    onehot_arr = onehot.data if isinstance(onehot, Tensor) else np.asarray(onehot)
    rows = np.atleast_2d(onehot_arr)
    if not np.all((rows == 0) | (rows == 1)) or not np.all(rows.sum(axis=-1) == 1):
        raise ValueError("onehot rows must contain exactly one 1")
    n = rows.shape[0]
    picked = _floor_probs(probs) * onehot_arr
    # log(1) contributes 0 on the zero entries after adding the complement
    safe = picked + (1.0 - onehot_arr)
    return -(safe.log().sum()) / float(n)


def binary_cross_entropy(p, y, weights=None):
    """Optionally class-weighted BCE over sigmoid outputs.

    weights maps class label (0/1) -> positive float; None means unweighted.
    """
    p = _as_tensor(p)
    y_arr = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if not np.all((y_arr == 0) | (y_arr == 1)):
        raise ValueError("binary labels must be 0 or 1")
    n = y_arr.size
    w = np.ones_like(y_arr)
    if weights is not None:
        w = np.where(y_arr == 1, weights[1], weights[0])
    pf = _floor_probs(p)
    one_minus = _floor_probs(1.0 - p)
    per_sample = pf.log() * y_arr + one_minus.log() * (1.0 - y_arr)
    return -(per_sample * w).sum() / float(n)


def accuracy(pred_labels, true_labels):
    """Fraction of exact label matches."""
    pred = np.asarray(pred_labels.data if isinstance(pred_labels, Tensor) else pred_labels)
    true = np.asarray(true_labels.data if isinstance(true_labels, Tensor) else true_labels)
    if pred.size == 0:
        raise ValueError("accuracy of empty vectors")
    return float(np.mean(pred.reshape(-1) == true.reshape(-1)))


def labels_from_probs(probs, binary=False):
    """argmax for multi-class rows, 0.5 threshold for sigmoid outputs."""
    arr = np.asarray(probs.data if isinstance(probs, Tensor) else probs)
    if binary or arr.ndim == 1 or arr.shape[-1] == 1:
        return (arr.reshape(-1) >= 0.5).astype(np.int64)
    return np.argmax(arr, axis=-1)


def balanced_class_weights(counts):
    """Inverse-frequency weights: w_c = total / (k * count_c)."""
    if any(c <= 0 for c in counts.values()):
        raise ValueError("all class counts must be positive")
    total = sum(counts.values())
    k = len(counts)
    return {cls: total / (k * n) for cls, n in counts.items()}

"""Linear baselines: Altman-style Z-Score and L1 logistic regression.

Both consume flattened per-entity feature vectors (all time steps
concatenated, categorical fields one-hot expanded) and share the metric
conventions of the model module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALTMAN_COEFFICIENTS = np.array([0.517, -0.460, 18.640, 0.388, 1.158])
ALTMAN_THRESHOLD = 0.9


@dataclass
class ZScoreModel:
    coefficients: np.ndarray = field(default_factory=lambda: ALTMAN_COEFFICIENTS.copy())
    threshold: float = ALTMAN_THRESHOLD


@dataclass
class LrModel:
    weights: np.ndarray
    bias: float
    l1: float


def zscore_rate(x, model=None):
    """Linear score over exactly five indicators; positive iff score > threshold."""
    model = model or ZScoreModel()
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (5,):
        raise ValueError(f"expected 5 indicator values, got shape {x.shape}")
    score = float(model.coefficients @ x)
    return score, score > model.threshold


def flatten_samples(samples, schema):
    """Per entity: T * (numeric values + one-hot categoricals) feature vector."""
    rows = []
    for s in samples:
        vec = []
        for step in s.steps:
            for f in schema:
                v = step[f.name]
                if f.kind == "numerical":
                    vec.append(v)
                elif f.multi_valued:
                    vec.extend(v)
                    vec.append(0.0)   # OOV slot
                else:
                    onehot = [0.0] * (len(f.vocab) + 1)
                    onehot[v] = 1.0
                    vec.extend(onehot)
        rows.append(vec)
    return np.array(rows, dtype=np.float64)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lr_train(X, y, l1=0.0, lr=0.1, epochs=200, batch_size=32, seed=0):
    """Minibatch SGD on logistic loss + l1 * ||w||_1 (sign subgradient, 0 at 0)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(set(y.tolist())) < 2:
        raise ValueError("logistic regression needs both classes in training data")
    rng = np.random.default_rng(seed)
    w = np.zeros(X.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = X[idx], y[idx]
            p = _sigmoid(xb @ w + b)
            err = p - yb
            gw = xb.T @ err / len(idx) + l1 * np.sign(w)
            gb = err.mean()
            w -= lr * gw
            b -= lr * gb
    return LrModel(weights=w, bias=b, l1=l1)


def lr_predict(x, model):
    """P(label = 1) for a single vector or a matrix of rows."""
    x = np.asarray(x, dtype=np.float64)
    return _sigmoid(x @ model.weights + model.bias)

"""Small binary classifiers used as per-rule calibrators.

All expose ``fit(X, y)``, ``score(X) -> [0, 1]`` and JSON round-tripping via
``to_dict`` / ``classifier_from_dict``.
"""

from __future__ import annotations

from typing import Any

import numpy as np


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LogisticRegressionGD:
    """L2-regularized logistic regression fit by full-batch gradient descent on standardized inputs."""

    family = "logistic"

    def __init__(self, l2: float = 1e-4, lr: float = 0.5, n_iter: int = 1500):
        self.l2 = l2
        self.lr = lr
        self.n_iter = n_iter
        self.mean: np.ndarray | None = None
        self.scale: np.ndarray | None = None
        self.w: np.ndarray | None = None
        self.b = 0.0

    def fit(self, X: np.ndarray, y: np.ndarray) -> "LogisticRegressionGD":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 1e-12, sd, 1.0)
        Z = (X - self.mean) / self.scale
        n, d = Z.shape
        w = np.zeros(d)
        p0 = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        b = float(np.log(p0 / (1 - p0)))
        for _ in range(self.n_iter):
            err = _sigmoid(Z @ w + b) - y
            w -= self.lr * (Z.T @ err / n + self.l2 * w)
            b -= self.lr * float(err.mean())
        self.w, self.b = w, b
        return self

    def score(self, X: np.ndarray) -> np.ndarray:
        Z = (np.atleast_2d(X) - self.mean) / self.scale
        return _sigmoid(Z @ self.w + self.b)

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family,
            "params": {"l2": self.l2, "lr": self.lr, "n_iter": self.n_iter},
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "w": self.w.tolist(),
            "b": self.b,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "LogisticRegressionGD":
        m = cls(**doc["params"])
        m.mean, m.scale, m.w, m.b = np.array(doc["mean"]), np.array(doc["scale"]), np.array(doc["w"]), float(doc["b"])
        return m


class StumpBoost:
    """Gradient boosting of depth-1 trees under logistic loss.

    Split search fits the negative gradient by least squares; leaf values
    take a Newton step.
    """

    family = "stumps"

    def __init__(self, n_rounds: int = 100, shrinkage: float = 0.1):
        self.n_rounds = n_rounds
        self.shrinkage = shrinkage
        self.f0 = 0.0
        self.stumps: list[tuple[int, float, float, float]] = []  # feature, threshold, left, right

    def fit(self, X: np.ndarray, y: np.ndarray) -> "StumpBoost":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n = len(y)
        p0 = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        self.f0 = float(np.log(p0 / (1 - p0)))
        F = np.full(n, self.f0)
        order = np.argsort(X, axis=0, kind="stable")
        Xs = np.take_along_axis(X, order, axis=0)
        valid = Xs[1:] > Xs[:-1]  # split allowed between distinct values
        n_left = np.arange(1, n)[:, None]
        n_right = n - n_left
        self.stumps = []
        for _ in range(self.n_rounds):
            p = _sigmoid(F)
            g = y - p
            h = p * (1 - p)
            G = np.cumsum(g[order], axis=0)[:-1]
            total = g.sum()
            gain = G**2 / n_left + (total - G) ** 2 / n_right
            gain = np.where(valid, gain, -np.inf)
            flat = int(np.argmax(gain))
            if not np.isfinite(gain.flat[flat]):
                break
            i, j = divmod(flat, gain.shape[1])
            thr = 0.5 * (Xs[i, j] + Xs[i + 1, j])
            left = X[:, j] <= thr
            lv = float(g[left].sum() / max(h[left].sum(), 1e-12))
            rv = float(g[~left].sum() / max(h[~left].sum(), 1e-12))
            lv, rv = float(np.clip(lv, -8, 8)), float(np.clip(rv, -8, 8))
            self.stumps.append((int(j), float(thr), lv, rv))
            F += self.shrinkage * np.where(left, lv, rv)
        return self

    def score(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        F = np.full(len(X), self.f0)
        for j, thr, lv, rv in self.stumps:
            F += self.shrinkage * np.where(X[:, j] <= thr, lv, rv)
        return _sigmoid(F)

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family,
            "params": {"n_rounds": self.n_rounds, "shrinkage": self.shrinkage},
            "f0": self.f0,
            "stumps": [list(s) for s in self.stumps],
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "StumpBoost":
        m = cls(**doc["params"])
        m.f0 = float(doc["f0"])
        m.stumps = [(int(j), float(t), float(a), float(b)) for j, t, a, b in doc["stumps"]]
        return m


class CosineKNN:
    """k-nearest neighbors under cosine similarity; score is the positive share among neighbors."""

    family = "knn"

    def __init__(self, k: int = 5):
        self.k = k
        self.X: np.ndarray | None = None
        self.y: np.ndarray | None = None

    @staticmethod
    def _normalize(X: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        return X / np.where(norms > 0, norms, 1.0)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "CosineKNN":
        self.X = self._normalize(np.asarray(X, dtype=float))
        self.y = np.asarray(y, dtype=float)
        return self

    def score(self, X: np.ndarray) -> np.ndarray:
        Q = self._normalize(np.atleast_2d(np.asarray(X, dtype=float)))
        sims = Q @ self.X.T
        k = min(self.k, len(self.y))
        idx = np.argsort(-sims, axis=1, kind="stable")[:, :k]
        return self.y[idx].mean(axis=1)

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "params": {"k": self.k}, "X": self.X.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "CosineKNN":
        m = cls(**doc["params"])
        m.X, m.y = np.array(doc["X"]), np.array(doc["y"])
        return m


class ConstantClassifier:
    """Fixed output; used to fail open on untrainable rules and to plant test ensembles."""

    family = "constant"

    def __init__(self, value: int = 1):
        self.value = int(value)

    def fit(self, X, y) -> "ConstantClassifier":
        return self

    def score(self, X: np.ndarray) -> np.ndarray:
        return np.full(len(np.atleast_2d(X)), float(self.value))

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "value": self.value}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ConstantClassifier":
        return cls(doc["value"])


FAMILIES = {c.family: c for c in (LogisticRegressionGD, StumpBoost, CosineKNN, ConstantClassifier)}
DEFAULT_FAMILIES = ("logistic", "stumps", "knn")


def make_classifier(family: str):
    try:
        return FAMILIES[family]()
    except KeyError:
        raise ValueError(f"unknown classifier family {family!r}") from None


def classifier_from_dict(doc: dict[str, Any]):
    return FAMILIES[doc["family"]].from_dict(doc)

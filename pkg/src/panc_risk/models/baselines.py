"""Non-tree comparison models: penalised logistic regression, k-nearest
neighbours, Gaussian naive Bayes and a one-hidden-layer network."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .._rng import rng_for
from ..errors import DataError
from .trees import sigmoid


# ---------------------------------------------------------------------------
# logistic regression


@dataclass(frozen=True, eq=False)
class LogisticModel:
    coef: np.ndarray
    intercept: float

    def decision(self, X):
        return np.asarray(X, float) @ self.coef + self.intercept

    def predict_proba(self, X):
        return sigmoid(self.decision(X))

    def to_dict(self):
        return {"coef": self.coef.tolist(), "intercept": self.intercept}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["coef"], float), float(d["intercept"]))


def train_logreg(X, y, C=1.0, penalty="l2", max_iter=5000, tol=1e-9):
    """Minimise ``mean log-loss + penalty(w) / (C * n)`` by accelerated
    proximal gradient steps; the intercept is never penalised.

    ``penalty="l2"`` uses ``0.5 * ||w||^2`` and ``"l1"`` uses ``||w||_1``;
    both are applied through their proximal maps, so the step size depends
    only on the smooth data term.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    if C <= 0:
        raise DataError("C must be positive")
    if penalty not in ("l1", "l2"):
        raise DataError(f"unknown penalty {penalty!r}")
    n, p = X.shape
    strength = 1.0 / (C * n)
    Xb = np.hstack([X, np.ones((n, 1))])
    L = 0.25 * np.linalg.norm(Xb, 2) ** 2 / n
    step = 1.0 / L

    def prox(v):
        w = v.copy()
        if penalty == "l2":
            w[:p] = v[:p] / (1.0 + step * strength)
        else:
            w[:p] = np.sign(v[:p]) * np.maximum(np.abs(v[:p]) - step * strength, 0.0)
        return w

    theta = np.zeros(p + 1)
    prev = theta.copy()
    t = 1.0
    for _ in range(max_iter):
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = theta + ((t - 1.0) / t_next) * (theta - prev)
        grad = Xb.T @ (sigmoid(Xb @ z) - y) / n
        new = prox(z - step * grad)
        # restart momentum when it points uphill
        if np.dot(z - new, new - theta) > 0:
            t_next = 1.0
        prev, theta, t = theta, new, t_next
        if np.max(np.abs(theta - prev)) < tol:
            break
    return LogisticModel(theta[:p].copy(), float(theta[p]))


# ---------------------------------------------------------------------------
# k nearest neighbours


@dataclass(frozen=True, eq=False)
class KnnModel:
    X: np.ndarray
    y: np.ndarray
    k: int = 5
    metric: str = "euclidean"
    weights: str = "uniform"

    def __post_init__(self):
        if self.k < 1:
            raise DataError("k must be >= 1")
        if self.metric not in ("euclidean", "manhattan"):
            raise DataError(f"unknown metric {self.metric!r}")
        if self.weights not in ("uniform", "distance"):
            raise DataError(f"unknown weighting {self.weights!r}")

    def _distances(self, Q):
        if self.metric == "euclidean":
            return np.sqrt(((Q[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2))
        return np.abs(Q[:, None, :] - self.X[None, :, :]).sum(axis=2)

    def predict_proba(self, Q, chunk=256):
        Q = np.asarray(Q, float)
        k = min(self.k, self.X.shape[0])
        out = np.empty(Q.shape[0])
        for s in range(0, Q.shape[0], chunk):
            d = self._distances(Q[s:s + chunk])
            idx = np.argsort(d, axis=1, kind="stable")[:, :k]
            dk = np.take_along_axis(d, idx, axis=1)
            yk = self.y[idx].astype(float)
            if self.weights == "uniform":
                w = np.ones_like(dk)
            else:
                zero = dk == 0
                with np.errstate(divide="ignore"):
                    w = np.where(zero.any(axis=1, keepdims=True), zero.astype(float), 1.0 / dk)
            out[s:s + chunk] = (w * yk).sum(axis=1) / w.sum(axis=1)
        return out

    def to_dict(self):
        return {"X": self.X.tolist(), "y": self.y.astype(int).tolist(), "k": self.k,
                "metric": self.metric, "weights": self.weights}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["X"], float), np.asarray(d["y"], bool), d["k"], d["metric"], d["weights"])


def train_knn(X, y, k=5, metric="euclidean", weights="uniform"):
    return KnnModel(np.array(X, float), np.array(y, bool), int(k), metric, weights)


# ---------------------------------------------------------------------------
# Gaussian naive Bayes

VAR_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class GaussianNBModel:
    means: np.ndarray  # (2, p)
    variances: np.ndarray  # (2, p)
    priors: np.ndarray  # (2,)

    def predict_proba(self, X):
        X = np.asarray(X, float)
        ll = np.empty((X.shape[0], 2))
        for c in range(2):
            v = self.variances[c]
            ll[:, c] = (np.log(self.priors[c]) - 0.5 * np.sum(np.log(2 * np.pi * v))
                        - 0.5 * np.sum((X - self.means[c]) ** 2 / v, axis=1))
        return sigmoid(ll[:, 1] - ll[:, 0])

    def to_dict(self):
        return {"means": self.means.tolist(), "variances": self.variances.tolist(),
                "priors": self.priors.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["means"], float), np.asarray(d["variances"], float),
                   np.asarray(d["priors"], float))


def train_gaussian_nb(X, y, priors=None):
    """``priors``: None (class frequencies), ``"balanced"`` or a pair."""
    X = np.asarray(X, float)
    y = np.asarray(y, bool)
    if np.unique(y).size < 2:
        raise DataError("naive Bayes needs both classes")
    means = np.vstack([X[~y].mean(axis=0), X[y].mean(axis=0)])
    variances = np.maximum(np.vstack([X[~y].var(axis=0), X[y].var(axis=0)]), VAR_FLOOR)
    if priors is None:
        pri = np.array([np.mean(~y), np.mean(y)])
    elif priors == "balanced":
        pri = np.array([0.5, 0.5])
    else:
        pri = np.asarray(priors, float)
        if pri.shape != (2,) or np.any(pri <= 0):
            raise DataError("priors must be two positive numbers")
        pri = pri / pri.sum()
    return GaussianNBModel(means, variances, pri)


# ---------------------------------------------------------------------------
# one-hidden-layer network


@dataclass(eq=False)
class MlpWeights:
    W1: np.ndarray  # (p, h)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (h,)
    b2: float = 0.0

    def flat(self):
        return np.concatenate([self.W1.ravel(), self.b1, self.W2, [self.b2]])

    @classmethod
    def unflat(cls, v, p, h):
        i = p * h
        return cls(v[:i].reshape(p, h).copy(), v[i:i + h].copy(), v[i + h:i + 2 * h].copy(), float(v[-1]))


def glorot_init(p, h, rng):
    lim1 = np.sqrt(6.0 / (p + h))
    lim2 = np.sqrt(6.0 / (h + 1))
    return MlpWeights(rng.uniform(-lim1, lim1, size=(p, h)), np.zeros(h),
                      rng.uniform(-lim2, lim2, size=h), 0.0)


def mlp_forward(w: MlpWeights, X):
    z1 = X @ w.W1 + w.b1
    a1 = np.maximum(z1, 0.0)
    return z1, a1, a1 @ w.W2 + w.b2


def mlp_loss_and_grad(w: MlpWeights, X, y, l2=0.0):
    """Mean binary cross-entropy (+ ``0.5 * l2 * ||W||^2``) and its gradient."""
    n = X.shape[0]
    z1, a1, z2 = mlp_forward(w, X)
    # log(1 + exp(z)) - y z, stable
    loss = np.mean(np.logaddexp(0.0, z2) - y * z2) + 0.5 * l2 * (np.sum(w.W1 ** 2) + np.sum(w.W2 ** 2))
    d2 = (sigmoid(z2) - y) / n
    gW2 = a1.T @ d2 + l2 * w.W2
    gb2 = float(d2.sum())
    d1 = np.outer(d2, w.W2) * (z1 > 0)
    gW1 = X.T @ d1 + l2 * w.W1
    gb1 = d1.sum(axis=0)
    return float(loss), MlpWeights(gW1, gb1, gW2, gb2)


@dataclass(frozen=True, eq=False)
class MlpModel:
    weights: MlpWeights

    def predict_proba(self, X):
        return sigmoid(mlp_forward(self.weights, np.asarray(X, float))[2])

    def to_dict(self):
        w = self.weights
        return {"W1": w.W1.tolist(), "b1": w.b1.tolist(), "W2": w.W2.tolist(), "b2": w.b2}

    @classmethod
    def from_dict(cls, d):
        return cls(MlpWeights(np.asarray(d["W1"], float), np.asarray(d["b1"], float),
                              np.asarray(d["W2"], float), float(d["b2"])))


@dataclass(frozen=True)
class MlpParams:
    hidden_units: int = 16
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    l2: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.hidden_units < 1 or self.batch_size < 1 or self.epochs < 0:
            raise DataError("hidden_units and batch_size must be >= 1, epochs >= 0")
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")

    def to_dict(self):
        return asdict(self)


def train_mlp(X, y, params: MlpParams):
    """Mini-batch Adam on the cross-entropy of a ReLU hidden layer."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, p = X.shape
    rng = rng_for(params.seed, "mlp")
    w = glorot_init(p, params.hidden_units, rng)
    theta = w.flat()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    step = 0
    for _ in range(params.epochs):
        perm = rng.permutation(n)
        for s in range(0, n, params.batch_size):
            idx = perm[s:s + params.batch_size]
            cur = MlpWeights.unflat(theta, p, params.hidden_units)
            _, g = mlp_loss_and_grad(cur, X[idx], y[idx], params.l2)
            g = g.flat()
            step += 1
            m = params.beta1 * m + (1 - params.beta1) * g
            v = params.beta2 * v + (1 - params.beta2) * g * g
            mhat = m / (1 - params.beta1 ** step)
            vhat = v / (1 - params.beta2 ** step)
            theta = theta - params.learning_rate * mhat / (np.sqrt(vhat) + params.eps)
    return MlpModel(MlpWeights.unflat(theta, p, params.hidden_units))

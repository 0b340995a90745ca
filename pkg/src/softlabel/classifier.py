"""Softmax classifiers trained by cross-entropy against soft labels.

:class:`SoftLabelClassifier` is a scikit-learn estimator with a softmax-linear
head or one ReLU hidden layer, trained by mini-batch gradient descent (or
Adam) with hand-written backpropagation.  ``fit`` accepts either a hard label
vector or an ``(n_samples, n_classes)`` matrix of soft labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from softlabel.exceptions import ConfigError, MissingDistributionError, TrainingDivergedError

LOG_FLOOR = math.log(1e-12)
MAX_HIDDEN_WIDTH = 64


def softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def log_softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    return Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))


def _forward(params, X):
    if len(params) == 2:
        W, b = params
        return X @ W + b, None
    W1, b1, W2, b2 = params
    H = np.maximum(X @ W1 + b1, 0.0)
    return H @ W2 + b2, H


def _objective(params, X, Y, weight_decay):
    Z, _ = _forward(params, X)
    logp = np.maximum(log_softmax(Z), LOG_FLOOR)
    ce = -np.sum(Y * logp) / X.shape[0]
    penalty = weight_decay * sum(np.sum(W * W) for W in params[0::2])
    return ce + penalty


def _gradients(params, X, Y, weight_decay):
    """Exact gradients of :func:`_objective`, including the log floor."""
    n = X.shape[0]
    Z, H = _forward(params, X)
    logp = log_softmax(Z)
    P = np.exp(logp)
    w = Y * (logp > LOG_FLOOR)
    dZ = (w.sum(axis=1, keepdims=True) * P - w) / n
    if H is None:
        W, _ = params
        return [X.T @ dZ + 2.0 * weight_decay * W, dZ.sum(axis=0)]
    W1, _, W2, _ = params
    dH = (dZ @ W2.T) * (H > 0)
    return [
        X.T @ dH + 2.0 * weight_decay * W1,
        dH.sum(axis=0),
        H.T @ dZ + 2.0 * weight_decay * W2,
        dZ.sum(axis=0),
    ]


def _as_targets(y, n_classes):
    y = np.asarray(y)
    if y.ndim == 2:
        Y = check_array(y, dtype=np.float64)
        if n_classes is not None and Y.shape[1] != n_classes:
            raise ValueError(f"soft labels have {Y.shape[1]} columns, expected {n_classes}")
        if np.any(Y < -1e-12) or np.any(np.abs(Y.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("soft label rows must be probability distributions")
        return Y, Y.shape[1]
    if y.ndim != 1:
        raise ValueError(f"y must be 1-D labels or a 2-D soft label matrix, got shape {y.shape}")
    labels = y.astype(np.int64)
    if not np.array_equal(labels, y) or (labels.size and labels.min() < 0):
        raise ValueError("hard labels must be non-negative integers")
    k = n_classes if n_classes is not None else int(labels.max()) + 1
    k = max(k, 2)
    if labels.size and labels.max() >= k:
        raise ValueError(f"label {int(labels.max())} out of range for {k} classes")
    Y = np.zeros((labels.size, k))
    Y[np.arange(labels.size), labels] = 1.0
    return Y, k


class SoftLabelClassifier(ClassifierMixin, BaseEstimator):
    """Softmax-linear or one-hidden-layer classifier fit to label distributions.

    Parameters
    ----------
    hidden_width : int or None, default=None
        ``None`` for a softmax-linear model, otherwise the ReLU hidden width
        (at most 64).
    learning_rate : float, default=0.1
    epochs : int, default=100
    batch_size : int or None, default=32
        ``None`` (or any value >= n_samples) trains full-batch.
    weight_decay : float, default=0.0
        Coefficient of the squared L2 penalty on weight matrices (not biases).
    solver : {"sgd", "adam"}, default="sgd"
    random_state : int, default=0
        Seeds initialisation and the shuffling schedule.
    n_classes : int or None, default=None
        Needed when hard labels might not contain the largest class index.

    Attributes
    ----------
    coefs_, intercepts_ : list of ndarray
    loss_curve_ : list of float
        Full-data training objective after each epoch.
    classes_ : ndarray of shape (n_classes,)
    """

    def __init__(
        self,
        hidden_width=None,
        learning_rate=0.1,
        epochs=100,
        batch_size=32,
        weight_decay=0.0,
        solver="sgd",
        random_state=0,
        n_classes=None,
    ):
        self.hidden_width = hidden_width
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.solver = solver
        self.random_state = random_state
        self.n_classes = n_classes

    def _validate_params(self):
        if self.hidden_width is not None and not 1 <= self.hidden_width <= MAX_HIDDEN_WIDTH:
            raise ValueError(f"hidden_width must be in [1, {MAX_HIDDEN_WIDTH}] or None")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive or None")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.solver not in ("sgd", "adam"):
            raise ValueError(f"unknown solver {self.solver!r}")

    def _init_params(self, d, k, rng):
        sizes = [d, k] if self.hidden_width is None else [d, self.hidden_width, k]
        params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            params.append(rng.uniform(-bound, bound, size=fan_out))
        return params

    @property
    def params_(self):
        check_is_fitted(self, "coefs_")
        return [p for pair in zip(self.coefs_, self.intercepts_) for p in pair]

    def _set_params_list(self, params):
        self.coefs_ = list(params[0::2])
        self.intercepts_ = list(params[1::2])

    def fit(self, X, y):
        self._validate_params()
        X = check_array(X, dtype=np.float64)
        Y, k = _as_targets(y, self.n_classes)
        if Y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {Y.shape[0]}")
        n, d = X.shape
        rng = np.random.default_rng(self.random_state)
        params = self._init_params(d, k, rng)
        self.n_features_in_ = d
        self.classes_ = np.arange(k)
        self.loss_curve_ = []
        batch = n if self.batch_size is None else min(self.batch_size, n)
        lr = self.learning_rate
        if self.solver == "adam":
            m = [np.zeros_like(p) for p in params]
            v = [np.zeros_like(p) for p in params]
            beta1, beta2, eps, t = 0.9, 0.999, 1e-8, 0
        # overflow shows up as a non-finite objective, reported below
        with np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(self.epochs):
                order = rng.permutation(n) if batch < n else np.arange(n)
                for start in range(0, n, batch):
                    idx = order[start:start + batch]
                    grads = _gradients(params, X[idx], Y[idx], self.weight_decay)
                    if self.solver == "sgd":
                        for p, g in zip(params, grads):
                            p -= lr * g
                    else:
                        t += 1
                        for p, g, mi, vi in zip(params, grads, m, v):
                            mi *= beta1
                            mi += (1 - beta1) * g
                            vi *= beta2
                            vi += (1 - beta2) * g * g
                            mhat = mi / (1 - beta1**t)
                            vhat = vi / (1 - beta2**t)
                            p -= lr * mhat / (np.sqrt(vhat) + eps)
                obj = _objective(params, X, Y, self.weight_decay)
                if not math.isfinite(obj) or not all(np.all(np.isfinite(p)) for p in params):
                    raise TrainingDivergedError(epoch, obj)
                self.loss_curve_.append(float(obj))
        self._set_params_list(params)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coefs_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return _forward(self.params_, X)[0]

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def objective(self, X, Y):
        """Training objective (mean soft cross-entropy plus weight decay)."""
        X = check_array(X, dtype=np.float64)
        Y, _ = _as_targets(Y, len(self.classes_))
        return float(_objective(self.params_, X, Y, self.weight_decay))

    def gradients(self, X, Y):
        X = check_array(X, dtype=np.float64)
        Y, _ = _as_targets(Y, len(self.classes_))
        return _gradients(self.params_, X, Y, self.weight_decay)

    def to_checkpoint(self) -> dict:
        check_is_fitted(self, "coefs_")
        arch = "linear" if self.hidden_width is None else "mlp"
        return {
            "architecture": arch,
            "hidden_width": self.hidden_width,
            "n_features": int(self.n_features_in_),
            "n_classes": int(len(self.classes_)),
            "estimator_params": self.get_params(),
            "weights": [p.tolist() for p in self.params_],
        }

    @classmethod
    def from_checkpoint(cls, data: dict) -> "SoftLabelClassifier":
        model = cls(**data.get("estimator_params", {"hidden_width": data.get("hidden_width")}))
        params = [np.asarray(w, dtype=np.float64) for w in data["weights"]]
        expected = 2 if data["architecture"] == "linear" else 4
        if len(params) != expected:
            raise ValueError(f"{data['architecture']} checkpoint needs {expected} arrays, got {len(params)}")
        model._set_params_list(params)
        model.n_features_in_ = int(data["n_features"])
        model.classes_ = np.arange(int(data["n_classes"]))
        model.loss_curve_ = []
        return model


def save_checkpoint(model: SoftLabelClassifier, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_checkpoint(), fh)
        fh.write("\n")


def load_checkpoint(path) -> SoftLabelClassifier:
    with open(path, encoding="utf-8") as fh:
        return SoftLabelClassifier.from_checkpoint(json.load(fh))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 100
    batch_size: int | None = 32
    weight_decay: float = 0.0
    seed: int = 0
    solver: str = "sgd"
    hidden_width: int | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.solver not in ("sgd", "adam"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.hidden_width is not None and not 1 <= self.hidden_width <= MAX_HIDDEN_WIDTH:
            raise ConfigError(f"hidden_width must be in [1, {MAX_HIDDEN_WIDTH}] or null")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        if not isinstance(data, dict):
            raise ConfigError("train config must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown train config field(s): {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad train config: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def estimator(self, seed=None, n_classes=None) -> SoftLabelClassifier:
        return SoftLabelClassifier(
            hidden_width=self.hidden_width,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            solver=self.solver,
            random_state=self.seed if seed is None else seed,
            n_classes=n_classes,
        )


def train(instances, config: TrainConfig = TrainConfig(), hidden_width="config") -> SoftLabelClassifier:
    """Fit a classifier to the ``p_lambda`` carried by each instance."""
    instances = list(instances)
    for i, inst in enumerate(instances):
        if inst.p_lambda is None:
            raise MissingDistributionError(f"instance {i} has no p_lambda")
    X = np.stack([inst.features for inst in instances])
    Y = np.stack([inst.p_lambda.probs for inst in instances])
    model = config.estimator(n_classes=Y.shape[1])
    if hidden_width != "config":
        model.set_params(hidden_width=hidden_width)
    return model.fit(X, Y)


def _loss_matrix(proba, loss):
    if callable(loss):
        return np.asarray(loss(proba), dtype=np.float64)
    if loss == "cross_entropy":
        return -np.maximum(np.log(np.maximum(proba, 1e-300)), LOG_FLOOR)
    if loss == "zero_one":
        L = np.ones_like(proba)
        L[np.arange(proba.shape[0]), np.argmax(proba, axis=1)] = 0.0
        return L
    raise ValueError(f"unknown loss {loss!r}")


def empirical_soft_risk(model, X, label_dist, loss="cross_entropy") -> float:
    """Mean over instances of ``sum_y label_dist[i, y] * loss(f(x_i), y)``.

    ``loss`` is ``"cross_entropy"`` (log floored at 1e-12), ``"zero_one"``, or
    a callable mapping the ``(n, K)`` predicted probabilities to an ``(n, K)``
    loss matrix.
    """
    P = np.atleast_2d(np.asarray(label_dist, dtype=np.float64))
    proba = model.predict_proba(X)
    if P.shape != proba.shape:
        raise ValueError(f"label distributions {P.shape} do not match predictions {proba.shape}")
    return float(np.mean(np.sum(P * _loss_matrix(proba, loss), axis=1)))


def evaluate(model, X, y, p_star=None) -> dict:
    """Accuracy against hard labels, and true risks when ``p_star`` is known."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("empty test set")
    proba = model.predict_proba(X)
    pred = np.argmax(proba, axis=1)
    out = {"accuracy": float(np.mean(pred == y)), "true_risk_ce": math.nan, "true_risk_01": math.nan}
    if p_star is not None:
        out["true_risk_ce"] = empirical_soft_risk(model, X, p_star, "cross_entropy")
        out["true_risk_01"] = empirical_soft_risk(model, X, p_star, "zero_one")
    return out


def grad_check(model, X, Y, n_params: int = 100, h: float = 1e-5, seed: int = 0, floor: float = 0.0) -> float:
    """Largest relative error between backprop and central differences.

    Checks ``n_params`` parameters chosen at random (all of them when the model
    has fewer).  The relative error is ``|a - f| / max(|a|, |f|, floor)``.
    """
    X = check_array(X, dtype=np.float64)
    Y, _ = _as_targets(Y, len(model.classes_))
    params = [p.copy() for p in model.params_]
    analytic = _gradients(params, X, Y, model.weight_decay)
    sizes = [p.size for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picks = np.arange(total) if total <= n_params else rng.choice(total, size=n_params, replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for flat in picks:
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        local = np.unravel_index(flat - offsets[which], params[which].shape)
        old = params[which][local]
        params[which][local] = old + h
        up = _objective(params, X, Y, model.weight_decay)
        params[which][local] = old - h
        down = _objective(params, X, Y, model.weight_decay)
        params[which][local] = old
        numeric = (up - down) / (2.0 * h)
        a = analytic[which][local]
        denom = max(abs(a), abs(numeric), floor)
        if denom > 0:
            worst = max(worst, abs(a - numeric) / denom)
    return worst

"""Additional-supervision distributions and soft-label assembly.

Built-in supervision kinds never put mass on the hard class: only the
proportions among the other classes matter for the KL gap, so that is all they
encode.  Rankings (T1OC/T2OC) break ties toward the lowest class index.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from softlabel.exceptions import ConfigError, MissingDistributionError, SimplexError
from softlabel.simplex import (
    NEG_TOL,
    LabelDistribution,
    affine_combine,
    as_distribution,
    check_class_index,
)
from softlabel.synth import SupervisedInstance

# Alternative mixing coefficients from the appendix sweep.
LAMBDA_SWEEP = (0.1, 0.15, 0.2, 0.25)
DEFAULT_LAMBDA = 0.9


class SupervisionKind(enum.Enum):
    T1OC = "t1oc"
    T2OC = "t2oc"
    UNIFORM_OTHER = "uniform"
    TRUE_RESTRICTED = "true-restricted"
    CUSTOM = "custom"

    @classmethod
    def parse(cls, text) -> "SupervisionKind":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown supervision kind {text!r}; expected one of {choices}") from None

    @property
    def needs_p_star(self) -> bool:
        return self in (SupervisionKind.T1OC, SupervisionKind.T2OC, SupervisionKind.TRUE_RESTRICTED)


@dataclass(frozen=True)
class LambdaPolicy:
    """Either a constant mixing coefficient or the per-instance optimum."""

    optimal: bool = False
    value: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not self.optimal and not math.isfinite(self.value):
            raise ConfigError(f"constant lambda must be finite, got {self.value!r}")

    @classmethod
    def constant(cls, value: float) -> "LambdaPolicy":
        return cls(optimal=False, value=float(value))

    @classmethod
    def parse(cls, spec) -> "LambdaPolicy":
        """Accepts ``"optimal"``, ``"const:0.9"``, a bare number, or a policy."""
        if isinstance(spec, cls):
            return spec
        if isinstance(spec, (int, float)) and not isinstance(spec, bool):
            return cls.constant(spec)
        text = str(spec).strip().lower()
        if text == "optimal":
            return cls(optimal=True)
        if text.startswith("const:"):
            text = text[len("const:"):]
        try:
            return cls.constant(float(text))
        except ValueError:
            raise ConfigError(f"bad lambda policy {spec!r}; use 'optimal' or 'const:<value>'") from None

    def __str__(self):
        return "optimal" if self.optimal else f"const:{self.value!r}"


def _other_classes_ranked(p_star: np.ndarray, hard: np.ndarray, top: int) -> np.ndarray:
    # stable sort on -p keeps equal probabilities in index order
    masked = np.array(p_star, dtype=np.float64, copy=True)
    masked[np.arange(masked.shape[0]), hard] = -np.inf
    return np.argsort(-masked, axis=1, kind="stable")[:, :top]


def t1oc_matrix(p_star, hard) -> np.ndarray:
    p_star = np.atleast_2d(np.asarray(p_star, dtype=np.float64))
    hard = np.asarray(hard, dtype=np.int64).reshape(-1)
    top = _other_classes_ranked(p_star, hard, 1)
    out = np.zeros_like(p_star)
    out[np.arange(out.shape[0]), top[:, 0]] = 1.0
    return out


def t2oc_matrix(p_star, hard) -> np.ndarray:
    p_star = np.atleast_2d(np.asarray(p_star, dtype=np.float64))
    if p_star.shape[1] < 3:
        raise SimplexError(f"T2OC needs at least 3 classes, got {p_star.shape[1]}")
    hard = np.asarray(hard, dtype=np.int64).reshape(-1)
    top = _other_classes_ranked(p_star, hard, 2)
    out = np.zeros_like(p_star)
    rows = np.arange(out.shape[0])
    out[rows, top[:, 0]] = 0.5
    out[rows, top[:, 1]] = 0.5
    return out


def uniform_other_matrix(hard, num_classes: int) -> np.ndarray:
    if num_classes < 2:
        raise SimplexError(f"need at least 2 classes, got {num_classes}")
    hard = np.asarray(hard, dtype=np.int64).reshape(-1)
    out = np.full((hard.size, num_classes), 1.0 / (num_classes - 1))
    out[np.arange(hard.size), hard] = 0.0
    return out


def true_restricted_matrix(p_star, hard) -> np.ndarray:
    """``p_star`` renormalised off the hard class.

    Rows where ``p_star`` is already the point mass on the hard class fall back
    to the uniform-over-others distribution; the optimal mixing coefficient is 1
    there, so the choice does not affect the soft label.
    """
    p_star = np.atleast_2d(np.asarray(p_star, dtype=np.float64))
    hard = np.asarray(hard, dtype=np.int64).reshape(-1)
    rows = np.arange(p_star.shape[0])
    out = p_star.copy()
    out[rows, hard] = 0.0
    rest = out.sum(axis=1)
    empty = rest <= 0.0
    out[~empty] /= rest[~empty, None]
    if np.any(empty):
        out[empty] = uniform_other_matrix(hard[empty], p_star.shape[1])
    return out


def t1oc(p_star, hard: int) -> LabelDistribution:
    """Point mass on the most probable non-hard class."""
    p_star = as_distribution(p_star)
    hard = check_class_index(hard, p_star.num_classes)
    return LabelDistribution(t1oc_matrix(p_star.probs[None], [hard])[0])


def t2oc(p_star, hard: int) -> LabelDistribution:
    """Half the mass on each of the two most probable non-hard classes."""
    p_star = as_distribution(p_star)
    hard = check_class_index(hard, p_star.num_classes)
    return LabelDistribution(t2oc_matrix(p_star.probs[None], [hard])[0])


def uniform_other(hard: int, num_classes: int) -> LabelDistribution:
    """Mass ``1/(K-1)`` on every class except ``hard``; with lam=0.9 this is label smoothing."""
    hard = check_class_index(hard, num_classes)
    return LabelDistribution(uniform_other_matrix([hard], num_classes)[0])


def supervision_matrix(kind, hard, num_classes: int, p_star=None, p_a=None) -> np.ndarray:
    """Stack of additional-supervision rows for every instance."""
    kind = SupervisionKind.parse(kind)
    hard = np.asarray(hard, dtype=np.int64).reshape(-1)
    if kind.needs_p_star and p_star is None:
        raise MissingDistributionError(f"supervision {kind.value!r} needs p_star")
    if kind is SupervisionKind.T1OC:
        return t1oc_matrix(p_star, hard)
    if kind is SupervisionKind.T2OC:
        return t2oc_matrix(p_star, hard)
    if kind is SupervisionKind.TRUE_RESTRICTED:
        return true_restricted_matrix(p_star, hard)
    if kind is SupervisionKind.UNIFORM_OTHER:
        return uniform_other_matrix(hard, num_classes)
    if p_a is None:
        raise MissingDistributionError("custom supervision needs p_a")
    return np.atleast_2d(np.asarray(p_a, dtype=np.float64))


class SoftLabels(NamedTuple):
    p_a: np.ndarray
    lambdas: np.ndarray
    p_lambda: np.ndarray
    n_clamped: int


def mix(hard, p_a, policy, p_star=None) -> SoftLabels:
    """Vectorised affine combination with per-row lambda from ``policy``.

    Constant lambdas outside a row's feasible interval are clamped into it and
    counted.  The optimal policy uses the closed-form optimum and needs
    ``p_star``.
    """
    policy = LambdaPolicy.parse(policy)
    p_a = np.atleast_2d(np.asarray(p_a, dtype=np.float64))
    hard = np.asarray(hard, dtype=np.int64).reshape(-1)
    n = p_a.shape[0]
    if hard.size != n:
        raise ValueError(f"{hard.size} hard labels for {n} supervision rows")
    rows = np.arange(n)
    others = np.ones_like(p_a, dtype=bool)
    others[rows, hard] = False
    off_a = np.where(others, p_a, 0.0).sum(axis=1)
    degenerate = (p_a[rows, hard] >= 1.0) | (off_a <= 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.where(degenerate, 1.0, 1.0 - 1.0 / off_a)
    if policy.optimal:
        if p_star is None:
            raise MissingDistributionError("the optimal lambda policy needs p_star")
        p_star = np.atleast_2d(np.asarray(p_star, dtype=np.float64))
        with np.errstate(divide="ignore", invalid="ignore"):
            off_star = np.where(others, p_star, 0.0).sum(axis=1)
            lambdas = np.where(degenerate, 1.0, np.clip(1.0 - off_star / off_a, lo, 1.0))
        n_clamped = 0
    else:
        lambdas = np.full(n, policy.value)
        outside = ((lambdas < lo) | (lambdas > 1.0)) & ~degenerate
        n_clamped = int(outside.sum())
        lambdas = np.where(degenerate, lambdas, np.clip(lambdas, lo, 1.0))
    p_lambda = (1.0 - lambdas)[:, None] * p_a
    p_lambda[rows, hard] = 0.0
    p_lambda[rows, hard] = 1.0 - p_lambda.sum(axis=1)
    p_lambda[(p_lambda < 0) & (p_lambda >= -NEG_TOL)] = 0.0
    return SoftLabels(p_a, lambdas, p_lambda, n_clamped)


class LambdaClampWarning(UserWarning):
    pass


def build_soft_dataset(instances, kind, policy) -> list[SupervisedInstance]:
    """Attach ``p_a``, ``lam`` and ``p_lambda`` to every instance, preserving order.

    Instance ``i`` must carry ``p_star`` when the kind or policy needs it and
    ``p_a`` for custom supervision.  Clamped constant lambdas trigger a single
    :class:`LambdaClampWarning` carrying the count.
    """
    kind = SupervisionKind.parse(kind)
    policy = LambdaPolicy.parse(policy)
    instances = list(instances)
    if not instances:
        return []
    for i, inst in enumerate(instances):
        if (kind.needs_p_star or policy.optimal) and inst.p_star is None:
            raise MissingDistributionError(f"instance {i} has no p_star")
        if kind is SupervisionKind.CUSTOM and inst.p_a is None:
            raise MissingDistributionError(f"instance {i} has no p_a")
    dists = [d for inst in instances for d in (inst.p_star, inst.p_a) if d is not None]
    if not dists:
        raise MissingDistributionError("cannot infer the class count: no instance carries a distribution")
    k = dists[0].num_classes
    hard = np.array([inst.hard for inst in instances], dtype=np.int64)
    p_star = None
    if all(inst.p_star is not None for inst in instances):
        p_star = np.stack([inst.p_star.probs for inst in instances])
    p_a = None
    if kind is SupervisionKind.CUSTOM:
        p_a = np.stack([inst.p_a.probs for inst in instances])
    pa = supervision_matrix(kind, hard, k, p_star=p_star, p_a=p_a)
    soft = mix(hard, pa, policy, p_star=p_star)
    if soft.n_clamped:
        warnings.warn(
            f"{soft.n_clamped} constant lambda value(s) clamped into their feasible interval",
            LambdaClampWarning,
            stacklevel=2,
        )
    out = []
    for i, inst in enumerate(instances):
        lam = float(soft.lambdas[i])
        try:
            p_lam = affine_combine(int(hard[i]), pa[i], lam)
        except SimplexError as exc:
            raise SimplexError(f"instance {i}: {exc}") from exc
        out.append(replace(inst, p_a=LabelDistribution(pa[i]), lam=lam, p_lambda=p_lam))
    return out


class SoftLabelEncoder(TransformerMixin, BaseEstimator):
    """Turn hard labels into soft labels ``lam * onehot(y) + (1 - lam) * p_a``.

    Works like :class:`sklearn.preprocessing.LabelBinarizer`: ``fit`` and
    ``transform`` take the label vector, and ``transform`` returns an
    ``(n_samples, n_classes)`` matrix whose rows lie on the simplex.

    Parameters
    ----------
    supervision : str, default="t2oc"
        One of ``"t1oc"``, ``"t2oc"``, ``"uniform"``, ``"true-restricted"``,
        ``"custom"``.  Ranking-based kinds and ``"true-restricted"`` need
        ``p_star`` at transform time; ``"custom"`` needs ``p_a``.
    mixing : float or str, default=0.9
        Constant weight on the hard label, ``"const:<value>"`` or
        ``"optimal"`` (needs ``p_star``).
    n_classes : int, optional
        Number of classes. Inferred from the label distributions passed to
        ``fit``, or from ``max(y) + 1``, when omitted.
    """

    def __init__(self, supervision="t2oc", mixing=DEFAULT_LAMBDA, n_classes=None):
        self.supervision = supervision
        self.mixing = mixing
        self.n_classes = n_classes

    def fit(self, y, p_star=None, p_a=None):
        SupervisionKind.parse(self.supervision)
        LambdaPolicy.parse(self.mixing)
        y = _check_labels(y)
        if self.n_classes is not None:
            k = int(self.n_classes)
        elif p_star is not None:
            k = np.atleast_2d(p_star).shape[1]
        elif p_a is not None:
            k = np.atleast_2d(p_a).shape[1]
        else:
            k = int(y.max()) + 1 if y.size else 2
        if k < 2 or (y.size and y.max() >= k):
            raise ValueError(f"labels do not fit in {k} classes")
        self.n_classes_ = k
        self.classes_ = np.arange(k)
        return self

    def build(self, y, p_star=None, p_a=None) -> SoftLabels:
        """Full construction record: supervision rows, lambdas, soft labels, clamp count."""
        check_is_fitted(self, "n_classes_")
        y = _check_labels(y)
        if y.size and y.max() >= self.n_classes_:
            raise ValueError(f"label {int(y.max())} out of range for {self.n_classes_} classes")
        k = self.n_classes_
        p_star = _check_rows(p_star, y.size, k, "p_star")
        p_a = _check_rows(p_a, y.size, k, "p_a")
        pa = supervision_matrix(self.supervision, y, k, p_star=p_star, p_a=p_a)
        return mix(y, pa, self.mixing, p_star=p_star)

    def transform(self, y, p_star=None, p_a=None):
        return self.build(y, p_star=p_star, p_a=p_a).p_lambda

    def fit_transform(self, y, p_star=None, p_a=None):
        return self.fit(y, p_star=p_star, p_a=p_a).transform(y, p_star=p_star, p_a=p_a)


def _check_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"expected a 1-D label vector, got shape {y.shape}")
    if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0):
        if np.issubdtype(y.dtype, np.floating) and np.all(y == np.round(y)) and y.min() >= 0:
            return y.astype(np.int64)
        raise ValueError("labels must be non-negative integers")
    return y.astype(np.int64)


def _check_rows(P, n, k, name):
    if P is None:
        return None
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    if P.shape != (n, k):
        raise ValueError(f"{name} has shape {P.shape}, expected {(n, k)}")
    if np.any(P < -NEG_TOL) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
        raise SimplexError(f"{name} rows must be probability distributions")
    return P

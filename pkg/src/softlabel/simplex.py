"""Validated arithmetic on finite discrete distributions.

Distributions are immutable :class:`LabelDistribution` values. Hard labels are
plain integer class indices.  The central operation is the affine combination
of a point mass on the hard class with an additional-supervision distribution,

    p_lam = lam * onehot(y) + (1 - lam) * p_a,

which stays on the simplex only for ``lam`` inside :func:`lambda_feasible_range`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from softlabel.exceptions import (
    InfeasibleLambdaError,
    SimplexError,
    UndefinedRestrictionError,
)

NEG_TOL = 1e-12
SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class LabelDistribution:
    """A point on the K-class probability simplex.

    Entries in ``[-1e-12, 0)`` are clamped to zero; anything more negative, or a
    total mass further than ``1e-9`` from one, raises :class:`SimplexError`.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64, copy=True).reshape(-1)
        if p.size < 2:
            raise SimplexError(f"need at least 2 classes, got {p.size}")
        if not np.all(np.isfinite(p)):
            raise SimplexError(f"non-finite entries in {p.tolist()}")
        lowest = int(np.argmin(p))
        if p[lowest] < -NEG_TOL:
            raise SimplexError(f"class {lowest} has negative mass {p[lowest]!r}")
        p[p < 0] = 0.0
        total = float(p.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise SimplexError(f"entries sum to {total!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def num_classes(self) -> int:
        return self.probs.size

    def __len__(self):
        return self.probs.size

    def __getitem__(self, k):
        return float(self.probs[k])

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.probs
        return self.probs.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, LabelDistribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        return f"LabelDistribution({self.probs.tolist()})"

    def mass_excluding(self, k: int) -> float:
        """Total mass on every class other than ``k``."""
        check_class_index(k, self.num_classes)
        return float(np.delete(self.probs, k).sum())

    def to_json(self) -> str:
        return json.dumps(self.probs.tolist())

    @classmethod
    def from_json(cls, text: str) -> "LabelDistribution":
        return cls(json.loads(text))


@dataclass(frozen=True)
class LambdaInterval:
    """Closed interval ``[lo, hi]`` of mixing coefficients."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    def __contains__(self, lam):
        return self.lo <= lam <= self.hi

    @property
    def is_degenerate(self) -> bool:
        return self.lo == self.hi

    def clip(self, lam: float) -> float:
        return min(max(lam, self.lo), self.hi)


def as_distribution(p) -> LabelDistribution:
    if isinstance(p, LabelDistribution):
        return p
    return LabelDistribution(p)


def check_class_index(k, num_classes: int) -> int:
    if isinstance(k, (bool, np.bool_)) or not isinstance(k, (int, np.integer)):
        raise SimplexError(f"class index must be an integer, got {k!r}")
    if not 0 <= k < num_classes:
        raise SimplexError(f"class index {k} out of range for {num_classes} classes")
    return int(k)


def dirac(k: int, num_classes: int) -> LabelDistribution:
    """Point mass at class ``k``."""
    if num_classes < 2:
        raise SimplexError(f"need at least 2 classes, got {num_classes}")
    k = check_class_index(k, num_classes)
    p = np.zeros(num_classes)
    p[k] = 1.0
    return LabelDistribution(p)


def lambda_feasible_range(hard: int, p_a) -> LambdaInterval:
    """Exact set of ``lam`` for which :func:`affine_combine` stays on the simplex.

    Off-hard coordinates ``(1 - lam) * p_a[y]`` force ``lam <= 1``; the hard
    coordinate ``lam + (1 - lam) * p_a[hard]`` forces
    ``lam >= -p_a[hard] / (1 - p_a[hard])``.  When ``p_a`` is already the point
    mass on ``hard`` the interval collapses to ``[1, 1]``.
    """
    p_a = as_distribution(p_a)
    hard = check_class_index(hard, p_a.num_classes)
    # -a / (1 - a) written as 1 - 1 / off, which stays accurate when a is near 1
    off = p_a.mass_excluding(hard)
    if p_a.probs[hard] >= 1.0 or off <= 0.0:
        return LambdaInterval(1.0, 1.0)
    return LambdaInterval(float(1.0 - 1.0 / off) + 0.0, 1.0)


def affine_combine(hard: int, p_a, lam: float) -> LabelDistribution:
    """Mix the point mass on ``hard`` with ``p_a`` using weight ``lam``.

    Raises :class:`InfeasibleLambdaError` naming the class with the most
    negative coordinate when that coordinate falls below ``-1e-12``.

    The hard coordinate is taken as one minus the rest, so the result sums to
    one even when a strongly negative ``lam`` magnifies rounding in ``p_a``.
    """
    p_a = as_distribution(p_a)
    hard = check_class_index(hard, p_a.num_classes)
    lam = float(lam)
    if not math.isfinite(lam):
        raise InfeasibleLambdaError(lam, hard, float("nan"))
    out = (1.0 - lam) * p_a.probs
    out[hard] = 0.0
    out[hard] = 1.0 - out.sum()
    lowest = int(np.argmin(out))
    if out[lowest] < -NEG_TOL:
        raise InfeasibleLambdaError(lam, lowest, float(out[lowest]))
    return LabelDistribution(out)


def restrict_exclude(p, k: int) -> LabelDistribution:
    """Zero out class ``k`` and renormalise the rest."""
    p = as_distribution(p)
    k = check_class_index(k, p.num_classes)
    rest = p.mass_excluding(k)
    if rest <= 0.0:
        raise UndefinedRestrictionError(f"all mass sits on class {k}; nothing left to renormalise")
    out = p.probs / rest
    out[k] = 0.0
    return LabelDistribution(out)

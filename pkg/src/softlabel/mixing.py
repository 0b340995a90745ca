"""Optimal mixing coefficient and the bias/variance split of KL(p_star || p_lam).

For a hard class ``y`` and supervision ``p_a`` the soft label moves along the
line ``p_lam = lam * onehot(y) + (1 - lam) * p_a``.  Along that line

    KL(p_star || p_lam) = bias + variance

where ``bias`` depends only on how well ``p_a`` matches the true proportions
among the non-hard classes, and ``variance`` is a binary KL on the hard-class
mass that vanishes at ``lam_star = (p_star[y] - p_a[y]) / (1 - p_a[y])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from softlabel.divergence import binary_kl, kl
from softlabel.exceptions import DegenerateSupervisionError
from softlabel.simplex import (
    LambdaInterval,
    affine_combine,
    as_distribution,
    check_class_index,
    lambda_feasible_range,
    restrict_exclude,
)


@dataclass(frozen=True)
class DecompositionReport:
    kl_total: float
    bias: float
    variance: float
    lambda_star: float
    lambda_used: float
    feasible: LambdaInterval

    @property
    def residual(self) -> float:
        """``kl_total - bias - variance``; nan when any term is infinite."""
        if not all(map(math.isfinite, (self.kl_total, self.bias, self.variance))):
            return math.nan
        return self.kl_total - self.bias - self.variance


def _prepare(p_star, hard, p_a):
    p_star = as_distribution(p_star)
    p_a = as_distribution(p_a)
    if p_star.num_classes != p_a.num_classes:
        raise ValueError(f"class counts differ: {p_star.num_classes} vs {p_a.num_classes}")
    return p_star, check_class_index(hard, p_star.num_classes), p_a


def optimal_lambda(p_star, hard: int, p_a) -> float:
    """Closed-form KL minimiser along the mixing line.

    At the returned value the soft label puts exactly ``p_star[hard]`` on the
    hard class.
    """
    p_star, hard, p_a = _prepare(p_star, hard, p_a)
    off_a = p_a.mass_excluding(hard)
    if p_a.probs[hard] >= 1.0 or off_a <= 0.0:
        raise DegenerateSupervisionError(
            f"p_a is the point mass on the hard class {hard}; lambda has no effect"
        )
    # (p_star[y] - a) / (1 - a) computed from the off-class masses, which keeps
    # precision when a is close to 1; the clip only absorbs rounding
    return float(lambda_feasible_range(hard, p_a).clip(1.0 - p_star.mass_excluding(hard) / off_a))


def bias(p_star, hard: int, p_a) -> float:
    """``(1 - p_star[y]) * KL(p_star restricted off y || p_a restricted off y)``.

    Zero when ``p_star`` is the point mass on ``hard``; ``inf`` when ``p_a`` has
    no mass off the hard class but ``p_star`` does.
    """
    p_star, hard, p_a = _prepare(p_star, hard, p_a)
    off_star = p_star.mass_excluding(hard)
    if off_star <= 0.0:
        return 0.0
    if p_a.mass_excluding(hard) <= 0.0:
        return math.inf
    inner = kl(restrict_exclude(p_star, hard), restrict_exclude(p_a, hard))
    return off_star * inner


def variance(p_star, hard: int, p_lambda) -> float:
    """Binary KL between the true and soft hard-class masses."""
    p_star, hard, p_lambda = _prepare(p_star, hard, p_lambda)
    return binary_kl(p_star[hard], p_lambda[hard])


def decompose(p_star, hard: int, p_a, lam: float) -> DecompositionReport:
    p_star, hard, p_a = _prepare(p_star, hard, p_a)
    lam_star = optimal_lambda(p_star, hard, p_a)
    p_lam = affine_combine(hard, p_a, lam)
    return DecompositionReport(
        kl_total=kl(p_star, p_lam),
        bias=bias(p_star, hard, p_a),
        variance=variance(p_star, hard, p_lam),
        lambda_star=lam_star,
        lambda_used=float(lam),
        feasible=lambda_feasible_range(hard, p_a),
    )


_ENUMERATE_LIMIT = 1 << 17


def _kl_change_along_line(p_star, hard, p_a, lam0, offsets, step):
    # KL(p_star || p_lam) - KL(p_star || p_lam0) at lam = lam0 + offsets * step.
    # p_lam moves linearly, p_lam - p_lam0 = (lam - lam0) * (e_hard - p_a), so the
    # change is -sum p_j log1p(...).  This keeps full relative precision even
    # when |lam| is huge and the objective is nearly flat across one step.
    direction = -p_a.copy()
    direction[hard] = 0.0
    direction[hard] = -direction.sum()
    base = (1.0 - lam0) * p_a
    base[hard] = 0.0
    base[hard] = 1.0 - base.sum()
    support = p_star > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = direction[support] / base[support]
        x = (offsets * step)[:, None] * ratio[None, :]
        x[offsets == 0] = 0.0
        vals = -np.sum(p_star[support] * np.log1p(x), axis=1)
    vals[np.any(x <= -1.0, axis=1)] = np.inf
    return vals


def brute_force_lambda(p_star, hard: int, p_a, grid_step: float = 1e-5) -> float:
    """Grid minimiser of KL(p_star || p_lam) over the feasible interval.

    Independent of :func:`optimal_lambda`: only compares values of the KL objective.
    Grids longer than 2**17 points are searched coarse-to-fine, which is exact
    because the objective is convex in ``lam``.  The upper endpoint is always a
    candidate.  Ties go to the smaller ``lam``.
    """
    if not grid_step > 0:
        raise ValueError(f"grid_step must be positive, got {grid_step!r}")
    p_star, hard, p_a = _prepare(p_star, hard, p_a)
    interval = lambda_feasible_range(hard, p_a)
    if interval.is_degenerate:
        return interval.lo
    lo = interval.lo
    last = int(math.floor((interval.hi - lo) / grid_step + 1e-9))
    ps, pa = p_star.probs, p_a.probs

    def best_index(first, stop, stride):
        idx = np.arange(first, stop + 1, stride, dtype=np.int64)
        if idx[-1] != stop:
            idx = np.append(idx, stop)
        if idx.size == 1:
            return int(idx[0])
        ref = int(idx[len(idx) // 2])
        vals = _kl_change_along_line(ps, hard, pa, lo + ref * grid_step, (idx - ref).astype(np.float64), grid_step)
        return int(idx[int(np.argmin(vals))])

    first, stop = 0, last
    while stop - first + 1 > _ENUMERATE_LIMIT:
        stride = -(-(stop - first + 1) // _ENUMERATE_LIMIT) + 1
        c = best_index(first, stop, stride)
        first, stop = max(first, c - stride), min(stop, c + stride)
    best = best_index(first, stop, 1)
    lam_best = lo + best * grid_step
    # the upper end of the interval is a candidate even when the grid misses it
    gap = (interval.hi - lam_best) / grid_step
    if gap > 0 and _kl_change_along_line(ps, hard, pa, lam_best, np.array([gap]), grid_step)[0] < 0:
        return float(interval.hi)
    return float(lam_best)

"""Label-quality-aware risk inequalities and the generalization bound.

``D`` below is the mean instance-wise ``KL(p_star || p_lambda)``.  The bound on
the true risk of the soft-label ERM solution is split into three groups:

* ``term_fast``  = 4 L r + 2 M s,                    with s = sqrt(log(1/delta) / 2n)
* ``term_cross`` = 2 sqrt(2 M D) * sqrt(2 L r + M s + R_best + M sqrt(2 D))
* ``term_asym``  = M (2 D + sqrt(2 D))

plus ``R_best``, the risk of the best-in-class model.  ``r`` is the Rademacher
complexity of the model class; it is an input, never estimated here.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from softlabel.divergence import kl_rows, kl_rows_smoothed
from softlabel.exceptions import MissingDistributionError


class KLGap(NamedTuple):
    exact: float
    smoothed: float


def mean_kl_gap(instances=None, *, p_star=None, p_lambda=None, eps: float = 1e-6) -> KLGap:
    """Mean KL(p_star || p_lambda) over a dataset, exact and eps-smoothed.

    Pass either a list of instances carrying both distributions, or the two
    ``(n, K)`` matrices as keywords.
    """
    if instances is not None:
        instances = list(instances)
        for i, inst in enumerate(instances):
            if inst.p_star is None or inst.p_lambda is None:
                raise MissingDistributionError(f"instance {i} lacks p_star or p_lambda")
        if instances:
            p_star = np.stack([inst.p_star.probs for inst in instances])
            p_lambda = np.stack([inst.p_lambda.probs for inst in instances])
        else:
            p_star = p_lambda = np.zeros((0, 2))
    if p_star is None or p_lambda is None:
        raise MissingDistributionError("need instances or both p_star and p_lambda")
    p_star = np.atleast_2d(np.asarray(p_star, dtype=np.float64))
    p_lambda = np.atleast_2d(np.asarray(p_lambda, dtype=np.float64))
    if p_star.shape[0] == 0:
        raise ValueError("empty dataset")
    exact = kl_rows(p_star, p_lambda)
    smoothed = kl_rows_smoothed(p_star, p_lambda, eps)
    ex = math.inf if np.isinf(exact).any() else float(exact.mean())
    return KLGap(ex, float(smoothed.mean()))


def risk_diff_bound(m_l: float, kl_value: float) -> float:
    """Upper bound ``sqrt(2 M KL)`` on ``|sqrt(R_p) - sqrt(R_q)|``."""
    if not m_l > 0:
        raise ValueError(f"loss bound must be positive, got {m_l!r}")
    if kl_value < 0:
        raise ValueError(f"KL must be non-negative, got {kl_value!r}")
    return math.sqrt(2.0 * m_l * kl_value)


class RiskGapCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def loss_matrix(outputs, num_classes: int, loss: Callable) -> np.ndarray:
    """``L[i, y] = loss(outputs[i], y)`` for every instance and class."""
    return np.array([[loss(o, y) for y in range(num_classes)] for o in outputs], dtype=np.float64)


def check_risk_gap(p_star, p_lambda, losses, m_l: float, slack: float = 1e-9) -> RiskGapCheck:
    """Empirical risk-gap inequality between true and constructed soft labels.

    ``losses`` is the ``(n, K)`` matrix of ``l(f(x_i), y)``; build it with
    :func:`loss_matrix` from model outputs and a loss callable.  Every entry
    must lie in ``[0, m_l]``.
    """
    p_star = np.atleast_2d(np.asarray(p_star, dtype=np.float64))
    p_lambda = np.atleast_2d(np.asarray(p_lambda, dtype=np.float64))
    losses = np.atleast_2d(np.asarray(losses, dtype=np.float64))
    if not (p_star.shape == p_lambda.shape == losses.shape):
        raise ValueError(
            f"misaligned inputs: p_star {p_star.shape}, p_lambda {p_lambda.shape}, losses {losses.shape}"
        )
    if losses.min() < 0 or losses.max() > m_l:
        raise ValueError(f"losses must lie in [0, {m_l}]")
    risk_star = float(np.mean(np.sum(p_star * losses, axis=1)))
    risk_soft = float(np.mean(np.sum(p_lambda * losses, axis=1)))
    lhs = abs(math.sqrt(max(risk_star, 0.0)) - math.sqrt(max(risk_soft, 0.0)))
    gap = mean_kl_gap(p_star=p_star, p_lambda=p_lambda).exact
    rhs = math.inf if math.isinf(gap) else risk_diff_bound(m_l, gap)
    return RiskGapCheck(lhs, rhs, lhs <= rhs + slack)


@dataclass(frozen=True)
class BoundInputs:
    n: int
    m_l: float
    l_l: float
    delta: float
    rademacher: float
    d_quality: float
    r_best: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        for name in ("m_l", "l_l", "rademacher", "d_quality", "r_best"):
            v = getattr(self, name)
            if math.isnan(v) or v < 0:
                raise ValueError(f"{name} must be non-negative, got {v!r}")


@dataclass(frozen=True)
class BoundReport:
    term_fast: float
    term_cross: float
    term_asym: float
    r_best: float
    total: float

    @property
    def vacuous(self) -> bool:
        return math.isinf(self.total)

    @property
    def status(self) -> str:
        return "VACUOUS" if self.vacuous else "OK"


def generalization_bound(inputs: BoundInputs) -> BoundReport:
    M, L, r, D, R = inputs.m_l, inputs.l_l, inputs.rademacher, inputs.d_quality, inputs.r_best
    s = math.sqrt(math.log(1.0 / inputs.delta) / (2.0 * inputs.n))
    term_fast = 4.0 * L * r + 2.0 * M * s
    if math.isinf(D):
        return BoundReport(term_fast, math.inf, math.inf, R, math.inf)
    inner = 2.0 * L * r + M * s + R + M * math.sqrt(2.0 * D)
    term_cross = 2.0 * math.sqrt(2.0 * M * D) * math.sqrt(inner)
    term_asym = M * (2.0 * D + math.sqrt(2.0 * D))
    total = term_fast + term_cross + term_asym + R
    return BoundReport(term_fast, term_cross, term_asym, R, total)


def asymptotic_bound(m_l: float, d_quality: float, r_best: float) -> float:
    """Limit of the bound as n grows without bound and the Rademacher term vanishes."""
    M, D, R = m_l, d_quality, r_best
    if math.isinf(D):
        return math.inf
    return (
        2.0 * math.sqrt(2.0 * M * D) * math.sqrt(R + M * math.sqrt(2.0 * D))
        + M * (2.0 * D + math.sqrt(2.0 * D))
        + R
    )


class CrossoverRow(NamedTuple):
    n: int
    term_fast: float
    term_cross: float
    term_asym: float
    total: float


CROSSOVER_HEADER = ("n", "term_fast", "term_cross", "term_asym", "total")


def rate_crossover(
    ns: Sequence[int],
    *,
    m_l: float = 1.0,
    l_l: float = 1.0,
    delta: float = 0.05,
    rademacher_c: float = 1.0,
    d_quality: float = 0.01,
    r_best: float = 0.0,
) -> list[CrossoverRow]:
    """Bound breakdown over sample sizes with Rademacher complexity ``c / sqrt(n)``."""
    rows = []
    for n in ns:
        rep = generalization_bound(
            BoundInputs(int(n), m_l, l_l, delta, rademacher_c / math.sqrt(n), d_quality, r_best)
        )
        rows.append(CrossoverRow(int(n), rep.term_fast, rep.term_cross, rep.term_asym, rep.total))
    return rows


def format_float(v: float) -> str:
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def crossover_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CROSSOVER_HEADER)
    for row in rows:
        w.writerow([row.n] + [format_float(v) for v in row[1:]])
    return buf.getvalue()


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=np.float64))
    ly = np.log(np.asarray(y, dtype=np.float64))
    return float(np.polyfit(lx, ly, 1)[0])

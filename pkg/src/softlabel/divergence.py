"""Divergences between label distributions, in nats.

Absolute-continuity violations are reported in-band as ``math.inf`` rather
than raised, because soft labels built from point-mass supervision routinely
miss part of the true support.
"""

import math

import numpy as np

from softlabel.simplex import as_distribution


def _pair(p, q):
    p = as_distribution(p).probs
    q = as_distribution(q).probs
    if p.shape != q.shape:
        raise ValueError(f"class counts differ: {p.size} vs {q.size}")
    return p, q


def _kl_terms(p, q):
    # 0 * log(0 / q) = 0; p > 0 with q = 0 gives inf
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0) / q), 0.0)
    return terms


def kl(p, q) -> float:
    """KL(p || q)."""
    p, q = _pair(p, q)
    if np.any((p > 0) & (q <= 0)):
        return math.inf
    return max(float(np.sum(_kl_terms(p, q))), 0.0)


def binary_kl(a: float, b: float) -> float:
    """KL between Bernoulli(a) and Bernoulli(b)."""
    for name, v in (("a", a), ("b", b)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v!r} is not a probability")
    return kl([a, 1.0 - a], [b, 1.0 - b])


def hellinger_sq(p, q) -> float:
    """Squared Hellinger distance with the 1/2 normalisation (range [0, 1])."""
    p, q = _pair(p, q)
    return 0.5 * float(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2))


def total_variation(p, q) -> float:
    p, q = _pair(p, q)
    return 0.5 * float(np.sum(np.abs(p - q)))


def kl_smoothed(p, q, eps: float = 1e-6) -> float:
    """KL(p || (1 - eps) q + eps * uniform).

    Only for reporting: keeps summaries finite when supports mismatch.
    """
    p, q = _pair(p, q)
    q = (1.0 - eps) * q + eps / q.size
    return kl(p, q)


def kl_rows(P, Q) -> np.ndarray:
    """Row-wise KL(P[i] || Q[i]) for two (n, K) arrays of distributions."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise ValueError(f"shape mismatch {P.shape} vs {Q.shape}")
    out = np.sum(_kl_terms(P, Q), axis=-1)
    out[np.any((P > 0) & (Q <= 0), axis=-1)] = math.inf
    return np.maximum(out, 0.0)


def kl_rows_smoothed(P, Q, eps: float = 1e-6) -> np.ndarray:
    Q = np.asarray(Q, dtype=np.float64)
    return kl_rows(P, (1.0 - eps) * Q + eps / Q.shape[-1])

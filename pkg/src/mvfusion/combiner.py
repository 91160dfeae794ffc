"""Combining per-view class probabilities into one decision.

Four schemes, all reducing to a weighted sum of the per-view probability
vectors followed by an argmax:

* naive voting: every view weighted ``1/N``;
* weighted majority voting (WMV): view ``i`` weighted by its discount
  ``d_i = 1 - m_i / sum(m)`` where ``m_i`` counts validation mistakes;
* Bayesian model combination (BMC): missing views weighted 0, present views
  share the mass uniformly;
* WMV+BMC: the product of both weights.

Scores are accumulated view by view in index order, so results are
reproducible bit for bit.  Functions accept a single collection's
probabilities, shape (N, M), or a batch, shape (B, N, M).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import InputError


@dataclass(frozen=True, eq=False)
class DiscountWeights:
    d: np.ndarray
    mistakes: np.ndarray


@dataclass(frozen=True, eq=False)
class AvailabilityWeights:
    P: np.ndarray


def _as_probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim not in (2, 3) or p.shape[-2] == 0 or p.shape[-1] == 0:
        raise InputError(f"expected probabilities of shape (N, M) or (B, N, M), got {p.shape}")
    return p


def weighted_scores(probs, weights) -> np.ndarray:
    """``sum_j w_j * p_j`` accumulated in view order; shapes (..., N, M) and (..., N)."""
    p = _as_probs(probs)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != p.shape[:-1]:
        raise InputError(f"weights {w.shape} do not match probabilities {p.shape}")
    score = np.zeros(p.shape[:-2] + p.shape[-1:])
    for j in range(p.shape[-2]):
        score = score + w[..., j, None] * p[..., j, :]
    return score


def _normalize(score: np.ndarray) -> np.ndarray:
    total = np.zeros(score.shape[:-1])
    for i in range(score.shape[-1]):
        total = total + score[..., i]
    return score / total[..., None]


def _combine(probs, weights, normalize: bool):
    p = _as_probs(probs)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != p.shape[:-1]:
        raise InputError(f"weights {w.shape} do not match probabilities {p.shape}")
    # Zero total weight would leave nothing to vote; treat it as equal weights.
    dead = ~np.any(w != 0, axis=-1)
    if np.any(dead):
        w = np.where(dead[..., None], 1.0 / p.shape[-2], w)
    score = weighted_scores(p, w)
    cls = np.argmax(score, axis=-1)
    fused = _normalize(score) if normalize else score
    if cls.ndim == 0:
        return int(cls), fused
    return cls, fused


def naive_vote(probs):
    """Equal-weight vote.  Returns ``(class, fused)`` with ``fused = mean_j p_j``."""
    p = _as_probs(probs)
    n = p.shape[-2]
    return _combine(p, np.full(p.shape[:-1], 1.0 / n), normalize=False)


def discounts_from_mistakes(mistakes: Sequence[int]) -> DiscountWeights:
    m = np.asarray(mistakes, dtype=np.int64)
    if m.ndim != 1 or len(m) == 0 or np.any(m < 0):
        raise InputError("mistakes must be a non-empty vector of non-negative counts")
    total = int(m.sum())
    # No mistakes anywhere: nothing to discount.
    d = np.ones(len(m)) if total == 0 else 1.0 - m / total
    return DiscountWeights(d=d, mistakes=m)


def fit_discounts(val_probs, labels) -> DiscountWeights:
    """Discounts from validation mistakes.

    ``val_probs`` has shape (B, N, M): every view model's probabilities on
    each validation collection (missing views imputed).  A mistake is an
    argmax that differs from the label.
    """
    p = np.asarray(val_probs, dtype=np.float64)
    y = np.asarray(labels)
    if p.ndim != 3 or len(p) == 0:
        raise InputError("fit_discounts needs a non-empty validation set of shape (B, N, M)")
    if len(y) != len(p):
        raise InputError(f"{len(p)} validation predictions but {len(y)} labels")
    mistakes = (np.argmax(p, axis=-1) != y[:, None]).sum(axis=0)
    return discounts_from_mistakes(mistakes)


def _weights(w, n: int) -> np.ndarray:
    if isinstance(w, DiscountWeights):
        w = w.d
    elif isinstance(w, AvailabilityWeights):
        w = w.P
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != n:
        raise InputError(f"{w.shape[-1]} weights for {n} views")
    return w


def wmv(probs, d):
    """Weighted majority vote.  ``fused`` is the score vector divided by its sum."""
    p = _as_probs(probs)
    w = np.broadcast_to(_weights(d, p.shape[-2]), p.shape[:-1])
    return _combine(p, w, normalize=True)


def bmc_weights(mask) -> AvailabilityWeights:
    """Uniform weight over present views, zero elsewhere.

    With no view present every view gets ``1/N`` so the imputed models' priors
    still vote.  Works on a single mask (N,) or a batch (B, N).
    """
    m = np.asarray(mask, dtype=bool)
    if m.shape[-1] == 0:
        raise InputError("mask must cover at least one view")
    n = m.shape[-1]
    k = m.sum(axis=-1, keepdims=True)
    P = np.where(k == 0, 1.0 / n, np.where(m, 1.0 / np.maximum(k, 1), 0.0))
    return AvailabilityWeights(P=P)


def bmc(probs, P):
    p = _as_probs(probs)
    w = np.broadcast_to(_weights(P, p.shape[-2]), p.shape[:-1])
    return _combine(p, w, normalize=True)


def wmv_bmc(probs, d, P):
    """Both weightings at once: view ``j`` scores with ``d_j * P_j``."""
    p = _as_probs(probs)
    n = p.shape[-2]
    w = np.broadcast_to(_weights(d, n), p.shape[:-1]) * np.broadcast_to(_weights(P, n), p.shape[:-1])
    return _combine(p, w, normalize=True)

"""Training objective: focal classification over all anchors plus smooth-L1
regression over the candidate set, both normalized by the candidate count."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .anchors import MatchResult


def focal_loss(
    p: float,
    g: int,
    alpha: float = 0.25,
    gamma: float = 2.0,
    negative_weighting: bool = True,
) -> float:
    """Scalar alpha-balanced focal term for one anchor.

    g=1: -alpha * (1-p)^gamma * ln(p); g=0: -(1-alpha) * p^gamma * ln(1-p).
    Set negative_weighting=False to drop the (1-alpha) factor on negatives.
    """
    p = min(max(p, 1e-6), 1.0 - 1e-6)
    if g:
        return -alpha * (1.0 - p) ** gamma * math.log(p)
    w = (1.0 - alpha) if negative_weighting else 1.0
    return -w * p ** gamma * math.log(1.0 - p)


def smooth_l1(pred, target, beta: float = 1.0) -> float:
    """Scalar smooth-L1 summed over the 4 box-offset components."""
    total = 0.0
    for a, b in zip(pred, target):
        d = abs(float(a) - float(b))
        total += 0.5 * d * d / beta if d < beta else d - 0.5 * beta
    return total


@dataclass
class LossBreakdown:
    focal_total: float
    regression_total: float
    combined: float
    g_count: int
    forced: bool
    total: T.Tensor  # differentiable scalar, value == combined


def grounding_loss(
    head,
    match: MatchResult,
    targets: np.ndarray,
    alpha: float = 0.25,
    gamma: float = 2.0,
    beta: float = 1.0,
    negative_weighting: bool = True,
) -> LossBreakdown:
    """Combined loss: sum of focal over all anchors plus smooth-L1 over the
    candidates (selected by the match indicator), each divided by |G|.

    head: object with .logits (N,) and .regs (N,4) tensors in anchor flat order.
    targets: (|G|, 4) regression targets aligned with match.candidates.
    """
    n = head.logits.shape[0]
    if match.g.shape[0] != n:
        raise T.GraphError(
            f"grounding_loss: {n} head outputs vs {match.g.shape[0]} anchors"
        )
    g_count = match.count
    targets = np.asarray(targets, dtype=np.float32).reshape(g_count, 4)

    p = T.clamp(T.sigmoid(head.logits), 1e-6, 1.0 - 1e-6)
    gmask = match.g
    neg_w = (1.0 - alpha) if negative_weighting else 1.0
    pos = T.mul(T.mul(T.pow_const(T.sub(1.0, p), gamma), T.log(p)), -alpha)
    neg = T.mul(T.mul(T.pow_const(p, gamma), T.log(T.sub(1.0, p))), -neg_w)
    focal_sum = T.tsum(
        T.add(T.mul(pos, T.Tensor(gmask)), T.mul(neg, T.Tensor(1.0 - gmask)))
    )
    focal = T.mul(focal_sum, 1.0 / g_count)

    cand_regs = T.getitem(head.regs, match.candidates)
    diff = T.sub(cand_regs, T.Tensor(targets))
    reg_sum = T.tsum(T.smooth_l1(diff, beta))
    regression = T.mul(reg_sum, 1.0 / g_count)

    total = T.add(focal, regression)
    return LossBreakdown(
        focal_total=focal.item(),
        regression_total=regression.item(),
        combined=total.item(),
        g_count=g_count,
        forced=match.forced,
        total=total,
    )

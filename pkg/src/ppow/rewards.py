"""Window-level rewards: cost-aware speedup plus distribution proximity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .specdec import SpeculativeWindow, VerificationOutcome


@dataclass(frozen=True)
class RewardConfig:
    """gamma: relative drafter cost; epsilon: proximity tolerance; eta: proximity scale.

    always_compute_delta forces the proximity gap to be evaluated even when
    the accepted length is positive (auditing only; the reward is unchanged
    because the proximity term pays out only at k = 0).
    """

    gamma: float = 0.12
    epsilon: float = 0.5
    eta: float = 1.0
    always_compute_delta: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError("gamma must be finite and > 0")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError("epsilon must be finite and > 0")
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise ValueError("eta must be finite and >= 0")


@dataclass
class WindowReward:
    r_speedup: float
    r_dist: float
    total: float
    k: int
    delta: float | None


def speedup_reward(k: int, gamma: float) -> float:
    """k / (k*gamma + 1): accepted length discounted by drafting cost.

    Strictly increasing in k and bounded above by 1/gamma.
    """
    if k < 0:
        raise ValueError("accepted length must be >= 0")
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    return k / (k * gamma + 1.0)


def reference_window(target_adapter, prefix, window_k: int) -> list:
    """K tokens built by greedy argmax of the target, ties to the lowest id."""
    if window_k < 1:
        raise ValueError("window length must be >= 1")
    ctx = list(prefix)
    ref = []
    for _ in range(window_k):
        row = target_adapter.next_dist(ctx)
        y = int(np.argmax(row.p))
        ref.append(y)
        ctx.append(y)
    return ref


def proximity_gap(window: SpeculativeWindow, reference, target_adapter, prefix) -> float:
    """Cumulative target log-likelihood deficit of the drafted window.

    Each chain is scored under its own preceding tokens. A drafted token
    with zero target mass makes the gap +inf; such a window can never earn
    the proximity reward.
    """
    if len(reference) != len(window.tokens):
        raise ValueError("reference and window must have the same length")
    ref_lp = 0.0
    ctx = list(prefix)
    for y in reference:
        ref_lp += target_adapter.next_dist(ctx).logprob(y)
        ctx.append(y)
    draft_lp = 0.0
    ctx = list(prefix)
    for y in window.tokens:
        p = float(target_adapter.next_dist(ctx).p[y])
        if p == 0.0:
            return math.inf
        draft_lp += math.log(p)
        ctx.append(y)
    return ref_lp - draft_lp


def total_reward(outcome: VerificationOutcome, window: SpeculativeWindow,
                 target_adapter, prefix, cfg: RewardConfig) -> WindowReward:
    """Combined per-window reward.

    The proximity term pays eta exactly when verification accepted nothing
    and the drafted window stays within epsilon of the greedy reference
    under cumulative target log-likelihood. The gap is evaluated lazily
    (only at k = 0) since the indicator makes it dead weight otherwise.
    """
    k = outcome.accepted_len
    r_speed = speedup_reward(k, cfg.gamma)
    delta = None
    r_dist = 0.0
    if k == 0 or cfg.always_compute_delta:
        ref = reference_window(target_adapter, prefix, len(window.tokens))
        delta = proximity_gap(window, ref, target_adapter, prefix)
        if k == 0 and delta < cfg.epsilon:
            r_dist = cfg.eta
    return WindowReward(r_speed, r_dist, r_speed + r_dist, k, delta)

"""Analytical identities and sweeps for the verification machinery.

Everything here is exact or statistically bounded: the acceptance
probability equals one minus total variation, Pinsker bounds acceptance
from below via the target-to-drafter KL, and the alignment divergence
exp(delta) - delta - 1 is non-negative with equality only at delta = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adaw import kl_divergence
from .dists import ProbVector
from .models import DrafterParameters
from .rewards import speedup_reward
from .rng import RngStream
from .specdec import draft_window, verify_window


@dataclass(frozen=True)
class DistPair:
    """A (target, drafter) distribution pair over one vocabulary."""

    p: ProbVector
    q: ProbVector

    def __post_init__(self):
        if len(self.p) != len(self.q):
            raise ValueError("pair members must share a vocabulary")


def total_variation(pair: DistPair) -> float:
    """Half the L1 distance; in [0, 1]."""
    return 0.5 * float(np.abs(pair.p.p - pair.q.p).sum())


def acceptance_probability(pair: DistPair) -> float:
    """Exact per-position acceptance rate sum_y min(p, q) = 1 - TV."""
    return float(np.minimum(pair.p.p, pair.q.p).sum())


@dataclass
class PinskerResult:
    alpha: float
    lower_bound: float
    holds: bool


def pinsker_check(pair: DistPair) -> PinskerResult:
    """Acceptance against the bound 1 - sqrt(KL(p||q)/2)."""
    alpha = acceptance_probability(pair)
    bound = 1.0 - math.sqrt(kl_divergence(pair.p, pair.q) / 2.0)
    return PinskerResult(alpha, bound, alpha >= bound - 1e-12)


def monte_carlo_acceptance(pair: DistPair, trials: int, rng: RngStream) -> float:
    """Empirical acceptance: draw y ~ q, accept with prob min(1, p(y)/q(y))."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    gen = rng.child("mc").generator
    cdf = np.cumsum(pair.q.p)
    ys = np.searchsorted(cdf, gen.random(trials) * cdf[-1], side="right")
    ys = np.minimum(ys, len(pair.q) - 1)
    ratios = np.minimum(1.0, pair.p.p[ys] / pair.q.p[ys])
    return float((gen.random(trials) <= ratios).mean())


@dataclass
class NablaRecord:
    """delta = log p_target - log p_draft on one token; nabla = exp(delta) - delta - 1."""

    delta: float
    nabla: float


def nabla_metric(target_logprob: float, draft_logprob: float) -> NablaRecord:
    if not (math.isfinite(target_logprob) and math.isfinite(draft_logprob)):
        raise ValueError("log-probabilities must be finite")
    delta = target_logprob - draft_logprob
    nabla = max(0.0, math.expm1(delta) - delta)  # exp(d) - d - 1, >= 0 by convexity
    return NablaRecord(delta, nabla)


@dataclass
class PartitionStats:
    count: int
    mean_tau: float
    mean_nabla: float


@dataclass
class EasyHardReport:
    easy: PartitionStats
    hard: PartitionStats


def easy_hard_partition(drafter_baseline: DrafterParameters, target_adapter,
                        prefixes, window_k: int, rng: RngStream,
                        temperature: float = 1.0,
                        use_feature: bool = False) -> EasyHardReport:
    """Draft and verify one window per prefix under a fixed baseline drafter,
    then split into fully accepted (easy) and truncated (hard) windows.

    Per set, mean tau is the arithmetic mean of member accepted lengths and
    mean nabla averages the alignment divergence over all drafted tokens.
    """
    buckets = {True: ([], []), False: ([], [])}  # easy? -> (ks, nablas)
    for i, prefix in enumerate(prefixes):
        window = draft_window(drafter_baseline, target_adapter, prefix, window_k,
                              temperature, rng.child("draft", i), use_feature)
        outcome = verify_window(window, target_adapter, prefix, rng.child("verify", i))
        ctx = list(prefix)
        nablas = []
        for t, tok in enumerate(window.tokens):
            t_lp = target_adapter.next_dist(ctx).logprob(tok)
            nablas.append(nabla_metric(t_lp, float(window.draft_logprobs[t])).nabla)
            ctx.append(tok)
        ks, nbs = buckets[outcome.accepted_len == window_k]
        ks.append(outcome.accepted_len)
        nbs.extend(nablas)

    def stats(ks, nbs):
        if not ks:
            return PartitionStats(0, math.nan, math.nan)
        return PartitionStats(len(ks), float(np.mean(ks)), float(np.mean(nbs)))

    return EasyHardReport(easy=stats(*buckets[True]), hard=stats(*buckets[False]))


@dataclass(frozen=True)
class CostModel:
    """Synthetic serving-cost model for the measured-style reward.

    A speculative step always drafts a full window of window_k tokens at
    draft_token_cost each, runs one verification pass, and pays a fixed
    overhead; committing k tokens then earns k vanilla-token costs back.
    """

    draft_token_cost: float = 0.12
    verify_step_cost: float = 1.0
    step_overhead: float = 0.15
    window_k: int = 10

    def measured_reward(self, k: int) -> float:
        denom = (self.window_k * self.draft_token_cost
                 + self.verify_step_cost + self.step_overhead)
        return k * self.verify_step_cost / denom


@dataclass
class RewardTable:
    ks: list
    measured: list
    cost_aware: dict            # gamma -> column (list over ks)
    measured_nondecreasing: bool
    cost_aware_nondecreasing: dict
    same_ordering: bool


def _nondecreasing(xs) -> bool:
    return all(b >= a for a, b in zip(xs, xs[1:]))


def reward_table_compare(gammas, ks, cost_model: CostModel) -> RewardTable:
    """Measured-style vs cost-aware reward columns over accepted lengths.

    Emits both columns per gamma plus monotonicity verdicts and whether the
    columns order the k values identically.
    """
    if not gammas or not ks:
        raise ValueError("gammas and ks must be non-empty")
    measured = [cost_model.measured_reward(k) for k in ks]
    cost_aware = {g: [speedup_reward(k, g) for k in ks] for g in gammas}
    ordering = np.argsort(measured, kind="stable")
    same = all(np.array_equal(ordering, np.argsort(col, kind="stable"))
               for col in cost_aware.values())
    return RewardTable(
        ks=list(ks),
        measured=measured,
        cost_aware=cost_aware,
        measured_nondecreasing=_nondecreasing(measured),
        cost_aware_nondecreasing={g: _nondecreasing(col) for g, col in cost_aware.items()},
        same_ordering=same,
    )

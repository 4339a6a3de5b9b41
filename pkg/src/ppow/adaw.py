"""Divergence-aware window selection.

Token criticality is entropy-normalized target confidence times the
target-to-drafter KL; window scores average criticality over each K-token
slice, and training window starts are sampled from those scores under a
curriculum that ramps the share of score-weighted draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dists import LOG_FLOOR, ProbVector, sample_index
from .models import DrafterParameters, context_rows, forward_batch
from .rng import RngStream


def confidence(p: ProbVector) -> float:
    """1 - H(p)/log|V| with natural-log entropy; in [0, 1].

    One-hot distributions score 1, uniform scores 0; zero-probability
    entries contribute nothing to the entropy.
    """
    size = len(p)
    if size < 2:
        raise ValueError("confidence requires |V| >= 2")
    nz = p.p[p.p > 0.0]
    h = -float(np.sum(nz * np.log(nz)))
    return min(1.0, max(0.0, 1.0 - h / math.log(size)))


def kl_divergence(p: ProbVector, q: ProbVector) -> float:
    """KL(p || q) in nats, with 0*log(0/q) = 0; non-negative."""
    if len(p) != len(q):
        raise ValueError("distributions must share a vocabulary")
    mask = p.p > 0.0
    pm = p.p[mask]
    val = float(np.sum(pm * (np.log(pm) - np.log(np.maximum(q.p[mask], LOG_FLOOR)))))
    return max(0.0, val)


@dataclass
class CriticalityProfile:
    """Per-position confidence, KL, and criticality v = c * kl along a sequence.

    Entry i scores position i + 1, i.e. the distributions conditioned on
    the first i + 1 tokens.
    """

    v: np.ndarray
    c: np.ndarray
    kl: np.ndarray

    def __len__(self) -> int:
        return len(self.v)


@dataclass
class WindowScores:
    """Mean criticality over each K-slice; s[j] covers profile[j : j+K]."""

    s: np.ndarray
    window_k: int

    def __len__(self) -> int:
        return len(self.s)


def criticality_profile(target_adapter, drafter: DrafterParameters, sequence,
                        use_feature: bool = False) -> CriticalityProfile:
    """Score every position of a sequence against the current drafter snapshot.

    The drafter and target are conditioned on the same prefix (and the
    adapter feature when the channel is on).
    """
    n = len(sequence)
    if n < 2:
        raise ValueError("sequence must have length >= 2")
    c_len = drafter.dims.context
    positions = n - 1
    ctx_mat = np.empty((positions, c_len), dtype=np.intp)
    feats = np.empty((positions, drafter.dims.feature)) if use_feature else None
    for i in range(positions):
        prefix = sequence[:i + 1]
        ctx_mat[i] = context_rows(prefix, c_len)
        if use_feature:
            feats[i] = target_adapter.feature(prefix)
    fwd = forward_batch(drafter, ctx_mat, feats)
    c = np.empty(positions)
    kl = np.empty(positions)
    for i in range(positions):
        p = target_adapter.next_dist(sequence[:i + 1])
        q = ProbVector(fwd.probs[i], validate=False)
        c[i] = confidence(p)
        kl[i] = kl_divergence(p, q)
    return CriticalityProfile(c * kl, c, kl)


def profile_records(profile: CriticalityProfile) -> list:
    """Line-delimited export form of a profile: one record per position."""
    return [
        {"position": i + 1, "c": float(profile.c[i]), "kl": float(profile.kl[i]),
         "v": float(profile.v[i])}
        for i in range(len(profile))
    ]


def window_scores(profile: CriticalityProfile, window_k: int) -> WindowScores:
    if window_k < 1:
        raise ValueError("window length must be >= 1")
    if len(profile) < window_k:
        raise ValueError(f"profile of length {len(profile)} is shorter than K={window_k}")
    starts = len(profile) - window_k + 1
    s = np.empty(starts)
    for j in range(starts):
        s[j] = profile.v[j:j + window_k].mean()
    return WindowScores(s, window_k)


@dataclass(frozen=True)
class CurriculumSchedule:
    """Piecewise-constant mix between score-weighted and uniform start sampling.

    ``stages`` maps training-progress fractions to the probability p of
    drawing score-weighted; the stage in effect is the last one whose
    fraction is <= progress. mode="quantile" instead restricts uniform
    draws to the top ceil(p*n) windows by score.
    """

    stages: tuple = ((0.0, 0.2), (1.0 / 3.0, 0.4), (2.0 / 3.0, 0.6))
    mode: str = "mix"

    def __post_init__(self):
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        fracs = [f for f, _ in self.stages]
        if fracs[0] != 0.0:
            raise ValueError("first stage must start at progress 0")
        if any(b <= a for a, b in zip(fracs, fracs[1:])):
            raise ValueError("stage fractions must be strictly increasing")
        for _, p in self.stages:
            if not 0.0 <= p <= 1.0:
                raise ValueError("stage mix must be in [0, 1]")
        if self.mode not in ("mix", "quantile"):
            raise ValueError("mode must be 'mix' or 'quantile'")

    def mix_at(self, progress: float) -> float:
        if not 0.0 <= progress <= 1.0:
            raise ValueError("progress must be in [0, 1]")
        current = self.stages[0][1]
        for frac, p in self.stages:
            if frac <= progress:
                current = p
        return current


def sample_window_start(scores: WindowScores, progress: float,
                        schedule: CurriculumSchedule, rng: RngStream) -> int:
    """Draw a window start index from scores under the curriculum.

    With probability p(progress) the start is drawn proportionally to the
    scores (falling back to uniform when all scores are zero); otherwise
    uniformly. Deterministic given the stream.
    """
    n = len(scores)
    if n < 1:
        raise ValueError("no window starts to sample from")
    p = schedule.mix_at(progress)
    if schedule.mode == "quantile":
        m = max(1, math.ceil(p * n))
        top = np.argsort(-scores.s, kind="stable")[:m]
        return int(top[rng.child("start").integer(m)])
    weighted = rng.child("gate").uniform() < p
    total = float(scores.s.sum())
    if weighted and total > 0.0:
        return sample_index(scores.s, rng.child("start").uniform())
    return rng.child("start").integer(n)

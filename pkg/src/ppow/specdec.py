"""Distribution-preserving speculative decoding.

Drafting proposes a window of K tokens from the drafter; verification walks
the window with the accept-rule alpha_t = min(1, P_t(y)/Q_t(y)), resamples
the first rejected position from the normalized residual max(P - Q, 0),
and samples one bonus token from the target when everything is accepted.
With draft temperature 1 the committed token stream is distributed exactly
as direct sampling from the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dists import ProbVector, sample_index
from .models import DrafterParameters, drafter_forward
from .rng import RngStream

__all__ = [
    "RngStream", "SpeculativeWindow", "VerificationOutcome", "DecodeStats",
    "draft_window", "verify_window", "multi_candidate_step", "generate",
    "cost_model_speedup",
]


@dataclass
class SpeculativeWindow:
    """K drafted tokens with their temperature-1 draft distributions."""

    tokens: list
    draft_probs: list            # per-position ProbVector Q_t
    draft_logprobs: np.ndarray   # (K,) log Q_t[token_t]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class VerificationOutcome:
    """Result of verifying one speculative window.

    accepted_len is k; committed holds the k accepted tokens plus one
    target-sampled token (the residual correction on rejection, the bonus
    token on full acceptance), so len(committed) == k + 1. alphas covers
    every evaluated position: k + 1 entries on rejection, K on full
    acceptance.
    """

    accepted_len: int
    alphas: list
    committed: list
    rejected_at: int | None


@dataclass
class DecodeStats:
    """Per-run decoding counters under the (K*gamma + 1) cost model."""

    total_tokens: int
    num_steps: int
    tau: float
    cost_units: float
    speedup_cost_model: float
    window_k: int
    group_size: int
    temperature: float

    def record(self, seed=None) -> dict:
        rec = {
            "tokens": self.total_tokens,
            "steps": self.num_steps,
            "tau": self.tau,
            "cost_units": self.cost_units,
            "speedup": self.speedup_cost_model,
            "K": self.window_k,
            "G": self.group_size,
            "temperature": self.temperature,
        }
        if seed is not None:
            rec["seed"] = seed
        return rec


def step_cost(window_k: int, group_size: int, gamma: float) -> float:
    """Cost of one speculative step: G*K drafted tokens at gamma each plus one
    target verification pass (the unit)."""
    return window_k * group_size * gamma + 1.0


def draft_window(drafter: DrafterParameters, target_adapter, prefix, window_k: int,
                 temperature: float, rng: RngStream,
                 use_feature: bool = False) -> SpeculativeWindow:
    """Sample K tokens autoregressively from the drafter.

    Tokens are drawn from the temperature-scaled policy (0 means greedy);
    draft_probs always record the temperature-1 distributions, which are
    what verification ratios are computed against.
    """
    if window_k < 1:
        raise ValueError("window length must be >= 1")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    u = rng.child("u").uniforms(window_k)
    ctx = list(prefix)
    tokens = []
    probs = []
    logps = np.empty(window_k)
    for t in range(window_k):
        feat = target_adapter.feature(ctx) if use_feature else None
        out = drafter_forward(drafter, ctx, feat)
        if temperature == 0.0:
            tok = int(np.argmax(out.dist.p))
        elif temperature == 1.0:
            tok = sample_index(out.dist.p, u[t])
        else:
            scaled = out.logits / temperature
            scaled = np.exp(scaled - scaled.max())
            tok = sample_index(scaled / scaled.sum(), u[t])
        tokens.append(tok)
        probs.append(out.dist)
        logps[t] = out.logprob(tok)
        ctx.append(tok)
    return SpeculativeWindow(tokens, probs, logps)


def verify_window(window: SpeculativeWindow, target_adapter, prefix,
                  rng: RngStream) -> VerificationOutcome:
    """Rejection-sampling verification of a drafted window.

    Position t is accepted while u_t <= min(1, P_t(y_t)/Q_t(y_t)) with u_t
    drawn from the per-position substream. The first rejection commits a
    token from the normalized residual max(P_t - Q_t, 0); full acceptance
    commits a bonus token sampled from the target's next distribution.
    """
    ctx = list(prefix)
    alphas = []
    k = 0
    for t, tok in enumerate(window.tokens):
        p = target_adapter.next_dist(ctx)
        q = window.draft_probs[t]
        q_tok = q.p[tok]
        alpha = 1.0 if p.p[tok] >= q_tok else float(p.p[tok] / q_tok)
        alphas.append(alpha)
        if rng.child("u", t).uniform() <= alpha:
            k += 1
            ctx.append(tok)
            continue
        residual = np.maximum(p.p - q.p, 0.0)
        mass = residual.sum()
        if mass <= 0.0:
            # P == Q pointwise makes alpha = 1, so this position cannot reject.
            raise RuntimeError("rejection with zero residual mass; "
                               "verification invariant violated")
        fix = sample_index(residual, rng.child("fix", t).uniform())
        return VerificationOutcome(k, alphas, window.tokens[:k] + [fix], t)
    bonus_dist = target_adapter.next_dist(ctx)
    bonus = sample_index(bonus_dist.p, rng.child("bonus").uniform())
    return VerificationOutcome(k, alphas, window.tokens[:k] + [bonus], None)


def multi_candidate_step(drafter: DrafterParameters, target_adapter, prefix,
                         window_k: int, group_size: int, rng: RngStream,
                         temperature: float = 1.0,
                         use_feature: bool = False) -> VerificationOutcome:
    """Draft and verify G independent chain candidates; commit the best.

    Candidates use disjoint rng substreams; the outcome with the longest
    accepted prefix wins, ties going to the lowest candidate index. G = 1
    is bit-identical to the single-chain draft + verify path. For G > 1
    this is a tau-measurement harness: only the G = 1 path carries the
    distribution-preservation guarantee.
    """
    if group_size < 1:
        raise ValueError("candidate group size must be >= 1")
    best = None
    for g in range(group_size):
        window = draft_window(drafter, target_adapter, prefix, window_k,
                              temperature, rng.child("draft", g), use_feature)
        outcome = verify_window(window, target_adapter, prefix, rng.child("verify", g))
        if best is None or outcome.accepted_len > best.accepted_len:
            best = outcome
    return best


def generate(drafter: DrafterParameters, target_adapter, prompt, max_tokens: int,
             window_k: int, rng: RngStream, temperature: float = 1.0,
             group_size: int = 1, gamma: float = 0.12,
             use_feature: bool = False):
    """Speculative generation loop; returns (tokens, DecodeStats).

    Repeats draft + verify, appending committed tokens until max_tokens new
    tokens exist (the final commit is truncated to fit). tau counts
    accepted draft tokens only; the correction/bonus token is excluded from
    tau but included in total_tokens.
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    out = list(prompt)
    new_tokens = 0
    steps = 0
    accepted_total = 0
    while new_tokens < max_tokens:
        outcome = multi_candidate_step(drafter, target_adapter, out, window_k,
                                       group_size, rng.child("step", steps),
                                       temperature, use_feature)
        take = min(len(outcome.committed), max_tokens - new_tokens)
        out.extend(outcome.committed[:take])
        new_tokens += take
        accepted_total += outcome.accepted_len
        steps += 1
    cost = steps * step_cost(window_k, group_size, gamma)
    stats = DecodeStats(
        total_tokens=new_tokens,
        num_steps=steps,
        tau=accepted_total / steps,
        cost_units=cost,
        speedup_cost_model=new_tokens / cost,
        window_k=window_k,
        group_size=group_size,
        temperature=temperature,
    )
    return out, stats


def cost_model_speedup(stats: DecodeStats, gamma: float) -> float:
    """Recompute the cost-model speedup of a finished run for a given gamma.

    The vanilla baseline costs one target pass per token, so the speedup is
    total_tokens / sum_steps(K*gamma + 1).
    """
    if stats.num_steps == 0:
        raise ValueError("run has zero steps")
    return stats.total_tokens / (stats.num_steps * step_cost(stats.window_k,
                                                             stats.group_size, gamma))

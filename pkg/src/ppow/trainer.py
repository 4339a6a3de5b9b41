"""Window-level policy optimization of the drafter.

One training step: score a sequence's positions for criticality, sample a
window start under the curriculum, roll out a group of speculative windows
from the snapshot, verify and reward each, normalize rewards into
group-relative advantages, and ascend the clipped ratio objective with the
KL regularizer anchored to the frozen target (never to an initialization
policy; there is deliberately no reference-policy state anywhere here).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adaw import (CurriculumSchedule, WindowScores, criticality_profile,
                   sample_window_start, window_scores)
from .dists import LOG_FLOOR
from .models import (DrafterParameters, backward_batch, context_rows,
                     forward_batch, sft_step, warmup_lr)
from .rewards import RewardConfig, total_reward
from .rng import RngStream
from .specdec import (DecodeStats, draft_window, generate, step_cost,
                      verify_window)


@dataclass
class TrainConfig:
    eps_clip: float = 0.2
    kl_beta: float = 0.03
    group_size: int = 8
    window_k: int = 10
    reward: RewardConfig = field(default_factory=RewardConfig)
    # Toy-scale default; 5e-6 (the large-drafter setting) stays available in
    # configs but would barely move these tiny networks.
    lr: float = 1e-3
    warmup_ratio: float = 0.05
    adv_delta: float = 1e-8
    total_steps: int = 5000
    curriculum: CurriculumSchedule = field(default_factory=CurriculumSchedule)
    seed: int = 0
    inner_epochs: int = 1
    min_prefix: int = 1
    adaw: bool = True   # False switches to uniform window-start sampling
    use_feature: bool = False

    def __post_init__(self):
        if not 0.0 < self.eps_clip < 1.0:
            raise ValueError("eps_clip must be in (0, 1)")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be >= 0")
        if self.group_size < 2:
            raise ValueError("rollout group size must be >= 2")
        if self.adv_delta <= 0:
            raise ValueError("adv_delta must be > 0")
        if self.window_k < 1:
            raise ValueError("window_k must be >= 1")
        if self.inner_epochs < 1:
            raise ValueError("inner_epochs must be >= 1")
        if self.min_prefix < 1:
            raise ValueError("min_prefix must be >= 1")


@dataclass
class RolloutGroup:
    """G windows drafted from one prefix, verified, rewarded, and normalized.

    old_logprobs come from the snapshot that drafted the windows, evaluated
    through the same batched forward the objective uses, so the ratio is
    exactly 1 until the parameters move. ctx_matrix/features/target_rows
    cache per-(window, position) inputs for the objective, laid out
    row-major by (window, position).
    """

    prefix: list
    windows: list
    outcomes: list
    rewards: np.ndarray
    advantages: np.ndarray
    old_logprobs: np.ndarray      # (G, K)
    ctx_matrix: np.ndarray        # (G*K, c)
    features: np.ndarray | None   # (G*K, F)
    target_rows: np.ndarray       # (G*K, V) frozen-target conditionals
    tokens_flat: np.ndarray       # (G*K,) drafted token ids


def group_advantages(rewards: np.ndarray, delta: float) -> np.ndarray:
    """(R - mean) / (population std + delta); all zeros for a constant group."""
    mu = rewards.mean()
    sigma = rewards.std()  # population std, no Bessel correction
    if sigma == 0.0:
        return np.zeros_like(rewards)
    return (rewards - mu) / (sigma + delta)


def collect_rollout_group(drafter_snapshot: DrafterParameters, target_adapter,
                          prefix, cfg: TrainConfig, rng: RngStream) -> RolloutGroup:
    """Draft, verify, and reward G windows from one prefix at temperature 1."""
    g_roll, k = cfg.group_size, cfg.window_k
    c_len = drafter_snapshot.dims.context
    windows = []
    outcomes = []
    rewards = np.empty(g_roll)
    ctx_matrix = np.empty((g_roll * k, c_len), dtype=np.intp)
    feats = np.empty((g_roll * k, drafter_snapshot.dims.feature)) if cfg.use_feature else None
    target_rows = np.empty((g_roll * k, target_adapter.vocab_size))
    tokens_flat = np.empty(g_roll * k, dtype=np.intp)
    for g in range(g_roll):
        window = draft_window(drafter_snapshot, target_adapter, prefix, k, 1.0,
                              rng.child("draft", g), cfg.use_feature)
        outcome = verify_window(window, target_adapter, prefix, rng.child("verify", g))
        windows.append(window)
        outcomes.append(outcome)
        rewards[g] = total_reward(outcome, window, target_adapter, prefix,
                                  cfg.reward).total
        ctx = list(prefix)
        for t, tok in enumerate(window.tokens):
            row = g * k + t
            ctx_matrix[row] = context_rows(ctx, c_len)
            if cfg.use_feature:
                feats[row] = target_adapter.feature(ctx)
            target_rows[row] = target_adapter.next_dist(ctx).p
            tokens_flat[row] = tok
            ctx.append(tok)
    fwd = forward_batch(drafter_snapshot, ctx_matrix, feats)
    old_logprobs = fwd.logprobs_of(tokens_flat).reshape(g_roll, k)
    return RolloutGroup(list(prefix), windows, outcomes, rewards,
                        group_advantages(rewards, cfg.adv_delta),
                        old_logprobs, ctx_matrix, feats, target_rows, tokens_flat)


@dataclass
class PpowObjective:
    """Objective value, its ascent gradient, and per-step diagnostics."""

    value: float
    grad: DrafterParameters
    kl_mean: float
    clip_fraction: float
    surrogate: float


def ppow_objective(group: RolloutGroup, drafter_current: DrafterParameters,
                   target_adapter, cfg: TrainConfig) -> PpowObjective:
    """Clipped group-relative surrogate minus the target-anchored KL.

    J = mean over windows and positions of
        min(r*A, clip(r, 1-eps, 1+eps)*A) - beta * KL(Q_theta || P_target),
    with r the current/snapshot probability ratio of the drafted token and
    the KL summed exactly over the vocabulary. The gradient ascends J.
    """
    g_roll, k = group.old_logprobs.shape
    batch = g_roll * k
    fwd = forward_batch(drafter_current, group.ctx_matrix, group.features)
    lp_cur = fwd.logprobs_of(group.tokens_flat)
    ratios = np.exp(lp_cur - group.old_logprobs.ravel())
    adv = np.repeat(group.advantages, k)
    s_plain = ratios * adv
    s_clip = np.clip(ratios, 1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip) * adv
    surrogate = np.minimum(s_plain, s_clip)
    # Clipping binds where it lowers the surrogate; only there is the
    # gradient blocked.
    clipped = ((adv > 0) & (ratios > 1.0 + cfg.eps_clip)) | \
              ((adv < 0) & (ratios < 1.0 - cfg.eps_clip))
    q = fwd.probs
    log_gap = fwd.log_probs() - np.log(np.maximum(group.target_rows, LOG_FLOOR))
    kl_each = np.sum(q * log_gap, axis=1)
    surrogate_mean = float(surrogate.mean())
    kl_mean = float(kl_each.mean())
    value = surrogate_mean - cfg.kl_beta * kl_mean

    onehot = np.zeros_like(q)
    onehot[np.arange(batch), group.tokens_flat] = 1.0
    flow = (~clipped) * ratios * adv
    upstream = flow[:, None] * (onehot - q)
    upstream -= cfg.kl_beta * q * (log_gap - kl_each[:, None])
    upstream /= batch
    grad = backward_batch(fwd, upstream)
    return PpowObjective(value, grad, kl_mean, float(clipped.mean()), surrogate_mean)


@dataclass
class StepMetrics:
    step: int
    reward_mean: float
    reward_std: float
    kl_mean: float
    clip_fraction: float
    tau_train: float
    objective_value: float
    lr: float
    window_start: int
    prefix_len: int

    def record(self) -> dict:
        return {
            "step": self.step,
            "reward_mean": self.reward_mean,
            "reward_std": self.reward_std,
            "kl_mean": self.kl_mean,
            "clip_fraction": self.clip_fraction,
            "tau_train": self.tau_train,
            "objective": self.objective_value,
            "lr": self.lr,
            "window_start": self.window_start,
            "prefix_len": self.prefix_len,
        }


@dataclass
class TrainState:
    """Mutable loop state: the live drafter plus the frozen data side."""

    drafter: DrafterParameters
    target: object
    sequences: list
    step: int = 0

    def __post_init__(self):
        if not self.sequences:
            raise ValueError("training needs at least one sequence")


def usable_sequences(sequences, min_prefix: int, window_k: int) -> list:
    """Sequences long enough to host at least one training window."""
    return [s for s in sequences if len(s) >= min_prefix + window_k]


_UNIFORM_SCHEDULE = CurriculumSchedule(((0.0, 0.0),))


def train_step(state: TrainState, cfg: TrainConfig, rng: RngStream):
    """One PPOW update; returns (updated drafter, StepMetrics).

    Window-start selection follows the curriculum (or is uniform when ADAW
    is disabled); the group is rolled out from the pre-update snapshot, and
    inner_epochs updates are applied against that one group. Clipping can
    engage only from the second inner epoch onward.
    """
    seq = state.sequences[rng.child("seq").integer(len(state.sequences))]
    if len(seq) < cfg.min_prefix + cfg.window_k:
        raise ValueError("selected sequence is too short for a training window")
    progress = min(1.0, state.step / max(1, cfg.total_steps))
    if cfg.adaw:
        profile = criticality_profile(state.target, state.drafter, seq, cfg.use_feature)
        scores = window_scores(profile, cfg.window_k)
        schedule = cfg.curriculum
    else:
        scores = WindowScores(np.zeros(len(seq) - cfg.window_k), cfg.window_k)
        schedule = _UNIFORM_SCHEDULE
    # Window start index i maps to prefix length i + 1; enforce min_prefix.
    offset = cfg.min_prefix - 1
    eligible = WindowScores(scores.s[offset:], cfg.window_k)
    start = offset + sample_window_start(eligible, progress, schedule, rng.child("window"))
    prefix = seq[:start + 1]

    group = collect_rollout_group(state.drafter, state.target, prefix, cfg,
                                  rng.child("rollout"))
    lr_now = warmup_lr(cfg.lr, state.step, cfg.total_steps, cfg.warmup_ratio)
    params = state.drafter
    obj = None
    for _ in range(cfg.inner_epochs):
        obj = ppow_objective(group, params, state.target, cfg)
        params = params.add_scaled(obj.grad, lr_now)
    taus = [o.accepted_len for o in group.outcomes]
    metrics = StepMetrics(
        step=state.step,
        reward_mean=float(group.rewards.mean()),
        reward_std=float(group.rewards.std()),
        kl_mean=obj.kl_mean,
        clip_fraction=obj.clip_fraction,
        tau_train=float(np.mean(taus)),
        objective_value=obj.value,
        lr=lr_now,
        window_start=start,
        prefix_len=len(prefix),
    )
    return params, metrics


def cst_step(state: TrainState, cfg: TrainConfig, rng: RngStream):
    """Continued supervised training: one cross-entropy step on a
    (prefix, target-sampled token) pair from the same corpus stream.

    Returns (updated drafter, loss). The comparison arm shares the warmup
    schedule and learning rate with the policy-gradient path.
    """
    seq = state.sequences[rng.child("seq").integer(len(state.sequences))]
    # Prefix length uniform in [min_prefix, len(seq) - 1].
    j = cfg.min_prefix + rng.child("pos").integer(len(seq) - cfg.min_prefix)
    prefix = seq[:j]
    row = state.target.next_dist(prefix)
    tok = rng.child("tok").categorical(row.p)
    feat = state.target.feature(prefix) if cfg.use_feature else None
    lr_now = warmup_lr(cfg.lr, state.step, cfg.total_steps, cfg.warmup_ratio)
    return sft_step(state.drafter, prefix, tok, lr_now, feat)


def run_ppow_training(state: TrainState, cfg: TrainConfig, on_step=None) -> list:
    """Drive train_step from state.step to cfg.total_steps; returns metrics."""
    root = RngStream(cfg.seed)
    out = []
    while state.step < cfg.total_steps:
        state.drafter, metrics = train_step(state, cfg, root.child("train", state.step))
        state.step += 1
        out.append(metrics)
        if on_step is not None:
            on_step(state, metrics)
    return out


def run_cst_training(state: TrainState, cfg: TrainConfig, on_step=None) -> list:
    """Drive cst_step for the same step budget; returns per-step losses."""
    root = RngStream(cfg.seed)
    losses = []
    while state.step < cfg.total_steps:
        state.drafter, loss = cst_step(state, cfg, root.child("cst", state.step))
        state.step += 1
        losses.append(loss)
        if on_step is not None:
            on_step(state, loss)
    return losses


def evaluate(drafter: DrafterParameters, target_adapter, eval_prompts,
             window_k: int, group_size: int, temperature: float, rng: RngStream,
             max_tokens: int = 256, gamma: float = 0.12,
             use_feature: bool = False) -> DecodeStats:
    """Aggregate decoding stats over prompts; never mutates the drafter."""
    if not eval_prompts:
        raise ValueError("evaluate needs at least one prompt")
    tokens = 0
    steps = 0
    accepted = 0.0
    for i, prompt in enumerate(eval_prompts):
        _, stats = generate(drafter, target_adapter, prompt, max_tokens, window_k,
                            rng.child("prompt", i), temperature, group_size,
                            gamma, use_feature)
        tokens += stats.total_tokens
        steps += stats.num_steps
        accepted += stats.tau * stats.num_steps
    cost = steps * step_cost(window_k, group_size, gamma)
    return DecodeStats(
        total_tokens=tokens,
        num_steps=steps,
        tau=accepted / steps,
        cost_units=cost,
        speedup_cost_model=tokens / cost,
        window_k=window_k,
        group_size=group_size,
        temperature=temperature,
    )

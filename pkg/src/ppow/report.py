"""Figure rendering and plot-ready files for the CLI report paths.

Every command that writes delimited records also renders a matplotlib
figure next to them; two-column .dat files cover external plotting.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def write_two_column(path, xs, ys, header: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        for x, y in zip(xs, ys):
            fh.write(f"{x} {y}\n")


def moving_average(values, span: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if span <= 1 or len(values) < 2:
        return values
    kernel = np.ones(min(span, len(values))) / min(span, len(values))
    return np.convolve(values, kernel, mode="valid")


def save_loss_curve(steps, losses, path, title="supervised pretraining loss"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, losses, lw=0.6, alpha=0.4, color="tab:blue")
    span = max(1, len(losses) // 50)
    smooth = moving_average(losses, span)
    ax.plot(steps[len(steps) - len(smooth):], smooth, lw=1.6, color="tab:blue")
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_curves(records, path):
    """Reward / KL / tau panels from per-step training records."""
    steps = [r["step"] for r in records]
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    panels = [("reward_mean", "group reward"), ("kl_mean", "KL(drafter || target)"),
              ("tau_train", "accepted length (train)")]
    for ax, (key, label) in zip(axes, panels):
        ys = [r[key] for r in records]
        ax.plot(steps, ys, lw=0.5, alpha=0.35, color="tab:orange")
        span = max(1, len(ys) // 60)
        smooth = moving_average(ys, span)
        ax.plot(steps[len(steps) - len(smooth):], smooth, lw=1.6, color="tab:orange")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_eval_figure(rows, path):
    """tau versus candidate group size, one line per (K, temperature)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    combos = sorted({(r["K"], r["temperature"]) for r in rows})
    for k, temp in combos:
        pts = sorted((r["G"], r["tau"]) for r in rows
                     if r["K"] == k and r["temperature"] == temp)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                label=f"K={k}, T={temp}")
    ax.set_xlabel("candidate group size G")
    ax.set_ylabel("mean accepted length tau")
    ax.set_xscale("log", base=2)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_pinsker_figure(alphas, bounds, path):
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(bounds, alphas, s=2, alpha=0.25, lw=0)
    lo = min(float(np.min(bounds)), 0.0)
    ax.plot([lo, 1.0], [lo, 1.0], color="black", lw=1.0, label="alpha = bound")
    ax.set_xlabel("1 - sqrt(KL/2)")
    ax.set_ylabel("acceptance alpha")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_reward_table_figure(table, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(table.ks, table.measured, marker="s", label="measured-style (cost model)")
    for gamma, col in sorted(table.cost_aware.items()):
        ax.plot(table.ks, col, marker="o", label=f"cost-aware, gamma={gamma}")
    ax.set_xlabel("accepted prefix length k")
    ax.set_ylabel("reward")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_nabla_figure(deltas, nablas, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(deltas, nablas, lw=1.5)
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xlabel("delta = log p_target - log p_draft")
    ax.set_ylabel("exp(delta) - delta - 1")
    ax.set_yscale("symlog")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_easy_hard_figure(report, path):
    fig, axes = plt.subplots(1, 2, figsize=(7, 3.5))
    names = ["easy", "hard"]
    taus = [report.easy.mean_tau, report.hard.mean_tau]
    nablas = [report.easy.mean_nabla, report.hard.mean_nabla]
    axes[0].bar(names, taus, color=["tab:green", "tab:red"])
    axes[0].set_ylabel("mean accepted length")
    axes[1].bar(names, nablas, color=["tab:green", "tab:red"])
    axes[1].set_ylabel("mean alignment divergence")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

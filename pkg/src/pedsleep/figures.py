"""Figure rendering for report outputs.

Every CLI report path writes its CSV/JSON first; these helpers render a PNG
next to it. All functions take plain arrays/records and a target path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_train_curves(log, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    if log.iterations:
        ax.plot(log.iterations, log.train_losses, lw=0.8, alpha=0.7, label="train")
    if log.val_iterations:
        ax.plot(log.val_iterations, log.val_losses, "o-", ms=3, label="validation")
    ax.set_xlabel("iteration")
    ax.set_ylabel("masked MSE")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_confusion(row_normalized, class_names, path) -> None:
    m = np.asarray(row_normalized)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(m, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(class_names)), class_names, rotation=45, ha="right")
    ax.set_yticks(range(len(class_names)), class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            ax.text(j, i, f"{100 * m[i, j]:.0f}%", ha="center", va="center",
                    color="white" if m[i, j] > 0.5 else "black", fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_silhouette_cis(true_result, shuffled_results, path) -> None:
    fig, ax = plt.subplots(figsize=(8, 4))
    results = [true_result] + list(shuffled_results)
    xs = np.arange(len(results))
    means = [r.mean_score for r in results]
    colors = ["tab:red"] + ["tab:gray"] * len(shuffled_results)
    for x, r, color in zip(xs, results, colors):
        ax.errorbar([x], [r.mean_score], yerr=[[r.mean_score - r.ci_lo], [r.ci_hi - r.mean_score]],
                    fmt="none", ecolor=color, elinewidth=2, capsize=3)
    ax.scatter(xs, means, c=colors, zorder=3, s=18)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xticks(xs, ["cohorts"] + [f"shuffle {i + 1}" for i in range(len(shuffled_results))],
                  rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("silhouette score (95% CI)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_correlation_scatter(scatter, rho, metric, path) -> None:
    emb_d = [row[2] for row in scatter]
    sig_d = [row[3] for row in scatter]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(emb_d, sig_d, s=6, alpha=0.4)
    ax.set_xlabel("embedding-space distance")
    ax.set_ylabel(f"generated-signal distance ({metric})")
    ax.set_title(f"rho = {rho:.3f} ({len(scatter)} pairs plotted)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_signals(data, channel_names, path, title: str | None = None) -> None:
    data = np.asarray(data)
    c = data.shape[0]
    fig, axes = plt.subplots(c, 1, figsize=(8, 1.1 * c + 0.8), sharex=True, squeeze=False)
    for i in range(c):
        ax = axes[i, 0]
        ax.plot(data[i], lw=0.6)
        ax.set_ylabel(channel_names[i], rotation=0, ha="right", va="center", fontsize=7)
        ax.set_yticks([])
    axes[-1, 0].set_xlabel("sample")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_imputation_pair(original, imputed, channel_name, path) -> None:
    fig, axes = plt.subplots(2, 1, figsize=(8, 3.5), sharex=True, sharey=True)
    axes[0].plot(np.asarray(original), lw=0.7, color="tab:blue")
    axes[0].set_ylabel("original")
    axes[1].plot(np.asarray(imputed), lw=0.7, color="tab:orange")
    axes[1].set_ylabel("imputed")
    axes[1].set_xlabel("sample")
    fig.suptitle(channel_name, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_imputation_report(report, path) -> None:
    rows = report.rows
    fig, ax = plt.subplots(figsize=(7, 0.35 * len(rows) + 1.5))
    ys = np.arange(len(rows))
    ax.barh(ys, [r.mean_mse for r in rows], xerr=[r.sd_mse for r in rows], color="tab:blue", alpha=0.8)
    ax.axvline(1.0, color="tab:red", lw=1.0, ls="--", label="mean-imputation baseline")
    ax.set_yticks(ys, [r.channel for r in rows], fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("imputation MSE (mean +/- SD)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

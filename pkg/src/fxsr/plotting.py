"""Figure rendering for evaluation reports.

Everything draws through the Agg backend so the CLI works headless; each
function writes a PNG next to the delimited output it illustrates.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .schedules import FeatureLevel, ScheduleVariant, weights_at  # noqa: E402


def plot_pd_plane(points, path, label: str = "model") -> None:
    """Distortion/perception trade-off curve, annotated with t."""
    fig, ax = plt.subplots(figsize=(5, 4))
    xs = [p.perception for p in points]
    ys = [p.distortion for p in points]
    ax.plot(xs, ys, "o-", color="tab:blue", label=label)
    for p in points:
        ax.annotate(f"t={p.t:g}", (p.perception, p.distortion),
                    textcoords="offset points", xytext=(4, 4), fontsize=7)
    ax.set_xlabel("perceptual distance")
    ax.set_ylabel("PSNR (dB)")
    ax.legend(loc="best")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_metric_curves(rows, path) -> None:
    """Per-style metric curves from evaluation rows (one line per dataset)."""
    datasets = sorted({row["dataset"] for row in rows})
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    for name in datasets:
        sub = sorted((r for r in rows if r["dataset"] == name),
                     key=lambda r: r["t"])
        ts = [r["t"] for r in sub]
        axes[0].plot(ts, [r["psnr"] for r in sub], "o-", label=name)
        axes[1].plot(ts, [r["perceptual"] for r in sub], "o-", label=name)
        axes[2].plot(ts, [r["lr_psnr"] for r in sub], "o-", label=name)
    for ax, title in zip(axes, ("PSNR (dB)", "perceptual distance",
                                "LR-PSNR (dB)")):
        ax.set_xlabel("t")
        ax.set_title(title, fontsize=10)
        ax.grid(alpha=0.3)
    axes[0].legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_weight_schedules(variant: ScheduleVariant, path) -> None:
    """Loss-weight trajectories over t for one schedule variant."""
    ts = np.linspace(0.0, 1.0, 201)
    weights = [weights_at(float(t), variant) for t in ts]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(ts, [w.w_rec for w in weights], label="reconstruction")
    ax.plot(ts, [w.w_adv for w in weights], label="adversarial")
    for level in FeatureLevel.ordered():
        values = [w.w_per.get(level, 0.0) for w in weights]
        if max(values) > 0:
            ax.plot(ts, values, "--", label=f"feature {level.value}")
    ax.set_xlabel("t")
    ax.set_ylabel("weight")
    ax.set_title(f"{variant.value} schedule", fontsize=10)
    ax.legend(loc="center right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

"""Figure rendering for the experiment harnesses (Agg backend, file output)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_setting_curve(rows: list[dict], x_key: str, metric_keys: list[str],
                       title: str, out_png) -> None:
    """Mean +/- std of each metric against the sweep setting."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [r[x_key] for r in rows]
    if any(isinstance(x, str) for x in xs):
        # mixed labels (e.g. a named baseline plus numeric thresholds)
        # render as a categorical axis
        xs = [str(x) for x in xs]
    for key in metric_keys:
        means = [r[f"{key}_mean"] for r in rows]
        stds = [r.get(f"{key}_std", 0.0) for r in rows]
        ax.errorbar(xs, means, yerr=stds, marker="o", capsize=3, label=key)
    ax.set_xlabel(x_key)
    ax.set_ylabel("metric")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def plot_history(epochs: list[float], out_png, val_auc=None) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(epochs) + 1), epochs, label="train total loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if val_auc and any(v is not None for v in val_auc):
        ax2 = ax.twinx()
        ax2.plot(range(1, len(val_auc) + 1),
                 [v if v is not None else float("nan") for v in val_auc],
                 color="tab:orange", label="val AUC")
        ax2.set_ylabel("val AUC")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)

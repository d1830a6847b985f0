"""Figures written next to the delimited reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# no software/version stamp in the file, so reruns are byte-identical
_SAVE = {"dpi": 120, "metadata": {"Software": None}}


def _style(ax):
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.grid(alpha=0.3)


def plot_training_curves(train_log, path):
    phases = [p for p in ("classifier", "explainer") if train_log.phase(p)]
    fig, axes = plt.subplots(1, max(len(phases), 1), figsize=(5 * max(len(phases), 1), 3.5),
                             squeeze=False)
    for ax, phase in zip(axes[0], phases):
        recs = train_log.phase(phase)
        epochs = [r.epoch for r in recs]
        ax.plot(epochs, [r.train_loss for r in recs], label="train loss")
        ax.plot(epochs, [r.val_loss for r in recs], label="validation loss")
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_title(f"{phase} phase")
        metric = ax.twinx()
        metric.plot(epochs, [r.val_metric for r in recs], color="k", ls="--", lw=1,
                    label="val accuracy" if phase == "classifier" else "val token accuracy")
        metric.set_ylim(0, 1.05)
        _style(ax)
        lines = ax.get_lines() + metric.get_lines()
        ax.legend(lines, [l.get_label() for l in lines], fontsize=8, loc="center right")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_report(report, path):
    """Per-example BLEU and METEOR-lite distributions for one evaluation."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    bins = [i * 5 for i in range(21)]
    ax.hist([e["bleu"] for e in report.entries], bins=bins, alpha=0.6, label="BLEU")
    ax.hist([e["meteor_lite"] for e in report.entries], bins=bins, alpha=0.6, label="METEOR-lite")
    ax.set_xlabel("per-example score")
    ax.set_ylabel("examples")
    ax.set_title(f"accuracy {report.accuracy:.3f}, BLEU {report.bleu:.1f}")
    ax.legend(fontsize=8)
    _style(ax)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_sweep(rows: list[tuple[str, dict]], path):
    """Grouped bars: one group per variant, explanation metrics plus accuracy (as %)."""
    columns = [("meteor_lite", "METEOR-lite"), ("bleu", "BLEU"), ("cider", "CIDEr x10"),
               ("accuracy", "accuracy %")]
    scale = {"cider": 10.0, "accuracy": 100.0}
    fig, ax = plt.subplots(figsize=(7, 3.5))
    width = 0.8 / len(columns)
    for j, (key, label) in enumerate(columns):
        values = [(m[key] or 0.0) * scale.get(key, 1.0) for _, m in rows]
        ax.bar([i + j * width for i in range(len(rows))], values, width, label=label)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(rows))])
    ax.set_xticklabels([name for name, _ in rows])
    ax.set_ylim(0, 105)
    ax.legend(fontsize=8, ncol=4, loc="lower center")
    _style(ax)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)

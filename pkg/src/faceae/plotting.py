"""PNG figures written next to the CSV reports (loss curves, ablations, token efficiency)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "savefig.bbox": "tight",
}


def figure_path(csv_path: str | Path) -> Path:
    """The PNG that accompanies a CSV report."""
    return Path(csv_path).with_suffix(".png")


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def read_log(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    keys = ("step", "loss", "slot_accuracy", "lr")
    return {k: np.array([float(r[k]) for r in rows]) for k in keys}


def plot_loss_curve(log_csv: str | Path, out: str | Path | None = None) -> Path:
    """Loss (log scale) and slot accuracy against step."""
    log = read_log(log_csv)
    out = figure_path(log_csv) if out is None else Path(out)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if len(log["step"]):
            ax.plot(log["step"], log["loss"], lw=1.0, color="tab:blue", label="loss")
            ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss (nats / face)")
        acc = ax.twinx()
        acc.plot(log["step"], log["slot_accuracy"], lw=0.8, color="tab:orange", label="slot accuracy")
        acc.set_ylim(0.0, 1.02)
        acc.set_ylabel("slot accuracy")
        acc.grid(False)
        lines = ax.get_lines() + acc.get_lines()
        ax.legend(lines, [l.get_label() for l in lines], loc="center right", frameon=False)
        return _save(fig, out)


def plot_ablation(suite: str, header: list[str], rows: list[list], out: str | Path) -> Path:
    """Grouped bars of held-out loss and accuracy per variant."""
    col = {h: i for i, h in enumerate(header)}
    names = [str(r[col["variant"]]) for r in rows]
    x = np.arange(len(rows))
    with plt.rc_context(STYLE):
        fig, (ax_l, ax_a) = plt.subplots(1, 2)
        for key, offset in (("train_loss", -0.2), ("heldout_loss", 0.2)):
            ax_l.bar(x + offset, [float(r[col[key]]) for r in rows], width=0.4, label=key.replace("_", " "))
        ax_l.set_ylabel("loss (nats / face)")
        ax_l.legend(frameon=False)
        ax_a.bar(x, [float(r[col["heldout_accuracy"]]) for r in rows], width=0.6, color="tab:green")
        ax_a.set_ylim(0.0, 1.0)
        ax_a.set_ylabel("held-out slot accuracy")
        for ax in (ax_l, ax_a):
            ax.set_xticks(x, names, rotation=20, ha="right")
        fig.suptitle(f"ablation: {suite}")
        fig.tight_layout()
        return _save(fig, Path(out))


def plot_compression(rows, out: str | Path) -> Path:
    """Horizontal bars of token ratio: measured aggregate against published reference values."""
    keep = [r for r in rows if r.source in ("aggregate", "published")]
    names = [("measured (this corpus)" if r.source == "aggregate" else r.name) for r in keep]
    vals = [r.ratio for r in keep]
    colors = ["tab:red" if r.source == "aggregate" else "tab:gray" for r in keep]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 0.28 * len(keep) + 1.0))
        y = np.arange(len(keep))[::-1]
        ax.barh(y, vals, color=colors)
        ax.set_yticks(y, names)
        ax.set_xlim(0.0, 1.05)
        ax.set_xlabel("sequence length relative to 9 tokens per face")
        for yi, v in zip(y, vals):
            ax.text(v + 0.01, yi, f"{v:.2f}", va="center", fontsize=7)
        return _save(fig, Path(out))

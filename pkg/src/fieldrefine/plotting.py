"""Figures written next to the JSON reports (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps PNG output byte-stable between runs
_PNG_META = {"Software": None}

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META if str(path).lower().endswith(".png") else None)
    plt.close(fig)


def plot_loss_trace(trace, path, best_iter=None, title=None):
    """Total and per-term loss against iteration (iteration 0 = initial field)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        its = range(len(trace))
        ax.plot(its, [t["total"] for t in trace], "k-o", ms=3, label="total")
        for key, style in (("ncc", "--"), ("ssim", ":"), ("smooth", "-.")):
            vals = [t[key] for t in trace]
            if any(vals):
                ax.plot(its, vals, style, label=key)
        if best_iter is not None:
            ax.axvline(best_iter, color="0.6", lw=0.8)
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        _save(fig, path)


def plot_sweep(curves: dict, path, metric="dice_mean", ylabel="Dice"):
    """One line per named run: ``curves[name] = {"iterations": [...], metric: [...]}``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, c in curves.items():
            ax.plot(c["iterations"], c[metric], label=name)
        ax.set_xlabel("refinement iterations")
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        _save(fig, path)

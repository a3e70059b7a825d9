"""SVG figures with byte-stable output.

Fonts are emitted as text (not paths), element ids come from a fixed hash
salt and the date stamp is dropped, so identical inputs give identical bytes.
"""

import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .esfit import eval_es  # noqa: E402

_RC = {
    "svg.hashsalt": "stablebatch",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 100,
}
_META = {"Date": None, "Creator": "stablebatch"}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def plot_loss_vs_tokens(runs, crossings=(), path=None):
    """Loss against tokens for each run, with crossing markers.

    ``crossings`` holds objects with ``loss``, ``tokens_a`` and ``tokens_b``.
    """
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for run in sorted(runs, key=lambda r: r.batch_size):
            ax.plot(run.tokens, run.losses, lw=1.0, label=f"B={run.batch_size:.4g}")
        for k, c in enumerate(crossings):
            ax.plot([c.tokens_a], [c.loss], "kx", ms=7, gid=f"crossing-{k}")
        ax.set_xscale("log")
        ax.set_xlabel("tokens")
        ax.set_ylabel("loss")
        ax.legend(fontsize=6, ncol=2)
        fig.tight_layout()
        return _save(fig, path) if path else fig


def plot_es_fits(datasets, models, path=None):
    """Log-log E(S) points and fitted piecewise curves, minimum marked."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for k, (ds, p) in enumerate(zip(datasets, models)):
            if ds is not None:
                ax.plot(ds.s, ds.e, "o", ms=3, color=f"C{k % 10}")
            if p is None:
                continue
            lo = p.s_min * 1.001 if ds is None else min(ds.s.min(), p.s_1)
            hi = 4 * p.s_2 if ds is None else max(ds.s.max(), p.s_2)
            grid = np.geomspace(max(lo, p.s_min * 1.001), hi, 400)
            label = None if ds is None else f"L={ds.target_loss:.4f}"
            ax.plot(grid, eval_es(p, grid), "-", lw=1.0, color=f"C{k % 10}", label=label)
            ax.plot([p.s_opt], [p.e_min], "k^", ms=5, gid=f"es-min-{k}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("steps S")
        ax.set_ylabel("tokens E")
        if any(ds is not None for ds in datasets):
            ax.legend(fontsize=6, ncol=2)
        fig.tight_layout()
        return _save(fig, path) if path else fig


def plot_metrics_trend(metrics, path=None):
    """B_min and B_opt against target loss; returns None for an empty list."""
    metrics = sorted(metrics, key=lambda m: -m.target_loss)
    if not metrics:
        warnings.warn("no batch metrics to plot; skipping trend figure", stacklevel=2)
        return None
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        loss = [m.target_loss for m in metrics]
        ax.plot(loss, [m.b_min for m in metrics], "o-", label="B_min")
        ax.plot(loss, [m.b_opt for m in metrics], "s-", label="B_opt")
        ax.invert_xaxis()
        ax.set_yscale("log")
        ax.set_xlabel("target loss")
        ax.set_ylabel("batch size (tokens/step)")
        ax.legend()
        fig.tight_layout()
        return _save(fig, path) if path else fig


def plot_schedule(schedule, path=None):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        edges = [0.0] + list(schedule.milestones)
        ax.stairs(schedule.batches, edges, baseline=None, lw=1.5)
        ax.set_xlabel("tokens")
        ax.set_ylabel("global batch size")
        fig.tight_layout()
        return _save(fig, path) if path else fig

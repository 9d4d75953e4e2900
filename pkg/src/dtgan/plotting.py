"""Report figures: marginals of real vs synthetic data, training history,
and privacy spend. Rendered off-screen; PNG metadata is stripped so
re-runs produce identical bytes."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 100,
}
REAL, SYNTH = "#4c72b0", "#dd8452"


def save(fig, path):
    """Atomic PNG write without timestamp or software metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, format="png", metadata={"Software": None})
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.remove(tmp)
    return path


def _grid(n, ncols=3, size=2.6):
    ncols = min(ncols, n)
    nrows = -(-n // ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(size * ncols, size * 0.8 * nrows), squeeze=False)
    for ax in axes.flat[n:]:
        ax.set_visible(False)
    return fig, axes.flat


def marginals(real, synth, schema, path):
    """Histogram per continuous column, grouped bars per categorical column."""
    real, synth = schema.coerce(real), schema.coerce(synth)
    with plt.rc_context(STYLE):
        fig, axes = _grid(len(schema.columns))
        for ax, c in zip(axes, schema.columns):
            if c.is_categorical:
                cats = list(c.categories)
                pos = np.arange(len(cats))
                pr = real[c.name].value_counts(normalize=True).reindex(cats, fill_value=0)
                ps = synth[c.name].value_counts(normalize=True).reindex(cats, fill_value=0)
                ax.bar(pos - 0.2, pr, 0.4, color=REAL, label="real")
                ax.bar(pos + 0.2, ps, 0.4, color=SYNTH, label="synthetic")
                ax.set_xticks(pos)
                ax.set_xticklabels(cats, rotation=45 if len(cats) > 4 else 0)
            else:
                lo, hi = c.minimum, c.maximum if c.maximum > c.minimum else c.minimum + 1
                bins = np.linspace(lo, hi, 31)
                ax.hist(real[c.name], bins, density=True, color=REAL, alpha=0.6, label="real")
                ax.hist(synth[c.name], bins, density=True, color=SYNTH, alpha=0.6, label="synthetic")
            ax.set_title(c.name)
        axes[0].legend(frameon=False)
        fig.tight_layout()
        return save(fig, path)


def history(records, path):
    """Critic and generator losses per generator step, plus epsilon when tracked."""
    steps = [r["step"] for r in records]
    eps = [r["epsilon"] for r in records if r.get("epsilon") is not None]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3 if eps else 2, figsize=(9 if eps else 6, 2.4))
        ax = axes[0]
        ax.plot(steps, [r["wasserstein"] for r in records], lw=0.8, label="critic W")
        ax.plot(steps, [r["g_adv"] for r in records], lw=0.8, label="generator")
        ax.set_xlabel("generator step")
        ax.legend(frameon=False)
        ax = axes[1]
        ax.plot(steps, [r["grad_norm"] for r in records], lw=0.8, color="k")
        ax.axhline(1.0, ls=":", color="grey")
        ax.set_xlabel("generator step")
        ax.set_ylabel("interpolate grad norm")
        if eps:
            axes[2].plot(steps[-len(eps):], eps, color=SYNTH)
            axes[2].set_xlabel("generator step")
            axes[2].set_ylabel("epsilon")
        fig.tight_layout()
        return save(fig, path)


def epsilon_curve(steps, epsilons, budget, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.5, 2.4))
        ax.plot(steps, epsilons, color=REAL)
        if budget is not None:
            ax.axhline(budget, ls="--", color="grey")
        ax.set_xlabel("charged updates")
        ax.set_ylabel("epsilon")
        fig.tight_layout()
        return save(fig, path)

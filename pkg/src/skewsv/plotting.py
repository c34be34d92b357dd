"""Static SVG figures for fitted models (matplotlib, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Fixed hash salt and no date stamp so the same data gives byte-identical SVG.
_SVG_RC = {"svg.hashsalt": "skewsv", "svg.fonttype": "none", "font.size": 9}
_SVG_META = {"Date": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_SVG_META, bbox_inches="tight")
    plt.close(fig)
    return path


def volatility_figure(abs_returns, volatility, path, title: str = "") -> Path:
    """Posterior mean of ``exp(h_t / 2)`` over absolute returns (gray)."""
    t = np.arange(1, len(abs_returns) + 1)
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(7.0, 2.8))
        ax.plot(t, abs_returns, color="0.65", lw=0.6, label="|y_t|")
        ax.plot(t, volatility, color="black", lw=1.1, label="exp(h_t/2)")
        ax.set_xlabel("t")
        ax.set_xlim(t[0], t[-1])
        ax.legend(frameon=False, loc="upper right")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def skewness_figure(mean, band90, band95, rolling, path, title: str = "") -> Path:
    """Posterior mean of ``alpha_t`` with 90% (dark) and 95% (light) HPD bands.

    ``band90`` and ``band95`` are ``(low, high)`` pairs of arrays. ``rolling``
    is the rolling sample skewness of the returns, drawn on a twin axis
    because it lives on a different scale; NaN entries are left blank.
    """
    t = np.arange(1, len(mean) + 1)
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(7.0, 2.8))
        ax.fill_between(t, band95[0], band95[1], color="0.85", lw=0, label="95% HPD")
        ax.fill_between(t, band90[0], band90[1], color="0.6", lw=0, label="90% HPD")
        ax.plot(t, mean, color="black", lw=1.1, label="alpha_t")
        ax.axhline(0.0, color="0.3", lw=0.5, ls=":")
        ax.set_xlabel("t")
        ax.set_xlim(t[0], t[-1])
        twin = ax.twinx()
        twin.plot(t, rolling, color="tab:red", lw=0.9, ls="--", label="rolling skewness")
        twin.set_ylabel("rolling skewness")
        handles = ax.get_legend_handles_labels()
        extra = twin.get_legend_handles_labels()
        ax.legend(handles[0] + extra[0], handles[1] + extra[1], frameon=False, loc="upper right", fontsize=7)
        if title:
            ax.set_title(title)
        return _save(fig, path)

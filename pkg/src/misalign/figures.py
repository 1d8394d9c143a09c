"""Report figures, rendered deterministically to SVG.

The four-bar chart mirrors the bound-report layout: for every method the
source error, target error, and the two bound values side by side. Output
is byte-reproducible (fixed hash salt, no embedded date), and every bar
carries a ``bar-<method>-<metric>`` group id so report layouts are
machine-checkable.
"""

from __future__ import annotations

import matplotlib
from matplotlib.figure import Figure

BAR_METRICS = ("train_err", "test_err", "bound_c", "bound_d")
_BAR_LABELS = {
    "train_err": "source error",
    "test_err": "target error",
    "bound_c": "source error + c + phi",
    "bound_d": "source error + D",
}
_SVG_SALT = "misalign"
_COLORS = ("#4878d0", "#ee854a", "#6acc64", "#d65f5f")


def save_svg(fig: Figure, path) -> None:
    """Write a figure as deterministic SVG."""
    with matplotlib.rc_context({"svg.hashsalt": _SVG_SALT}):
        fig.savefig(path, format="svg", metadata={"Date": None})


def bound_bars_figure(rows, path, title: str | None = None) -> None:
    """Four bars per method (seed means) from bound-report rows.

    ``rows`` are dicts with at least method, seed, and the four metrics.
    """
    methods = sorted({row["method"] for row in rows})
    if not methods:
        raise ValueError("no report rows to plot")
    means = {
        m: {
            k: sum(float(r[k]) for r in rows if r["method"] == m)
            / sum(1 for r in rows if r["method"] == m)
            for k in BAR_METRICS
        }
        for m in methods
    }
    fig = Figure(figsize=(max(4.0, 1.0 + 1.6 * len(methods)), 3.4))
    ax = fig.subplots()
    width = 0.2
    for k, metric in enumerate(BAR_METRICS):
        xs = [i + (k - 1.5) * width for i in range(len(methods))]
        vals = [means[m][metric] for m in methods]
        bars = ax.bar(xs, vals, width, label=_BAR_LABELS[metric], color=_COLORS[k])
        for m, rect in zip(methods, bars):
            rect.set_gid(f"bar-{m}-{metric}")
    ax.set_xticks(range(len(methods)))
    ax.set_xticklabels(methods)
    ax.set_ylabel("zero-one error / bound value")
    ax.legend(fontsize=8, loc="upper left")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    save_svg(fig, path)

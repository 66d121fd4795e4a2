"""SVG figures with byte-stable output (fixed hash salt, no date stamp)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

from matplotlib import rc_context  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

_RC = {"svg.hashsalt": "factfin", "svg.fonttype": "path", "font.size": 9, "axes.grid": True, "grid.alpha": 0.3}


def _save(fig: Figure, path: str | Path, description: str) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": description})


def equity_svg(curves: Mapping[str, Sequence[float]], path: str | Path, title: str = "Cumulative return",
               description: str = "") -> None:
    """Cumulative return (in percent) of each equity curve, rebased to its first value."""
    with rc_context(_RC):
        fig = Figure(figsize=(7, 3.5))
        ax = fig.add_subplot()
        for name, eq in curves.items():
            base = eq[0]
            ax.plot(range(len(eq)), [(v / base - 1.0) * 100.0 for v in eq], label=name, linewidth=1.2)
        ax.set_xlabel("bar")
        ax.set_ylabel("cumulative return (%)")
        ax.set_title(title)
        ax.axhline(0.0, color="black", linewidth=0.6)
        if len(curves) > 1:
            ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        _save(fig, path, description)


def bars_svg(groups: Mapping[str, Mapping[str, float]], path: str | Path, title: str = "",
             description: str = "") -> None:
    """Grouped bars: one group per outer key, one bar per inner key."""
    labels = list(groups)
    series = sorted({k for g in groups.values() for k in g})
    with rc_context(_RC):
        fig = Figure(figsize=(7, 3.5))
        ax = fig.add_subplot()
        width = 0.8 / max(1, len(series))
        for j, name in enumerate(series):
            xs = [i + (j - (len(series) - 1) / 2) * width for i in range(len(labels))]
            ax.bar(xs, [groups[g].get(name, 0.0) for g in labels], width, label=name)
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=15, ha="right")
        ax.set_title(title)
        if len(series) > 1:
            ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        _save(fig, path, description)

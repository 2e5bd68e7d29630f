"""SVG charts for evaluation reports. Output bytes are stable for identical inputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "atc-demand", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def bucket_chart(path, bucket_labels: Sequence[str], series: Mapping[str, Sequence[float]],
                 ylabel: str = "MAE") -> Path:
    """Line chart with one series per method over the target-value buckets."""
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        x = list(range(len(bucket_labels)))
        for name, values in series.items():
            ax.plot(x, list(values), marker="o", label=name, gid=f"series-{name}")
        ax.set_xticks(x)
        ax.set_xticklabels(list(bucket_labels))
        ax.set_xlabel("ground-truth clearances")
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def bar_chart(path, names: Sequence[str], values: Sequence[float], errors: Sequence[float] | None = None,
              xlabel: str = "change in MAE") -> Path:
    """Horizontal bars, largest at the top."""
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 0.3 * len(names) + 1.2))
        y = list(range(len(names)))[::-1]
        ax.barh(y, list(values), xerr=None if errors is None else list(errors), color="#4c72b0")
        ax.set_yticks(y)
        ax.set_yticklabels(list(names))
        ax.axvline(0.0, color="black", linewidth=0.8)
        ax.set_xlabel(xlabel)
        fig.tight_layout()
        return _save(fig, path)

"""Figure rendering for report outputs.

Every report path that writes the iteration-histogram CSV also renders the
matching bar chart next to it, so runs are inspectable without a notebook.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def render_iteration_histogram(histogram: dict, path, *, title: str = "Iteration counts") -> None:
    """Bar chart of iteration-count frequencies, written to an image file."""
    counts = sorted(int(k) for k in histogram)
    freqs = [histogram[k] if k in histogram else histogram[str(k)] for k in counts]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar([str(c) for c in counts], freqs, color="#4c72b0", edgecolor="black", linewidth=0.5)
    ax.set_xlabel("iterations")
    ax.set_ylabel("frequency")
    ax.set_title(title)
    ax.set_ylim(0, 1.0)
    for spine in ("top", "right"):
        ax.spines[spine].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

"""Figure rendering for the report-emitting CLI paths.

Every renderer writes a PNG next to the delimited text output. The
Software metadata chunk is stripped so repeated runs stay byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path):
    fig.savefig(path, dpi=150, metadata={"Software": None})
    plt.close(fig)


def figure_path(out_path):
    """Sibling PNG path for a text output file."""
    base = str(out_path)
    stem = base.rsplit(".", 1)[0] if "." in base.rsplit("/", 1)[-1] else base
    return stem + ".png"


def render_loss_history(history, path):
    epochs = [h[0] for h in history]
    losses = [h[1] for h in history]
    accs = [h[2] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, color="tab:blue", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(epochs, accs, color="tab:orange", label="accuracy")
    ax2.set_ylabel("accuracy", color="tab:orange")
    ax2.set_ylim(0.0, 1.05)
    ax.set_title("training curve")
    fig.tight_layout()
    _save(fig, path)


def render_scatter(positions, values, path, title=""):
    """3-D scatter colored by a per-point value (e.g. heat-map responses)."""
    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    p = ax.scatter(
        positions[:, 0], positions[:, 1], positions[:, 2],
        c=values, cmap="viridis", s=18,
    )
    fig.colorbar(p, ax=ax, shrink=0.7)
    if title:
        ax.set_title(title)
    _save(fig, path)


def render_curve_order(positions, path, title=""):
    """Polyline through points in their given (curve) order plus the points."""
    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    ax.plot(
        positions[:, 0], positions[:, 1], positions[:, 2],
        color="tab:gray", linewidth=0.8, alpha=0.7,
    )
    ax.scatter(
        positions[:, 0], positions[:, 1], positions[:, 2],
        c=range(len(positions)), cmap="plasma", s=18,
    )
    if title:
        ax.set_title(title)
    _save(fig, path)

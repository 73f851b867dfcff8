"""Heatmaps over the 10 x 20 lip grid (larger value -> lighter cell).

Figures are drawn headless on the Agg backend and saved as SVG. The hash salt
and the metadata are pinned so that the same values give the same bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from app.core.logging import logger  # noqa: E402
from app.tools.models.sequence_model import (  # noqa: E402
    LIP_COLS,
    LIP_ROWS,
)

SVG_RC = {
    "svg.hashsalt": "lipmotion",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "axes.unicode_minus": False,
}


def lip_grid(values: np.ndarray) -> np.ndarray:
    """Landmark k = 20r + c placed at row r, column c."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size != LIP_ROWS * LIP_COLS:
        raise ValueError(f"heatmap needs {LIP_ROWS * LIP_COLS} values, got {values.size}")
    return values.reshape(LIP_ROWS, LIP_COLS)


def render_heatmap(values: np.ndarray, title: str) -> Figure:
    """Grey-scale image of the lip grid with a colorbar; a constant grid is drawn mid-grey."""
    grid = lip_grid(values)
    lo, hi = float(grid.min()), float(grid.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    with matplotlib.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(8.0, 4.4), constrained_layout=True)
        image = ax.imshow(grid, cmap="gray", vmin=lo, vmax=hi, interpolation="nearest")
        ax.set_title(title)
        ax.set_xlabel("column (mouth corner to mouth corner)")
        ax.set_ylabel("row (upper outer to lower outer)")
        ax.set_xticks(range(0, LIP_COLS, 5))
        ax.set_yticks(range(LIP_ROWS))
        fig.colorbar(image, ax=ax, shrink=0.8)
    return fig


def save_heatmap(values: np.ndarray, title: str, path: str | Path) -> Path:
    path = Path(path)
    fig = render_heatmap(values, title)
    try:
        with matplotlib.rc_context(SVG_RC):
            fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    logger.debug("heatmap_written", path=str(path), title=title)
    return path

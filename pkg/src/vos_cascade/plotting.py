"""Figures written next to the delimited reports."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import AUC_THRESHOLDS, EvalReport  # noqa: E402


def _finish(fig, path: Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_per_frame_j(report: EvalReport, path: str | Path) -> Path:
    """One J-versus-frame line per (sequence, object)."""
    fig, ax = plt.subplots(figsize=(7, 4))
    series: dict[tuple[str, int], list[tuple[int, float]]] = {}
    for r in report.records:
        series.setdefault((r.sequence, r.object), []).append((r.frame, r.j))
    for (seq, obj), pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], lw=1.2, label=f"{seq}/{obj}")
    ax.set_xlabel("frame")
    ax.set_ylabel("J (mask IoU)")
    ax.set_ylim(0, 1.02)
    ax.set_title(f"J mean {report.j_mean:.3f}   F mean {report.f_mean:.3f}")
    if len(series) <= 12:
        ax.legend(fontsize=7, loc="lower left")
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_success(curves: Mapping[str, np.ndarray], path: str | Path,
                 thresholds: np.ndarray = AUC_THRESHOLDS) -> Path:
    """Success plot; the legend carries each curve's AUC."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, curve in curves.items():
        ax.plot(thresholds, curve, lw=1.5, label=f"{name} [{np.mean(curve):.3f}]")
    ax.set_xlabel("overlap threshold")
    ax.set_ylabel("success rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8, loc="lower left")
    ax.grid(alpha=0.3)
    return _finish(fig, path)

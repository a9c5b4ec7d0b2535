"""Figures for the CLI reports (PNG, headless backend)."""
from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        fig.tight_layout()
        fig.savefig(tmp, format=path.suffix.lstrip(".") or "png", metadata={"Software": None})
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if tmp.exists():
            tmp.unlink()
    return path


def regret_curve(report, path: str | Path) -> Path:
    """Per-epoch cumulative regret of every run against log2 t."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for r in report.runs:
            if len(r.regret_t) > 1:
                ax.plot(r.regret_t, r.regret_curve, marker=".", lw=0.8, alpha=0.7,
                        label=f"seed {r.seed}")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("slot t")
        ax.set_ylabel("cumulative regret R(t)")
        if len(report.runs) <= 10:
            ax.legend(ncol=2)
        return _save(fig, path)


def goodput_bars(rows: Sequence[Mapping], path: str | Path, key: str = "goodput") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = [r["label"] for r in rows]
        mean = [r[f"{key}_mean"] for r in rows]
        std = [r[f"{key}_std"] for r in rows]
        x = np.arange(len(rows))
        ax.bar(x, mean, yerr=std, capsize=3, color="0.55", edgecolor="0.2")
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylabel("goodput (tokens/s)")
        return _save(fig, path)


def throughput_vs_b(sweeps: Sequence[Mapping], path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for s in sweeps:
            bs = sorted(s["curve"])
            ax.plot(bs, [s["curve"][b] for b in bs], marker="o", ms=3, lw=1,
                    label=f"seed {s['seed']}")
            ax.plot([s["tuned_b"]], [s["tuned_goodput"]], "k*", ms=8)
        ax.set_xlabel("micro-batches per SSM")
        ax.set_ylabel("goodput (tokens/s)")
        if len(sweeps) <= 10:
            ax.legend(ncol=2)
        return _save(fig, path)

"""Static SVG figures for reports."""
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from src.models.system import LinearOdeSystem, Trace  # noqa: E402

logger = logging.getLogger(__name__)

# Stable element ids so identical inputs give identical files
matplotlib.rcParams["svg.hashsalt"] = "dihrnn-monitor"


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Wrote figure {path}")
    return path


def plot_residues(
    residues: Dict[str, Sequence[float]],
    interval: Tuple[float, float],
    path: Path,
    title: str = "Robustness residue per window",
) -> Path:
    """One marker series per scenario against the calibrated band."""
    fig, ax = plt.subplots(figsize=(8, 4))
    lo, hi = interval
    ax.axhspan(lo, hi, color="tab:green", alpha=0.15, label=f"[{lo:.4g}, {hi:.4g}]")
    for name, values in residues.items():
        ax.plot(range(len(values)), values, marker="o", linestyle="-", label=name)
    ax.set_xlabel("window")
    ax.set_ylabel("residue")
    ax.set_title(title)
    if len(residues) <= 12:
        ax.legend(fontsize="x-small", loc="best")
    return _save(fig, path)


def plot_latency(rows: Sequence[Dict[str, object]], path: Path) -> Path:
    """Detection times of the coefficient monitor and the output baseline per scenario."""
    fig, ax = plt.subplots(figsize=(8, 4))
    names = [str(r["scenario"]) for r in rows]
    xs = range(len(rows))

    def times(key: str):
        return [r.get(key) if r.get(key) is not None else float("nan") for r in rows]

    ax.scatter(xs, times("detect_time"), marker="o", label="coefficients")
    ax.scatter(xs, times("baseline_detect_time"), marker="x", label="output baseline")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize="x-small")
    ax.set_ylabel("detection time")
    ax.legend(loc="best")
    fig.tight_layout()
    return _save(fig, path)


def plot_trace(trace: Trace, system: LinearOdeSystem, path: Path, offsets: Optional[Dict[str, float]] = None) -> Path:
    segment = trace.flatten()
    trajectory = segment.trajectory
    offsets = offsets or {}
    observed = [i for i, flag in enumerate(system.observable) if flag]
    fig, axes = plt.subplots(len(observed), 1, figsize=(8, 2.5 * len(observed)), squeeze=False)
    for ax, i in zip(axes[:, 0], observed):
        name = system.state_names[i]
        ax.plot(trajectory.times, trajectory.states[i] + offsets.get(name, 0.0))
        ax.set_ylabel(name)
    axes[-1, 0].set_xlabel("t")
    fig.tight_layout()
    return _save(fig, path)

"""SVG figures: target-accuracy curves and logit-space scatters.

Figures are built on bare :class:`matplotlib.figure.Figure` objects (no pyplot
state) and saved with a fixed hash salt and no date stamp, so identical inputs
give byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Sequence, Tuple

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .errors import ParameterError

_RC = {"svg.hashsalt": "chatty", "svg.fonttype": "none"}
_META = {"Date": None, "Creator": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata=_META)
    return path


def accuracy_overlay(curves: Dict[str, Tuple[Sequence[float], Sequence[float]]], path,
                     title: str = "target accuracy") -> Path:
    """One line per label; ``curves[label] = (iterations, accuracies)``."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    for label, (its, acc) in curves.items():
        ax.plot(its, acc, marker="o", markersize=3, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("target accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(title)
    if curves:
        ax.legend(loc="lower right")
    return _save(fig, path)


def principal_axes(points: np.ndarray, k: int = 2) -> np.ndarray:
    """Project onto the top ``k`` principal axes, each sign-fixed so its largest loading is positive."""
    x = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    vt = vt[:k]
    flip = np.sign(vt[np.arange(len(vt)), np.argmax(np.abs(vt), axis=1)])
    return x @ (vt * flip[:, None]).T


def project(points: np.ndarray, pca: bool = False) -> Tuple[np.ndarray, Tuple[str, str]]:
    """2-D coordinates for a logit matrix: direct for c <= 2, principal axes for c = 3 or with ``pca``."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        points = points.reshape(len(points), -1) if points.size else np.zeros((0, 2))
    c = points.shape[1]
    if c > 3 and not pca:
        raise ParameterError(f"{c} logit columns cannot be drawn directly; use --pca")
    if len(points) == 0:
        return np.zeros((0, 2)), ("logit 0", "logit 1")
    if c == 1:
        return np.column_stack([points[:, 0], np.zeros(len(points))]), ("logit 0", "")
    if c == 2 and not pca:
        return points, ("logit 0", "logit 1")
    if len(points) < 2:
        return np.zeros((len(points), 2)), ("PC 1", "PC 2")
    proj = principal_axes(points, 2)
    if proj.shape[1] < 2:
        proj = np.column_stack([proj, np.zeros(len(proj))])
    return proj, ("PC 1", "PC 2")


def logit_scatter(points, labels, path, title: str = "", pca: bool = False) -> Path:
    """Colour-per-class scatter of samples in logit space."""
    xy, (xl, yl) = project(points, pca)
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if len(labels) != len(xy):
        raise ParameterError(f"{len(xy)} points but {len(labels)} labels")
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot()
    for k in np.unique(labels):
        sel = labels == k
        ax.scatter(xy[sel, 0], xy[sel, 1], s=6, label=f"class {k}")
    ax.set_xlabel(xl)
    ax.set_ylabel(yl)
    ax.set_title(title)
    if len(labels):
        ax.legend(loc="best", markerscale=2)
    return _save(fig, path)

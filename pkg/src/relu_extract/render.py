"""Pictures of neuron boundaries for two-input networks."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage.measure import find_contours

from .network import NeuronId, Network, ShapeError

logger = logging.getLogger(__name__)

LAYER_COLORS = ["tab:blue", "tab:red", "tab:green", "tab:purple", "tab:orange"]


@dataclass
class Polyline:
    neuron: NeuronId
    points: np.ndarray   # (k, 2) input-space coordinates


def _preact(net: Network, z: NeuronId, X: np.ndarray) -> np.ndarray:
    return net.hidden_preactivations(X)[z.layer - 1][..., z.index]


def trace_boundaries(net: Network, bbox=(-1.0, 1.0, -1.0, 1.0), resolution: int = 512,
                     tol_rel: float = 1e-6) -> list[Polyline]:
    """Zero sets of every hidden neuron inside ``bbox = (xmin, xmax, ymin, ymax)``.

    Sign changes on a ``resolution x resolution`` grid are contoured by marching
    squares; each vertex is then moved onto the exact zero by bisection along
    its grid edge, to ``tol_rel`` of the box size.
    """
    if net.n_in != 2:
        raise ShapeError(f"boundary drawings need 2 inputs, network has {net.n_in}")
    xmin, xmax, ymin, ymax = map(float, bbox)
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    gx, gy = np.meshgrid(xs, ys)          # rows follow y, columns follow x
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    pre = net.hidden_preactivations(grid)
    tol = tol_rel * max(xmax - xmin, ymax - ymin)
    out = []
    for k, layer_pre in enumerate(pre, start=1):
        for j in range(layer_pre.shape[1]):
            field_ = layer_pre[:, j].reshape(resolution, resolution)
            if field_.min() > 0 or field_.max() < 0:
                continue
            z = NeuronId(k, j)
            for c in find_contours(field_, 0.0):
                pts = np.column_stack([np.interp(c[:, 1], np.arange(resolution), xs),
                                       np.interp(c[:, 0], np.arange(resolution), ys)])
                out.append(Polyline(z, _refine(net, z, c, xs, ys, pts, tol)))
    return out


def _refine(net, z, c, xs, ys, pts, tol):
    """Bisect each contour vertex along the grid edge it sits on."""
    r, col = c[:, 0], c[:, 1]
    on_col = np.isclose(col, np.round(col))      # vertex on a vertical grid line: bracket in y
    lo = pts.copy()
    hi = pts.copy()
    n = len(xs) - 1
    r0, r1 = np.clip(np.floor(r), 0, n).astype(int), np.clip(np.ceil(r), 0, n).astype(int)
    c0, c1 = np.clip(np.floor(col), 0, n).astype(int), np.clip(np.ceil(col), 0, n).astype(int)
    lo[on_col, 1], hi[on_col, 1] = ys[r0[on_col]], ys[r1[on_col]]
    lo[~on_col, 0], hi[~on_col, 0] = xs[c0[~on_col]], xs[c1[~on_col]]
    flo = _preact(net, z, lo)
    degenerate = np.linalg.norm(hi - lo, axis=1) == 0
    while np.linalg.norm(hi - lo, axis=1).max() > tol:
        mid = 0.5 * (lo + hi)
        fm = _preact(net, z, mid)
        left = np.sign(fm) == np.sign(flo)
        lo = np.where(left[:, None], mid, lo)
        flo = np.where(left, fm, flo)
        hi = np.where(left[:, None], hi, mid)
    refined = 0.5 * (lo + hi)
    refined[degenerate] = pts[degenerate]
    return refined


def write_svg(polylines: list[Polyline], bbox, path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    for pl in polylines:
        ax.plot(pl.points[:, 0], pl.points[:, 1], color=LAYER_COLORS[(pl.neuron.layer - 1) % len(LAYER_COLORS)],
                linewidth=1.0)
    ax.set_xlim(bbox[0], bbox[1])
    ax.set_ylim(bbox[2], bbox[3])
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def write_csv(polylines: list[Polyline], path) -> Path:
    """One row per vertex: polyline id, layer, neuron, x, y."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["polyline", "layer", "neuron", "x", "y"])
        for i, pl in enumerate(polylines):
            for x, y in pl.points:
                w.writerow([i, pl.neuron.layer, pl.neuron.index, repr(float(x)), repr(float(y))])
    return path


def render_boundaries_2d(net: Network, bbox=(-1.0, 1.0, -1.0, 1.0), resolution: int = 512,
                         out_prefix="boundaries") -> tuple[Path, Path, list[Polyline]]:
    """Trace all boundaries and write ``<prefix>.svg`` and ``<prefix>.csv``."""
    lines = trace_boundaries(net, bbox, resolution)
    logger.info("%d polylines for %d hidden neurons", len(lines), sum(net.hidden_widths))
    return write_svg(lines, bbox, f"{out_prefix}.svg"), write_csv(lines, f"{out_prefix}.csv"), lines

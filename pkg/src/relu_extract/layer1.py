"""First-layer recovery: whole hyperplanes in the boundary set are first-layer neurons."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import LayerEstimate
from .oracle import BudgetExhausted, Oracle
from .probe import (BoundaryPoint, DegenerateFit, Hyperplane, ProbeConfig, fit_hyperplane,
                    infer_hyperplane, points_on_line, sample_segment, test_hyperplane_detail)

logger = logging.getLogger(__name__)


class UnderRecoveryWarning(UserWarning):
    pass


@dataclass
class Layer1Config:
    max_segments: int = 200
    target: int | None = None     # stop once this many neurons are found
    patience: int = 20            # without a target: stop after this many segments with no new neuron
    probe: ProbeConfig = field(default_factory=ProbeConfig)


def _on_known_plane(x: np.ndarray, planes: list[Hyperplane], tol: float) -> bool:
    return any(abs(pl.signed_distance(x)) <= tol * (1 + np.linalg.norm(x)) for pl in planes)


def estimate_from_planes(planes: list[Hyperplane], provenance: list, n_in: int, layer: int = 1) -> LayerEstimate:
    w = np.array([pl.normal for pl in planes]).T.reshape(n_in, len(planes))
    b = np.array([pl.offset for pl in planes])
    return LayerEstimate(layer, w, b, np.zeros(len(planes), dtype=bool), provenance)


def recover_layer1(oracle: Oracle, config: Layer1Config | None = None,
                   rng: np.random.Generator | int = 0) -> tuple[LayerEstimate, list[BoundaryPoint]]:
    """Harvest boundary points from random segments and keep the ones whose local hyperplane is global.

    Returns the layer estimate (signs unresolved) and the unused points, each
    with its fitted local hyperplane.  On budget exhaustion the partial result
    is attached to the exception as ``exc.partial``.
    """
    cfg = config or Layer1Config()
    pc = cfg.probe
    rng = np.random.default_rng(rng)
    planes: list[Hyperplane] = []
    provenance: list[list[BoundaryPoint]] = []
    unused: list[BoundaryPoint] = []
    idle = 0
    try:
        for seg_no in range(cfg.max_segments):
            seg = sample_segment(rng, pc.radius, pc.length, oracle.input_dim)
            new_here = 0
            for p in points_on_line(oracle, seg, pc.tol_flat, pc.tol_point_rel, pc.coarse_rel):
                if _on_known_plane(p.point, planes, pc.tol_on_plane):
                    provenance[_which_plane(p.point, planes)].append(p)
                    continue
                try:
                    plane = infer_hyperplane(oracle, p, rng, pc)
                except DegenerateFit as exc:
                    logger.debug("dropping point: %s", exc)
                    continue
                ok, far = test_hyperplane_detail(oracle, p, plane, rng, pc)
                if not ok:
                    unused.append(p)
                    continue
                refit, _ = fit_hyperplane(np.vstack([p.support, far]))
                dup = next((i for i, pl in enumerate(planes) if pl.same_as(refit)), None)
                if dup is not None:
                    provenance[dup].append(p)
                    continue
                planes.append(refit)
                provenance.append([p])
                new_here += 1
                logger.debug("layer 1: neuron %d found on segment %d (%d queries)",
                             len(planes), seg_no, oracle.query_count)
                if cfg.target is not None and len(planes) >= cfg.target:
                    return estimate_from_planes(planes, provenance, oracle.input_dim), unused
            idle = 0 if new_here else idle + 1
            if cfg.target is None and planes and idle >= cfg.patience:
                break
    except BudgetExhausted as exc:
        exc.partial = (estimate_from_planes(planes, provenance, oracle.input_dim), unused)
        raise
    if cfg.target is not None and len(planes) < cfg.target:
        warnings.warn(f"found {len(planes)} of {cfg.target} first-layer neurons after "
                      f"{cfg.max_segments} segments", UnderRecoveryWarning, stacklevel=2)
    return estimate_from_planes(planes, provenance, oracle.input_dim), unused


def _which_plane(x, planes) -> int:
    return int(np.argmin([abs(pl.signed_distance(x)) for pl in planes]))

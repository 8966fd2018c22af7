"""Recovery of layers beyond the first by walking bent boundaries across known boundaries.

For a candidate neuron ``z`` whose boundary passes through a point with a
known local hyperplane, the walk moves inside that hyperplane to the nearest
known boundary, checks that ``z``'s boundary really reaches it, and measures how
the boundary bends on the far side.  The size of the bend across the boundary
of a neuron ``h`` in the previous layer is the weight from ``h`` to ``z``.

Notation used in the code: ``g`` is a known neuron's preactivation as computed
from the recovered prefix, ``G`` is the running estimate of ``grad z`` (one
arbitrary global sign and scale per candidate), ``u`` the recovered incoming
weights in that same scale.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .layer1 import Layer1Config, recover_layer1
from .model import LayerEstimate, RecoveredModel
from .network import NeuronId
from .oracle import BudgetExhausted, Oracle
from .probe import (BoundaryPoint, DegenerateFit, Hyperplane, ProbeConfig, Segment, infer_hyperplane,
                    points_on_line, sample_segment)

logger = logging.getLogger(__name__)


class GeometryInconsistency(RuntimeError):
    """Redundant measurements of the same weight disagree."""


class UnresolvedSigns(RuntimeError):
    def __init__(self, neurons: list[int], message: str = ""):
        super().__init__(message or f"signs of neurons {neurons} are not constrained")
        self.neurons = neurons


# -- known prefix ------------------------------------------------------------

class KnownPrefix:
    """Recovered layers ``1..k-1``; every layer but the last has resolved signs."""

    def __init__(self, n_in: int, layers: list[LayerEstimate]):
        self.n_in = n_in
        self.layers = layers
        self.neurons = [NeuronId(L.layer, j) for L in layers for j in range(L.width)]
        self._offsets = np.cumsum([0] + [L.width for L in layers])

    @property
    def next_layer(self) -> int:
        return len(self.layers) + 1

    @property
    def last(self) -> LayerEstimate:
        return self.layers[-1]

    def flat_index(self, z: NeuronId) -> int:
        return int(self._offsets[z.layer - 1] + z.index)

    def affine(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values and gradients (``n_in x n_known``) of every known preactivation, linearized at ``x``."""
        h = np.asarray(x, dtype=np.float64)
        jac = np.eye(self.n_in)
        vals, grads = [], []
        for idx, L in enumerate(self.layers):
            w = np.where(L.missing, 0.0, L.weights)
            g = h @ w + L.biases
            grad = jac @ w
            vals.append(g)
            grads.append(grad)
            if idx < len(self.layers) - 1:
                act = g > 0
                h = np.where(act, g, 0.0)
                jac = grad * act
        return np.concatenate(vals), np.hstack(grads)

    def last_layer_affine(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vals, grads = self.affine(x)
        lo = self._offsets[-2]
        return vals[lo:], grads[:, lo:]

    def last_layer_values(self, X: np.ndarray) -> np.ndarray:
        """Batched preactivations of the last known layer."""
        h = np.asarray(X, dtype=np.float64)
        for idx, L in enumerate(self.layers):
            g = h @ np.where(L.missing, 0.0, L.weights) + L.biases
            if idx == len(self.layers) - 1:
                return g
            h = np.maximum(g, 0.0)
        raise ValueError("empty prefix")

    def feeding_last(self, X: np.ndarray) -> np.ndarray:
        """Batched activations that feed the last known layer (the input itself for layer 1)."""
        h = np.asarray(X, dtype=np.float64)
        for L in self.layers[:-1]:
            h = np.maximum(h @ np.where(L.missing, 0.0, L.weights) + L.biases, 0.0)
        return h

    def pattern(self, x: np.ndarray) -> tuple[bool, ...]:
        return tuple(bool(v > 0) for v in self.affine(x)[0])

    def boundary_distances(self, x: np.ndarray) -> np.ndarray:
        vals, grads = self.affine(x)
        norms = np.linalg.norm(grads, axis=0)
        with np.errstate(divide="ignore"):
            return np.where(norms > 0, np.abs(vals) / norms, np.inf)


def closest_boundary(prefix: KnownPrefix, p: np.ndarray, v: np.ndarray) -> tuple[float, NeuronId] | None:
    """Smallest ``c > 0`` such that ``p + c v`` is on a known boundary, using the affine pieces at ``p``."""
    vals, grads = prefix.affine(p)
    rate = v @ grads
    with np.errstate(divide="ignore", invalid="ignore"):
        c = -vals / rate
    c = np.where((rate != 0) & (c > 1e-12 * (1 + np.linalg.norm(p))), c, np.inf)
    j = int(np.argmin(c))
    if not np.isfinite(c[j]):
        return None
    return float(c[j]), prefix.neurons[j]


# -- exploration state -------------------------------------------------------

@dataclass
class ExplorePoint:
    x: np.ndarray
    normal: np.ndarray
    G: np.ndarray                    # gradient estimate of z here, in the candidate's common scale
    pattern: tuple[bool, ...]
    pred: int | None = None
    crossed: NeuronId | None = None
    crossing: np.ndarray | None = None


@dataclass
class Crossing:
    src: int
    dst: int
    neuron: NeuronId
    point: np.ndarray
    w: float                         # bend coefficient of the neuron's gradient
    side: float                      # sign of the crossed preactivation on the dst side
    residual: float


@dataclass
class ExplorationState:
    points: list[ExplorePoint]
    crossings: list[Crossing] = field(default_factory=list)
    crossed: set = field(default_factory=set)      # previous-layer neurons whose boundary was crossed
    verdict: str = "running"                        # complete | partial | deeper
    steps: int = 0
    cycle_residuals: list[float] = field(default_factory=list)
    closest_boundary_calls: int = 0


@dataclass
class ExploreConfig:
    max_steps_factor: int = 50
    cross_radius_rel: float = 1e-3      # chord radius around a crossing, relative to probe radius
    rep_distance: float = 1.0           # cap on how far into a new region the representative point sits
    consistency_tol: float = 1e-4
    max_reach_rel: float = 100.0        # walls farther than this times the probe radius count as no hit
    heuristic: str = "closest"          # or "random"
    random_tries: int = 10
    probe: ProbeConfig = field(default_factory=ProbeConfig)


def _steer(prefix: KnownPrefix, P: ExplorePoint, d: np.ndarray, grads: np.ndarray, blocked: set):
    """Project ``d`` into P's local hyperplane and, while the first wall hit is a known fold,
    also parallel to that wall.  Returns the unit direction or None."""
    basis = [P.normal]
    while len(basis) < prefix.n_in:
        Q, _ = np.linalg.qr(np.column_stack(basis))
        v = d - Q @ (Q.T @ d)
        nv = np.linalg.norm(v)
        if nv < 1e-12 * max(1.0, np.linalg.norm(d)):
            return None
        v /= nv
        if not blocked:
            return v
        hit = closest_boundary(prefix, P.x, v)
        if hit is None or (P.pattern, hit[1]) not in blocked:
            return v
        basis.append(grads[:, prefix.flat_index(hit[1])])
    return None


def choose_direction(state: ExplorationState, prefix: KnownPrefix, targets, tried: set,
                     blocked: dict | None = None):
    """For each point and missing target, steer inside the local hyperplane straight at the
    target's boundary (as it would be under the point's activation pattern); return the
    (point index, direction, target, distance) with the smallest distance, or None.

    ``blocked[h]`` holds (pattern, wall) pairs where the boundary folds back
    with respect to target ``h``; such walls are followed instead of crossed.
    """
    best = None
    blocked = blocked or {}
    lo = prefix._offsets[-2]
    for i, P in enumerate(state.points):
        vals, grads = prefix.affine(P.x)
        for h in targets:
            if (i, h) in tried:
                continue
            col = lo + h.index
            d = grads[:, col]
            d_t = d - (d @ P.normal) * P.normal
            nt = np.linalg.norm(d_t)
            if nt < 1e-12 * max(1.0, np.linalg.norm(d)):
                continue
            dist = abs(vals[col]) / nt
            if best is not None and dist >= best[3]:
                continue
            v = _steer(prefix, P, -np.sign(vals[col]) * d, grads, blocked.get(h, set()))
            if v is not None:
                best = (i, v, h, dist)
    return best


def _folds(prefix: KnownPrefix, A: ExplorePoint, B: ExplorePoint, wall: NeuronId, h: NeuronId) -> bool:
    """After crossing ``wall`` from A to B heading for ``h``: does B's own heading lead straight back?"""
    vals, grads = prefix.affine(B.x)
    d = -np.sign(vals[prefix.flat_index(h)]) * grads[:, prefix.flat_index(h)]
    d_t = d - (d @ B.normal) * B.normal
    col = prefix.flat_index(wall)
    return bool(np.sign(prefix.affine(A.x)[0][col]) * (grads[:, col] @ d_t) > 0)


def _on_plane_hit(oracle, center, normal, ref_point, half, tol, pc: ProbeConfig):
    """Crossing closest to the plane (ref_point, normal) along a transversal segment, if within tol."""
    seg = Segment(center - half * normal, center + half * normal)
    pts = points_on_line(oracle, seg, pc.tol_flat, pc.tol_point_rel, pc.coarse_rel)
    if not pts:
        return None
    best = min(pts, key=lambda q: abs((q.point - ref_point) @ normal))
    return best.point if abs((best.point - ref_point) @ normal) <= tol else None


def _reaches(oracle, P: ExplorePoint, p_prime, v, c, pc: ProbeConfig) -> bool:
    """Does the boundary still follow P's local hyperplane just before the wall at ``p_prime``?"""
    delta = min(0.25 * c, pc.local_radius)
    x_pre = p_prime - delta * v
    tol = pc.tol_on_plane * max(1.0, c)
    return _on_plane_hit(oracle, x_pre, P.normal, P.x, pc.local_radius, tol, pc) is not None


CHORD_SPLIT = 0.5 * np.pi + 0.0371


def _cross(oracle, prefix: KnownPrefix, P: ExplorePoint, p_prime, wall: NeuronId, rng, cfg: ExploreConfig):
    """Find the boundary's continuation on the far side of ``wall`` and its new local hyperplane.

    Returns (point on the boundary inside the new region, fitted hyperplane) or None.
    """
    pc = cfg.probe
    col = prefix.flat_index(wall)
    vals, grads = prefix.affine(P.x)
    a = grads[:, col]
    s0 = np.sign(vals[col])
    e1 = P.normal
    a_perp = a - (a @ e1) * e1
    if np.linalg.norm(a_perp) < 1e-12 * np.linalg.norm(a):
        return None
    e2 = -s0 * a_perp / np.linalg.norm(a_perp)       # in-plane, pointing across the wall
    # 2-D picture at p': wall line has normal (a.e1, a.e2) in (e1, e2) coordinates
    alpha, beta = a @ e1, a @ e2
    nrm = np.hypot(alpha, beta)
    N = -s0 * (alpha * e1 + beta * e2) / nrm         # unit normal of the wall line, into the new side
    u = (-beta * e1 + alpha * e2) / nrm              # direction along the wall line
    other = np.delete(prefix.boundary_distances(p_prime), col)
    margin = float(other.min()) if other.size else np.inf
    delta = min(cfg.cross_radius_rel * pc.radius, 0.3 * margin)
    th = 1e-3
    phi = CHORD_SPLIT                                # off the wall normal: a straight-on continuation is common
    A = p_prime + delta * (np.cos(th) * u + np.sin(th) * N)
    C = p_prime + delta * (np.cos(phi) * u + np.sin(phi) * N)
    B = p_prime + delta * (-np.cos(th) * u + np.sin(th) * N)
    kinks = []
    for seg in (Segment(A, C), Segment(C, B)):
        kinks += [q.point for q in points_on_line(oracle, seg, pc.tol_flat, pc.tol_point_rel, pc.coarse_rel)]
    if not kinks:
        logger.debug("cross %s: no crossing on the chords (delta=%.2e)", wall, delta)
        return None
    # the continuation is the kink whose direction from p' is closest to straight on
    dirs = [(k - p_prime) / np.linalg.norm(k - p_prime) for k in kinks]
    r = max(dirs, key=lambda d: d @ e2)
    r1, r2 = r @ e1, r @ e2
    n_s = -r2 * e1 + r1 * e2
    n_s /= np.linalg.norm(n_s)

    # representative point well inside the new region
    x_in = p_prime + 0.5 * delta * r
    nxt = closest_boundary(prefix, x_in, r)
    reach = nxt[0] + 0.5 * delta if nxt else np.inf
    d_s = min(0.5 * reach, cfg.rep_distance)
    guess = p_prime + d_s * r
    margin_s = float(prefix.boundary_distances(guess).min())
    half = min(pc.local_radius, 0.3 * margin_s)
    p_s = _on_plane_hit(oracle, guess, n_s, p_prime, half, pc.tol_on_plane * max(1.0, d_s), pc)
    if p_s is None:
        logger.debug("cross %s: boundary not found at the representative point (d=%.2e)", wall, d_s)
        return None
    try:
        plane = infer_hyperplane(oracle, p_s, rng, pc, radius=min(pc.local_radius, 0.3 * margin_s))
    except DegenerateFit:
        logger.debug("cross %s: degenerate fit at the representative point", wall)
        return None
    if abs(plane.normal @ n_s) < 1 - 1e-6:
        logger.debug("cross %s: fitted normal disagrees with chord estimate (cos %.8f)", wall, plane.normal @ n_s)
        return None
    return p_s, plane


def explore_boundary(oracle: Oracle, prefix: KnownPrefix, p1: BoundaryPoint,
                     rng: np.random.Generator, cfg: ExploreConfig | None = None) -> ExplorationState:
    """Walk the boundary through ``p1`` across the known boundaries until every previous-layer
    boundary has been crossed, the boundary turns out to belong to a deeper layer, or the step
    budget runs out."""
    cfg = cfg or ExploreConfig()
    pc = cfg.probe
    if p1.local_hyperplane is None:
        infer_hyperplane(oracle, p1, rng, pc)
    n1 = p1.local_hyperplane.normal
    state = ExplorationState([ExplorePoint(p1.point, n1, n1.copy(), prefix.pattern(p1.point))])
    k_prev = prefix.last.layer
    targets_all = [NeuronId(k_prev, j) for j in range(prefix.last.width)]
    visited = {state.points[0].pattern: 0}
    tried: set = set()
    blocked: dict = {}
    max_steps = cfg.max_steps_factor * len(targets_all)
    random_left = cfg.random_tries if cfg.heuristic == "closest" else max_steps

    while state.steps < max_steps:
        missing = [h for h in targets_all if h not in state.crossed]
        if not missing:
            break
        state.steps += 1
        choice = choose_direction(state, prefix, missing, tried, blocked) if cfg.heuristic == "closest" else None
        if choice is None:
            if random_left == 0:
                break
            random_left -= 1
            i = int(rng.integers(len(state.points)))
            P = state.points[i]
            v = rng.normal(size=prefix.n_in)
            v -= (v @ P.normal) * P.normal
            v /= np.linalg.norm(v)
            key = None
        else:
            i, v, h, _ = choice
            key = (i, h)
        P = state.points[i]
        state.closest_boundary_calls += 1
        hit = closest_boundary(prefix, P.x, v)
        if hit is None or hit[0] > cfg.max_reach_rel * pc.radius:
            if key:
                tried.add(key)
            continue
        c, wall = hit
        p_prime = P.x + c * v
        if not _reaches(oracle, P, p_prime, v, c, pc):
            state.verdict = "deeper"
            return state
        res = _cross(oracle, prefix, P, p_prime, wall, rng, cfg)
        if res is None:
            if key:
                tried.add(key)
            continue
        p_s, plane = res
        pattern = prefix.pattern(p_s)
        col = prefix.flat_index(wall)
        diff = [j for j, (x, y) in enumerate(zip(pattern, P.pattern)) if x != y]
        if diff != [col]:
            logger.debug("step %d: crossing %s changed pattern bits %s", state.steps, wall, diff)
            if key:
                tried.add(key)
            continue
        vals, grads = prefix.affine(p_prime)
        a = grads[:, col]
        n_s = plane.normal
        M = np.column_stack([n_s, -a])
        (cs, w), *_ = np.linalg.lstsq(M, P.G, rcond=None)
        resid = float(np.linalg.norm(M @ np.array([cs, w]) - P.G) / np.linalg.norm(P.G))
        if resid > cfg.consistency_tol:
            logger.debug("step %d: crossing %s inconsistent (residual %.2e)", state.steps, wall, resid)
            if key:
                tried.add(key)
            continue
        G_s = cs * n_s
        side = float(np.sign(prefix.affine(p_s)[0][col]))
        if pattern in visited:
            # same region reached another way: the gradient estimates must agree
            j = visited[pattern]
            state.cycle_residuals.append(float(np.linalg.norm(G_s - state.points[j].G) / np.linalg.norm(G_s)))
            if key:
                tried.add(key)
        else:
            visited[pattern] = len(state.points)
        # kept even in a visited region: a new location gives new directions to try
        state.points.append(ExplorePoint(p_s, n_s, G_s, pattern, i, wall, p_prime))
        dst = len(state.points) - 1
        state.crossings.append(Crossing(i, dst, wall, p_prime, float(w), side, resid))
        if key and _folds(prefix, P, state.points[dst], wall, key[1]):
            blocked.setdefault(key[1], set()).update({(P.pattern, wall), (pattern, wall)})
        if wall.layer == k_prev:
            state.crossed.add(wall)

    state.verdict = "complete" if len(state.crossed) == len(targets_all) else "partial"
    return state


# -- weights and signs -------------------------------------------------------

@dataclass
class NeuronRecovery:
    """Incoming weights of one candidate neuron, in the scale set by its first point."""

    u: np.ndarray
    missing: np.ndarray
    state: ExplorationState
    bias: float | None = None
    spread: float = 0.0

    @property
    def points(self) -> list[ExplorePoint]:
        return self.state.points


def recover_weights_for_neuron(state: ExplorationState, prefix: KnownPrefix,
                               consistency_tol: float = 1e-4) -> NeuronRecovery:
    """Collect the bend measurements into incoming weights, up to one sign for the neuron.

    Crossing the boundary of previous-layer neuron ``h`` changes the gradient by
    ``w * grad g_h``; the weight on ``relu(t_h g_h)`` is ``w`` times the sign of
    ``g_h`` on the far side, independent of the unknown ``t_h``.
    """
    k_prev = prefix.last.layer
    n_prev = prefix.last.width
    meas: dict[int, list[float]] = {}
    for cr in state.crossings:
        if cr.neuron.layer == k_prev:
            meas.setdefault(cr.neuron.index, []).append(cr.w * cr.side)
    u = np.zeros(n_prev)
    missing = np.ones(n_prev, dtype=bool)
    spread = 0.0
    # spreads are judged against the gradient size, so near-zero weights do not inflate them
    scale = max(max((abs(m) for ms in meas.values() for m in ms), default=0.0),
                max(float(np.linalg.norm(P.G)) for P in state.points))
    for h, ms in meas.items():
        ms = np.array(ms)
        u[h] = ms.mean()
        missing[h] = False
        spread = max(spread, float(np.ptp(ms)) / scale)
    if spread > consistency_tol:
        raise GeometryInconsistency(f"redundant weight measurements disagree (relative spread {spread:.2e})")
    return NeuronRecovery(u, missing, state, spread=spread)


def sign_system(recoveries: list[NeuronRecovery], prefix: KnownPrefix):
    """Linear system in the previous layer's signs ``t`` (plus one unknown per missing weight).

    At every explored point ``p``:  sum_i u_i (t_i + s_i(p)) grad g_i(p) / 2 = G(p),
    with ``s_i(p)`` the side of ``p`` w.r.t. neuron ``i`` as currently oriented.
    """
    n_prev = prefix.last.width
    extra = [(r_idx, i) for r_idx, rec in enumerate(recoveries) for i in np.flatnonzero(rec.missing)]
    cols = n_prev + len(extra)
    rows_A, rows_b = [], []
    for r_idx, rec in enumerate(recoveries):
        u = rec.u
        for P in rec.points:
            vals, grads = prefix.last_layer_affine(P.x)
            s = np.sign(vals)
            A = np.zeros((prefix.n_in, cols))
            A[:, :n_prev] = 0.5 * grads * np.where(rec.missing, 0.0, u)
            for e, (ri, i) in enumerate(extra):
                if ri == r_idx:
                    A[:, n_prev + e] = grads[:, i]
            rhs = P.G - 0.5 * grads @ np.where(rec.missing, 0.0, u * s)
            rows_A.append(A)
            rows_b.append(rhs)
    return np.vstack(rows_A), np.concatenate(rows_b), extra


def resolve_signs(recoveries: list[NeuronRecovery], prefix: KnownPrefix) -> tuple[np.ndarray, float]:
    """Solve the overconstrained sign system by least squares and round to +-1.

    Returns the signs of the previous layer and the relative residual of the rounded solution.
    """
    n_prev = prefix.last.width
    if not recoveries:
        raise UnresolvedSigns(list(range(n_prev)), "no recovered neurons to constrain the signs")
    A, b, extra = sign_system(recoveries, prefix)
    col_norm = np.linalg.norm(A, axis=0)
    unconstrained = [i for i in range(n_prev) if col_norm[i] == 0]
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    # columns in the numerical null space are not determined
    _, sv, vt = np.linalg.svd(A / np.where(col_norm > 0, col_norm, 1.0), full_matrices=False)
    null = vt[sv < 1e-8 * sv[0]] if sv.size else np.empty((0, A.shape[1]))
    weak = {i for i in range(n_prev) if null.size and np.abs(null[:, i]).max() > 1e-3}
    t_raw = sol[:n_prev]
    ambiguous = [i for i in range(n_prev) if abs(t_raw[i]) < 0.5]
    bad = sorted(set(unconstrained) | weak | set(ambiguous))
    if bad:
        raise UnresolvedSigns(bad)
    t = np.sign(t_raw)
    sol_r = sol.copy()
    sol_r[:n_prev] = t
    if extra:
        # re-fit the free coefficients with the rounded signs fixed
        rest = A[:, n_prev:]
        sol_r[n_prev:], *_ = np.linalg.lstsq(rest, b - A[:, :n_prev] @ t, rcond=None)
    resid = float(np.linalg.norm(A @ sol_r - b) / max(np.linalg.norm(b), 1e-300))
    return t, resid


def neuron_bias(rec: NeuronRecovery, prefix: KnownPrefix, t_prev: np.ndarray) -> float:
    """Bias that puts every explored point on the boundary, given resolved previous-layer signs.

    A missing weight's neuron never changes side along the explored boundary, so
    its contribution is the free coefficient fitted in the sign system times its
    preactivation; with no such coefficient available it is taken as zero.
    """
    extra_coef = getattr(rec, "extra_coef", {})
    vals = []
    for P in rec.points:
        g = prefix.last_layer_affine(P.x)[0] * t_prev
        total = float(np.where(rec.missing, 0.0, rec.u) @ np.maximum(g, 0.0))
        for i, q in extra_coef.items():
            # q multiplies the unflipped preactivation
            total += q * g[i] * t_prev[i]
        vals.append(-total)
    return float(np.mean(vals))


def _solve_pm1(A: np.ndarray, b: np.ndarray, max_enumerate: int = 20):
    """Sign vector ``t`` in {-1, +1}^n minimising ``|A t - b|``.

    Least squares first; coordinates it leaves undetermined (null space of
    ``A``) are settled by enumeration when there are few enough of them.
    Returns (t, determined mask).
    """
    n = A.shape[1]
    live = np.linalg.norm(A, axis=0) > 0
    t = np.ones(n)
    det = np.zeros(n, dtype=bool)
    if not live.any():
        return t, det
    Al = A[:, live]
    sol, *_ = np.linalg.lstsq(Al, b, rcond=None)
    _, sv, vt = np.linalg.svd(Al, full_matrices=True)
    rank = int((sv > 1e-9 * sv[0]).sum())
    null = vt[rank:]
    free = np.abs(null).max(axis=0) > 1e-6 if null.size else np.zeros(Al.shape[1], dtype=bool)
    tl = np.where(sol < 0, -1.0, 1.0)
    detl = ~free & (np.abs(sol) > 0.5)
    if free.any() and free.sum() <= max_enumerate:
        idx = np.flatnonzero(free)
        base = b - Al[:, ~free] @ tl[~free]
        codes = np.arange(2 ** len(idx))
        signs = 1.0 - 2.0 * ((codes[:, None] >> np.arange(len(idx))) & 1)
        res = np.linalg.norm(signs @ Al[:, idx].T - base, axis=1)
        order = np.argsort(res)
        best = res[order[0]]
        second = res[order[1]] if len(order) > 1 else np.inf
        if second > 1e3 * max(best, 1e-12 * np.linalg.norm(b)):
            tl[idx] = signs[order[0]]
            detl[idx] = True
    t[live] = tl
    det[live] = detl
    return t, det


def recover_output_layer(oracle: Oracle, prefix: KnownPrefix, rng: np.random.Generator,
                         radius: float = 10.0, n_samples: int | None = None, resid_tol: float = 1e-6):
    """Output layer and last-hidden-layer signs from one regression.

    With ``h`` the activations feeding the last hidden layer and
    ``g = h W + b``, ``relu(t g) = (t g + |g|) / 2``.  Regressing the outputs on
    ``|g|``, ``h`` and 1 gives the output weights ``V`` (from ``|g|``) and
    ``sum_j t_j V_j W_j`` (from ``h``), a linear system for the signs.
    Each neuron also contributes a pair of points straddling its boundary.
    A last-layer neuron that never switches inside the sample (not found, since
    its boundary is never seen) adds a term linear in ``h`` that no sign choice
    explains; when the fitted signs leave a residual above ``resid_tol`` no
    sign is reported resolved.
    Returns (signs, output weights, output biases, relative residual, resolved mask).
    """
    n_d = prefix.last.width
    m = n_samples or max(200, 4 * (2 * n_d + prefix.n_in + 1))
    u = rng.normal(size=(m, prefix.n_in))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    X = [u * (radius * rng.random(m) ** (1.0 / prefix.n_in))[:, None]]
    for j, prov in enumerate(prefix.last.neuron_provenance):
        if not len(prov):
            continue
        x = np.asarray(getattr(prov[0], "point", prov[0]), dtype=np.float64)
        vals, grads = prefix.last_layer_affine(x)
        gj = grads[:, j] / np.linalg.norm(grads[:, j])
        dist = np.delete(prefix.boundary_distances(x), prefix.flat_index(NeuronId(prefix.last.layer, j)))
        eps = min(0.1, 0.5 * float(dist.min())) if dist.size else 0.1
        X.append(np.array([x + eps * gj, x - eps * gj]))
    X = np.vstack(X)
    Y = np.array([oracle.query(x) for x in X])
    H = prefix.feeding_last(X)
    L = prefix.last
    W = np.where(L.missing, 0.0, L.weights)
    g = H @ W + L.biases
    F = np.hstack([np.abs(g), H, np.ones((len(X), 1))])
    coef, *_ = np.linalg.lstsq(F, Y, rcond=None)
    _, sv, vt = np.linalg.svd(F, full_matrices=True)
    rank = int((sv > 1e-10 * sv[0]).sum())
    undetermined = np.abs(vt[rank:]).max(axis=0) > 1e-6 if rank < F.shape[1] else np.zeros(F.shape[1], dtype=bool)
    if rank < F.shape[1]:
        logger.info("output regression is rank deficient (%d of %d)", rank, F.shape[1])
    V = 2 * coef[:n_d]
    lin = 2 * coef[n_d:-1]                       # sum_j t_j V_j W_j, per output
    # an input never active in the sample gives no equation
    rows = ~undetermined[n_d:-1]
    A = np.einsum("rj,jo->orj", W[rows], V).reshape(-1, n_d)
    t, resolved = _solve_pm1(A, lin[rows].T.reshape(-1))
    strength = np.linalg.norm(V, axis=1)
    resolved &= (strength > 1e-9 * max(strength.max(), 1e-300)) & ~undetermined[:n_d]
    const = coef[-1] - 0.5 * (t * L.biases) @ V
    pred = np.maximum(g * t, 0.0) @ V + const
    resid = float(np.abs(pred - Y).max() / max(np.abs(Y).max(), 1e-300))
    if resid > resid_tol:
        logger.warning("output regression residual %.2e: a missing neuron acts linearly here, signs unresolved", resid)
        resolved[:] = False
    return t, V, const, resid, resolved


# -- layer driver ------------------------------------------------------------

@dataclass
class ExtractionConfig:
    widths_hint: list[int] | None = None      # hidden widths, when known
    max_layers: int | None = None             # stop after this many hidden layers
    layer1: Layer1Config = field(default_factory=Layer1Config)
    explore: ExploreConfig = field(default_factory=ExploreConfig)
    harvest_segments: int = 100               # per deeper layer
    patience: int = 30                        # candidates without a new neuron before giving up
    recover_output: bool = True
    seed: int = 0

    def __post_init__(self):
        # one probe config shared by every stage
        self.explore.probe = self.layer1.probe


def _is_member(p: np.ndarray, recs: list[NeuronRecovery], prefix: KnownPrefix, t_prev, tol) -> bool:
    """Does ``p`` lie on the boundary of an already recovered neuron?"""
    if t_prev is None:
        pat = prefix.pattern(p)
        for rec in recs:
            for P in rec.points:
                if P.pattern == pat and abs((p - P.x) @ P.normal) <= tol * (1 + np.linalg.norm(p)):
                    return True
        return False
    vals, grads = prefix.last_layer_affine(p)
    g = vals * t_prev
    act = g > 0
    for rec in recs:
        if rec.bias is None:
            continue
        u = np.where(rec.missing, 0.0, rec.u)
        zval = float(u @ np.maximum(g, 0.0)) + rec.bias
        zgrad = grads @ (u * t_prev * act)
        gn = np.linalg.norm(zgrad)
        if gn > 0 and abs(zval) / gn <= 1e3 * tol * (1 + np.linalg.norm(p)):
            return True
    return False


def _same_neuron(a: NeuronRecovery, b: NeuronRecovery, tol: float = 1e-4) -> bool:
    common = ~a.missing & ~b.missing
    if common.sum() == 0:
        return False
    ua, ub = a.u[common], b.u[common]
    cos = abs(ua @ ub) / (np.linalg.norm(ua) * np.linalg.norm(ub) + 1e-300)
    return cos > 1 - tol


def _on_known_boundary(p: np.ndarray, prefix: KnownPrefix, tol: float) -> bool:
    return bool(prefix.boundary_distances(p).min() <= tol * (1 + np.linalg.norm(p)))


def _try_signs(recs, prefix):
    try:
        t, resid = resolve_signs(recs, prefix)
    except UnresolvedSigns:
        return None
    if resid > 1e-4:
        return None
    A, b, extra = sign_system(recs, prefix)
    _attach_extra(recs, A, b, extra, t, prefix.last.width)
    for rec in recs:
        rec.bias = neuron_bias(rec, prefix, t)
    return t


def _attach_extra(recs, A, b, extra, t, n_prev):
    for rec in recs:
        rec.extra_coef = {}
    if not extra:
        return
    coef, *_ = np.linalg.lstsq(A[:, n_prev:], b - A[:, :n_prev] @ t, rcond=None)
    for (ri, i), q in zip(extra, coef):
        recs[ri].extra_coef[i] = float(q)


def _fill_from_free_coefficients(recs, prefix: KnownPrefix, t_prev: np.ndarray, tol: float = 1e-6) -> None:
    """Turn a free coefficient into a weight when its neuron is active all along the explored boundary.

    The coefficient equals ``u_i * t_i`` times the (constant) activity of
    neuron ``i``; if the neuron is inactive everywhere explored, its weight
    stays missing.
    """
    for rec in recs:
        for i, q in list(getattr(rec, "extra_coef", {}).items()):
            active = [prefix.last_layer_affine(P.x)[0][i] * t_prev[i] > 0 for P in rec.points]
            if all(active) and abs(q) > tol * np.abs(rec.u).max():
                rec.u[i] = q * t_prev[i]
                rec.missing[i] = False
                del rec.extra_coef[i]
        rec.bias = neuron_bias(rec, prefix, t_prev)


def recover_layer(oracle: Oracle, prefix: KnownPrefix, candidates: list[BoundaryPoint], rng: np.random.Generator,
                  cfg: ExtractionConfig, target: int | None = None):
    """Recover layer ``k`` and the signs of layer ``k - 1``.

    Returns (layer-k estimate, signs for layer k-1, candidates judged deeper, diagnostics).
    """
    pc = cfg.layer1.probe
    queue = list(candidates)
    recs: list[NeuronRecovery] = []
    deeper: list[BoundaryPoint] = []
    t_prev = None
    misses = 0
    segments = 0
    diag = {"explored": 0, "deeper": 0, "duplicates": 0, "inconsistent": 0, "partial": 0}

    while not (target is not None and len(recs) >= target):
        if not queue:
            if segments >= cfg.harvest_segments or misses >= cfg.patience:
                break
            segments += 1
            seg = sample_segment(rng, pc.radius, pc.length, oracle.input_dim)
            for q in points_on_line(oracle, seg, pc.tol_flat, pc.tol_point_rel, pc.coarse_rel):
                if not _on_known_boundary(q.point, prefix, pc.tol_on_plane):
                    queue.append(q)
            continue
        p = queue.pop(0)
        if _on_known_boundary(p.point, prefix, pc.tol_on_plane) or \
                _is_member(p.point, recs, prefix, t_prev, pc.tol_on_plane):
            diag["duplicates"] += 1
            continue
        if p.local_hyperplane is None:
            try:
                infer_hyperplane(oracle, p, rng, pc)
            except DegenerateFit:
                continue
        diag["explored"] += 1
        state = explore_boundary(oracle, prefix, p, rng, cfg.explore)
        if state.verdict == "deeper":
            deeper.append(p)
            diag["deeper"] += 1
            misses += 1
            continue
        try:
            rec = recover_weights_for_neuron(state, prefix, cfg.explore.consistency_tol)
        except GeometryInconsistency as exc:
            logger.debug("candidate dropped: %s", exc)
            diag["inconsistent"] += 1
            misses += 1
            continue
        if rec.missing.all():
            misses += 1
            continue
        if state.verdict == "partial":
            diag["partial"] += 1
        dup = next((j for j, other in enumerate(recs) if _same_neuron(rec, other)), None)
        if dup is not None:
            diag["duplicates"] += 1
            if rec.missing.sum() < recs[dup].missing.sum():
                recs[dup] = rec
            misses += 1
            continue
        recs.append(rec)
        misses = 0
        logger.info("layer %d: neuron %d recovered (%d crossings, %d missing weights, %d queries)",
                    prefix.next_layer, len(recs), len(state.crossings), int(rec.missing.sum()), oracle.query_count)
        t_prev = _try_signs(recs, prefix)

    t_prev = _try_signs(recs, prefix)
    if t_prev is None and recs:
        # surfaces which neurons lack constraints
        resolve_signs(recs, prefix)
    if t_prev is not None:
        _fill_from_free_coefficients(recs, prefix, t_prev)
    est = _layer_estimate(prefix.next_layer, recs, prefix.last.width)
    return est, t_prev, deeper, diag, recs


def _layer_estimate(layer: int, recs: list[NeuronRecovery], n_prev: int) -> LayerEstimate:
    if not recs:
        return LayerEstimate(layer, np.zeros((n_prev, 0)), np.zeros(0), np.zeros(0, dtype=bool))
    U = np.column_stack([np.where(r.missing, 0.0, r.u) for r in recs])
    b = np.array([r.bias if r.bias is not None else np.nan for r in recs])
    missing = np.column_stack([r.missing for r in recs])
    norms = np.linalg.norm(U, axis=0)
    norms[norms == 0] = 1.0
    prov = [[P.x for P in r.points] for r in recs]
    return LayerEstimate(layer, U / norms, b / norms, np.zeros(len(recs), dtype=bool), prov, missing)


def extract_network(oracle: Oracle, config: ExtractionConfig | None = None) -> RecoveredModel:
    """Recover every hidden layer in turn, then the output layer.

    Parameters that cannot be measured are reported missing, never invented.
    On budget exhaustion the model recovered so far is returned with
    ``complete=False``.
    """
    cfg = config or ExtractionConfig()
    rng = np.random.default_rng(cfg.seed)
    hint = cfg.widths_hint
    model = RecoveredModel(oracle.input_dim, [])
    stage_start = oracle.query_count

    def mark(stage):
        nonlocal stage_start
        model.queries_by_stage[stage] = oracle.query_count - stage_start
        stage_start = oracle.query_count

    try:
        l1cfg = cfg.layer1
        if hint:
            l1cfg = Layer1Config(l1cfg.max_segments, hint[0], l1cfg.patience, l1cfg.probe)
        est1, unused = recover_layer1(oracle, l1cfg, rng)
        mark("layer1")
        model.layers.append(est1)
        candidates = unused
        n_hidden = len(hint) if hint else None
        if cfg.max_layers is not None:
            n_hidden = cfg.max_layers if n_hidden is None else min(n_hidden, cfg.max_layers)
        k = 2
        while n_hidden is None or k <= n_hidden:
            prefix = KnownPrefix(oracle.input_dim, model.layers)
            target = hint[k - 1] if hint and len(hint) >= k else None
            try:
                est, t_prev, deeper, diag, _ = recover_layer(oracle, prefix, candidates, rng, cfg, target)
            except UnresolvedSigns as exc:
                model.notes.append(f"layer {k - 1}: unresolved signs for neurons {exc.neurons}")
                est, t_prev, deeper, diag = None, None, [], {}
            mark(f"layer{k}")
            if est is None or est.width == 0:
                if hint is None:
                    model.notes.append(f"no layer-{k} neurons found; assuming {k - 1} hidden layers")
                    break
                model.notes.append(f"layer {k}: nothing recovered")
                return _finish(model, oracle, False)
            model.layers[-1].flip(t_prev)
            model.layers[-1].sign_resolved[:] = True
            model.layers.append(est)
            if target is not None and est.width < target:
                model.notes.append(f"layer {k}: recovered {est.width} of {target} neurons")
            candidates = deeper
            k += 1
        if cfg.recover_output:
            prefix = KnownPrefix(oracle.input_dim, model.layers)
            t, W_out, b_out, resid, resolved = recover_output_layer(oracle, prefix, rng, cfg.layer1.probe.radius)
            mark("output")
            model.layers[-1].flip(t)
            model.layers[-1].sign_resolved[:] = resolved
            model.output_weights, model.output_biases = W_out, b_out
            model.notes.append(f"output regression relative residual {resid:.2e}")
            model.complete = not any(L.missing.any() for L in model.layers) and bool(resolved.all())
    except BudgetExhausted as exc:
        if exc.partial is not None and not model.layers:
            model.layers.append(exc.partial[0])
        model.notes.append(str(exc))
        return _finish(model, oracle, False)
    return _finish(model, oracle, model.complete)


def _finish(model: RecoveredModel, oracle: Oracle, complete: bool) -> RecoveredModel:
    model.query_count = oracle.query_count
    model.complete = complete
    return model

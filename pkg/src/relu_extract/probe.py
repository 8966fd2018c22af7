"""Geometric primitives: locate gradient discontinuities on a line, fit and test local hyperplanes."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .oracle import Oracle

logger = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps


class DegenerateFit(RuntimeError):
    """Crossings around a point do not lie on one hyperplane (point is likely near an intersection)."""


@dataclass
class ProbeConfig:
    radius: float = 10.0          # sphere the sampling segments are tangent to
    length: float = 20.0          # sampling segment length
    tol_flat: float = 1e-6
    tol_point_rel: float = 1e-9   # bisection stop, relative to segment length
    coarse_rel: float = 1e-6      # bracket width at which the closed-form polish is attempted
    tol_on_plane: float = 1e-6
    local_radius_rel: float = 1e-3
    fit_retries: int = 2
    oversample: int = 2
    n_test: int = 20
    test_distance_factor: float = 10.0
    max_misses: int = 5           # far probes allowed to see no crossing on the plane
    early_misses: int = 2         # reject after this many misses before any hit

    @property
    def local_radius(self) -> float:
        return self.local_radius_rel * self.radius


@dataclass(frozen=True)
class Segment:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if a.shape != b.shape or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("segment endpoints must be finite vectors of equal shape")
        if np.array_equal(a, b):
            raise ValueError("degenerate segment")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def direction(self) -> np.ndarray:
        return self.b - self.a

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    def at(self, t: float) -> np.ndarray:
        return self.a + t * (self.b - self.a)


def canonical_sign(normal: np.ndarray) -> float:
    nz = np.flatnonzero(np.abs(normal) > 1e-12)
    if nz.size == 0:
        return 1.0
    return 1.0 if normal[nz[0]] > 0 else -1.0


@dataclass(frozen=True)
class Hyperplane:
    """``normal . x + offset = 0`` with a unit normal, first nonzero normal coordinate positive."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if not norm > 0:
            raise ValueError("hyperplane normal must be nonzero")
        s = canonical_sign(n) / norm
        object.__setattr__(self, "normal", n * s)
        object.__setattr__(self, "offset", float(self.offset) * s)

    def signed_distance(self, x) -> np.ndarray:
        return np.asarray(x) @ self.normal + self.offset

    def project(self, x: np.ndarray) -> np.ndarray:
        return x - self.signed_distance(x) * self.normal

    def same_as(self, other: "Hyperplane", cos_tol: float = 1e-6, offset_tol: float = 1e-5) -> bool:
        cos = float(self.normal @ other.normal)
        if abs(cos) <= 1 - cos_tol:
            return False
        off = other.offset * np.sign(cos)
        return abs(self.offset - off) < offset_tol * (1 + abs(self.offset))


@dataclass
class BoundaryPoint:
    point: np.ndarray
    segment: Segment | None = None
    t: float = float("nan")
    local_hyperplane: Hyperplane | None = None
    support: list = field(default_factory=list, repr=False)  # crossings used for the fit


# -- PointsOnLine ----------------------------------------------------------

FIRST_SPLIT = 0.5371


def points_on_line(oracle: Oracle, seg: Segment, tol_flat: float = 1e-6, tol_point_rel: float = 1e-9,
                   coarse_rel: float = 1e-6) -> list[BoundaryPoint]:
    """Locate the gradient discontinuities of the oracle along ``seg``, in order.

    Triples of consecutive points are refined with the weighted insertions
    ``(x1 + 2 x2) / 3`` and ``(x3 + 2 x2) / 3`` until the two secant slopes agree
    (linear stretch) or the bracket is narrow.  A narrow bracket is closed by
    intersecting the two affine pieces on either side; if that prediction fails
    to check out, refinement continues down to ``tol_point_rel``.
    """
    length = seg.length
    cache: dict[float, np.ndarray] = {}

    def f(t: float) -> np.ndarray:
        y = cache.get(t)
        if y is None:
            y = cache[t] = oracle.query(seg.at(t))
        return y

    def slope(t1: float, t2: float) -> np.ndarray:
        return (f(t2) - f(t1)) / ((t2 - t1) * length)

    def flat(l: float, m: float, r: float) -> bool:
        s1, s2 = slope(l, m), slope(m, r)
        scale = max(np.abs(s1).max(), np.abs(s2).max())
        ymax = max(np.abs(f(l)).max(), np.abs(f(m)).max(), np.abs(f(r)).max())
        roundoff = 16 * EPS * (1 + ymax) / (min(m - l, r - m) * length)
        return bool(np.abs(s1 - s2).max() <= tol_flat * (1 + scale) + roundoff)

    found: list[float] = []
    # off-centre first split: callers often centre segments on a known crossing
    stack = [(0.0, FIRST_SPLIT, 1.0)]
    while stack:
        l, m, r = stack.pop()
        if flat(l, m, r):
            continue
        width = r - l
        if width < coarse_rel:
            t_star = _polish(f, l, r, tol_flat, length)
            if t_star is not None:
                found.append(t_star)
                continue
            if width < tol_point_rel:
                found.append(m)
                continue
        q1, q2 = (l + 2 * m) / 3, (r + 2 * m) / 3
        left, right = (l, q1, m), (m, q2, r)
        left_flat, right_flat = flat(*left), flat(*right)
        if left_flat and right_flat:
            # discontinuity sits (almost) exactly on m
            stack.append((q1, m, q2))
            continue
        if not right_flat:
            stack.append(right)
        if not left_flat:
            stack.append(left)

    found.sort()
    merged: list[float] = []
    for t in found:
        if merged and t - merged[-1] < 10 * tol_point_rel:
            continue
        merged.append(t)

    points = [BoundaryPoint(point=seg.at(t), segment=seg, t=t) for t in merged]
    return points


def _polish(f, l: float, r: float, tol_flat: float, length: float) -> float | None:
    """Intersect the affine pieces left of ``l`` and right of ``r``; verify with one query."""
    w = r - l
    yl, yr = f(l), f(r)
    s_left = (yl - f(l - w)) / w
    s_right = (f(r + w) - yr) / w
    ds = s_left - s_right
    denom = float(ds @ ds)
    if denom == 0.0:
        return None
    t_star = float(ds @ (yr - yl + s_left * l - s_right * r)) / denom
    if not (l - 1e-3 * w <= t_star <= r + 1e-3 * w):
        return None
    t_star = min(max(t_star, l), r)
    y_star = f(t_star)
    pred = 0.5 * ((yl + s_left * (t_star - l)) + (yr + s_right * (t_star - r)))
    ymax = max(np.abs(yl).max(), np.abs(yr).max())
    if np.abs(y_star - pred).max() > 64 * EPS * (1 + ymax) + tol_flat * np.abs(ds).max() * w:
        return None
    return t_star


# -- segment sampling ------------------------------------------------------

def sample_segment(rng: np.random.Generator, radius: float, length: float, dim: int) -> Segment:
    """Segment of the given length tangent at its midpoint to the sphere of the given radius."""
    if radius <= 0 or length <= 0:
        raise ValueError("radius and length must be positive")
    u = rng.normal(size=dim)
    u /= np.linalg.norm(u)
    mid = radius * u
    d = rng.normal(size=dim)
    d -= (d @ u) * u
    d /= np.linalg.norm(d)
    return Segment(mid - 0.5 * length * d, mid + 0.5 * length * d)


# -- InferHyperplane -------------------------------------------------------

def fit_hyperplane(points: np.ndarray) -> tuple[Hyperplane, float]:
    """Orthogonal least-squares plane through ``points`` (SVD of the centred cloud); returns max residual."""
    pts = np.asarray(points, dtype=np.float64)
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    normal = vt[-1]
    plane = Hyperplane(normal, -float(normal @ centroid))
    return plane, float(np.abs(plane.signed_distance(pts)).max())


def infer_hyperplane(oracle: Oracle, p: BoundaryPoint | np.ndarray, rng: np.random.Generator,
                     cfg: ProbeConfig | None = None, radius: float | None = None) -> Hyperplane:
    """Fit the local hyperplane of the boundary through ``p`` from crossings of short random segments.

    Retries with a radius shrunk tenfold when the fit is degenerate.
    """
    cfg = cfg or ProbeConfig()
    x0 = p.point if isinstance(p, BoundaryPoint) else np.asarray(p, dtype=np.float64)
    r = cfg.local_radius if radius is None else radius
    last_err = None
    for _ in range(cfg.fit_retries + 1):
        try:
            plane, support = _infer_once(oracle, x0, rng, cfg, r)
        except DegenerateFit as exc:
            last_err = exc
            r /= 10
            continue
        if isinstance(p, BoundaryPoint):
            p.local_hyperplane = plane
            p.support = support
        return plane
    raise last_err


def _infer_once(oracle, x0, rng, cfg: ProbeConfig, r: float):
    dim = x0.shape[0]
    want = cfg.oversample * dim
    crossings = [x0]
    attempts = 0
    while len(crossings) < want + 1 and attempts < 4 * want:
        attempts += 1
        d = rng.normal(size=dim)
        d /= np.linalg.norm(d)
        o = rng.normal(size=dim)
        o -= (o @ d) * d
        o *= r / max(np.linalg.norm(o), 1e-300)
        seg = Segment(x0 + o - 2 * r * d, x0 + o + 2 * r * d)
        pts = points_on_line(oracle, seg, cfg.tol_flat, cfg.tol_point_rel, cfg.coarse_rel)
        if not pts:
            continue
        best = min(pts, key=lambda q: np.linalg.norm(q.point - x0))
        crossings.append(best.point)
    if len(crossings) < dim + 1:
        raise DegenerateFit(f"only {len(crossings) - 1} crossings found around point at radius {r:g}")
    pts = np.array(crossings)
    plane, resid = fit_hyperplane(pts)
    if resid > cfg.tol_on_plane * max(1.0, r):
        raise DegenerateFit(f"fit residual {resid:.3g} at radius {r:g}")
    return plane, pts


# -- TestHyperplane --------------------------------------------------------

def test_hyperplane_detail(oracle: Oracle, p: BoundaryPoint | np.ndarray, plane: Hyperplane,
                           rng: np.random.Generator, cfg: ProbeConfig | None = None,
                           n_test: int | None = None) -> tuple[bool, list[np.ndarray]]:
    """Probe ``plane`` far from ``p`` along short transversal segments.

    A hit far away is strong evidence: a bent boundary does not return to the
    plane.  A miss is weak evidence, since a first-layer boundary is invisible
    wherever every neuron it feeds is inactive.  Rejects once misses exceed
    ``max_misses`` or reach ``early_misses`` with no hit yet; stopping at the
    first such prefix keeps the test monotone in the number of probes.
    Returns the verdict and the far crossings found (usable for a refit).
    """
    cfg = cfg or ProbeConfig()
    x0 = p.point if isinstance(p, BoundaryPoint) else np.asarray(p, dtype=np.float64)
    n_test = cfg.n_test if n_test is None else n_test
    dist = cfg.test_distance_factor * max(1.0, float(np.linalg.norm(x0)))
    h = cfg.local_radius
    tol = cfg.tol_on_plane * max(1.0, dist)
    far = []
    misses = 0
    for _ in range(n_test):
        u = rng.normal(size=x0.shape[0])
        u -= (u @ plane.normal) * plane.normal
        u /= np.linalg.norm(u)
        q = plane.project(x0 + dist * u)
        seg = Segment(q - h * plane.normal, q + h * plane.normal)
        pts = points_on_line(oracle, seg, cfg.tol_flat, cfg.tol_point_rel, cfg.coarse_rel)
        hits = [pt.point for pt in pts if abs(plane.signed_distance(pt.point)) <= tol]
        if not hits:
            misses += 1
            if misses > cfg.max_misses or (misses >= cfg.early_misses and not far):
                return False, far
            continue
        far.append(min(hits, key=lambda y: abs(plane.signed_distance(y))))
    return True, far


def test_hyperplane(oracle: Oracle, p, plane: Hyperplane, rng: np.random.Generator,
                    cfg: ProbeConfig | None = None, n_test: int | None = None) -> bool:
    return test_hyperplane_detail(oracle, p, plane, rng, cfg, n_test)[0]


# keep pytest from collecting the public API as tests
test_hyperplane.__test__ = False
test_hyperplane_detail.__test__ = False

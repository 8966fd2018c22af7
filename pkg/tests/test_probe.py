import numpy as np
import pytest

from relu_extract.network import Network, init_he
from relu_extract.oracle import BudgetExhausted, Oracle, QueryBudget
from relu_extract.probe import (DegenerateFit, Hyperplane, ProbeConfig, Segment, fit_hyperplane, infer_hyperplane,
                                points_on_line, sample_segment, test_hyperplane, test_hyperplane_detail)


def true_roots(net, seg, n=200_001):
    """Zeros of every hidden preactivation along seg: dense sign scan plus bisection on the exact values."""
    ts = np.linspace(0, 1, n)
    pre = np.hstack(net.hidden_preactivations(seg.a + ts[:, None] * (seg.b - seg.a)))
    roots = []
    for j in range(pre.shape[1]):
        s = np.sign(pre[:, j])
        for i in np.flatnonzero(s[:-1] * s[1:] < 0):
            lo, hi = ts[i], ts[i + 1]
            f = lambda t: np.hstack(net.hidden_preactivations(seg.at(t)))[j]
            flo = f(lo)
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if np.sign(f(mid)) == np.sign(flo):
                    lo, flo = mid, f(mid)
                else:
                    hi = mid
            roots.append(0.5 * (lo + hi))
    return np.sort(roots)


def test_one_neuron_line(one_neuron):
    pts = points_on_line(Oracle.from_network(one_neuron), Segment(np.array([-1.0]), np.array([1.0])))
    assert len(pts) == 1
    assert abs(pts[0].point[0]) < 1e-9


def test_linear_target_has_no_points():
    net = Network([3, 4, 1], [np.zeros((3, 4)), np.ones((4, 1))], [np.ones(4), np.zeros(1)])
    seg = Segment(np.array([-5.0, 1, 2]), np.array([5.0, -1, 0]))
    assert points_on_line(Oracle.from_network(net), seg) == []


def test_points_match_ground_truth_roots():
    net = init_he([2, 5, 5, 1], 0)
    seg = Segment(np.array([-3.0, -2.5]), np.array([3.0, 2.0]))
    roots = true_roots(net, seg)
    assert len(roots) >= 5
    found = np.array([p.t for p in points_on_line(Oracle.from_network(net), seg)])
    assert len(found) == len(roots)
    assert np.abs(found - roots).max() * seg.length < 1e-7


def test_points_soundness():
    net = init_he([4, 8, 8, 1], 3)
    rng = np.random.default_rng(0)
    o = Oracle.from_network(net)
    for _ in range(5):
        seg = sample_segment(rng, 3.0, 6.0, 4)
        for p in points_on_line(o, seg):
            u = seg.direction
            eps = 10 * 1e-9 * seg.length
            a = np.concatenate(net.hidden_preactivations(p.point - eps * u)) > 0
            b = np.concatenate(net.hidden_preactivations(p.point + eps * u)) > 0
            assert (a != b).any()


def test_points_budget_exhaustion():
    net = init_he([2, 5, 5, 1], 0)
    o = Oracle.from_network(net, QueryBudget(10))
    with pytest.raises(BudgetExhausted):
        points_on_line(o, Segment(np.array([-3.0, -2.5]), np.array([3.0, 2.0])))


def test_sample_segment_geometry():
    rng = np.random.default_rng(0)
    for _ in range(200):
        seg = sample_segment(rng, 10.0, 20.0, 10)
        mid = 0.5 * (seg.a + seg.b)
        assert abs(np.linalg.norm(mid) - 10.0) < 1e-9
        assert abs((seg.b - seg.a) @ mid) / (seg.length * 10.0) < 1e-9
        assert abs(seg.length - 20.0) < 1e-9


def test_sample_segment_hits_every_first_layer_plane():
    net = init_he([10, 10, 10, 2], 0)
    W, b = net.weights[0], net.biases[0]
    rng = np.random.default_rng(1)
    hits = np.zeros(10, dtype=int)
    for _ in range(10_000):
        seg = sample_segment(rng, 10.0, 20.0, 10)
        ga, gb = seg.a @ W + b, seg.b @ W + b
        hits += (ga * gb < 0)
    assert (hits >= 1).all()


def test_fit_hyperplane_exact():
    rng = np.random.default_rng(0)
    n = rng.normal(size=5)
    n /= np.linalg.norm(n)
    pts = rng.normal(size=(20, 5))
    pts -= np.outer(pts @ n + 0.3, n)
    plane, resid = fit_hyperplane(pts)
    assert resid < 1e-12
    assert abs(abs(plane.normal @ n) - 1) < 1e-12
    assert np.abs(pts @ plane.normal + plane.offset).max() < 1e-12


def test_hyperplane_canonical_orientation():
    h = Hyperplane(np.array([0.0, -2.0, 1.0]), 4.0)
    assert h.normal[1] > 0
    assert abs(np.linalg.norm(h.normal) - 1) < 1e-15
    assert h.same_as(Hyperplane(np.array([0.0, 2.0, -1.0]), -4.0))


def _first_boundary_point(net, seg):
    return points_on_line(Oracle.from_network(net), seg)[0]


def test_infer_axis_aligned():
    net = Network([2, 1, 1], [np.array([[1.0], [0.0]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
    o = Oracle.from_network(net)
    p = points_on_line(o, Segment(np.array([-1.0, 0.3]), np.array([1.0, 0.2])))[0]
    h = infer_hyperplane(o, p, np.random.default_rng(0))
    assert np.abs(h.normal - [1.0, 0.0]).max() < 1e-6
    assert abs(h.offset) < 1e-6


def _layer1_points(net, o, rng, want=10):
    W, b = net.weights[0], net.biases[0]
    found = {}
    while len(found) < want:
        seg = sample_segment(rng, 10.0, 20.0, net.n_in)
        for p in points_on_line(o, seg):
            g = p.point @ W + b
            j = int(np.argmin(np.abs(g)))
            others = np.sort(np.abs(np.concatenate(net.hidden_preactivations(p.point))))[1]
            if abs(g[j]) < 1e-6 and others > 1e-2 and j not in found:
                found[j] = p
    return found


def test_infer_first_layer_planes_match_truth():
    net = init_he([10, 10, 10, 2], 0)
    o = Oracle.from_network(net)
    rng = np.random.default_rng(0)
    for j, p in _layer1_points(net, o, rng).items():
        h = infer_hyperplane(o, p, rng)
        w, b = net.weights[0][:, j], net.biases[0][j]
        s = np.sign(h.normal @ w)
        nrm = np.linalg.norm(w)
        assert np.abs(h.normal - s * w / nrm).max() < 1e-6
        assert abs(h.offset - s * b / nrm) < 1e-6


def test_infer_equivariant_under_input_shift():
    net = init_he([3, 4, 1], 2)
    shift = np.array([0.5, -1.0, 2.0])
    shifted = Network(net.widths, net.weights, [net.biases[0] - shift @ net.weights[0], net.biases[1]])
    seg = Segment(np.array([-4.0, -3.0, 1.0]), np.array([4.0, 3.0, -1.0]))
    p = _first_boundary_point(net, seg)
    q = _first_boundary_point(shifted, Segment(seg.a + shift, seg.b + shift))
    h = infer_hyperplane(Oracle.from_network(net), p, np.random.default_rng(0))
    g = infer_hyperplane(Oracle.from_network(shifted), q, np.random.default_rng(0))
    assert np.abs(h.normal - g.normal).max() < 1e-6
    assert abs(g.offset - (h.offset - h.normal @ shift)) < 1e-6


def test_infer_normal_stable_over_radius():
    net = init_he([10, 10, 10, 2], 1)
    o = Oracle.from_network(net)
    rng = np.random.default_rng(3)
    p = next(iter(_layer1_points(net, o, rng, 1).values()))
    pc = ProbeConfig()
    normals = [infer_hyperplane(o, p, rng, pc, radius=r).normal for r in (pc.local_radius, 3 * pc.local_radius,
                                                                          10 * pc.local_radius)]
    assert all(abs(abs(n @ normals[0]) - 1) < 1e-8 for n in normals)


def test_infer_degenerate_near_intersection():
    # two planes crossing at the origin; a local fit at the crossing cannot be planar
    net = Network([2, 2, 1], [np.eye(2), np.ones((2, 1))], [np.zeros(2), np.zeros(1)])
    o = Oracle.from_network(net)
    seg = Segment(np.array([-1.0, 0.0]), np.array([1.0, 0.0]))
    p = points_on_line(o, seg)[0]
    p.point = np.zeros(2)
    with pytest.raises(DegenerateFit):
        infer_hyperplane(o, p, np.random.default_rng(0), ProbeConfig(fit_retries=0), radius=0.5)


def _labelled_points(net, o, rng, n_each=5):
    """Boundary points on random segments, labelled by the layer of the vanishing true preactivation."""
    out = {1: [], 2: []}
    while min(len(v) for v in out.values()) < n_each:
        seg = sample_segment(rng, 10.0, 20.0, net.n_in)
        for p in points_on_line(o, seg):
            pre = net.hidden_preactivations(p.point)
            layer = 1 if np.abs(pre[0]).min() < np.abs(pre[1]).min() else 2
            generic = np.sort(np.abs(np.concatenate(pre)))[1] > 1e-2
            if generic and len(out[layer]) < n_each:
                out[layer].append(p)
    return out


def test_hyperplane_test_accepts_layer1_rejects_layer2():
    net = init_he([10, 10, 10, 2], 0)
    o = Oracle.from_network(net)
    rng = np.random.default_rng(0)
    pts = _labelled_points(net, o, rng)
    for p in pts[1]:
        assert test_hyperplane(o, p, infer_hyperplane(o, p, rng), rng)
    for p in pts[2]:
        assert not test_hyperplane(o, p, infer_hyperplane(o, p, rng), rng)


def test_hyperplane_test_monotone_in_evidence():
    net = init_he([10, 10, 10, 2], 2)
    o = Oracle.from_network(net)
    rng = np.random.default_rng(1)
    for p in _labelled_points(net, o, rng, 3)[2]:
        h = infer_hyperplane(o, p, rng)
        few, _ = test_hyperplane_detail(o, p, h, np.random.default_rng(7), ProbeConfig(n_test=20))
        many, _ = test_hyperplane_detail(o, p, h, np.random.default_rng(7), ProbeConfig(n_test=40))
        assert not (not few and many)


def test_unbent_deeper_neuron_passes_as_first_layer():
    # a layer-2 neuron with all-zero incoming weights has a flat (empty or whole) boundary; with a
    # single active input it is an exact copy of a plane and is accepted: documented failure mode
    W1 = np.array([[1.0, 0.0], [0.0, 1.0]])
    W2 = np.array([[1.0], [0.0]])
    net = Network([2, 2, 1, 1], [W1, W2, np.ones((1, 1))], [np.array([0.0, 5.0]), np.array([-0.5]), np.zeros(1)])
    o = Oracle.from_network(net)
    rng = np.random.default_rng(0)
    p = points_on_line(o, Segment(np.array([0.0, 0.0]), np.array([2.0, 0.1])))[0]
    assert abs(p.point[0] - 0.5) < 1e-9
    assert test_hyperplane(o, p, infer_hyperplane(o, p, rng), rng)

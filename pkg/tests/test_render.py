import numpy as np
import pytest

from relu_extract.network import Network, ShapeError, init_he
from relu_extract.render import render_boundaries_2d, trace_boundaries

BOX = (-3.0, 3.0, -3.0, 3.0)


def _line_residual(pts):
    c = pts - pts.mean(axis=0)
    return np.linalg.svd(c, compute_uv=False)[-1] / np.sqrt(len(pts))


def test_single_neuron_one_straight_line():
    net = Network([2, 1, 1], [np.array([[1.0], [0.0]]), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
    lines = trace_boundaries(net, BOX, 64)
    assert len(lines) == 1
    assert np.abs(lines[0].points[:, 0]).max() < 1e-5


def test_first_layer_straight_and_bends_on_first_layer_lines():
    net = init_he([2, 5, 5, 1], 0)
    lines = trace_boundaries(net, BOX, 256)
    W, b = net.weights[0], net.biases[0]
    cell = 6.0 / 255
    first = [pl for pl in lines if pl.neuron.layer == 1]
    second = [pl for pl in lines if pl.neuron.layer == 2]
    assert first and second
    for pl in first:
        assert _line_residual(pl.points) < 1e-6 * 6.0   # refinement tolerance
    bends = 0
    for pl in second:
        pre = net.hidden_preactivations(pl.points)[1][:, pl.neuron.index]
        assert np.abs(pre).max() < 1e-5
        # drop near-duplicate vertices: refinement error would dominate their directions
        keep = np.concatenate([[True], np.linalg.norm(np.diff(pl.points, axis=0), axis=1) > cell / 4])
        pts = pl.points[keep]
        d = np.diff(pts, axis=0)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        turn = np.arccos(np.clip((d[:-1] * d[1:]).sum(1), -1, 1))
        for i in np.flatnonzero(turn > 0.02):
            x = pts[i + 1]
            dist = np.abs(x @ W + b) / np.linalg.norm(W, axis=0)
            assert dist.min() < 2 * cell
            bends += 1
    assert bends > 0


def test_linear_net_draws_nothing(tmp_path):
    net = Network([2, 3, 1], [np.zeros((2, 3)), np.ones((3, 1))], [np.ones(3), np.zeros(1)])
    svg, csv_path, lines = render_boundaries_2d(net, BOX, 32, tmp_path / "lin")
    assert lines == []
    assert svg.exists()
    assert csv_path.read_text().strip() == "polyline,layer,neuron,x,y"


def test_outputs_written(tmp_path):
    svg, csv_path, lines = render_boundaries_2d(init_he([2, 5, 5, 1], 0), BOX, 64, tmp_path / "b")
    text = svg.read_text()
    assert "<svg" in text
    rows = csv_path.read_text().splitlines()
    assert len(rows) == 1 + sum(len(pl.points) for pl in lines)


def test_needs_two_inputs():
    with pytest.raises(ShapeError):
        trace_boundaries(init_he([3, 2, 1], 0))

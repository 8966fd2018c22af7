import numpy as np
import pytest

from relu_extract.network import Network


def naive_forward(widths, weights, biases, x):
    """Neuron-by-neuron loop, independent of the vectorized forward pass."""
    h = [float(v) for v in x]
    depth = len(weights)
    for k in range(depth):
        out = []
        for j in range(widths[k + 1]):
            s = float(biases[k][j])
            for i in range(widths[k]):
                s += h[i] * float(weights[k][i][j])
            out.append(s if k == depth - 1 else max(s, 0.0))
        h = out
    return np.array(h)


@pytest.fixture
def one_neuron():
    return Network([1, 1, 1], [np.array([[1.0]]), np.array([[1.0]])], [np.array([0.0]), np.array([0.0])])


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def record(request):
    """Store one pass/fail line for the terminal summary; returns ``ok``."""
    def _record(criterion: int, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[ACCEPTANCE].append(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

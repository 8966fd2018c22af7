"""Fully connected ReLU networks: forward pass, isomorphisms, initialization, serialization.

Weights are stored ``[layer][from][to]``: ``weights[k]`` has shape
``(widths[k], widths[k + 1])``.  Hidden layers apply ReLU, the output layer is
affine only.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Input vector or parameter shapes disagree with the network widths."""


class AddressError(IndexError):
    """A NeuronId does not address a hidden neuron."""


class DomainError(ValueError):
    """An isomorphism was requested with an invalid argument."""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NeuronId:
    layer: int  # 1-based hidden layer index
    index: int

    def __str__(self) -> str:
        return f"L{self.layer}:{self.index}"


@dataclass(frozen=True)
class ActivationPattern:
    bits: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.bits)


class Network:
    """Immutable ReLU network.

    Arrays are copied on construction and marked read-only, so instances can be
    shared freely between threads.
    """

    def __init__(self, widths: Sequence[int], weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        widths = [int(w) for w in widths]
        if len(widths) < 3:
            raise ConfigError(f"need at least one hidden layer, got widths={widths}")
        if any(w < 1 for w in widths):
            raise ConfigError(f"all widths must be >= 1, got {widths}")
        if len(weights) != len(widths) - 1 or len(biases) != len(widths) - 1:
            raise ShapeError("expected one weight matrix and one bias vector per layer transition")
        ws, bs = [], []
        for k, (w, b) in enumerate(zip(weights, biases)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64).reshape(-1)
            if w.shape != (widths[k], widths[k + 1]):
                raise ShapeError(f"weights[{k}] has shape {w.shape}, expected {(widths[k], widths[k + 1])}")
            if b.shape != (widths[k + 1],):
                raise ShapeError(f"biases[{k}] has shape {b.shape}, expected {(widths[k + 1],)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigError(f"non-finite parameters in layer {k + 1}")
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        self.widths = tuple(widths)
        self.weights = tuple(ws)
        self.biases = tuple(bs)

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    @property
    def depth(self) -> int:
        """Number of hidden layers."""
        return len(self.widths) - 2

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return self.widths[1:-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def __repr__(self) -> str:
        return f"Network(widths={list(self.widths)})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.widths == other.widths
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )

    def replace(self, weights=None, biases=None) -> "Network":
        return Network(
            self.widths,
            self.weights if weights is None else weights,
            self.biases if biases is None else biases,
        )

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (self.n_in,):
            raise ShapeError(f"input has trailing dimension {x.shape[-1:]}, expected ({self.n_in},)")
        return x

    def hidden_preactivations(self, x) -> list[np.ndarray]:
        """Preactivations (bias included) of every hidden layer; supports batched ``x``."""
        h = self._check_input(x)
        pre = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w + b
            pre.append(z)
            h = np.maximum(z, 0.0)
        return pre

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)


def forward(net: Network, x) -> np.ndarray:
    h = net._check_input(x)
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
    return h @ net.weights[-1] + net.biases[-1]


def preactivation(net: Network, z: NeuronId, x) -> float:
    """Value whose zero set is the boundary of neuron ``z``; positive means active."""
    if not (1 <= z.layer <= net.depth) or not (0 <= z.index < net.widths[z.layer]):
        raise AddressError(f"{z} is not a hidden neuron of {net!r}")
    return float(net.hidden_preactivations(x)[z.layer - 1][..., z.index])


def activation_pattern(net: Network, x) -> ActivationPattern:
    pre = net.hidden_preactivations(x)
    return ActivationPattern(tuple(bool(v > 0) for layer in pre for v in np.ravel(layer)))


def init_he(widths: Sequence[int], seed: int | np.random.Generator) -> Network:
    """He-normal weights (variance 2/fan-in) and standard normal biases."""
    widths = list(widths)
    if not widths:
        raise ConfigError("empty widths")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(rng.normal(0.0, 1.0, size=fan_out))
    return Network(widths, weights, biases)


def apply_scaling(net: Network, z: NeuronId, c: float) -> Network:
    """Multiply the incoming weights and bias of ``z`` by ``c`` and its outgoing weights by ``1/c``."""
    if not c > 0:
        raise DomainError(f"scaling constant must be positive, got {c}")
    if not (1 <= z.layer <= net.depth) or not (0 <= z.index < net.widths[z.layer]):
        raise AddressError(f"{z} is not a hidden neuron of {net!r}")
    weights = [w.copy() for w in net.weights]
    biases = [b.copy() for b in net.biases]
    k, j = z.layer, z.index
    weights[k - 1][:, j] *= c
    biases[k - 1][j] *= c
    weights[k][j, :] /= c
    return net.replace(weights, biases)


def apply_permutation(net: Network, layer: int, sigma: Sequence[int]) -> Network:
    """Reorder hidden layer ``layer`` so that new neuron ``i`` is old neuron ``sigma[i]``."""
    if not (1 <= layer <= net.depth):
        raise AddressError(f"layer {layer} is not a hidden layer of {net!r}")
    sigma = np.asarray(sigma, dtype=int)
    n = net.widths[layer]
    if sigma.shape != (n,) or not np.array_equal(np.sort(sigma), np.arange(n)):
        raise DomainError(f"not a permutation of {n} elements: {sigma.tolist()}")
    weights = list(net.weights)
    biases = list(net.biases)
    weights[layer - 1] = weights[layer - 1][:, sigma]
    biases[layer - 1] = biases[layer - 1][sigma]
    weights[layer] = weights[layer][sigma, :]
    return net.replace(weights, biases)


# -- serialization ---------------------------------------------------------

def to_dict(net: Network) -> dict:
    return {
        "version": FORMAT_VERSION,
        "widths": list(net.widths),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def from_dict(data: dict) -> Network:
    version = data.get("version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported network file version {version!r}")
    return Network(data["widths"], data["weights"], data["biases"])


def dumps(net: Network) -> str:
    # float repr is the shortest string that round-trips bit-exactly
    return json.dumps(to_dict(net), separators=(",", ":"))


def loads(text: str) -> Network:
    return from_dict(json.loads(text))


def save(net: Network, path) -> None:
    Path(path).write_text(dumps(net) + "\n")


def load(path) -> Network:
    for line in Path(path).read_text().splitlines():
        if line.strip():
            return loads(line)
    raise ConfigError(f"{path}: no network record found")

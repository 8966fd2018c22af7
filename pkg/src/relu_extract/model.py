"""Result containers shared by the extraction stages."""
from __future__ import annotations

import json
from pathlib import Path
from dataclasses import dataclass, field

import numpy as np

from .network import Network


@dataclass
class LayerEstimate:
    """Incoming weights (one unit-norm column per neuron) and biases of one hidden layer.

    Rows index the previous layer as recovered, not as in the target.
    """

    layer: int
    weights: np.ndarray
    biases: np.ndarray
    sign_resolved: np.ndarray
    neuron_provenance: list = field(default_factory=list)
    missing: np.ndarray | None = None  # True where a weight could not be measured

    def __post_init__(self):
        if self.missing is None:
            self.missing = np.zeros(self.weights.shape, dtype=bool)

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    def flip(self, signs: np.ndarray) -> None:
        """Multiply neuron ``j``'s incoming weights and bias by ``signs[j]``."""
        self.weights = self.weights * signs
        self.biases = self.biases * signs


@dataclass
class RecoveredModel:
    n_in: int
    layers: list[LayerEstimate]
    output_weights: np.ndarray | None = None
    output_biases: np.ndarray | None = None
    query_count: int = 0
    queries_by_stage: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    complete: bool = False

    @property
    def widths(self) -> list[int]:
        w = [self.n_in] + [layer.width for layer in self.layers]
        if self.output_weights is not None:
            w.append(self.output_weights.shape[1])
        return w

    @property
    def n_params(self) -> int:
        n = sum(layer.weights.size + layer.biases.size - int(layer.missing.sum()) for layer in self.layers)
        if self.output_weights is not None:
            n += self.output_weights.size + self.output_biases.size
        return n

    def all_signs_resolved(self) -> bool:
        return all(bool(np.all(layer.sign_resolved)) for layer in self.layers)

    def to_network(self) -> Network:
        """The recovered function; missing weights are set to zero."""
        if self.output_weights is None:
            raise ValueError("output layer not recovered")
        ws = [np.where(layer.missing, 0.0, layer.weights) for layer in self.layers] + [self.output_weights]
        bs = [layer.biases for layer in self.layers] + [self.output_biases]
        return Network(self.widths, ws, bs)

    @classmethod
    def from_network(cls, net: Network) -> "RecoveredModel":
        """Exact estimate of ``net`` in unit-norm form, for scoring tests."""
        from .isomorphism import normalize_scaling

        c = normalize_scaling(net)
        layers = [
            LayerEstimate(k + 1, c.weights[k].copy(), c.biases[k].copy(), np.ones(c.widths[k + 1], dtype=bool))
            for k in range(c.depth)
        ]
        return cls(net.n_in, layers, c.weights[-1].copy(), c.biases[-1].copy(), complete=True)

    def provenance_records(self) -> list[dict]:
        rows = []
        for layer in self.layers:
            for j, prov in enumerate(layer.neuron_provenance):
                rows.append({"layer": layer.layer, "neuron": j, "sign_resolved": bool(layer.sign_resolved[j]),
                             "points": [np.asarray(getattr(p, "point", p)).tolist() for p in prov]})
        return rows

    def summary(self) -> dict:
        return {
            "widths": self.widths,
            "complete": self.complete,
            "query_count": self.query_count,
            "queries_by_stage": self.queries_by_stage,
            "signs_resolved": [int(layer.sign_resolved.sum()) for layer in self.layers],
            "missing_weights": [int(layer.missing.sum()) for layer in self.layers],
            "notes": self.notes,
        }

    def to_dict(self) -> dict:
        """Network-format record (every present layer) plus extraction metadata.

        Complete estimates load as plain networks too; missing weights are
        written as 0 and flagged in ``missing``.
        """
        ws = [np.where(layer.missing, 0.0, layer.weights).tolist() for layer in self.layers]
        bs = [np.nan_to_num(layer.biases).tolist() for layer in self.layers]
        widths = [self.n_in] + [layer.width for layer in self.layers]
        if self.output_weights is not None:
            ws.append(np.asarray(self.output_weights).tolist())
            bs.append(np.asarray(self.output_biases).tolist())
            widths.append(int(self.output_weights.shape[1]))
        return {
            "version": 1, "widths": widths, "weights": ws, "biases": bs,
            "hidden_layers": len(self.layers),
            "sign_resolved": [layer.sign_resolved.astype(bool).tolist() for layer in self.layers],
            "missing": [layer.missing.astype(bool).tolist() for layer in self.layers],
            "query_count": self.query_count, "queries_by_stage": self.queries_by_stage,
            "notes": self.notes, "complete": self.complete,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RecoveredModel":
        n_hidden = d.get("hidden_layers", len(d["weights"]) - 1)
        sr = d.get("sign_resolved")
        miss = d.get("missing")
        layers = []
        for k in range(n_hidden):
            w = np.array(d["weights"][k], dtype=np.float64).reshape(d["widths"][k], d["widths"][k + 1])
            layers.append(LayerEstimate(
                k + 1, w, np.array(d["biases"][k], dtype=np.float64),
                np.array(sr[k], dtype=bool) if sr else np.ones(w.shape[1], dtype=bool),
                missing=np.array(miss[k], dtype=bool).reshape(w.shape) if miss else None))
        model = cls(d["widths"][0], layers, complete=d.get("complete", True),
                    query_count=d.get("query_count", 0), queries_by_stage=d.get("queries_by_stage", {}),
                    notes=d.get("notes", []))
        if len(d["weights"]) > n_hidden:
            model.output_weights = np.array(d["weights"][-1], dtype=np.float64).reshape(d["widths"][-2], d["widths"][-1])
            model.output_biases = np.array(d["biases"][-1], dtype=np.float64)
        return model

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def loads(cls, text: str) -> "RecoveredModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "RecoveredModel":
        for line in Path(path).read_text().splitlines():
            if line.strip():
                return cls.loads(line)
        raise ValueError(f"{path}: no model record found")

"""Recover the weights of a ReLU network from black-box queries."""
from .deeper import ExtractionConfig, KnownPrefix, explore_boundary, extract_network, resolve_signs
from .isomorphism import AlignmentReport, align, canonicalize, functional_distance, log_normalized_error
from .layer1 import Layer1Config, recover_layer1
from .model import LayerEstimate, RecoveredModel
from .network import (ActivationPattern, AddressError, ConfigError, DomainError, Network, NeuronId, ShapeError,
                      activation_pattern, apply_permutation, apply_scaling, forward, init_he, preactivation)
from .oracle import BudgetExhausted, Oracle, QueryBudget, RemoteOracle, connect, serve
from .probe import BoundaryPoint, Hyperplane, ProbeConfig, Segment, infer_hyperplane, points_on_line, test_hyperplane

__all__ = [
    "ActivationPattern", "AddressError", "AlignmentReport", "BoundaryPoint", "BudgetExhausted", "ConfigError",
    "DomainError", "ExtractionConfig", "Hyperplane", "KnownPrefix", "Layer1Config", "LayerEstimate", "Network",
    "NeuronId", "Oracle", "ProbeConfig", "QueryBudget", "RecoveredModel", "RemoteOracle", "Segment", "ShapeError",
    "activation_pattern", "align", "apply_permutation", "apply_scaling", "canonicalize", "connect",
    "explore_boundary", "extract_network", "forward", "functional_distance", "infer_hyperplane", "init_he",
    "log_normalized_error", "points_on_line", "preactivation", "recover_layer1", "resolve_signs", "serve",
    "test_hyperplane",
]
__version__ = "0.1.0"

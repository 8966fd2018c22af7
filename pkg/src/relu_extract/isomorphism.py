"""Canonical forms modulo permutation and positive scaling, and error metrics against ground truth."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import RecoveredModel
from .network import Network, apply_permutation, forward

logger = logging.getLogger(__name__)

LOG_BASE = "e"
ERROR_FLOOR = 1e-16  # log(1e-16) ~ -36.8 stands in for an exact match


def zero_neurons(net: Network) -> list[tuple[int, int]]:
    """(layer, index) of hidden neurons whose incoming weight vector is zero."""
    return [(k + 1, int(j)) for k in range(net.depth)
            for j in np.flatnonzero(np.linalg.norm(net.weights[k], axis=0) == 0)]


def normalize_scaling(net: Network) -> Network:
    """Rescale every hidden neuron to unit-norm incoming weights, compensating downstream."""
    ws = [w.copy() for w in net.weights]
    bs = [b.copy() for b in net.biases]
    for k in range(net.depth):
        norms = np.linalg.norm(ws[k], axis=0)
        zero = norms == 0
        if zero.any():
            logger.warning("layer %d: %d neurons with zero incoming weights left unscaled", k + 1, zero.sum())
        norms[zero] = 1.0
        ws[k] /= norms
        bs[k] /= norms
        ws[k + 1] *= norms[:, None]
    return net.replace(ws, bs)


def canonicalize(net: Network) -> Network:
    """Unit-norm incoming weights, then neurons of each layer sorted lexicographically by incoming weights."""
    c = normalize_scaling(net)
    for k in range(1, c.depth + 1):
        # lexsort treats the last key as primary; rounding keeps the order stable under rescaling noise
        key = np.round(c.weights[k - 1], 12)[::-1]
        c = apply_permutation(c, k, np.lexsort(key))
    return c


def log_normalized_error(est: np.ndarray, true: np.ndarray) -> float:
    num = float(np.linalg.norm(est - true))
    den = float(np.linalg.norm(est))
    if den == 0:
        return math.inf if num > 0 else math.log(ERROR_FLOOR)
    return math.log(max(num / den, ERROR_FLOOR))


@dataclass
class LayerAlignment:
    layer: int
    permutation: list[int]          # estimated neuron j -> true neuron (or -1)
    signs: list[int]                # sign applied to estimate j to match truth
    matched: list[bool]
    weight_log_error: float
    bias_log_error: float
    n_estimated: int
    n_true: int
    sign_mismatches: int = 0        # sign-resolved neurons that only match after flipping

    @property
    def n_unmatched_true(self) -> int:
        return self.n_true - sum(self.matched)


@dataclass
class AlignmentReport:
    layers: list[LayerAlignment]
    functional_max: float | None = None
    functional_mean: float | None = None
    functional_scale: float | None = None
    query_count: int | None = None
    queries_per_parameter: float | None = None
    log_base: str = LOG_BASE
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "log_base": self.log_base,
            "layers": [vars(la) | {"n_unmatched_true": la.n_unmatched_true} for la in self.layers],
            "functional_max": self.functional_max,
            "functional_mean": self.functional_mean,
            "functional_scale": self.functional_scale,
            "query_count": self.query_count,
            "queries_per_parameter": self.queries_per_parameter,
            **self.extra,
        }

    def table(self) -> str:
        lines = [f"{'layer':>5} {'est':>4} {'true':>4} {'matched':>7} {'log err W':>10} {'log err b':>10}"]
        for la in self.layers:
            lines.append(f"{la.layer:>5} {la.n_estimated:>4} {la.n_true:>4} {sum(la.matched):>7} "
                         f"{la.weight_log_error:>10.3f} {la.bias_log_error:>10.3f}")
        if self.functional_max is not None:
            lines.append(f"functional max |diff| = {self.functional_max:.3e} (output scale {self.functional_scale:.3e})")
        if self.queries_per_parameter is not None:
            lines.append(f"queries = {self.query_count}, per parameter = {self.queries_per_parameter:.1f}")
        lines.append(f"(natural log)")
        return "\n".join(lines)


def align(estimate: RecoveredModel, truth: Network, n_samples: int = 0, radius: float = 10.0,
          seed: int = 0) -> AlignmentReport:
    """Match estimated neurons to true ones layer by layer and report log normalized errors.

    The matching cost between two unit-norm neurons is the smaller of the
    distances (weights and bias together) with and without flipping the estimate's sign.
    """
    true_c = normalize_scaling(truth)
    prev_perm = list(range(truth.n_in))  # estimated input coordinate -> true coordinate
    reports = []
    for k, layer in enumerate(estimate.layers[:truth.depth], start=1):
        rows_est = [i for i, t in enumerate(prev_perm) if t >= 0]
        rows_true = [prev_perm[i] for i in rows_est]
        E = layer.weights[rows_est, :]
        mask = ~layer.missing[rows_est, :]
        T = true_c.weights[k - 1][rows_true, :]
        bE, bT = layer.biases, true_c.biases[k - 1]
        n_est, n_true = E.shape[1], T.shape[1]
        cost = np.empty((n_est, n_true))
        sgn = np.empty((n_est, n_true))
        for j in range(n_est):
            # bias included so parallel planes are told apart
            e = np.append(np.where(mask[:, j], E[:, j], 0.0), np.nan_to_num(bE[j]))
            t = np.vstack([np.where(mask[:, j][:, None], T, 0.0), bT])
            d_plus = np.linalg.norm(t - e[:, None], axis=0)
            d_minus = np.linalg.norm(t + e[:, None], axis=0)
            cost[j] = np.minimum(d_plus, d_minus)
            sgn[j] = np.where(d_plus <= d_minus, 1.0, -1.0)
        r, c = linear_sum_assignment(cost)
        perm = [-1] * n_est
        signs = [1] * n_est
        for j, l in zip(r, c):
            perm[j] = int(l)
            signs[j] = int(sgn[j, l])
        matched = [p >= 0 for p in perm]
        js = [j for j in range(n_est) if matched[j]]
        ls = [perm[j] for j in js]
        s = np.array([signs[j] for j in js], dtype=float)
        m = mask[:, js]
        Em = np.where(m, E[:, js] * s, 0.0)
        Tm = np.where(m, T[:, ls], 0.0)
        # a neuron with missing weights has an unknown scale: fit it on the known entries
        fit = np.ones(len(js))
        for c_idx in np.flatnonzero(~m.all(axis=0)):
            e = Em[:, c_idx]
            if e @ e > 0:
                fit[c_idx] = (e @ Tm[:, c_idx]) / (e @ e)
        Em = Em * fit
        w_err = log_normalized_error(Em, Tm) if js else math.nan
        b_err = log_normalized_error(bE[js] * s * fit, bT[ls]) if js else math.nan
        mism = sum(1 for j, sj in zip(js, s) if layer.sign_resolved[j] and sj < 0)
        reports.append(LayerAlignment(k, perm, signs, matched, w_err, b_err, n_est, n_true, mism))
        prev_perm = perm

    rep = AlignmentReport(reports, query_count=estimate.query_count or None)
    if estimate.query_count and estimate.n_params:
        rep.queries_per_parameter = estimate.query_count / estimate.n_params
    if n_samples and estimate.output_weights is not None and estimate.widths[-1] == truth.n_out:
        fmax, fmean = functional_distance(estimate.to_network(), truth, seed, n_samples, radius)
        rep.functional_max, rep.functional_mean = fmax, fmean
        rep.functional_scale = output_scale(truth, seed, n_samples, radius)
    return rep


def sample_ball(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    u = rng.normal(size=(n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    return u * r[:, None]


def functional_distance(net_a: Network, net_b: Network, seed: int = 0, n_samples: int = 1000,
                        radius: float = 10.0) -> tuple[float, float]:
    """Max and mean absolute output difference over points drawn uniformly from a ball."""
    if net_a.n_in != net_b.n_in or net_a.n_out != net_b.n_out:
        raise ValueError("networks have different input/output dimensions")
    x = sample_ball(np.random.default_rng(seed), n_samples, net_a.n_in, radius)
    d = np.abs(forward(net_a, x) - forward(net_b, x))
    return float(d.max()), float(d.mean())


def output_scale(net: Network, seed: int = 0, n_samples: int = 1000, radius: float = 10.0) -> float:
    x = sample_ball(np.random.default_rng(seed), n_samples, net.n_in, radius)
    return float(np.abs(forward(net, x)).max())

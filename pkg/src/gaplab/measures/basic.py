"""Output, architecture, norm, path and gradient-inner-product measures.

Everything here consumes the fused network: per-layer weight tensors are
the conv kernels after batch-norm folding, ``d`` counts conv layers, and
per-layer Frobenius quantities include bias vectors (spectral norms are
properties of the linear operator and exclude them). Products across
layers are accumulated in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import ops
from ..convspec import layer_spectral_norm
from ..network import Network
from ..train import ModelRecord


@dataclass
class MarginStats:
    margins: np.ndarray  # per-example, training split
    gamma: float  # nearest-rank percentile of margins
    input_norm_bound: float  # max l2 norm over training inputs
    mean_cross_entropy: float
    neg_entropy: float
    train_error: float


def nearest_rank_percentile(values: np.ndarray, percentile: float) -> float:
    """Nearest-rank percentile: element ceil(q * m) of the sorted sample."""
    m = len(values)
    rank = max(1, math.ceil(percentile / 100.0 * m))
    return float(np.sort(values)[rank - 1])


def margin_stats(net: Network, x: np.ndarray, y: np.ndarray, percentile: float, batch: int = 512) -> MarginStats:
    """One pass over the training split: margins, CE, entropy, error, B."""
    margins = np.empty(len(x))
    total_ce = 0.0
    total_ent = 0.0
    wrong = 0
    max_norm_sq = 0.0
    for start in range(0, len(x), batch):
        xb, yb = x[start : start + batch], y[start : start + batch]
        logits = net.forward(xb, train=False)
        loss, probs = ops.softmax_cross_entropy(logits, yb)
        total_ce += float(loss.sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(probs > 0, probs * np.log(probs), 0.0)
        total_ent += float(plogp.sum())
        true = logits[np.arange(len(yb)), yb].astype(np.float64)
        masked = logits.astype(np.float64).copy()
        masked[np.arange(len(yb)), yb] = -np.inf
        margins[start : start + len(yb)] = true - masked.max(axis=1)
        wrong += int((logits.argmax(axis=1) != yb).sum())
        max_norm_sq = max(max_norm_sq, float((xb.astype(np.float64) ** 2).sum(axis=(1, 2, 3)).max()))
    return MarginStats(
        margins=margins,
        gamma=nearest_rank_percentile(margins, percentile),
        input_norm_bound=math.sqrt(max_norm_sq),
        mean_cross_entropy=total_ce / len(x),
        neg_entropy=total_ent / len(x),
        train_error=wrong / len(x),
    )


def output_measures(stats: MarginStats, m: int) -> dict:
    out = {
        "cross-entropy": stats.mean_cross_entropy,
        "neg-entropy": stats.neg_entropy,
    }
    if stats.gamma > 0:
        out["inv-margin-sq"] = 1.0 / stats.gamma**2
    return out


def vc_measures(conv_specs, n: int, kappa: int, delta: float) -> dict:
    """Architecture-only measures: parameter count term and the VC bound."""
    d = len(conv_specs)
    param_term = sum(s.k**2 * s.c_in * (s.c_out + 1) for s in conv_specs)
    log_term = math.log2(6 * d * n) ** 3
    mu_vc = (4000.0 * kappa * math.sqrt(d * log_term * param_term) + math.sqrt(math.log(1.0 / delta))) ** 2
    return {"vc-dim": mu_vc, "num-params": float(param_term)}


def layer_tensors(net: Network) -> list[tuple[np.ndarray, np.ndarray]]:
    """(weight, bias) per conv layer of a fused network."""
    return [(c.params["weight"], c.params["bias"]) for c in net.conv_layers()]


def init_conv_tensors(record: ModelRecord) -> list[tuple[np.ndarray, np.ndarray]]:
    """(weight, bias) at initialization, aligned with the fused conv layers."""
    names = record.network.trainable()
    out = []
    for (layer, name), tensor in zip(names, record.init):
        if name == "weight":
            current = tensor
        elif name == "bias":
            out.append((current, tensor))
    return out


def norm_measures(net: Network, record: ModelRecord, stats: MarginStats, m: int, config) -> dict:
    """Spectral- and Frobenius-family measures (margin variants included)."""
    tensors = layer_tensors(net)
    init = init_conv_tensors(record)
    specs = net.conv_specs
    d = len(tensors)
    n = net.input_shape[1]
    gamma_sq = stats.gamma**2 if stats.gamma > 0 else None

    spec_sq = np.empty(d)
    fro_sq = np.empty(d)
    dist_fro_sq = np.empty(d)
    dist_spec_sq = np.empty(d)
    for i, ((w, b), (w0, b0), spec) in enumerate(zip(tensors, init, specs)):
        s = layer_spectral_norm(
            w, spec.n_in, spec.stride, spec.padding,
            method=config.spectral_method, tol=config.spectral_tol, max_iter=config.spectral_iters,
        )
        spec_sq[i] = s**2
        fro_sq[i] = float((w.astype(np.float64) ** 2).sum() + (b.astype(np.float64) ** 2).sum())
        dw = w.astype(np.float64) - w0.astype(np.float64)
        db = b.astype(np.float64) - b0.astype(np.float64)
        dist_fro_sq[i] = float((dw**2).sum() + (db**2).sum())
        ds = layer_spectral_norm(
            dw, spec.n_in, spec.stride, spec.padding,
            method=config.spectral_method, tol=config.spectral_tol, max_iter=config.spectral_iters,
        )
        dist_spec_sq[i] = ds**2

    with np.errstate(divide="ignore", invalid="ignore"):
        # an all-zero layer legitimately zeroes the products and leaves the
        # ratio measures undefined (flagged non-finite downstream)
        log_prod_spec = float(np.log(spec_sq).sum())
        log_prod_fro = float(np.log(fro_sq).sum())
        fro_over_spec = float((fro_sq / spec_sq).sum())
        dist_over_spec = float((dist_fro_sq / spec_sq).sum())
    front = (
        84.0 * stats.input_norm_bound * sum(s.k * math.sqrt(s.c_out) for s in specs)
        + math.sqrt(math.log(4 * n * n * d))
    ) ** 2

    out = {
        "prod-of-spec": math.exp(log_prod_spec),
        "sum-of-spec": d * math.exp(log_prod_spec / d),
        "fro-over-spec": fro_over_spec,
        "dist-spec-init": float(dist_spec_sq.sum()),
        "prod-of-fro": math.exp(log_prod_fro),
        "sum-of-fro": d * math.exp(log_prod_fro / d),
        "frob-distance": float(dist_fro_sq.sum()),
        "param-norm": float(fro_sq.sum()),
    }
    if gamma_sq is not None:
        log_gamma_sq = math.log(gamma_sq)
        delta = config.delta
        out.update(
            {
                "prod-of-spec-margin": math.exp(log_prod_spec - log_gamma_sq),
                "sum-of-spec-margin": d * math.exp((log_prod_spec - log_gamma_sq) / d),
                "prod-of-fro-margin": math.exp(log_prod_fro - log_gamma_sq),
                "sum-of-fro-margin": d * math.exp((log_prod_fro - log_gamma_sq) / d),
                "spec-init-main": math.exp(log_prod_spec) * dist_over_spec / gamma_sq,
                "spec-orig-main": math.exp(log_prod_spec) * fro_over_spec / gamma_sq,
                "spec-init": (front * math.exp(log_prod_spec) * dist_over_spec + math.log(m / delta)) / gamma_sq,
                "spec-orig": (front * math.exp(log_prod_spec) * fro_over_spec + math.log(m / delta)) / gamma_sq,
            }
        )
    return out


def path_norm(net: Network) -> float:
    """Sum of logits of the squared-parameter network on an all-ones input."""
    squared = net.astype(np.float64)
    for layer in squared.conv_layers():
        layer.params["weight"] = layer.params["weight"] ** 2
        layer.params["bias"] = layer.params["bias"] ** 2
    ones = np.ones((1, *net.input_shape), dtype=np.float64)
    logits = squared.forward(ones, train=False)
    return float(logits.sum())


def fisher_rao(net: Network, x: np.ndarray, y: np.ndarray, batch: int = 512) -> float:
    """((d+1)^2 / m) * sum_i <w, grad_w loss_i>^2 over the training split.

    The parameter-direction derivative of each per-example loss is taken
    with one forward-mode pass per batch, tangent = the parameters
    themselves.
    """
    d = len(net.conv_layers())
    tangents = [({"weight": l.params["weight"], "bias": l.params["bias"]} if l.params else None) for l in net.layers]
    total = 0.0
    for start in range(0, len(x), batch):
        xb, yb = x[start : start + batch], y[start : start + batch]
        logits = net.forward(xb, train=False)
        _, probs = ops.softmax_cross_entropy(logits, yb)
        logits_dot = net.jvp(tangents, xb.shape)
        d_logits = probs.copy()
        d_logits[np.arange(len(yb)), yb] -= 1.0
        inner = (d_logits * logits_dot.astype(np.float64)).sum(axis=1)
        total += float((inner**2).sum())
    return (d + 1) ** 2 / len(x) * total

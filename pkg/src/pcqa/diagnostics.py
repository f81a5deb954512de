"""Gradient diagnostics: finite-difference checks for every network block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .knn import knn_graph
from .model import (ModelConfig, cross_attention, edge_conv, graph_norm,
                    init_params, node_aggregate, regress, transformer_block)

# small dims keep full-coordinate finite differencing cheap
_CHECK_CFG = ModelConfig(k=3, layer_dims=(4, 4, 8), embed_dim=16, num_heads=2,
                         ff_dim=16, regressor_hidden=8)


@dataclass
class BlockReport:
    name: str
    max_rel_error: float
    passed: bool
    checked_tensors: int


def _scalarize(out: Tensor, noise: np.ndarray) -> Tensor:
    """Project onto a fixed random direction so every output entry matters."""
    flat = ad.reshape(ad.mul(out, Tensor(noise)), (-1,))
    return ad.mean_over_axis(flat, axis=0)


def _check_block(name: str, f_builder, tensors: dict[str, Tensor], tol: float,
                 seed: int) -> BlockReport:
    worst = 0.0
    ok = True
    for tname, t in tensors.items():
        report = grad_check(f_builder(t), t, tol=tol, seed=seed)
        worst = max(worst, report.max_rel_error)
        ok = ok and report.passed
    return BlockReport(name, worst, ok, len(tensors))


def gradient_suite(seed: int = 0, tol: float = 1e-4) -> list[BlockReport]:
    """Check analytic gradients of each block against central differences,
    for the block input and a sample of its parameters."""
    cfg = _CHECK_CFG
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed=seed)
    reports = []

    pts = rng.normal(0.0, 1.0, (8, 3))
    graph = knn_graph(pts, cfg.k)
    conv, norm = params.geometry.layers[0]

    x_in = Tensor(pts.copy(), requires_grad=True)
    noise = rng.normal(0.0, 1.0, (8, cfg.layer_dims[0]))
    reports.append(_check_block(
        "edge_conv",
        lambda t: (lambda _: _scalarize(edge_conv(graph, x_in, conv), noise)),
        {"input": x_in, "weight": conv.weight, "bias": conv.bias}, tol, seed))

    gx = Tensor(rng.normal(0.0, 1.0, (8, 4)), requires_grad=True)
    gnoise = rng.normal(0.0, 1.0, (8, 4))
    norm.alpha.data = 1.0 + 0.1 * rng.normal(0.0, 1.0, 4)  # off identity for generality
    reports.append(_check_block(
        "graph_norm",
        lambda t: (lambda _: _scalarize(graph_norm(gx, norm), gnoise)),
        {"input": gx, "alpha": norm.alpha, "gamma": norm.gamma, "beta": norm.beta},
        tol, seed))

    ax = Tensor(rng.normal(0.0, 1.0, (8, 4)), requires_grad=True)
    anoise = rng.normal(0.0, 1.0, (8,))
    reports.append(_check_block(
        "node_aggregate",
        lambda t: (lambda _: _scalarize(node_aggregate(ax), anoise)),
        {"input": ax}, tol, seed))

    hx = Tensor(rng.normal(0.0, 1.0, (5, cfg.embed_dim)), requires_grad=True)
    hr = Tensor(rng.normal(0.0, 1.0, (5, cfg.embed_dim)), requires_grad=True)
    cnoise = rng.normal(0.0, 1.0, (5, cfg.embed_dim))
    reports.append(_check_block(
        "cross_attention",
        lambda t: (lambda _: _scalarize(cross_attention(hx, hr, params.cross, cfg),
                                        cnoise)),
        {"hidden_xyz": hx, "hidden_rgb": hr, "wq0": params.cross.wq[0],
         "wv1": params.cross.wv[1], "wo": params.cross.wo}, tol, seed))

    tx = Tensor(rng.normal(0.0, 1.0, (5, cfg.embed_dim)), requires_grad=True)
    tnoise = rng.normal(0.0, 1.0, (5, cfg.embed_dim))
    reports.append(_check_block(
        "transformer_block",
        lambda t: (lambda _: _scalarize(transformer_block(tx, params, cfg), tnoise)),
        {"input": tx, "ff_w1": params.ff.w1, "ln1_gamma": params.ln1.gamma,
         "self_wk0": params.self_attn.wk[0], "ln2_beta": params.ln2.beta}, tol, seed))

    rv = Tensor(rng.normal(0.0, 1.0, cfg.embed_dim), requires_grad=True)
    reports.append(_check_block(
        "regressor",
        lambda t: (lambda _: regress(rv, params)),
        {"input": rv, "w1": params.reg_w1, "b1": params.reg_b1,
         "w2": params.reg_w2, "b2": params.reg_b2}, tol, seed))

    return reports

"""Finite-difference check of the full model + loss."""
from __future__ import annotations

import numpy as np

from . import tensor_core as tc
from .losses import LossWeights, total_loss
from .model import ModelConfig, bind_params, forward_graph, init_params

TINY = ModelConfig(T=4, n=6, n_h=5, d_att1=4, n_det1=5, n_L=3, d_att2=3, n_cls=4, C=2)
# every term switched on with weights large enough to matter
CHECK_WEIGHTS = LossWeights(lambda1=0.1, lambda2=0.1, lambda_d=0.5, lambda_att=0.1)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def _tiny_batch(config: ModelConfig, rng):
    labels = np.array([1 + k % config.C for k in range(2)] + [0, 0])
    feats = rng.uniform(-2, 2, size=(len(labels), config.T, config.n))
    freq = np.bincount(labels, minlength=config.C + 1) + 1.0
    return feats, labels, freq / freq.sum()


def _loss(params, feats, labels, freq, config, weights):
    g = tc.Graph()
    p = bind_params(g, params)
    parts = total_loss(forward_graph(g.constant(feats), p, config), labels, weights, freq)
    return g, parts.total


def gradient_check(config: ModelConfig = TINY, seed: int = 0, h: float = 1e-5,
                   weights: LossWeights = CHECK_WEIGHTS) -> dict[str, float]:
    """Max elementwise relative error per parameter tensor (central differences)."""
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    # non-zero biases so every path is exercised
    for k, v in params.items():
        if v.ndim == 1:
            v += rng.uniform(-0.5, 0.5, v.shape)
    feats, labels, freq = _tiny_batch(config, rng)
    g, loss = _loss(params, feats, labels, freq, config, weights)
    analytic = tc.backward(g, loss)
    report = {}
    for name, value in params.items():
        numeric = np.zeros_like(value)
        flat = value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(_loss(params, feats, labels, freq, config, weights)[1].value)
            flat[i] = orig - h
            down = float(_loss(params, feats, labels, freq, config, weights)[1].value)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        report[name] = float(relative_error(analytic[name], numeric).max())
    return report

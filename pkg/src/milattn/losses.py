"""Training objective: MIL ranking, weighted cross-entropy, attention penalties."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .tensor_core import Var

PROB_FLOOR = 1e-12


@dataclass
class LossWeights:
    lambda1: float = 8e-5      # temporal smoothness
    lambda2: float = 8e-5      # sparsity
    lambda_d: float = 0.9      # detection vs classification mix
    lambda_att: float = 1e-6   # attention regulariser
    pairing: str = "pairs"     # "pairs" or "batch" max for the hinge

    def __post_init__(self):
        if not 0.0 <= self.lambda_d <= 1.0:
            raise ValueError(f"lambda_d must lie in [0, 1], got {self.lambda_d}")
        for name in ("lambda1", "lambda2", "lambda_att"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.pairing not in ("pairs", "batch"):
            raise ValueError(f"pairing must be 'pairs' or 'batch', got {self.pairing!r}")


def mil_ranking_loss(S_a: Var, S_n: Var, lambda1: float, lambda2: float,
                     pairing: str = "pairs") -> Var:
    """Hinge ranking between the top anomaly and top normal segment score.

    ``S_a`` and ``S_n`` are ``(K, T)``; row k of each forms a pair. The hinge
    is averaged over pairs; smoothness and sparsity are summed over the
    anomaly videos, each video separately.
    """
    if S_a.shape != S_n.shape or S_a.value.ndim != 2:
        raise ValueError(f"unpaired score sets: {S_a.shape} vs {S_n.shape}")
    K, T = S_a.shape
    if K == 0:
        raise ValueError("empty batch")
    if pairing == "pairs":
        hinge = tc.mean(tc.relu(1.0 - tc.max_(S_a, axis=1) + tc.max_(S_n, axis=1)))
    elif pairing == "batch":
        hinge = tc.relu(1.0 - tc.max_(S_a) + tc.max_(S_n))
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    loss = hinge
    if lambda1 and T > 1:
        diff = tc.slice_(S_a, 1, 0, T - 1) - tc.slice_(S_a, 1, 1, T)
        loss = loss + lambda1 * tc.sum_(tc.square(diff))
    if lambda2:
        loss = loss + lambda2 * tc.sum_(S_a)
    return loss


def classification_loss(y_hat: Var, labels, class_freq) -> Var:
    """Mean over videos of ``-sum_i (1 - f_i) y_i log y_hat_i``."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    n_out = y_hat.shape[-1]
    if labels.min() < 0 or labels.max() >= n_out:
        raise ValueError(f"label out of range for {n_out} classes: {labels.tolist()}")
    class_freq = np.asarray(class_freq, dtype=np.float64)
    if class_freq.shape != (n_out,):
        raise ValueError(f"class frequencies must have length {n_out}")
    weighted = np.eye(n_out)[labels] * (1.0 - class_freq)
    if y_hat.value.ndim == 1:
        weighted = weighted[0]
    logp = tc.log(tc.maximum(y_hat, PROB_FLOOR))
    per_video = tc.sum_(tc.mul(logp, weighted), axis=-1)
    return -1.0 * tc.mean(per_video)


def attention_regularizer(alpha: Var | None, beta: Var | None) -> Var:
    """Mean over videos of ``sum_j (1 - alpha_j)^2 + ||beta||_2``.

    Either term is dropped when its attention is absent.
    """
    if alpha is not None and beta is not None and alpha.shape != beta.shape:
        raise ValueError(f"attention length mismatch: {alpha.shape} vs {beta.shape}")
    terms = []
    if alpha is not None:
        terms.append(tc.sum_(tc.square(1.0 - alpha), axis=-1))
    if beta is not None:
        terms.append(tc.sqrt(tc.sum_(tc.square(beta), axis=-1)))
    if not terms:
        raise ValueError("no attention weights to regularise")
    per_video = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    return tc.mean(per_video)


@dataclass
class LossParts:
    total: Var
    detection: float
    classification: float
    attention: float


def total_loss(trace, labels, weights: LossWeights, class_freq) -> LossParts:
    """Joint objective over a batch trace (Vars with a leading video axis).

    Videos with label > 0 are anomalies; the k-th anomaly row pairs with the
    k-th normal row.
    """
    labels = np.asarray(labels, dtype=np.intp)
    anom = np.flatnonzero(labels > 0)
    norm = np.flatnonzero(labels == 0)
    if len(anom) == 0 or len(norm) == 0:
        raise ValueError("batch needs both anomaly and normal videos")
    if weights.pairing == "pairs" and len(anom) != len(norm):
        raise ValueError(f"pairing needs equal counts, got {len(anom)} anomaly / {len(norm)} normal")
    S = trace.S
    loss_d = mil_ranking_loss(tc.gather(S, anom), tc.gather(S, norm),
                              weights.lambda1, weights.lambda2, weights.pairing)
    loss_c = classification_loss(trace.y_hat, labels, class_freq)
    total = weights.lambda_d * loss_d + (1.0 - weights.lambda_d) * loss_c
    att_value = 0.0
    if trace.alpha is not None or trace.beta is not None:
        loss_att = attention_regularizer(trace.alpha, trace.beta)
        att_value = float(loss_att.value)
        total = total + weights.lambda_att * loss_att
    return LossParts(total, float(loss_d.value), float(loss_c.value), att_value)


@dataclass
class ClassWeights:
    freq: np.ndarray

    @property
    def factors(self) -> np.ndarray:
        return 1.0 - self.freq


def compute_class_weights(labels, n_classes: int) -> ClassWeights:
    """Class frequencies over training labels; ``n_classes`` counts Normal."""
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size == 0:
        raise ValueError("no training samples")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label out of range for {n_classes} classes")
    counts = np.bincount(labels, minlength=n_classes)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise ValueError(f"classes without training samples: {empty.tolist()}")
    return ClassWeights(counts / counts.sum())

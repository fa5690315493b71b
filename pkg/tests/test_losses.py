import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from milattn import tensor_core as tc
from milattn.losses import (LossWeights, attention_regularizer, classification_loss,
                            compute_class_weights, mil_ranking_loss, total_loss)
from milattn.model import ForwardTrace


def mil(Sa, Sn, l1=0.0, l2=0.0, pairing="pairs"):
    g = tc.Graph()
    return float(mil_ranking_loss(g.constant(np.atleast_2d(Sa)), g.constant(np.atleast_2d(Sn)),
                                  l1, l2, pairing).value)


def ce(y_hat, labels, freq):
    g = tc.Graph()
    return float(classification_loss(g.constant(y_hat), labels, freq).value)


def att(alpha, beta):
    g = tc.Graph()
    return float(attention_regularizer(g.constant(alpha), g.constant(beta)).value)


# ---------------------------------------------------------------- MIL ranking

def test_mil_examples():
    assert mil([0.2, 1.0], [0.0, 0.0]) == 0.0
    assert mil([0.3, 0.6], [0.6, 0.1]) == 1.0
    # smoothing 0.72, sparsity 1.2, hinge 0.2
    assert abs(mil([0.2, 0.8, 0.2], [0.0, 0.0, 0.0], 1.0, 1.0) - 2.12) < 1e-9


def test_mil_smoothness_is_per_video():
    # no difference term joins the last segment of video 0 to the first of video 1
    Sa = np.array([[0.5, 0.5], [0.1, 0.1]])
    Sn = np.zeros((2, 2))
    hinge = np.mean([0.5, 0.9])
    assert abs(mil(Sa, Sn, l1=1.0) - hinge) < 1e-12


def test_mil_pairs_vs_batch_max():
    Sa = np.array([[0.9, 0.1], [0.2, 0.3]])
    Sn = np.array([[0.1, 0.2], [0.4, 0.1]])
    assert abs(mil(Sa, Sn) - np.mean([1 - 0.9 + 0.2, 1 - 0.3 + 0.4])) < 1e-12
    assert abs(mil(Sa, Sn, pairing="batch") - (1 - 0.9 + 0.4)) < 1e-12


def test_mil_errors():
    g = tc.Graph()
    with pytest.raises(ValueError):
        mil_ranking_loss(g.constant(np.ones((2, 3))), g.constant(np.ones((1, 3))), 0, 0)
    with pytest.raises(ValueError):
        mil_ranking_loss(g.constant(np.ones((0, 3))), g.constant(np.ones((0, 3))), 0, 0)


scores = arrays(np.float64, (3, 5), elements=st.floats(1e-6, 1 - 1e-6))


@settings(max_examples=100, deadline=None)
@given(Sa=scores, Sn=scores, l1=st.floats(0, 1), l2=st.floats(0, 1))
def test_mil_bounds(Sa, Sn, l1, l2):
    assert mil(Sa, Sn, l1, l2) >= 0
    h = mil(Sa, Sn)
    assert 0 < h < 2
    if np.all(Sa.max(1) >= Sn.max(1)):
        assert h <= 1


@settings(max_examples=100, deadline=None)
@given(Sa=scores, Sn=scores, k=st.integers(0, 2), bump=st.floats(0, 1))
def test_mil_hinge_monotone_in_anomaly_max(Sa, Sn, k, bump):
    raised = Sa.copy()
    t = np.argmax(raised[k])
    raised[k, t] = min(1 - 1e-6, raised[k, t] + bump)
    assert mil(raised, Sn) <= mil(Sa, Sn) + 1e-15


# ---------------------------------------------------------------- cross-entropy

def test_classification_examples():
    assert ce(np.eye(3)[1], [1], [0.2, 0.3, 0.5]) == 0.0
    assert abs(ce(np.full(3, 1 / 3), [0], [0.5, 0.25, 0.25]) - (-0.5 * np.log(1 / 3))) < 1e-12
    assert abs(ce(np.full(3, 1 / 3), [0], [0.5, 0.25, 0.25]) - 0.5493) < 1e-4


@settings(max_examples=50, deadline=None)
@given(logits=arrays(np.float64, (4, 5), elements=st.floats(-5, 5)),
       labels=arrays(np.intp, 4, elements=st.integers(0, 4)))
def test_uniform_weights_scale_standard_ce(logits, labels):
    p = np.exp(logits - logits.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    standard = -np.mean(np.log(np.maximum(p[np.arange(4), labels], 1e-12)))
    assert abs(ce(p, labels, np.full(5, 0.2)) - 0.8 * standard) < 1e-9
    assert ce(p, labels, np.full(5, 0.2)) >= 0


def test_classification_clamps_and_validates():
    assert np.isfinite(ce(np.array([0.0, 1.0]), [0], [0.5, 0.5]))
    with pytest.raises(ValueError):
        ce(np.full(3, 1 / 3), [3], np.full(3, 1 / 3))


# ---------------------------------------------------------------- attention penalty

def test_attention_regularizer_examples():
    assert att(np.ones(4), np.zeros(4)) == 0.0
    assert att([1.0, 0.0], [0.0, 0.0]) == 1.0
    assert abs(att([0.5, 0.5], [3.0, 4.0]) - 5.5) < 1e-12


def test_attention_regularizer_batch_mean_and_errors():
    alpha = np.array([[1.0, 0.0], [0.5, 0.5]])
    beta = np.array([[0.0, 0.0], [3.0, 4.0]])
    assert abs(att(alpha, beta) - (1.0 + 5.5) / 2) < 1e-12
    with pytest.raises(ValueError):
        att(np.ones(3), np.ones(2))


# ---------------------------------------------------------------- total

def _batch_trace(rng, K=2, T=3, C=2):
    S = rng.uniform(0.05, 0.95, size=(2 * K, T))
    y_hat = rng.dirichlet(np.ones(C + 1), size=2 * K)
    alpha = rng.dirichlet(np.ones(T), size=2 * K)
    beta = rng.uniform(0.05, 0.95, size=(2 * K, T))
    labels = np.array([1 + k % C for k in range(K)] + [0] * K)
    return S, y_hat, alpha, beta, labels


def _total(S, y_hat, alpha, beta, labels, w, freq):
    g = tc.Graph()
    c = g.constant
    tr = ForwardTrace(c(alpha), c(beta), c(S), c(y_hat), None, None, None, None)
    return total_loss(tr, labels, w, freq)


def _oracle_parts(S, y_hat, alpha, beta, labels, w, freq):
    a, n = S[labels > 0], S[labels == 0]
    hinge = np.mean(np.maximum(0, 1 - a.max(1) + n.max(1)))
    smooth = sum(np.sum(np.diff(row) ** 2) for row in a)
    loss_d = hinge + w.lambda1 * smooth + w.lambda2 * a.sum()
    loss_c = np.mean([-(1 - freq[y]) * np.log(p[y]) for p, y in zip(y_hat, labels)])
    loss_att = np.mean([np.sum((1 - al) ** 2) + np.sqrt(np.sum(be ** 2))
                        for al, be in zip(alpha, beta)])
    return loss_d, loss_c, loss_att


def test_total_loss_degenerate_mixes(rng):
    S, y_hat, alpha, beta, labels = _batch_trace(rng)
    freq = np.array([0.5, 0.25, 0.25])
    d, c, _ = _oracle_parts(S, y_hat, alpha, beta, labels, LossWeights(), freq)
    only_d = _total(S, y_hat, alpha, beta, labels, LossWeights(lambda_d=1.0, lambda_att=0.0), freq)
    assert abs(float(only_d.total.value) - d) < 1e-9
    assert abs(only_d.classification - c) < 1e-9  # reported even with weight 0
    only_c = _total(S, y_hat, alpha, beta, labels, LossWeights(lambda_d=0.0, lambda_att=0.0), freq)
    assert abs(float(only_c.total.value) - c) < 1e-9


def test_total_loss_defaults_component_sum(rng):
    S, y_hat, alpha, beta, labels = _batch_trace(rng)
    freq = np.array([0.5, 0.25, 0.25])
    w = LossWeights()
    d, c, a = _oracle_parts(S, y_hat, alpha, beta, labels, w, freq)
    parts = _total(S, y_hat, alpha, beta, labels, w, freq)
    assert abs(float(parts.total.value) - (0.9 * d + 0.1 * c + 1e-6 * a)) < 1e-9
    assert abs(parts.attention - a) < 1e-9


def test_total_loss_needs_both_polarities(rng):
    S, y_hat, alpha, beta, _ = _batch_trace(rng)
    with pytest.raises(ValueError):
        _total(S, y_hat, alpha, beta, np.ones(4, dtype=int), LossWeights(), np.full(3, 1 / 3))
    with pytest.raises(ValueError):
        _total(S, y_hat, alpha, beta, np.zeros(4, dtype=int), LossWeights(), np.full(3, 1 / 3))


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_d=1.5)
    with pytest.raises(ValueError):
        LossWeights(lambda1=-1.0)
    assert LossWeights().lambda_att == 0.1e-5


# ---------------------------------------------------------------- class weights

def test_class_weights_examples():
    assert compute_class_weights([0, 0, 0, 1], 2).freq.tolist() == [0.75, 0.25]
    f = compute_class_weights(np.repeat(np.arange(4), 5), 4).freq
    assert np.allclose(f, 0.25)
    # 950 normal videos among 1900, the rest spread over 13 anomaly classes
    labels = np.concatenate([np.zeros(950, int), np.arange(950) % 13 + 1])
    cw = compute_class_weights(labels, 14)
    assert cw.freq[0] == 0.5 and abs(cw.freq.sum() - 1) < 1e-12


def test_class_weights_empty_class():
    with pytest.raises(ValueError, match="without training samples"):
        compute_class_weights([0, 0, 2], 3)

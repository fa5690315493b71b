"""Joint anomaly detection / classification network.

Pipeline per video (``T`` segments of ``n``-dim features)::

    F --LSTM--> H ; F_h = [H, F]
    alpha = attention_first(F)              softmax over segments
    F*    = F_h * (1 + alpha)
    S, F' = detection_forward(F*)           per-segment MLP, sigmoid scores
    beta  = attention_second(F')            sigmoid per segment
    F**   = F* * (1 + beta)
    y_hat = classify_forward(F**)           time-mean, 2-layer MLP, softmax

Every stage is written over :class:`~milattn.tensor_core.Var` and is shape
generic in leading axes, so a batch ``(B, T, n)`` goes through the same code
as a single ``(T, n)`` video.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor_core as tc
from .tensor_core import Graph, Var

PARAM_GROUPS = ("lstm", "attn1", "det", "attn2", "cls")


@dataclass
class ModelConfig:
    T: int = 32
    n: int = 7168
    n_h: int = 1024
    d_att1: int = 256
    n_det1: int = 512
    n_L: int = 96
    d_att2: int = 32
    n_cls: int = 256
    C: int = 13
    # ablation switches; all on is the full model
    use_lstm: bool = True
    use_attn1: bool = True
    use_attn2: bool = True

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type == "int" and (not isinstance(v, (int, np.integer)) or v <= 0):
                raise ValueError(f"ModelConfig.{f.name} must be a positive integer, got {v!r}")

    @property
    def width(self) -> int:
        """Row width of F_h, F* and F**."""
        return self.n + self.n_h if self.use_lstm else self.n


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes; the order is the checkpoint order."""
    c = config
    shapes: dict[str, tuple[int, ...]] = {}
    if c.use_lstm:
        for gate in "ifco":
            shapes[f"lstm_W_{gate}"] = (c.n + c.n_h, c.n_h)
        for gate in "ifco":
            shapes[f"lstm_b_{gate}"] = (c.n_h,)
    if c.use_attn1:
        shapes["attn1_W_L"] = (c.n, c.d_att1)
        shapes["attn1_b_L"] = (c.d_att1,)
        shapes["attn1_W_GL"] = (c.d_att1, c.T)
        shapes["attn1_b_GL"] = (c.T,)
    shapes["det_W1"] = (c.width, c.n_det1)
    shapes["det_b1"] = (c.n_det1,)
    shapes["det_W2"] = (c.n_det1, c.n_L)
    shapes["det_b2"] = (c.n_L,)
    shapes["det_W3"] = (c.n_L, 1)
    shapes["det_b3"] = (1,)
    if c.use_attn2:
        shapes["attn2_W_L"] = (c.n_L, c.d_att2)
        shapes["attn2_b_L"] = (c.d_att2,)
        shapes["attn2_W_GL"] = (c.T * c.d_att2, c.T)
        shapes["attn2_b_GL"] = (c.T,)
    shapes["cls_W1"] = (c.width, c.n_cls)
    shapes["cls_b1"] = (c.n_cls,)
    shapes["cls_W2"] = (c.n_cls, c.C + 1)
    shapes["cls_b2"] = (c.C + 1,)
    return shapes


def param_group(name: str) -> str:
    return name.split("_", 1)[0]


def init_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, LSTM forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 2:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif name == "lstm_b_f":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def check_params(params: dict[str, np.ndarray], config: ModelConfig) -> None:
    expected = param_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, found {params[name].shape}")


def bind_params(graph: Graph, params: dict[str, np.ndarray]) -> dict[str, Var]:
    return {name: graph.param(name, value) for name, value in params.items()}


# ---------------------------------------------------------------- stages

def lstm_forward(F: Var, p: dict[str, Var]) -> Var:
    """Many-to-many LSTM over axis -2 with zero initial state; returns h_1..h_T."""
    n = F.shape[-1]
    n_h = p["lstm_b_i"].shape[0]
    if p["lstm_W_i"].shape[0] != n + n_h:
        raise tc.ShapeError(f"LSTM expects inputs of width {p['lstm_W_i'].shape[0] - n_h}, got {n}")
    # gate order i, f, o, c: one sigmoid covers the first three blocks
    W = tc.concat([p[f"lstm_W_{k}"] for k in "ifoc"], axis=1)
    b = tc.concat([p[f"lstm_b_{k}"] for k in "ifoc"], axis=0)
    W_x, W_h = tc.slice_(W, 0, 0, n), tc.slice_(W, 0, n, n + n_h)
    # input projection for every step at once
    X = tc.matmul(F, W_x) + b
    T = F.shape[-2]
    lead = F.shape[:-2]
    h = F.graph.constant(np.zeros(lead + (n_h,)))
    c = h
    hs = []
    for t in range(T):
        z = tc.select(X, -2, t) + tc.matmul(h, W_h)
        gates = tc.sigmoid(tc.slice_(z, -1, 0, 3 * n_h))
        i, f, o = tc.split(gates, [n_h] * 3, axis=-1)
        c = f * c + i * tc.tanh(tc.slice_(z, -1, 3 * n_h, 4 * n_h))
        h = o * tc.tanh(c)
        hs.append(h)
    return tc.stack(hs, axis=-2)


def skip_concat(H: Var, F: Var) -> Var:
    """Row-wise ``[h_t ; F_t]``: LSTM output columns first."""
    if H.shape[:-1] != F.shape[:-1]:
        raise tc.ShapeError(f"segment count mismatch: {H.shape} vs {F.shape}")
    return tc.concat([H, F], axis=-1)


def attention_first(F: Var, p: dict[str, Var]) -> Var:
    """Softmax segment weights from a global latent of the l2-normalised input."""
    Fn = tc.l2_normalize(F)
    U = tc.matmul(Fn, p["attn1_W_L"]) + p["attn1_b_L"]
    glob = tc.mean(U, axis=-2)
    scores = tc.matmul(glob, p["attn1_W_GL"]) + p["attn1_b_GL"]
    if scores.shape[-1] != F.shape[-2]:
        raise tc.ShapeError(f"attention emits {scores.shape[-1]} weights for {F.shape[-2]} segments")
    return tc.softmax(scores, axis=-1)


def modulate(X: Var, w: Var) -> Var:
    """Row t becomes ``X_t + w_t * X_t``."""
    return X + tc.scale_rows(X, w)


def detection_forward(X: Var, p: dict[str, Var]) -> tuple[Var, Var]:
    """Time-distributed 3-layer perceptron. Returns (scores, layer-2 activations)."""
    h1 = tc.relu(tc.matmul(X, p["det_W1"]) + p["det_b1"])
    feat = tc.relu(tc.matmul(h1, p["det_W2"]) + p["det_b2"])
    logit = tc.matmul(feat, p["det_W3"]) + p["det_b3"]
    S = tc.sigmoid(tc.reshape(logit, logit.shape[:-1]))
    return S, feat


def attention_second(Fp: Var, p: dict[str, Var]) -> Var:
    V = tc.matmul(Fp, p["attn2_W_L"]) + p["attn2_b_L"]
    T, d = V.shape[-2], V.shape[-1]
    z = tc.reshape(V, V.shape[:-2] + (T * d,))
    scores = tc.matmul(z, p["attn2_W_GL"]) + p["attn2_b_GL"]
    return tc.sigmoid(scores)


def classify_forward(X: Var, p: dict[str, Var]) -> Var:
    pooled = tc.mean(X, axis=-2)
    hidden = tc.relu(tc.matmul(pooled, p["cls_W1"]) + p["cls_b1"])
    return tc.softmax(tc.matmul(hidden, p["cls_W2"]) + p["cls_b2"], axis=-1)


@dataclass
class ForwardTrace:
    """Stage outputs of one forward pass.

    Fields are Vars when produced by :func:`forward_graph`, numpy arrays when
    produced by :func:`model_forward`. ``alpha``/``beta`` are ``None`` when
    the corresponding attention is switched off.
    """

    alpha: object
    beta: object
    S: object
    y_hat: object
    F_h: object
    F_star: object
    F_prime: object
    F_2star: object


def forward_graph(F: Var, p: dict[str, Var], config: ModelConfig) -> ForwardTrace:
    if F.shape[-2:] != (config.T, config.n):
        raise tc.ShapeError(f"expected features (..., {config.T}, {config.n}), got {F.shape}")
    F_h = skip_concat(lstm_forward(F, p), F) if config.use_lstm else F
    alpha = attention_first(F, p) if config.use_attn1 else None
    F_star = modulate(F_h, alpha) if alpha is not None else F_h
    S, F_prime = detection_forward(F_star, p)
    beta = attention_second(F_prime, p) if config.use_attn2 else None
    F_2star = modulate(F_star, beta) if beta is not None else F_star
    y_hat = classify_forward(F_2star, p)
    return ForwardTrace(alpha, beta, S, y_hat, F_h, F_star, F_prime, F_2star)


def model_forward(F: np.ndarray, params: dict[str, np.ndarray], config: ModelConfig) -> ForwardTrace:
    """Evaluate the network on ``(T, n)`` or ``(B, T, n)`` features."""
    g = Graph()
    trace = forward_graph(g.constant(F), bind_params(g, params), config)
    return ForwardTrace(*(None if v is None else v.value.copy() for v in vars(trace).values()))

"""Dual-encoder, two-head multi-label classifier in numpy with hand-written backprop.

Each encoder is a character embedding table, a pooling step (masked mean, or
attention pooling queried by the [CLS] embedding) and a tanh projection. The two
encoders never share storage. Head A scores the 14 finding labels, head B the 7
body-part labels; both read the concatenated features.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from ..taxonomy import LabelSchema, enforce_exclusion, propagate
from .vocab import CLS_ID, PAD_ID, Vocab

EPS = 1e-7


@dataclass(frozen=True)
class EncoderConfig:
    embedding_dim: int = 64
    max_seq_len: int = 128
    pooling: str = "mean"  # "mean" | "attention"
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")
        if self.max_seq_len <= 0:
            raise ValueError("max_seq_len must be positive")
        if self.pooling not in ("mean", "attention"):
            raise ValueError(f"unknown pooling mode {self.pooling!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    gamma: float = 2.0
    alpha: float = 0.25
    loss_weight: float = 1.0
    epochs: int = 50
    batch_size: int = 16
    use_dual_encoder: bool = True
    use_hierarchy_head: bool = True
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.loss_weight < 0:
            raise ValueError("loss_weight must be >= 0")
        if self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("epochs must be >= 0 and batch_size > 0")

    @property
    def effective_loss_weight(self) -> float:
        return self.loss_weight if self.use_hierarchy_head else 0.0


ENCODER_KEYS = ("emb", "W", "b")


@dataclass
class ModelParams:
    vocab: Vocab
    encoder: EncoderConfig
    tensors: Dict[str, np.ndarray]
    use_dual_encoder: bool = True
    rng_seed: int = 0
    n_secondary: int = 14
    n_primary: int = 7
    loss_trace: List[float] = field(default_factory=list)

    def copy(self) -> "ModelParams":
        return replace(self, tensors={k: v.copy() for k, v in self.tensors.items()},
                       loss_trace=list(self.loss_trace))

    def names(self) -> List[str]:
        return list(self.tensors)


def init_params(vocab: Vocab, encoder: EncoderConfig, seed: int = 0, use_dual_encoder=True,
                n_secondary=14, n_primary=7) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, seeded."""
    rng = np.random.default_rng(seed)
    d, v = encoder.embedding_dim, len(vocab)

    def uni(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    t = {}
    for enc in ("A", "B"):
        t[f"{enc}.emb"] = rng.uniform(-1.0, 1.0, size=(v, d))
        t[f"{enc}.W"] = uni((d, d), d)
        t[f"{enc}.b"] = np.zeros(d)
    t["headA.W"] = uni((2 * d, n_secondary), 2 * d)
    t["headA.b"] = np.zeros(n_secondary)
    t["headB.W"] = uni((2 * d, n_primary), 2 * d)
    t["headB.b"] = np.zeros(n_primary)
    return ModelParams(vocab, encoder, t, use_dual_encoder, seed, n_secondary, n_primary)


# ---------------------------------------------------------------- text inputs

def report_text(report) -> str:
    return f"{report.findings}{report.impression}"


def clinical_text(report) -> str:
    return f"性别：{report.sex}。年龄：{report.age_years}。{report.clinical_desc}。{report.clinical_dx}。"


class Batch(NamedTuple):
    tok_a: np.ndarray
    tok_b: np.ndarray
    y_a: np.ndarray
    y_b: np.ndarray


def tokenize(params: ModelParams, report_texts: Sequence[str], clinical_texts: Sequence[str]):
    L = params.encoder.max_seq_len
    if params.use_dual_encoder:
        return (params.vocab.encode_many(report_texts, L),
                params.vocab.encode_many(clinical_texts, L))
    merged = [r + c for r, c in zip(report_texts, clinical_texts)]
    return params.vocab.encode_many(merged, L), None


def make_batch(params: ModelParams, corpus, schema: LabelSchema) -> Batch:
    """Tokenize (report, secondary-vector) pairs; primary targets come from propagation."""
    reports = [r for r, _ in corpus]
    tok_a, tok_b = tokenize(params, [report_text(r) for r in reports],
                            [clinical_text(r) for r in reports])
    y_a = np.array([[float(v) for v in lab] for _, lab in corpus]).reshape(len(corpus), -1)
    y_b = np.array([[float(v) for v in propagate(schema, lab)] for _, lab in corpus]).reshape(len(corpus), -1)
    return Batch(tok_a, tok_b, y_a, y_b)


# ---------------------------------------------------------------- forward / backward

def _encode_forward(t, enc, tok, cfg: EncoderConfig):
    emb = t[f"{enc}.emb"]
    x = emb[tok]  # (N, L, d)
    mask = (tok != PAD_ID).astype(np.float64)
    empty = mask.sum(axis=1) == 0
    mask[empty] = 1.0  # all-PAD rows pool over the PAD embedding
    if cfg.pooling == "mean":
        weights = mask / mask.sum(axis=1, keepdims=True)
        q = None
    else:
        q = emb[CLS_ID]
        scale = 1.0 / np.sqrt(cfg.embedding_dim)
        scores = (x @ q) * scale
        scores = np.where(mask > 0, scores, -np.inf)
        scores = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        weights = e / e.sum(axis=1, keepdims=True)
    pooled = np.einsum("nl,nld->nd", weights, x)
    h = np.tanh(pooled @ t[f"{enc}.W"] + t[f"{enc}.b"])
    cache = (tok, x, weights, q, pooled, h)
    return h, cache


def _encode_backward(t, enc, cache, dh, cfg: EncoderConfig, grads):
    tok, x, weights, q, pooled, h = cache
    dz = dh * (1.0 - h * h)
    grads[f"{enc}.W"] += pooled.T @ dz
    grads[f"{enc}.b"] += dz.sum(axis=0)
    dpooled = dz @ t[f"{enc}.W"].T
    dx = weights[:, :, None] * dpooled[:, None, :]
    demb = grads[f"{enc}.emb"]
    if cfg.pooling == "attention":
        scale = 1.0 / np.sqrt(cfg.embedding_dim)
        dw = np.einsum("nld,nd->nl", x, dpooled)
        ds = weights * (dw - (weights * dw).sum(axis=1, keepdims=True))
        dx += ds[:, :, None] * (q * scale)[None, None, :]
        demb[CLS_ID] += scale * np.einsum("nl,nld->d", ds, x)
    np.add.at(demb, tok, dx)


def features(params: ModelParams, tok_a, tok_b, dropout_rng=None, dropout_rate=0.0):
    """Return v_AB and the caches needed for backprop."""
    t = params.tensors
    h_a, cache_a = _encode_forward(t, "A", tok_a, params.encoder)
    if params.use_dual_encoder:
        h_b, cache_b = _encode_forward(t, "B", tok_b, params.encoder)
    else:
        h_b, cache_b = np.zeros_like(h_a), None
    v = np.concatenate([h_a, h_b], axis=1)
    drop = None
    if dropout_rng is not None and dropout_rate > 0:
        keep = 1.0 - dropout_rate
        drop = (dropout_rng.random(v.shape) < keep) / keep
        v = v * drop
    return v, (cache_a, cache_b, drop)


def sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def focal_terms(p, y, gamma, alpha):
    """Elementwise focal loss and its derivative w.r.t. the logit.

    ``p`` are sigmoid outputs; they are clamped to [EPS, 1-EPS] and the gradient is
    zero where the clamp is active.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pc = np.clip(p, EPS, 1.0 - EPS)
    sign = np.where(y > 0.5, 1.0, -1.0)
    pt = np.where(y > 0.5, pc, 1.0 - pc)
    at = np.where(y > 0.5, alpha, 1.0 - alpha)
    one_m = 1.0 - pt
    log_pt = np.log(pt)
    loss = -at * one_m ** gamma * log_pt
    dl_dpt = -at * one_m ** gamma / pt
    if gamma > 0:
        dl_dpt = dl_dpt + at * gamma * one_m ** (gamma - 1.0) * log_pt
    active = (p > EPS) & (p < 1.0 - EPS)
    dz = np.where(active, dl_dpt * sign * p * (1.0 - p), 0.0)
    return loss, dz


def focal_loss(probs, targets, gamma=2.0, alpha=0.25) -> float:
    """Mean focal loss over all entries."""
    loss, _ = focal_terms(probs, targets, gamma, alpha)
    return float(np.mean(loss))


def bce_loss(probs, targets) -> float:
    p = np.clip(np.asarray(probs, dtype=np.float64), EPS, 1.0 - EPS)
    y = np.asarray(targets, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def loss_and_grads(params: ModelParams, batch: Batch, cfg: TrainConfig, dropout_rng=None,
                   need_grads=True) -> Tuple[float, Dict[str, np.ndarray]]:
    t = params.tensors
    rate = params.encoder.dropout_rate if dropout_rng is not None else 0.0
    v, (cache_a, cache_b, drop) = features(params, batch.tok_a, batch.tok_b, dropout_rng, rate)
    lam = cfg.effective_loss_weight

    p_a = sigmoid(v @ t["headA.W"] + t["headA.b"])
    l_a, dz_a = focal_terms(p_a, batch.y_a, cfg.gamma, cfg.alpha)
    loss = float(l_a.mean())
    p_b = sigmoid(v @ t["headB.W"] + t["headB.b"])
    l_b, dz_b = focal_terms(p_b, batch.y_b, cfg.gamma, cfg.alpha)
    loss += lam * float(l_b.mean())
    if not need_grads:
        return loss, {}

    grads = {k: np.zeros_like(val) for k, val in t.items()}
    dz_a = dz_a / dz_a.size
    dz_b = lam * dz_b / dz_b.size
    grads["headA.W"] = v.T @ dz_a
    grads["headA.b"] = dz_a.sum(axis=0)
    grads["headB.W"] = v.T @ dz_b
    grads["headB.b"] = dz_b.sum(axis=0)
    dv = dz_a @ t["headA.W"].T + dz_b @ t["headB.W"].T
    if drop is not None:
        dv = dv * drop
    d = params.encoder.embedding_dim
    _encode_backward(t, "A", cache_a, dv[:, :d], params.encoder, grads)
    if cache_b is not None:
        _encode_backward(t, "B", cache_b, dv[:, d:], params.encoder, grads)
    return loss, grads


# ---------------------------------------------------------------- inference

def encode(params: ModelParams, report_text: str, clinical_text: str) -> np.ndarray:
    """v_AB for one report; dropout is never applied here."""
    tok_a, tok_b = tokenize(params, [report_text], [clinical_text])
    v, _ = features(params, tok_a, tok_b)
    return v[0]


def encode_b(params: ModelParams, clinical_text: str) -> np.ndarray:
    tok = params.vocab.encode_many([clinical_text], params.encoder.max_seq_len)
    h, _ = _encode_forward(params.tensors, "B", tok, params.encoder)
    return h[0]


@dataclass(frozen=True)
class Prediction:
    secondary_probs: Tuple[float, ...]
    secondary_labels: Tuple[bool, ...]
    primary_labels: Tuple[bool, ...]


def predict_probs(params: ModelParams, reports) -> np.ndarray:
    if not reports:
        return np.zeros((0, params.n_secondary))
    tok_a, tok_b = tokenize(params, [report_text(r) for r in reports],
                            [clinical_text(r) for r in reports])
    v, _ = features(params, tok_a, tok_b)
    t = params.tensors
    return sigmoid(v @ t["headA.W"] + t["headA.b"])


def decide(schema: LabelSchema, probs, threshold=0.5) -> Prediction:
    raw = tuple(bool(p >= threshold) for p in probs)
    sec = enforce_exclusion(schema, raw)
    return Prediction(tuple(float(p) for p in probs), sec, propagate(schema, sec))


def predict_many(params: ModelParams, reports, schema: LabelSchema, threshold=0.5) -> List[Prediction]:
    return [decide(schema, row, threshold) for row in predict_probs(params, reports)]


def predict(params: ModelParams, report, schema: LabelSchema, threshold=0.5) -> Prediction:
    """Label one report from head A alone; head B is a training-time auxiliary."""
    return predict_many(params, [report], schema, threshold)[0]

"""Adam training loop and finite-difference gradient check."""

import logging

import numpy as np

from ..errors import DivergenceError, EmptyCorpusError
from .model import Batch, EncoderConfig, ModelParams, TrainConfig, init_params, loss_and_grads, make_batch
from .vocab import Vocab
from .model import clinical_text, report_text

log = logging.getLogger(__name__)


class Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _subset(batch: Batch, idx) -> Batch:
    return Batch(batch.tok_a[idx], None if batch.tok_b is None else batch.tok_b[idx],
                 batch.y_a[idx], batch.y_b[idx])


def train(corpus, schema, cfg: TrainConfig, encoder: EncoderConfig = EncoderConfig(),
          vocab: Vocab = None, on_epoch=None) -> ModelParams:
    """Fit a fresh model on (CleanReport, secondary vector) pairs.

    Minimizes loss_A + weight * loss_B with Adam. Everything random (init, shuffling,
    dropout) derives from ``cfg.seed``, so reruns are bit-identical.
    """
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpusError("training corpus is empty")
    if vocab is None:
        vocab = Vocab.build(t for r, _ in corpus for t in (report_text(r), clinical_text(r)))
    seed_seq = np.random.SeedSequence(cfg.seed)
    init_seed, shuffle_seed, drop_seed = seed_seq.spawn(3)
    params = init_params(vocab, encoder, seed=cfg.seed, use_dual_encoder=cfg.use_dual_encoder,
                         n_secondary=len(schema.secondary_labels), n_primary=len(schema.primary_labels))
    shuffle_rng = np.random.default_rng(shuffle_seed)
    drop_rng = np.random.default_rng(drop_seed)
    data = make_batch(params, corpus, schema)
    opt = Adam({k: v.shape for k, v in params.tensors.items()}, cfg.learning_rate,
               cfg.beta1, cfg.beta2, cfg.adam_eps)
    n = len(corpus)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(params, _subset(data, idx), cfg, drop_rng)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            opt.step(params.tensors, grads)
            total += loss * len(idx)
        params.loss_trace.append(total / n)
        if on_epoch is not None and on_epoch(epoch, params) is False:
            break
        log.debug("epoch %d loss %.6f", epoch + 1, params.loss_trace[-1])
    return params


def batch_loss(params: ModelParams, batch: Batch, cfg: TrainConfig) -> float:
    return loss_and_grads(params, batch, cfg, need_grads=False)[0]


def grad_check(params: ModelParams, batch: Batch, cfg: TrainConfig, h=1e-4, n_checks=200,
               seed=0, corrupt=None) -> float:
    """Max relative error between backprop and central differences.

    Dropout is disabled. Coordinates are sampled among parameters with a non-zero
    analytic or numeric gradient (unused embedding rows are trivially exact).
    ``corrupt`` lets tests inject a fault into the analytic gradients.
    """
    params = params.copy()
    _, grads = loss_and_grads(params, batch, cfg)
    if corrupt is not None:
        grads = corrupt({k: g.copy() for k, g in grads.items()})
    rng = np.random.default_rng(seed)
    candidates = []
    for name, g in grads.items():
        if name.endswith(".emb"):
            rows = np.unique(np.concatenate(
                [batch.tok_a.ravel()] + ([] if batch.tok_b is None else [batch.tok_b.ravel()])))
            if cfg.use_dual_encoder is False and name.startswith("B."):
                continue
            for r in rows:
                for c in range(g.shape[1]):
                    candidates.append((name, (int(r), c)))
        else:
            for idx in np.ndindex(g.shape):
                candidates.append((name, idx))
    picks = rng.choice(len(candidates), size=min(n_checks, len(candidates)), replace=False)
    worst = 0.0
    for i in sorted(picks):
        name, idx = candidates[i]
        arr = params.tensors[name]
        old = arr[idx]
        arr[idx] = old + h
        up = batch_loss(params, batch, cfg)
        arr[idx] = old - h
        down = batch_loss(params, batch, cfg)
        arr[idx] = old
        numeric = (up - down) / (2 * h)
        analytic = grads[name][idx]
        denom = max(abs(numeric) + abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst

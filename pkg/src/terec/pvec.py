"""Paragraph Vector (PV-DM) pre-training with negative sampling.

Each token is predicted from the mean of its document vector and the input
vectors of the words within ``window`` positions on either side. The
prediction uses a separate output embedding table and ``negatives`` noise
words drawn from the unigram distribution raised to 0.75.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Vocabulary
from .errors import DataFormatError, UnknownIdError
from .numkit import (DEFAULT_INIT_SCALE, STORAGE_DTYPE, SeededRng, init_uniform,
                     log_sigmoid, sigmoid)

log = logging.getLogger(__name__)


@dataclass
class PvConfig:
    dim: int = 50
    window: int = 5
    negatives: int = 5
    epochs: int = 10
    lr: float = 0.025
    min_lr: float = 1e-4
    noise_exponent: float = 0.75


@dataclass
class PvParams:
    doc_emb: np.ndarray  # [n_docs, d]
    word_in: np.ndarray  # [V, d]
    word_out: np.ndarray  # [V, d]
    noise_cdf: np.ndarray
    window: int = 5
    negatives: int = 5

    @classmethod
    def init(cls, n_docs: int, vocab: Vocabulary, config: PvConfig, rng: SeededRng,
             dtype=STORAGE_DTYPE) -> "PvParams":
        v = len(vocab)
        counts = np.asarray(vocab.counts, dtype=np.float64) ** config.noise_exponent
        if counts.sum() <= 0:
            raise DataFormatError("vocabulary has no token counts")
        cdf = np.cumsum(counts / counts.sum())
        cdf[-1] = 1.0
        return cls(init_uniform(n_docs, config.dim, DEFAULT_INIT_SCALE, rng.child("doc"), dtype),
                   init_uniform(v, config.dim, DEFAULT_INIT_SCALE, rng.child("word_in"), dtype),
                   init_uniform(v, config.dim, DEFAULT_INIT_SCALE, rng.child("word_out"), dtype),
                   cdf, config.window, config.negatives)

    def draw_noise(self, shape, rng: SeededRng) -> np.ndarray:
        return np.searchsorted(self.noise_cdf, rng.random(shape), side="right").astype(np.int64)


def context_positions(length: int, position: int, window: int) -> np.ndarray:
    lo, hi = max(0, position - window), min(length, position + window + 1)
    return np.asarray([k for k in range(lo, hi) if k != position], dtype=np.int64)


def pv_context(params: PvParams, doc_index: int, doc: np.ndarray, position: int) -> np.ndarray:
    """Mean of the document vector and the neighbouring input word vectors."""
    if not 0 <= position < len(doc):
        raise IndexError(f"position {position} outside document of length {len(doc)}")
    ctx = params.word_in[doc[context_positions(len(doc), position, params.window)]].astype(np.float64)
    return (params.doc_emb[doc_index].astype(np.float64) + ctx.sum(axis=0)) / (1 + len(ctx))


def pv_loss_and_grads(params: PvParams, doc_index: int, doc: np.ndarray, position: int,
                      noise: np.ndarray):
    """Negative-sampling loss for one token and its gradients.

    ``noise`` holds the noise word ids; any equal to the target are ignored.
    Returns ``(loss, grads)`` with ``grads`` keyed ``doc`` (vector), ``word_in``
    and ``word_out`` (``{row: vector}`` dicts, rows accumulated).
    """
    c = pv_context(params, doc_index, doc, position)
    target = int(doc[position])
    noise = np.asarray([n for n in noise if n != target], dtype=np.int64)
    out_ids = np.concatenate([[target], noise]).astype(np.int64)
    labels = np.zeros(len(out_ids))
    labels[0] = 1.0
    dots = params.word_out[out_ids].astype(np.float64) @ c
    loss = -log_sigmoid(dots[0]) - np.sum(log_sigmoid(-dots[1:]))
    g = sigmoid(dots) - labels
    d_c = g @ params.word_out[out_ids].astype(np.float64)
    ctx_pos = context_positions(len(doc), position, params.window)
    share = d_c / (1 + len(ctx_pos))
    word_out: dict[int, np.ndarray] = {}
    for w, gk in zip(out_ids.tolist(), g):
        word_out[w] = word_out.get(w, 0.0) + gk * c
    word_in: dict[int, np.ndarray] = {}
    for w in doc[ctx_pos].tolist():
        word_in[w] = word_in.get(w, 0.0) + share
    return float(loss), {"doc": share, "word_in": word_in, "word_out": word_out}


def pv_sgd_step(params: PvParams, doc_index: int, doc: np.ndarray, position: int,
                rng: SeededRng, lr: float) -> float:
    """One SGD step on a single token; returns the loss before the update."""
    noise = params.draw_noise(params.negatives, rng)
    loss, grads = pv_loss_and_grads(params, doc_index, doc, position, noise)
    params.doc_emb[doc_index] -= (lr * grads["doc"]).astype(params.doc_emb.dtype)
    for w, g in grads["word_in"].items():
        params.word_in[w] -= (lr * g).astype(params.word_in.dtype)
    for w, g in grads["word_out"].items():
        params.word_out[w] -= (lr * g).astype(params.word_out.dtype)
    return loss


def pv_doc_step(params: PvParams, doc_index: int, doc: np.ndarray, rng: SeededRng,
                lr: float) -> float:
    """Update on every token of one document at once; returns the summed loss.

    All positions read the parameters as they were before the step, and
    their gradients are summed before a single SGD update.
    """
    t = len(doc)
    w = params.window
    d_vec = params.doc_emb[doc_index].astype(np.float64)
    win = params.word_in[doc].astype(np.float64)
    # neighbour mask [t, t]: |i - j| <= window, i != j
    pos = np.arange(t)
    nb = (np.abs(pos[:, None] - pos[None, :]) <= w) & (pos[:, None] != pos[None, :])
    n_ctx = nb.sum(axis=1) + 1
    ctx = (d_vec + nb @ win) / n_ctx[:, None]
    noise = params.draw_noise((t, params.negatives), rng)
    out_ids = np.concatenate([doc[:, None], noise], axis=1)  # [t, 1 + K]
    keep = np.ones(out_ids.shape)
    keep[:, 1:] = noise != doc[:, None]
    wout = params.word_out[out_ids].astype(np.float64)  # [t, 1+K, d]
    dots = np.einsum("tkd,td->tk", wout, ctx)
    labels = np.zeros(out_ids.shape)
    labels[:, 0] = 1.0
    signed = np.where(labels > 0, dots, -dots)
    loss = -np.sum(keep * log_sigmoid(signed))
    g = (sigmoid(dots) - labels) * keep
    d_ctx = np.einsum("tk,tkd->td", g, wout) / n_ctx[:, None]
    d_out = g[:, :, None] * ctx[:, None, :]
    d_doc = d_ctx.sum(axis=0)
    d_in = nb.T.astype(np.float64) @ d_ctx  # row j collects from every position it neighbours
    params.doc_emb[doc_index] -= (lr * d_doc).astype(params.doc_emb.dtype)
    upd_in = np.zeros((len(params.word_in), params.word_in.shape[1]))
    np.add.at(upd_in, doc, d_in)
    upd_out = np.zeros_like(upd_in)
    np.add.at(upd_out, out_ids.ravel(), d_out.reshape(-1, d_out.shape[2]))
    touched_in = np.unique(doc)
    touched_out = np.unique(out_ids)
    params.word_in[touched_in] -= (lr * upd_in[touched_in]).astype(params.word_in.dtype)
    params.word_out[touched_out] -= (lr * upd_out[touched_out]).astype(params.word_out.dtype)
    return float(loss)


@dataclass
class PretrainedMatrix:
    """Frozen document embeddings keyed by item id."""

    ids: list[str]
    matrix: np.ndarray  # [n_docs, d]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.ids) != self.matrix.shape[0]:
            raise DataFormatError(
                f"pre-trained matrix has {self.matrix.shape[0]} rows for {len(self.ids)} ids")
        self.index = {d: k for k, d in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row(self, item_id: str) -> int:
        try:
            return self.index[item_id]
        except KeyError:
            raise UnknownIdError(f"item {item_id!r} has no row in the pre-trained matrix") from None

    def rows_for(self, item_ids: Sequence[str]) -> np.ndarray:
        return np.asarray([self.row(i) for i in item_ids], dtype=np.int64)

    def lookup(self, item_id: str) -> np.ndarray:
        return self.matrix[self.row(item_id)]


@dataclass
class PretrainResult:
    matrix: PretrainedMatrix
    params: PvParams
    epoch_loss: list[float]
    skipped: int


def pretrain(docs: Sequence[tuple[str, np.ndarray]], vocab: Vocabulary, config: PvConfig,
             rng: SeededRng) -> PretrainResult:
    """Train PV-DM over ``(doc_id, token ids)`` pairs; documents are visited in
    a fresh random order each epoch and the learning rate decays linearly
    from ``config.lr`` to ``config.min_lr`` over all tokens.

    Empty documents are skipped (counted in ``skipped``) and get no row.
    """
    kept = [(d, np.asarray(t, dtype=np.int64)) for d, t in docs if len(t) > 0]
    skipped = len(docs) - len(kept)
    if not kept:
        raise DataFormatError("pre-training corpus has no non-empty documents")
    if skipped:
        log.warning("skipped %d empty documents", skipped)
    params = PvParams.init(len(kept), vocab, config, rng.child("init"))
    order_rng, noise_rng = rng.child("order"), rng.child("noise")
    total = config.epochs * sum(len(t) for _, t in kept)
    seen = 0
    trace = []
    for epoch in range(config.epochs):
        epoch_loss, n_tok = 0.0, 0
        for k in order_rng.permutation(len(kept)):
            tokens = kept[k][1]
            lr = config.lr - (config.lr - config.min_lr) * seen / max(total, 1)
            epoch_loss += pv_doc_step(params, int(k), tokens, noise_rng, max(lr, config.min_lr))
            seen += len(tokens)
            n_tok += len(tokens)
        trace.append(epoch_loss / n_tok)
        log.info("pv epoch %d loss %.5f", epoch + 1, trace[-1])
    matrix = PretrainedMatrix([d for d, _ in kept], params.doc_emb.copy())
    return PretrainResult(matrix, params, trace, skipped)

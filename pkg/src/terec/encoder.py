"""Supervised text encoders: mean-of-vectors (MoV) and a 1-D CNN.

Both encoders work on padded batches: an ``[B, L]`` id matrix right-padded
with ``PAD_ID``. Forward passes return an :class:`EncoderOutput` whose cache
feeds the matching backward pass. Gradients come back as a dict keyed by
checkpoint tensor name.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .corpus import PAD_ID, pad_sequences
from .errors import ShapeError
from .numkit import DEFAULT_INIT_SCALE, STORAGE_DTYPE, SeededRng, init_uniform


@dataclass
class MovParams:
    word_emb: np.ndarray  # [V, d_w], row PAD_ID held at zero
    dense_w: np.ndarray  # [k, d_w]
    dense_b: np.ndarray  # [k]
    kind = "mov"

    @classmethod
    def init(cls, vocab_size: int, rng: SeededRng, word_dim: int = 50, out_dim: int = 50,
             scale: float = DEFAULT_INIT_SCALE, dtype=STORAGE_DTYPE) -> "MovParams":
        emb = init_uniform(vocab_size, word_dim, scale, rng.child("word_emb"), dtype)
        emb[PAD_ID] = 0.0
        return cls(emb,
                   init_uniform(out_dim, word_dim, scale, rng.child("dense_w"), dtype),
                   init_uniform(1, out_dim, scale, rng.child("dense_b"), dtype)[0])

    @property
    def out_dim(self) -> int:
        return self.dense_w.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"enc.word_emb": self.word_emb, "enc.dense_w": self.dense_w,
                "enc.dense_b": self.dense_b}


@dataclass
class CnnParams:
    word_emb: np.ndarray  # [V, d_w], row PAD_ID held at zero
    filters: np.ndarray  # [n_f, s * d_w]; filter j, offset o, channel c at [j, o * d_w + c]
    filter_bias: np.ndarray  # [n_f]
    filter_size: int = 3
    kind = "cnn"

    @classmethod
    def init(cls, vocab_size: int, rng: SeededRng, word_dim: int = 50, n_filters: int = 50,
             filter_size: int = 3, scale: float = DEFAULT_INIT_SCALE,
             dtype=STORAGE_DTYPE) -> "CnnParams":
        emb = init_uniform(vocab_size, word_dim, scale, rng.child("word_emb"), dtype)
        emb[PAD_ID] = 0.0
        return cls(emb,
                   init_uniform(n_filters, filter_size * word_dim, scale, rng.child("filters"), dtype),
                   init_uniform(1, n_filters, scale, rng.child("filter_bias"), dtype)[0],
                   filter_size)

    @property
    def out_dim(self) -> int:
        return self.filters.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"enc.word_emb": self.word_emb, "enc.filters": self.filters,
                "enc.filter_bias": self.filter_bias}


EncoderParams = Union[MovParams, CnnParams]


@dataclass
class EncoderOutput:
    h1: np.ndarray  # [B, k] float64
    kind: str
    ids: np.ndarray
    cache: dict = field(repr=False, default_factory=dict)


def as_batch(tokens) -> np.ndarray:
    """Accept a padded id matrix or a list of id sequences; return the matrix."""
    if isinstance(tokens, np.ndarray) and tokens.ndim == 2:
        return tokens.astype(np.int64, copy=False)
    seqs = [np.asarray(t, dtype=np.int64) for t in tokens]
    return pad_sequences(seqs)[0]


def mov_forward(params: MovParams, tokens) -> EncoderOutput:
    ids = as_batch(tokens)
    mask = ids != PAD_ID
    lengths = mask.sum(axis=1)
    if (lengths == 0).any():
        raise ShapeError(f"MoV input row {int(np.argmax(lengths == 0))} is all padding")
    # padding row is zero, so a plain sum over positions is the masked sum
    h = params.word_emb[ids].astype(np.float64).sum(axis=1) / lengths[:, None]
    z = h @ params.dense_w.T.astype(np.float64) + params.dense_b
    return EncoderOutput(np.maximum(z, 0.0), "mov", ids,
                         {"mask": mask, "lengths": lengths, "h": h, "z": z})


def mov_backward(params: MovParams, out: EncoderOutput, grad_h1: np.ndarray) -> dict[str, np.ndarray]:
    _check_cache(params, out, grad_h1)
    c = out.cache
    dz = grad_h1 * (c["z"] > 0)
    dh = dz @ params.dense_w.astype(np.float64)
    d_emb = np.zeros(params.word_emb.shape)
    rows, _ = np.nonzero(c["mask"])
    np.add.at(d_emb, out.ids[c["mask"]], (dh / c["lengths"][:, None])[rows])
    d_emb[PAD_ID] = 0.0
    return {"enc.word_emb": d_emb, "enc.dense_w": dz.T @ c["h"], "enc.dense_b": dz.sum(axis=0)}


def _windows(emb: np.ndarray, ids: np.ndarray, s: int) -> np.ndarray:
    """Concatenate each run of ``s`` consecutive word vectors: ``[B, P, s*d]``."""
    e = emb[ids].astype(np.float64)
    b, width, d = e.shape
    n_pos = width - s + 1
    return np.concatenate([e[:, o:o + n_pos, :] for o in range(s)], axis=2)


def cnn_forward(params: CnnParams, tokens) -> EncoderOutput:
    """Convolution, ReLU and max-over-time pooling.

    Texts shorter than the filter are right-padded with the zero embedding so
    exactly one window exists.
    """
    s = params.filter_size
    ids = as_batch(tokens)
    lengths = (ids != PAD_ID).sum(axis=1)
    if ids.shape[1] < s:
        ids = np.pad(ids, ((0, 0), (0, s - ids.shape[1])), constant_values=PAD_ID)
    win = _windows(params.word_emb, ids, s)
    pre = win @ params.filters.T.astype(np.float64) + params.filter_bias
    act = np.maximum(pre, 0.0)
    n_valid = np.maximum(lengths, s) - s + 1
    valid = np.arange(win.shape[1])[None, :] < n_valid[:, None]
    arg = np.argmax(np.where(valid[:, :, None], act, -np.inf), axis=1)
    h1 = np.take_along_axis(act, arg[:, None, :], axis=1)[:, 0, :]
    return EncoderOutput(h1, "cnn", ids, {"win": win, "pre": pre, "arg": arg})


def cnn_backward(params: CnnParams, out: EncoderOutput, grad_h1: np.ndarray) -> dict[str, np.ndarray]:
    _check_cache(params, out, grad_h1)
    c = out.cache
    s = params.filter_size
    win, pre, arg = c["win"], c["pre"], c["arg"]
    b, n_pos, _ = win.shape
    d = params.word_emb.shape[1]
    d_act = np.zeros(pre.shape)
    np.put_along_axis(d_act, arg[:, None, :], grad_h1[:, None, :], axis=1)
    d_pre = d_act * (pre > 0)
    d_win = (d_pre @ params.filters.astype(np.float64)).reshape(b, n_pos, s, d)
    d_pos = np.zeros((b, out.ids.shape[1], d))
    for o in range(s):
        d_pos[:, o:o + n_pos, :] += d_win[:, :, o, :]
    d_emb = np.zeros(params.word_emb.shape)
    np.add.at(d_emb, out.ids.ravel(), d_pos.reshape(-1, d))
    d_emb[PAD_ID] = 0.0
    return {"enc.word_emb": d_emb,
            "enc.filters": np.einsum("bpf,bpk->fk", d_pre, win),
            "enc.filter_bias": d_pre.sum(axis=(0, 1))}


def _check_cache(params: EncoderParams, out: EncoderOutput, grad_h1: np.ndarray) -> None:
    if out.kind != params.kind:
        raise ShapeError(f"{params.kind} backward given a {out.kind} forward cache")
    if grad_h1.shape != out.h1.shape:
        raise ShapeError(f"upstream gradient {grad_h1.shape} does not match h1 {out.h1.shape}")
    if out.h1.shape[1] != params.out_dim:
        raise ShapeError("forward cache was produced with different parameters")


def forward(params: EncoderParams, tokens) -> EncoderOutput:
    if isinstance(params, CnnParams):
        return cnn_forward(params, tokens)
    return mov_forward(params, tokens)


def backward(params: EncoderParams, out: EncoderOutput, grad_h1: np.ndarray) -> dict[str, np.ndarray]:
    if isinstance(params, CnnParams):
        return cnn_backward(params, out, grad_h1)
    return mov_backward(params, out, grad_h1)


def encode(params: EncoderParams, seqs: Sequence[np.ndarray], batch_size: int = 512) -> np.ndarray:
    """Embed many texts in chunks; returns ``[N, k]`` float64."""
    if not len(seqs):
        return np.zeros((0, params.out_dim))
    return np.concatenate([forward(params, list(seqs[i:i + batch_size])).h1
                           for i in range(0, len(seqs), batch_size)])

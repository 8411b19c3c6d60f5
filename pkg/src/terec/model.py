"""User embeddings, the combination layer, proximity scores and the pairwise loss.

Two modes:

``ter``
    item vector = encoder output ``h1``.
``ter+``
    item vector = ``relu(W_g [h1, dropout(h2)] + b_g)`` where ``h2`` is the
    item's row of the frozen pre-trained matrix.

During training the item vector additionally passes through dropout
(``item_dropout``); at evaluation both dropouts are the identity, except that a
pre-trained dropout rate of exactly 1 zeroes ``h2`` at evaluation as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import encoder as enc
from .corpus import pad_sequences
from .errors import ShapeError, UnknownIdError
from .numkit import (DEFAULT_INIT_SCALE, STORAGE_DTYPE, SeededRng, dropout_mask,
                     init_uniform, sigmoid, softplus)

MODES = ("ter", "ter+")


@dataclass
class JointParams:
    user_emb: np.ndarray  # [n_users, k]
    comb_w: np.ndarray | None = None  # [k, k_h1 + d_pv], ter+ only
    comb_b: np.ndarray | None = None  # [k]
    mode: str = "ter"
    dropout_rate: float = 0.3  # on the pre-trained vector h2
    item_dropout: float = 0.1  # on the final item vector

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if (self.mode == "ter+") != (self.comb_w is not None):
            raise ShapeError("combination weights must be present exactly in ter+ mode")
        for name, r in (("dropout_rate", self.dropout_rate), ("item_dropout", self.item_dropout)):
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {r}")

    @classmethod
    def init(cls, n_users: int, dim: int, rng: SeededRng, mode: str = "ter",
             h1_dim: int | None = None, pv_dim: int = 0, dropout_rate: float = 0.3,
             item_dropout: float = 0.1, scale: float = DEFAULT_INIT_SCALE,
             dtype=STORAGE_DTYPE) -> "JointParams":
        users = init_uniform(n_users, dim, scale, rng.child("user_emb"), dtype)
        if mode == "ter":
            return cls(users, mode=mode, dropout_rate=dropout_rate, item_dropout=item_dropout)
        h1_dim = dim if h1_dim is None else h1_dim
        return cls(users,
                   init_uniform(dim, h1_dim + pv_dim, scale, rng.child("comb_w"), dtype),
                   init_uniform(1, dim, scale, rng.child("comb_b"), dtype)[0],
                   mode, dropout_rate, item_dropout)

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"joint.user_emb": self.user_emb}
        if self.mode == "ter+":
            out["joint.comb_w"] = self.comb_w
            out["joint.comb_b"] = self.comb_b
        return out


@dataclass
class CombineOutput:
    v: np.ndarray
    h: np.ndarray
    z: np.ndarray
    mask: np.ndarray


def combine(params: JointParams, h1: np.ndarray, h2: np.ndarray, training: bool,
            rng: SeededRng | None = None) -> CombineOutput:
    """Concatenate ``h1`` with (dropped-out) ``h2`` and apply the dense ReLU layer."""
    if params.mode != "ter+":
        raise ShapeError("combine is only defined in ter+ mode")
    h1 = np.atleast_2d(np.asarray(h1, dtype=np.float64))
    h2 = np.atleast_2d(np.asarray(h2, dtype=np.float64))
    if h1.shape[0] != h2.shape[0] or h1.shape[1] + h2.shape[1] != params.comb_w.shape[1]:
        raise ShapeError(
            f"combine: h1 {h1.shape} and h2 {h2.shape} do not fit weights {params.comb_w.shape}")
    if training:
        mask = dropout_mask(h2.shape, params.dropout_rate, rng)
    else:
        mask = np.full(h2.shape, 0.0 if params.dropout_rate >= 1.0 else 1.0)
    h = np.concatenate([h1, h2 * mask], axis=1)
    z = h @ params.comb_w.T.astype(np.float64) + params.comb_b
    return CombineOutput(np.maximum(z, 0.0), h, z, mask)


def combine_backward(params: JointParams, out: CombineOutput, grad_v: np.ndarray):
    """Return ``(grads for comb_w/comb_b, dL/dh1)``; ``h2`` gets no gradient."""
    if grad_v.shape != out.v.shape:
        raise ShapeError(f"upstream gradient {grad_v.shape} does not match {out.v.shape}")
    dz = grad_v * (out.z > 0)
    dh = dz @ params.comb_w.astype(np.float64)
    k1 = out.h.shape[1] - out.mask.shape[1]
    return {"joint.comb_w": dz.T @ out.h, "joint.comb_b": dz.sum(axis=0)}, dh[:, :k1]


def score(params: JointParams, user: int, v: np.ndarray) -> float:
    if not 0 <= user < params.user_emb.shape[0]:
        raise UnknownIdError(f"user index {user} out of range (have {params.user_emb.shape[0]} users)")
    return float(np.dot(params.user_emb[user].astype(np.float64), np.asarray(v, dtype=np.float64)))


@dataclass
class TripletLossReport:
    s_ip: float
    s_in: float
    loss: float


def triplet_loss(params: JointParams, user: int, p_vector: np.ndarray,
                 n_vector: np.ndarray) -> TripletLossReport:
    s_ip = score(params, user, p_vector)
    s_in = score(params, user, n_vector)
    return TripletLossReport(s_ip, s_in, softplus(-(s_ip - s_in)))


def triplet_backward(params: JointParams, user: int, p_vector: np.ndarray,
                     n_vector: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of one triplet's loss w.r.t. ``U[user]`` and both item vectors.

    Chaining further into the combination layer and encoder is done by
    :meth:`JointModel.item_backward`.
    """
    rep = triplet_loss(params, user, p_vector, n_vector)
    g = -sigmoid(-(rep.s_ip - rep.s_in))
    u = params.user_emb[user].astype(np.float64)
    p = np.asarray(p_vector, dtype=np.float64)
    n = np.asarray(n_vector, dtype=np.float64)
    return {"user": g * (p - n), "p_vector": g * u, "n_vector": -g * u}


@dataclass
class ItemCache:
    items: np.ndarray
    enc_out: enc.EncoderOutput
    comb: CombineOutput | None
    item_mask: np.ndarray | None


@dataclass
class JointModel:
    """Encoder + joint parameters bound to a catalog of item texts.

    ``texts[j]`` holds the token ids of item index ``j``. In ter+ mode,
    ``pretrained`` is the frozen matrix and ``pretrained_rows[j]`` the row
    of item ``j`` in it.
    """

    encoder: enc.EncoderParams
    joint: JointParams
    texts: Sequence[np.ndarray]
    pretrained: np.ndarray | None = None
    pretrained_rows: np.ndarray | None = None
    _padded: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.joint.mode == "ter+":
            if self.pretrained is None or self.pretrained_rows is None:
                raise ShapeError("ter+ mode needs a pre-trained matrix")
            if len(self.pretrained_rows) != len(self.texts):
                raise ShapeError("pretrained_rows must map every catalog item")
        elif self.encoder.out_dim != self.joint.dim:
            raise ShapeError(
                f"ter mode needs encoder output dim {self.encoder.out_dim} == user dim {self.joint.dim}")
        ids, lengths = pad_sequences([np.asarray(t, dtype=np.int64) for t in self.texts])
        self._padded = (ids, lengths)

    def trainable(self) -> dict[str, np.ndarray]:
        return {**self.encoder.tensors(), **self.joint.tensors()}

    def _tokens(self, items: np.ndarray) -> np.ndarray:
        ids, lengths = self._padded
        return ids[items][:, :max(int(lengths[items].max()), 1)]

    def item_forward(self, items: np.ndarray, training: bool = False,
                     h2_rng: SeededRng | None = None,
                     item_rng: SeededRng | None = None) -> tuple[np.ndarray, ItemCache]:
        items = np.asarray(items, dtype=np.int64)
        out = enc.forward(self.encoder, self._tokens(items))
        comb = None
        v = out.h1
        if self.joint.mode == "ter+":
            h2 = self.pretrained[self.pretrained_rows[items]]
            comb = combine(self.joint, out.h1, h2, training, h2_rng)
            v = comb.v
        mask = None
        if training and self.joint.item_dropout > 0:
            mask = dropout_mask(v.shape, self.joint.item_dropout, item_rng)
            v = v * mask
        return v, ItemCache(items, out, comb, mask)

    def item_backward(self, cache: ItemCache, grad_v: np.ndarray) -> dict[str, np.ndarray]:
        if cache.item_mask is not None:
            grad_v = grad_v * cache.item_mask
        grads: dict[str, np.ndarray] = {}
        grad_h1 = grad_v
        if cache.comb is not None:
            g_comb, grad_h1 = combine_backward(self.joint, cache.comb, grad_v)
            grads.update(g_comb)
        grads.update(enc.backward(self.encoder, cache.enc_out, grad_h1))
        return grads

    def item_vectors(self, items: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Evaluation-mode item vectors (no dropout)."""
        items = np.asarray(items, dtype=np.int64)
        if not len(items):
            return np.zeros((0, self.joint.dim))
        return np.concatenate([self.item_forward(items[i:i + batch_size])[0]
                               for i in range(0, len(items), batch_size)])

    def batch_loss_and_grads(self, users: np.ndarray, pos: np.ndarray, neg: np.ndarray,
                             h2_rng: SeededRng | None = None, item_rng: SeededRng | None = None,
                             weight_decay: float = 0.0, training: bool = True):
        """Mean pairwise loss over a batch of triplets and its gradients.

        The differentiated objective is
        ``mean_b[softplus(s_in - s_ip)] + weight_decay / (2B) * sum_b |U[i_b]|^2``.
        Returns ``(per-triplet BPR losses, objective, grads)``.
        """
        users = np.asarray(users, dtype=np.int64)
        b = len(users)
        v, cache = self.item_forward(np.concatenate([pos, neg]), training, h2_rng, item_rng)
        v_p, v_n = v[:b], v[b:]
        u = self.joint.user_emb[users].astype(np.float64)
        margin = np.einsum("bk,bk->b", u, v_p - v_n)
        losses = softplus(-margin)
        objective = losses.mean() + weight_decay / (2 * b) * np.sum(u * u)
        g = -sigmoid(-margin) / b
        grads = {"joint.user_emb": np.zeros(self.joint.user_emb.shape)}
        np.add.at(grads["joint.user_emb"], users, g[:, None] * (v_p - v_n) + (weight_decay / b) * u)
        grad_v = np.concatenate([g[:, None] * u, -g[:, None] * u])
        grads.update(self.item_backward(cache, grad_v))
        return np.atleast_1d(losses), float(objective), grads

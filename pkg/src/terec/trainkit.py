"""Joint training and the held-out ranking evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .corpus import InteractionSet, TripletSampler
from .encoder import CnnParams, MovParams
from .errors import ConfigError, NonFiniteError, SamplingError
from .model import JointModel, JointParams
from .numkit import Adam, SeededRng
from .pvec import PretrainedMatrix

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.001
    weight_decay: float = 1e-5
    dropout_item: float = 0.1
    dropout_pretrained: float = 0.3
    encoder: str = "mov"
    mode: str = "ter"
    seed: int = 0
    dim: int = 50
    word_dim: int = 50
    n_filters: int = 50
    filter_size: int = 3
    neg_exponent: float = 1.0
    n_neg_eval: int = 10
    init_scale: float = 0.05

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.encoder not in ("mov", "cnn"):
            raise ConfigError(f"encoder must be 'mov' or 'cnn', got {self.encoder!r}")
        if self.mode not in ("ter", "ter+"):
            raise ConfigError(f"mode must be 'ter' or 'ter+', got {self.mode!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate and weight_decay must be non-negative")
        for name in ("dropout_item", "dropout_pretrained"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if min(self.dim, self.word_dim, self.n_filters, self.filter_size, self.n_neg_eval) < 1:
            raise ConfigError("dimensions, filter settings and n_neg_eval must be positive")
        if self.encoder == "cnn" and self.mode == "ter" and self.n_filters != self.dim:
            raise ConfigError(f"cnn in ter mode needs n_filters == dim ({self.n_filters} != {self.dim})")
        if self.init_scale <= 0:
            raise ConfigError("init_scale must be positive")


def build_model(config: TrainConfig, interactions: InteractionSet, texts: Sequence[np.ndarray],
                vocab_size: int, pretrained: PretrainedMatrix | None = None,
                rng: SeededRng | None = None) -> JointModel:
    """Initialise encoder and joint parameters for ``interactions``' catalog.

    ``texts[j]`` must be the token ids of ``interactions.items[j]``.
    """
    rng = rng or SeededRng(config.seed)
    init = rng.child("init")
    if config.encoder == "mov":
        h1_dim = config.dim
        encoder = MovParams.init(vocab_size, init.child("encoder"), config.word_dim, h1_dim,
                                 config.init_scale)
    else:
        h1_dim = config.n_filters
        encoder = CnnParams.init(vocab_size, init.child("encoder"), config.word_dim,
                                 config.n_filters, config.filter_size, config.init_scale)
    rows = None
    pv_dim = 0
    if config.mode == "ter+":
        if pretrained is None:
            raise ConfigError("ter+ mode requires a pre-trained matrix")
        rows = pretrained.rows_for(interactions.items)
        pv_dim = pretrained.dim
    joint = JointParams.init(interactions.n_users, config.dim, init.child("joint"), config.mode,
                             h1_dim, pv_dim, config.dropout_pretrained, config.dropout_item,
                             config.init_scale)
    return JointModel(encoder, joint, texts,
                      pretrained.matrix if pretrained is not None else None, rows)


@dataclass
class TrainResult:
    epoch_loss: list[float]
    steps: int
    seconds: float


def train(model: JointModel, interactions: InteractionSet, config: TrainConfig,
          rng: SeededRng | None = None,
          on_batch: Callable[[int, int, np.ndarray, np.ndarray, np.ndarray], None] | None = None,
          ) -> TrainResult:
    """Minibatch Adam on the pairwise ranking loss.

    Each epoch draws as many triplets as there are training interactions.
    ``on_batch(epoch, batch, users, pos, neg)`` sees every sampled batch.
    """
    rng = rng or SeededRng(config.seed)
    sampler = TripletSampler(interactions, rng.child("sampler"), config.neg_exponent)
    h2_rng, item_rng = rng.child("h2_dropout"), rng.child("item_dropout")
    opt = Adam(model.trainable(), config.learning_rate)
    n = len(interactions.train_pairs)
    trace: list[float] = []
    steps = 0
    t0 = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for batch, start in enumerate(range(0, n, config.batch_size), 1):
            users, pos, neg = sampler.sample_batch(min(config.batch_size, n - start))
            if on_batch is not None:
                on_batch(epoch, batch, users, pos, neg)
            losses, _, grads = model.batch_loss_and_grads(
                users, pos, neg, h2_rng, item_rng, config.weight_decay)
            if not np.all(np.isfinite(losses)):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch {batch}")
            opt.step(grads)
            total += float(losses.sum())
            steps += 1
        trace.append(total / n)
        log.info("epoch %d loss %.6f", epoch, trace[-1])
    return TrainResult(trace, steps, time.perf_counter() - t0)


@dataclass
class CandidateSets:
    users: np.ndarray  # [S]
    items: np.ndarray  # [S, 1 + n_neg]; column 0 is the held-out positive

    def __len__(self) -> int:
        return len(self.users)


def build_candidate_sets(interactions: InteractionSet, rng: SeededRng,
                         n_neg: int = 10) -> CandidateSets:
    """One candidate set per held-out interaction, with ``n_neg`` negatives drawn
    uniformly (without replacement) from the test pool minus the user's
    held-out positives. Interactions are visited in (user, item) order.
    """
    pool = interactions.test_items
    if len(pool) < n_neg + 1:
        raise SamplingError(f"test item pool has {len(pool)} items, need at least {n_neg + 1}")
    test_pos = interactions.user_positives("test")
    pairs = sorted(map(tuple, interactions.test_pairs.tolist()))
    users = np.asarray([u for u, _ in pairs], dtype=np.int64)
    items = np.empty((len(pairs), n_neg + 1), dtype=np.int64)
    avail_cache: dict[int, np.ndarray] = {}
    for s, (u, it) in enumerate(pairs):
        if u not in avail_cache:
            avail_cache[u] = np.asarray([j for j in pool.tolist() if j not in test_pos[u]])
        avail = avail_cache[u]
        if len(avail) < n_neg:
            raise SamplingError(
                f"user {interactions.users[u]!r} leaves only {len(avail)} negatives in the test pool")
        items[s, 0] = it
        items[s, 1:] = avail[rng.choice(len(avail), n_neg, replace=False)]
    return CandidateSets(users, items)


def candidate_metrics(scores: np.ndarray, items: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-set AP and AUC; column 0 of each row is the positive.

    Ties rank by ascending item id. AP of a single positive is ``1 / rank``.
    """
    pos, neg = scores[:, :1], scores[:, 1:]
    pos_id, neg_id = items[:, :1], items[:, 1:]
    above = (neg > pos) | ((neg == pos) & (neg_id < pos_id))
    rank = 1 + above.sum(axis=1)
    auc = ((neg < pos).sum(axis=1) + 0.5 * (neg == pos).sum(axis=1)) / neg.shape[1]
    return 1.0 / rank, auc


@dataclass
class EvalReport:
    map: float
    auc: float
    n_users: int
    n_candidate_sets: int
    per_user_ap: dict[int, float] = field(repr=False, default_factory=dict)
    per_user_auc: dict[int, float] = field(repr=False, default_factory=dict)

    def ap_stderr(self) -> float:
        vals = np.asarray(list(self.per_user_ap.values()))
        return float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0

    def rows(self) -> list[tuple[str, str]]:
        return [("map", f"{self.map:.6f}"), ("auc", f"{self.auc:.6f}"),
                ("n_users", str(self.n_users)), ("n_candidate_sets", str(self.n_candidate_sets))]


def report_from_scores(users: np.ndarray, scores: np.ndarray, items: np.ndarray) -> EvalReport:
    ap, auc = candidate_metrics(scores, items)
    per_ap: dict[int, float] = {}
    per_auc: dict[int, float] = {}
    for u in np.unique(users):
        sel = users == u
        per_ap[int(u)] = _mean(ap[sel])
        per_auc[int(u)] = _mean(auc[sel])
    if not per_ap:
        return EvalReport(float("nan"), float("nan"), 0, 0)
    return EvalReport(_mean(per_ap.values()), _mean(per_auc.values()),
                      len(per_ap), len(users), per_ap, per_auc)


def _mean(values) -> float:
    # exactly rounded, so the result does not depend on summation order
    values = [float(v) for v in values]
    return math.fsum(values) / len(values)


def candidate_scores(model: JointModel, cands: CandidateSets) -> np.ndarray:
    uniq, inv = np.unique(cands.items, return_inverse=True)
    vecs = model.item_vectors(uniq)
    u = model.joint.user_emb[cands.users].astype(np.float64)
    v = vecs[inv.reshape(cands.items.shape)]
    return np.einsum("sk,sck->sc", u, v)


def evaluate(model: JointModel, cands: CandidateSets) -> EvalReport:
    """MAP and average AUC over users (each user's value averages their sets)."""
    return report_from_scores(cands.users, candidate_scores(model, cands), cands.items)


@dataclass
class RunResult:
    model: JointModel
    train: TrainResult
    report: EvalReport


def fit_and_evaluate(config: TrainConfig, interactions: InteractionSet,
                     texts: Sequence[np.ndarray], vocab_size: int,
                     pretrained: PretrainedMatrix | None = None) -> RunResult:
    """Build, train and evaluate from ``config.seed`` alone."""
    rng = SeededRng(config.seed)
    model = build_model(config, interactions, texts, vocab_size, pretrained, rng)
    result = train(model, interactions, config, rng.child("train"))
    cands = build_candidate_sets(interactions, rng.child("candidates"), config.n_neg_eval)
    return RunResult(model, result, evaluate(model, cands))


def dropout_sweep(config: TrainConfig, interactions: InteractionSet, texts: Sequence[np.ndarray],
                  vocab_size: int, pretrained: PretrainedMatrix,
                  rates: Sequence[float]) -> list[tuple[float, EvalReport]]:
    """Retrain from the same seed once per pre-trained dropout rate."""
    if config.mode != "ter+":
        raise ConfigError("the dropout sweep needs ter+ mode")
    rows = []
    for rate in rates:
        run = fit_and_evaluate(replace(config, dropout_pretrained=float(rate)),
                               interactions, texts, vocab_size, pretrained)
        log.info("dropout %.3f map %.4f auc %.4f", rate, run.report.map, run.report.auc)
        rows.append((float(rate), run.report))
    return rows


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)

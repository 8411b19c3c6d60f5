"""Tokenization, vocabularies, interaction data, item splits and triplet sampling."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError, SamplingError, UnknownIdError
from .numkit import SeededRng

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_SPLIT_RE = re.compile(r"[^0-9a-z]+")


def tokenize(raw_text: str) -> list[str]:
    """Lowercase and split on every run of non-alphanumeric characters."""
    return [t for t in _SPLIT_RE.split(raw_text.lower()) if t]


@dataclass
class Vocabulary:
    """Token/id mapping. Ids 0 and 1 are reserved for padding and unknown."""

    tokens: list[str]
    counts: list[int]
    min_count: int = 1
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise DataFormatError("vocabulary must start with the pad and unknown tokens")
        if len(self.counts) != len(self.tokens):
            raise DataFormatError("vocabulary tokens and counts differ in length")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataFormatError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def freq(self, token: str) -> int:
        return self.counts[self.index[token]]

    def to_dict(self) -> dict:
        return {"tokens": self.tokens, "counts": self.counts, "min_count": self.min_count}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(list(d["tokens"]), [int(c) for c in d["counts"]], int(d["min_count"]))


def build_vocab(texts: Iterable[Sequence[str] | str], min_count: int = 1) -> Vocabulary:
    """Count tokens over ``texts`` and keep those seen at least ``min_count`` times.

    Each text may be a raw string or an already-tokenized sequence. Tokens
    below the threshold fold into the unknown token's count. Kept tokens are
    ordered by descending frequency, ties alphabetically.
    """
    min_count = max(int(min_count), 1)
    counter: Counter[str] = Counter()
    n_texts = 0
    for text in texts:
        n_texts += 1
        counter.update(tokenize(text) if isinstance(text, str) else text)
    if n_texts == 0:
        raise DataFormatError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counter.items() if c >= min_count),
                  key=lambda t: (-counter[t], t))
    unk = sum(c for t, c in counter.items() if c < min_count)
    return Vocabulary([PAD_TOKEN, UNK_TOKEN] + kept,
                      [0, unk] + [counter[t] for t in kept], min_count)


@dataclass
class TextItem:
    item_id: str
    tokens: np.ndarray  # int64 vocabulary ids, 1 <= len <= max_len


def make_text_item(item_id: str, raw_text: str, vocab: Vocabulary, max_len: int) -> TextItem:
    ids = vocab.encode(tokenize(raw_text))[:max_len] or [UNK_ID]
    return TextItem(item_id, np.asarray(ids, dtype=np.int64))


def _read_tsv(path: str | Path, what: str):
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"{what} file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2 or not parts[0]:
                raise DataFormatError(f"{path}:{lineno}: malformed {what} line, expected 2 tab-separated fields")
            yield lineno, parts[0], parts[1]


def read_texts(path: str | Path) -> dict[str, str]:
    """Read an ``item_id<TAB>raw text`` file into an ordered dict."""
    texts: dict[str, str] = {}
    for lineno, item_id, raw in _read_tsv(path, "texts"):
        if item_id in texts:
            raise DataFormatError(f"{path}:{lineno}: duplicate item id {item_id!r}")
        texts[item_id] = raw
    return texts


def load_texts(path: str | Path, vocab: Vocabulary, max_len: int) -> list[TextItem]:
    return [make_text_item(i, raw, vocab, max_len) for i, raw in read_texts(path).items()]


def read_interaction_pairs(path: str | Path) -> list[tuple[str, str]]:
    pairs = []
    for lineno, user, item in _read_tsv(path, "interactions"):
        item = item.strip()
        if not item or "\t" in item:
            raise DataFormatError(f"{path}:{lineno}: malformed interactions line, expected user_id<TAB>item_id")
        pairs.append((user, item))
    return pairs


def split_items(items: Sequence[str], holdout_fraction: float, rng: SeededRng) -> tuple[list[str], list[str]]:
    """Hold out ``floor(fraction * N)`` items, chosen uniformly, as the test pool.

    Both returned lists keep the input order.
    """
    if not 0.0 <= holdout_fraction < 1.0:
        raise ValueError(f"holdout fraction must lie in [0, 1), got {holdout_fraction}")
    n = len(items)
    if n < 5:
        raise DataFormatError(f"need at least 5 items to split, got {n}")
    n_test = int(np.floor(holdout_fraction * n + 1e-9))
    chosen = set(rng.permutation(n)[:n_test].tolist())
    train = [it for k, it in enumerate(items) if k not in chosen]
    test = [it for k, it in enumerate(items) if k in chosen]
    return train, test


@dataclass
class InteractionSet:
    """Implicit-feedback pairs over an item catalog with a train/test item split.

    Items are indexed in sorted order of their external ids, so integer order
    and string order agree. Users are indexed (sorted) only if they have at
    least one training interaction; test-only users carry no embedding and
    their interactions are dropped.
    """

    items: list[str]
    users: list[str]
    train_pairs: np.ndarray  # [n, 2] (user idx, item idx)
    test_pairs: np.ndarray
    test_items: np.ndarray  # sorted item indices
    duplicates: int = 0
    dropped_test_only: int = 0
    item_index: dict[str, int] = field(init=False, repr=False)
    user_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.item_index = {it: k for k, it in enumerate(self.items)}
        self.user_index = {u: k for k, u in enumerate(self.users)}
        is_test = np.zeros(len(self.items), dtype=bool)
        is_test[self.test_items] = True
        if len(self.train_pairs) and is_test[self.train_pairs[:, 1]].any():
            raise DataFormatError("a training interaction touches a test item")
        if len(self.test_pairs) and not is_test[self.test_pairs[:, 1]].all():
            raise DataFormatError("a test interaction touches a training item")

    @classmethod
    def build(cls, pairs: Iterable[tuple[str, str]], catalog: Iterable[str],
              test_items: Iterable[str] = ()) -> "InteractionSet":
        """Index raw ``(user, item)`` pairs and apply the item split.

        Duplicate pairs are dropped and counted. A pair naming an item outside
        ``catalog`` is rejected.
        """
        items = sorted(set(catalog))
        item_index = {it: k for k, it in enumerate(items)}
        test = set(test_items)
        unknown_test = test - set(items)
        if unknown_test:
            raise UnknownIdError(f"test item {sorted(unknown_test)[0]!r} has no text")
        pairs = list(pairs)
        seen: set[tuple[str, str]] = set()
        unique: list[tuple[str, str]] = []
        for user, item in pairs:
            if item not in item_index:
                raise UnknownIdError(f"interaction ({user!r}, {item!r}) references an item without text")
            if (user, item) in seen:
                continue
            seen.add((user, item))
            unique.append((user, item))
        duplicates = len(pairs) - len(unique)
        if duplicates:
            log.warning("dropped %d duplicate interactions", duplicates)
        train_users = sorted({u for u, it in unique if it not in test})
        user_index = {u: k for k, u in enumerate(train_users)}
        train, held, dropped = [], [], 0
        for user, item in unique:
            if item in test:
                if user in user_index:
                    held.append((user_index[user], item_index[item]))
                else:
                    dropped += 1
            else:
                train.append((user_index[user], item_index[item]))
        return cls(items, train_users,
                   np.asarray(train, dtype=np.int64).reshape(-1, 2),
                   np.asarray(held, dtype=np.int64).reshape(-1, 2),
                   np.asarray(sorted(item_index[t] for t in test), dtype=np.int64),
                   duplicates=duplicates, dropped_test_only=dropped)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def train_items(self) -> np.ndarray:
        mask = np.ones(len(self.items), dtype=bool)
        mask[self.test_items] = False
        return np.flatnonzero(mask)

    def item_frequency(self) -> np.ndarray:
        """Training-interaction count per item index (zero for test items)."""
        return np.bincount(self.train_pairs[:, 1], minlength=len(self.items))

    def user_positives(self, which: str = "train") -> list[set[int]]:
        pairs = self.train_pairs if which == "train" else self.test_pairs
        out: list[set[int]] = [set() for _ in self.users]
        for u, it in pairs:
            out[u].add(int(it))
        return out

    def summary(self) -> dict:
        return {"users": self.n_users, "items": self.n_items,
                "train_interactions": int(len(self.train_pairs)),
                "test_interactions": int(len(self.test_pairs)),
                "test_items": int(len(self.test_items)),
                "duplicates": self.duplicates,
                "dropped_test_only": self.dropped_test_only}


def load_interactions(path: str | Path, catalog: Iterable[str],
                      test_items: Iterable[str] = ()) -> InteractionSet:
    pairs = read_interaction_pairs(path)
    iset = InteractionSet.build(pairs, catalog, test_items)
    log.info("loaded %s: %s", path, iset.summary())
    return iset


class TripletSampler:
    """Draws ``(user, positive, negative)`` training triplets.

    The ``(user, positive)`` pair is uniform over training interactions. The
    negative is drawn over training items with probability proportional to
    ``frequency ** exponent`` and redrawn while it is a positive of the user.
    After ``max_attempts`` failed draws the negative falls back to a uniform
    choice among the user's non-positive training items.
    """

    def __init__(self, interactions: InteractionSet, rng: SeededRng,
                 exponent: float = 1.0, max_attempts: int = 100):
        self.pairs = interactions.train_pairs
        if len(self.pairs) == 0:
            raise SamplingError("no training interactions to sample from")
        self.rng = rng
        self.max_attempts = max_attempts
        self.positives = interactions.user_positives("train")
        self.train_items = interactions.train_items
        weights = interactions.item_frequency()[self.train_items].astype(np.float64) ** exponent
        if exponent == 0:
            weights = np.ones_like(weights)
        self.cdf = np.cumsum(weights / weights.sum())
        self.cdf[-1] = 1.0

    def _draw_items(self, n: int) -> np.ndarray:
        idx = np.searchsorted(self.cdf, self.rng.random(n), side="right")
        return self.train_items[np.minimum(idx, len(self.train_items) - 1)]

    def _fix_negative(self, user: int, neg: int) -> int:
        pos = self.positives[user]
        attempts = 1
        while neg in pos and attempts < self.max_attempts:
            neg = int(self._draw_items(1)[0])
            attempts += 1
        if neg not in pos:
            return neg
        free = [it for it in self.train_items.tolist() if it not in pos]
        if not free:
            raise SamplingError(
                f"user {user} is positive on every training item; no negative after {self.max_attempts} attempts")
        return int(free[self.rng.integers(len(free))])

    def sample_negative(self, user: int) -> int:
        return self._fix_negative(user, int(self._draw_items(1)[0]))

    def sample_batch(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = self.pairs[self.rng.integers(len(self.pairs), size=n)]
        users, pos = rows[:, 0].copy(), rows[:, 1].copy()
        neg = self._draw_items(n)
        for k in range(n):
            if int(neg[k]) in self.positives[users[k]]:
                neg[k] = self._fix_negative(int(users[k]), int(neg[k]))
        return users, pos, neg

    def sample_triplet(self) -> tuple[int, int, int]:
        u, p, n = self.sample_batch(1)
        return int(u[0]), int(p[0]), int(n[0])


def pad_sequences(seqs: Sequence[np.ndarray], min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences with ``PAD_ID`` to a common length.

    Returns the ``[B, L]`` id matrix and the true lengths.
    """
    lengths = np.asarray([len(s) for s in seqs], dtype=np.int64)
    width = max(int(lengths.max(initial=0)), min_len)
    out = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for k, s in enumerate(seqs):
        out[k, :len(s)] = s
    return out, lengths


def catalog_tokens(texts: dict[str, str], items: Sequence[str], vocab: Vocabulary,
                   max_len: int) -> list[np.ndarray]:
    """Token ids for each of ``items`` (in that order)."""
    return [make_text_item(it, texts[it], vocab, max_len).tokens for it in items]

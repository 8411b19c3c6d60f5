"""Planted synthetic datasets with known topic structure.

Items are short texts over per-topic vocabularies plus shared filler words.
Users belong to one topic and interact only with items of that topic, so a
model that reads the text can rank held-out items almost perfectly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import split_items
from .numkit import SeededRng


def topic_word(topic: int, j: int) -> str:
    return f"t{topic}w{j:03d}"


def planted_corpus(rng: SeededRng, n_docs: int, n_topics: int = 2, words_per_topic: int = 50,
                   n_common: int = 20, length: tuple[int, int] = (6, 14),
                   topic_frac: float = 0.7, id_prefix: str = "d") -> tuple[dict[str, str], dict[str, int]]:
    """Documents whose tokens come from their topic's words with probability
    ``topic_frac``, otherwise from the shared filler words. Document ``k``
    belongs to topic ``k % n_topics``.
    """
    texts: dict[str, str] = {}
    topics: dict[str, int] = {}
    width = len(str(max(n_docs - 1, 1)))
    for k in range(n_docs):
        topic = k % n_topics
        n_tok = int(rng.integers(length[0], length[1] + 1))
        from_topic = rng.random(n_tok) < topic_frac
        words = [topic_word(topic, int(rng.integers(words_per_topic))) if t
                 else f"common{int(rng.integers(n_common)):02d}" for t in from_topic]
        doc_id = f"{id_prefix}{k:0{width}d}"
        texts[doc_id] = " ".join(words)
        topics[doc_id] = topic
    return texts, topics


@dataclass
class PlantedData:
    texts: dict[str, str]  # catalog item id -> raw text
    pretrain_texts: dict[str, str]  # catalog plus unlabeled documents
    interactions: list[tuple[str, str]]
    test_items: list[str]
    item_topic: dict[str, int]
    user_topic: dict[str, int]


def planted_dataset(seed: int, n_users: int = 200, n_items: int = 400, n_topics: int = 2,
                    train_per_user: int = 20, holdout_fraction: float = 0.2,
                    words_per_topic: int = 50, n_common: int = 20,
                    length: tuple[int, int] = (6, 14), topic_frac: float = 0.7,
                    n_unlabeled: int = 0, shuffle: bool = False) -> PlantedData:
    """Users of topic ``t`` interact with ``train_per_user`` random training
    items of topic ``t`` and with every held-out item of topic ``t``.

    With ``shuffle=True`` the item column is permuted within the training
    interactions and within the held-out interactions, which keeps degrees and
    the split but destroys the user/topic link.
    """
    rng = SeededRng(seed).child("planted")
    texts, item_topic = planted_corpus(rng.child("items"), n_items, n_topics, words_per_topic,
                                       n_common, length, topic_frac, id_prefix="i")
    extra, _ = planted_corpus(rng.child("unlabeled"), n_unlabeled, n_topics, words_per_topic,
                              n_common, length, topic_frac, id_prefix="u") if n_unlabeled else ({}, {})
    train_items, test_items = split_items(list(texts), holdout_fraction, rng.child("split"))
    pick = rng.child("users")
    width = len(str(max(n_users - 1, 1)))
    users = {f"user{k:0{width}d}": k % n_topics for k in range(n_users)}
    train_pairs, test_pairs = [], []
    for user, topic in users.items():
        own_train = [it for it in train_items if item_topic[it] == topic]
        chosen = pick.choice(len(own_train), min(train_per_user, len(own_train)), replace=False)
        train_pairs += [(user, own_train[c]) for c in sorted(chosen.tolist())]
        test_pairs += [(user, it) for it in test_items if item_topic[it] == topic]
    if shuffle:
        mix = rng.child("shuffle")
        train_pairs = _shuffle_items(train_pairs, mix)
        test_pairs = _shuffle_items(test_pairs, mix)
    return PlantedData(texts, {**texts, **extra}, train_pairs + test_pairs, test_items,
                       item_topic, users)


def _shuffle_items(pairs: list[tuple[str, str]], rng: SeededRng) -> list[tuple[str, str]]:
    perm = rng.permutation(len(pairs))
    return [(pairs[k][0], pairs[int(perm[k])][1]) for k in range(len(pairs))]


def write_planted(data: PlantedData, directory) -> dict[str, str]:
    """Write the dataset as TSV files; returns the written paths by role."""
    from pathlib import Path

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"texts": d / "texts.tsv", "pretrain_corpus": d / "corpus.tsv",
             "interactions": d / "interactions.tsv", "test_items": d / "test_items.txt"}
    paths["texts"].write_text("".join(f"{k}\t{v}\n" for k, v in data.texts.items()), encoding="utf-8")
    paths["pretrain_corpus"].write_text(
        "".join(f"{k}\t{v}\n" for k, v in data.pretrain_texts.items()), encoding="utf-8")
    paths["interactions"].write_text(
        "".join(f"{u}\t{i}\n" for u, i in data.interactions), encoding="utf-8")
    paths["test_items"].write_text("".join(f"{i}\n" for i in data.test_items), encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}

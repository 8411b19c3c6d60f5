import numpy as np
import pytest

from terec.corpus import InteractionSet, build_vocab, catalog_tokens
from terec.numkit import SeededRng
from terec.synth import planted_dataset

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return SeededRng(1234)


@pytest.fixture(scope="session")
def planted():
    """Full-size planted dataset prepared for training."""
    data = planted_dataset(0)
    iset = InteractionSet.build(data.interactions, data.texts, data.test_items)
    vocab = build_vocab(data.texts.values(), 1)
    tokens = catalog_tokens(data.texts, iset.items, vocab, 20)
    return data, iset, vocab, tokens


@pytest.fixture(scope="session")
def small_planted():
    data = planted_dataset(5, n_users=24, n_items=120, train_per_user=6)
    iset = InteractionSet.build(data.interactions, data.texts, data.test_items)
    vocab = build_vocab(data.texts.values(), 1)
    tokens = catalog_tokens(data.texts, iset.items, vocab, 20)
    return data, iset, vocab, tokens


def random_tokens(gen: np.random.Generator, vocab_size: int, length: int) -> np.ndarray:
    return gen.integers(2, vocab_size, size=length)


def planted_pretrain(seed: int, n_docs: int = 200, epochs: int = 20, lr: float = 0.1):
    """PV-DM on a two-topic planted corpus; returns (result, doc topics, vocab)."""
    from terec.corpus import tokenize
    from terec.pvec import PvConfig, pretrain
    from terec.synth import planted_corpus

    rng = SeededRng(seed)
    texts, topics = planted_corpus(rng.child("corpus"), n_docs)
    vocab = build_vocab(texts.values(), 1)
    docs = [(d, np.asarray(vocab.encode(tokenize(t)), dtype=np.int64)) for d, t in texts.items()]
    result = pretrain(docs, vocab, PvConfig(epochs=epochs, lr=lr), rng.child("pv"))
    return result, [topics[d] for d in result.matrix.ids], vocab
